#include "ucmt/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "ucmt/errors.hpp"
#include "ucmt/rng.hpp"

namespace ucmt::data {
namespace {

struct Ellipse {
    double cy, cx, ay, ax, cos_t, sin_t;

    [[nodiscard]] bool contains(double y, double x, double scale = 1.0) const {
        const double dy = y - cy, dx = x - cx;
        const double u = (dx * cos_t + dy * sin_t) / (ax * scale);
        const double v = (-dx * sin_t + dy * cos_t) / (ay * scale);
        return u * u + v * v <= 1.0;
    }
};

Sample generate_one(const GeneratorParams& p, const CounterRng& root, std::int64_t id) {
    CounterRng rng = root.substream(static_cast<std::uint64_t>(id));
    const std::size_t h = p.height, w = p.width;
    const double base = rng.uniform(p.background_lo, p.background_hi);
    const double grad_angle = rng.uniform(0.0, 6.283185307179586);
    const double grad_amp = rng.uniform(0.0, p.gradient_amplitude);
    const double contrast = rng.uniform(p.contrast_lo, p.contrast_hi);

    const auto count = static_cast<int>(rng.uniform_int(1, 3));
    std::vector<Ellipse> shapes;
    for (int e = 0; e < count; ++e) {
        const double margin = p.max_axis * 0.5;
        const double theta = rng.uniform(0.0, 3.141592653589793);
        shapes.push_back({rng.uniform(margin, static_cast<double>(h) - margin),
                          rng.uniform(margin, static_cast<double>(w) - margin), rng.uniform(p.min_axis, p.max_axis),
                          rng.uniform(p.min_axis, p.max_axis), std::cos(theta), std::sin(theta)});
    }

    Sample s;
    s.id = id;
    s.image = Tensor({p.channels, h, w});
    std::vector<std::uint8_t> mask(h * w, 0);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const double yc = static_cast<double>(y) + 0.5, xc = static_cast<double>(x) + 0.5;
            std::uint8_t label = 0;
            for (const auto& e : shapes) {
                if (e.contains(yc, xc)) label = std::max<std::uint8_t>(label, 1);
                if (p.classes >= 3 && e.contains(yc, xc, 0.5)) label = 2;
            }
            mask[y * w + x] = label;
        }
    }
    const double gy = std::sin(grad_angle) * grad_amp / static_cast<double>(h);
    const double gx = std::cos(grad_angle) * grad_amp / static_cast<double>(w);
    for (std::size_t c = 0; c < p.channels; ++c) {
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                const double shade = base + gy * (static_cast<double>(y) - 0.5 * static_cast<double>(h)) +
                                     gx * (static_cast<double>(x) - 0.5 * static_cast<double>(w));
                const double level = shade + contrast * static_cast<double>(mask[y * w + x]);
                const double v = level + p.noise_sigma * rng.normal();
                s.image[(c * h + y) * w + x] = std::clamp(v, 0.0, 1.0);
            }
        }
    }
    s.mask = std::move(mask);
    return s;
}

void write_pgm(const std::filesystem::path& path, std::size_t width, std::size_t height,
               const std::vector<std::uint8_t>& pixels) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << "P5\n" << width << ' ' << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    if (!out) throw IoError("short write to " + path.string());
}

std::vector<std::uint8_t> read_pgm(const std::filesystem::path& path, std::size_t& width, std::size_t& height) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::string magic;
    std::size_t maxval = 0;
    in >> magic >> width >> height >> maxval;
    if (!in || magic != "P5" || maxval != 255 || width == 0 || height == 0) {
        throw IoError("corrupt PGM header in " + path.string());
    }
    in.get();
    std::vector<std::uint8_t> pixels(width * height);
    in.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(pixels.size())) throw IoError("truncated PGM " + path.string());
    return pixels;
}

std::uint8_t to_u8(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

std::vector<Sample> generate_synthetic(std::size_t n, const GeneratorParams& params, std::uint64_t seed,
                                       std::int64_t first_id) {
    if (n == 0) throw PreconditionError("generate_synthetic needs n >= 1");
    if (params.classes < 2 || params.classes > 3) throw ConfigError("synthetic generator supports 2 or 3 classes");
    const CounterRng root(seed);
    std::vector<Sample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(generate_one(params, root, first_id + static_cast<std::int64_t>(i)));
    return out;
}

std::size_t labeled_count(std::size_t n, double label_ratio) {
    if (!(label_ratio > 0.0) || label_ratio > 1.0) throw PreconditionError("label ratio must be in (0, 1]");
    // Guard against 0.05 * 200 = 10.000000000000002 style rounding.
    const auto count = static_cast<std::size_t>(std::ceil(label_ratio * static_cast<double>(n) - 1e-9));
    if (count == 0) throw PreconditionError("label ratio yields no labeled samples");
    return std::min(count, n);
}

Split split(std::vector<Sample> samples, double label_ratio, std::uint64_t seed) {
    const std::size_t n_lab = labeled_count(samples.size(), label_ratio);
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    CounterRng rng(seed);
    for (std::size_t i = order.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
        std::swap(order[i - 1], order[j]);
    }
    Split out;
    out.label_ratio = label_ratio;
    out.seed = seed;
    for (std::size_t i = 0; i < order.size(); ++i) {
        Sample& s = samples[order[i]];
        if (i < n_lab) {
            if (!s.mask) throw PreconditionError("labeled sample " + std::to_string(s.id) + " has no mask");
            out.labeled.push_back(std::move(s));
        } else {
            out.withheld_masks.push_back(s.mask.value_or(std::vector<std::uint8_t>{}));
            s.mask.reset();
            out.unlabeled.push_back(std::move(s));
        }
    }
    return out;
}

namespace {

std::vector<std::size_t> permutation(std::size_t n, CounterRng& rng) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
        std::swap(p[i - 1], p[j]);
    }
    return p;
}

}  // namespace

std::vector<BatchIndices> epoch_batches(std::size_t n_labeled, std::size_t n_unlabeled, std::size_t nl,
                                        std::size_t nu, std::uint64_t seed, std::size_t epoch, bool labeled_only) {
    if (nl == 0) throw ConfigError("labeled batch size must be >= 1");
    if (n_labeled == 0) throw ConfigError("labeled set is empty");
    const CounterRng root = CounterRng(seed).substream(epoch);
    std::vector<BatchIndices> out;
    CounterRng lab_rng = root.substream(1);
    std::vector<std::size_t> lab_perm = permutation(n_labeled, lab_rng);
    std::size_t lab_pos = 0;
    const auto draw_labeled = [&] {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < nl; ++i) {
            if (lab_pos == lab_perm.size()) {
                lab_perm = permutation(n_labeled, lab_rng);
                lab_pos = 0;
            }
            idx.push_back(lab_perm[lab_pos++]);
        }
        return idx;
    };

    if (n_unlabeled == 0 || nu == 0) {
        if (!labeled_only) throw ConfigError("semi-supervised training needs a non-empty unlabeled set");
        const std::size_t iters = std::max<std::size_t>(1, n_labeled / nl);
        for (std::size_t i = 0; i < iters; ++i) out.push_back({draw_labeled(), {}});
        return out;
    }
    if (nu > n_unlabeled) throw ConfigError("unlabeled batch size exceeds |D_U|");
    CounterRng unl_rng = root.substream(2);
    const auto unl_perm = permutation(n_unlabeled, unl_rng);
    for (std::size_t start = 0; start + nu <= n_unlabeled; start += nu) {
        BatchIndices b;
        b.labeled = draw_labeled();
        b.unlabeled.assign(unl_perm.begin() + static_cast<std::ptrdiff_t>(start),
                           unl_perm.begin() + static_cast<std::ptrdiff_t>(start + nu));
        out.push_back(std::move(b));
    }
    return out;
}

namespace {

Tensor stack_images(const std::vector<Sample>& pool, const std::vector<std::size_t>& idx) {
    if (idx.empty()) return Tensor();
    const Tensor& first = pool.at(idx.front()).image;
    Shape shape{idx.size()};
    shape.insert(shape.end(), first.shape().begin(), first.shape().end());
    Tensor out(shape);
    for (std::size_t b = 0; b < idx.size(); ++b) {
        const auto src = pool.at(idx[b]).image.values();
        std::copy(src.begin(), src.end(), out.item(b).begin());
    }
    return out;
}

}  // namespace

LabeledBatch gather_labeled(const std::vector<Sample>& pool, const std::vector<std::size_t>& idx) {
    LabeledBatch out;
    out.images = stack_images(pool, idx);
    if (idx.empty()) return out;
    out.labels = LabelMap(idx.size(), out.images.dim(2), out.images.dim(3));
    for (std::size_t b = 0; b < idx.size(); ++b) {
        const Sample& s = pool.at(idx[b]);
        if (!s.mask) throw PreconditionError("sample " + std::to_string(s.id) + " in labeled batch has no mask");
        std::copy(s.mask->begin(), s.mask->end(), out.labels.item(b).begin());
        out.ids.push_back(s.id);
    }
    return out;
}

UnlabeledBatch gather_unlabeled(const std::vector<Sample>& pool, const std::vector<std::size_t>& idx) {
    UnlabeledBatch out;
    out.images = stack_images(pool, idx);
    for (std::size_t i : idx) out.ids.push_back(pool.at(i).id);
    return out;
}

std::vector<Sample> quantized(std::vector<Sample> samples) {
    for (auto& s : samples) {
        for (double& v : s.image.values()) v = static_cast<double>(to_u8(v)) / 255.0;
    }
    return samples;
}

Manifest save_dataset(const Split& split, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "masks");
    Manifest m;
    m.label_ratio = split.label_ratio;
    m.seed = split.seed;
    m.labeled = split.labeled.size();
    m.total = split.labeled.size() + split.unlabeled.size();
    const auto write_sample = [&](const Sample& s) {
        const std::size_t c = s.image.dim(0), h = s.image.dim(1), w = s.image.dim(2);
        m.channels = c;
        std::vector<std::uint8_t> px(s.image.size());
        for (std::size_t i = 0; i < px.size(); ++i) px[i] = to_u8(s.image[i]);
        ManifestEntry e;
        e.id = s.id;
        e.image_path = "images/" + std::to_string(s.id) + ".pgm";
        // Channels are stacked vertically.
        write_pgm(dir / e.image_path, w, h * c, px);
        if (s.mask) {
            e.mask_path = "masks/" + std::to_string(s.id) + ".pgm";
            write_pgm(dir / *e.mask_path, w, h, *s.mask);
        }
        m.entries.push_back(std::move(e));
    };
    for (const auto& s : split.labeled) write_sample(s);
    for (const auto& s : split.unlabeled) write_sample(s);

    const auto path = dir / "manifest.tsv";
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    char ratio[32];
    std::snprintf(ratio, sizeof ratio, "%.17g", m.label_ratio);
    out << "# label_ratio=" << ratio << "\n# seed=" << m.seed << "\n# N=" << m.labeled << "\n# M=" << m.total
        << "\n# channels=" << m.channels << "\nid\timage\tmask\n";
    for (const auto& e : m.entries) out << e.id << '\t' << e.image_path << '\t' << e.mask_path.value_or("NONE") << '\n';
    if (!out) throw IoError("short write to " + path.string());
    return m;
}

LoadedDataset load_dataset(const std::filesystem::path& dir) {
    const auto path = dir / "manifest.tsv";
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path.string());
    LoadedDataset out;
    Manifest& m = out.manifest;
    std::string line;
    bool header_seen = false;
    bool have_n = false, have_m = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line.rfind("# ", 0) == 0) {
            const auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            const std::string key = line.substr(2, eq - 2), value = line.substr(eq + 1);
            try {
                if (key == "label_ratio") m.label_ratio = std::stod(value);
                else if (key == "seed") m.seed = std::stoull(value);
                else if (key == "N") { m.labeled = std::stoull(value); have_n = true; }
                else if (key == "M") { m.total = std::stoull(value); have_m = true; }
                else if (key == "channels") m.channels = std::stoull(value);
            } catch (const std::exception&) {
                throw IoError(path.string() + ": bad metadata line '" + line + "'");
            }
            continue;
        }
        if (!header_seen) {
            if (line != "id\timage\tmask") throw IoError(path.string() + ": missing 'id image mask' header");
            header_seen = true;
            continue;
        }
        std::istringstream row(line);
        std::string id, image, mask;
        if (!std::getline(row, id, '\t') || !std::getline(row, image, '\t') || !std::getline(row, mask)) {
            throw IoError(path.string() + ": malformed row '" + line + "'");
        }
        ManifestEntry e;
        try {
            e.id = std::stoll(id);
        } catch (const std::exception&) {
            throw IoError(path.string() + ": bad id '" + id + "'");
        }
        e.image_path = image;
        if (mask != "NONE") e.mask_path = mask;
        m.entries.push_back(std::move(e));
    }
    if (!header_seen || !have_n || !have_m) throw IoError(path.string() + ": incomplete manifest");
    const auto with_masks = static_cast<std::size_t>(
        std::count_if(m.entries.begin(), m.entries.end(), [](const ManifestEntry& e) { return e.mask_path.has_value(); }));
    if (m.entries.size() != m.total || with_masks != m.labeled || m.labeled > m.total) {
        throw IoError(path.string() + ": manifest lists " + std::to_string(with_masks) + " masks for N=" +
                      std::to_string(m.labeled) + " and " + std::to_string(m.entries.size()) +
                      " entries for M=" + std::to_string(m.total));
    }
    for (const auto& e : m.entries) {
        std::size_t w = 0, hc = 0;
        const auto px = read_pgm(dir / e.image_path, w, hc);
        if (m.channels == 0 || hc % m.channels != 0) throw IoError("image height not divisible by channels in " + e.image_path);
        const std::size_t h = hc / m.channels;
        Sample s;
        s.id = e.id;
        s.image = Tensor({m.channels, h, w});
        for (std::size_t i = 0; i < px.size(); ++i) s.image[i] = static_cast<double>(px[i]) / 255.0;
        if (e.mask_path) {
            std::size_t mw = 0, mh = 0;
            auto mask = read_pgm(dir / *e.mask_path, mw, mh);
            if (mw != w || mh != h) throw IoError("mask geometry differs from image for " + *e.mask_path);
            s.mask = std::move(mask);
        }
        out.samples.push_back(std::move(s));
    }
    return out;
}

double foreground_fraction(const std::vector<Sample>& samples) {
    std::size_t fg = 0, total = 0;
    for (const auto& s : samples) {
        if (!s.mask) continue;
        fg += static_cast<std::size_t>(std::count_if(s.mask->begin(), s.mask->end(), [](std::uint8_t v) { return v != 0; }));
        total += s.mask->size();
    }
    return total == 0 ? 0.0 : static_cast<double>(fg) / static_cast<double>(total);
}

}  // namespace ucmt::data
