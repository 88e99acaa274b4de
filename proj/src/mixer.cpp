#include "ucmt/mixer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <optional>
#include <ostream>

#include "ucmt/errors.hpp"
#include "ucmt/rng.hpp"

namespace ucmt::mixer {
namespace {

void copy_cell(const RegionGrid& grid, std::size_t donor, std::size_t recipient, const double* src, double* dst,
               std::size_t width) {
    const std::size_t dy = (donor / grid.cols) * grid.cell_h, dx = (donor % grid.cols) * grid.cell_w;
    const std::size_t ry = (recipient / grid.cols) * grid.cell_h, rx = (recipient % grid.cols) * grid.cell_w;
    for (std::size_t y = 0; y < grid.cell_h; ++y) {
        const double* s = src + (dy + y) * width + dx;
        std::copy(s, s + grid.cell_w, dst + (ry + y) * width + rx);
    }
}

void copy_cell(const RegionGrid& grid, std::size_t donor, std::size_t recipient, const std::uint8_t* src,
               std::uint8_t* dst, std::size_t width) {
    const std::size_t dy = (donor / grid.cols) * grid.cell_h, dx = (donor % grid.cols) * grid.cell_w;
    const std::size_t ry = (recipient / grid.cols) * grid.cell_h, rx = (recipient % grid.cols) * grid.cell_w;
    for (std::size_t y = 0; y < grid.cell_h; ++y) {
        const std::uint8_t* s = src + (dy + y) * width + dx;
        std::copy(s, s + grid.cell_w, dst + (ry + y) * width + rx);
    }
}

void check_pair(const Tensor& images, const LabelMap& labels) {
    if (images.rank() != 4 || images.dim(0) != labels.batch || images.dim(2) != labels.height ||
        images.dim(3) != labels.width) {
        throw ShapeError("image batch " + shape_string(images.shape()) + " does not match label maps");
    }
}

}  // namespace

RegionGrid partition(std::size_t height, std::size_t width, std::size_t r) {
    if (r < 2) throw PreconditionError("region count r must be >= 2");
    std::optional<RegionGrid> best;
    for (std::size_t rows = 1; rows <= r; ++rows) {
        if (r % rows != 0) continue;
        const std::size_t cols = r / rows;
        if (height % rows != 0 || width % cols != 0) continue;
        const auto gap = [](const RegionGrid& g) { return g.rows > g.cols ? g.rows - g.cols : g.cols - g.rows; };
        RegionGrid g{rows, cols, height / rows, width / cols, r};
        // Ascending rows, so the first of two equal gaps has rows <= cols.
        if (!best || gap(g) < gap(*best)) best = g;
    }
    if (!best) {
        throw GeometryError("no " + std::to_string(r) + "-cell grid divides a " + std::to_string(height) + "x" +
                            std::to_string(width) + " image");
    }
    return *best;
}

std::vector<double> region_scores(const uncertainty::UncertaintyMap& map, std::size_t item, const RegionGrid& grid) {
    if (map.height() != grid.height() || map.width() != grid.width()) {
        throw ShapeError("uncertainty map does not match region grid geometry");
    }
    const std::size_t w = map.width();
    const double* base = map.values.data() + item * map.height() * w;
    std::vector<double> scores(grid.r, 0.0);
    const double inv_area = 1.0 / static_cast<double>(grid.cell_h * grid.cell_w);
    for (std::size_t cell = 0; cell < grid.r; ++cell) {
        const std::size_t y0 = (cell / grid.cols) * grid.cell_h, x0 = (cell % grid.cols) * grid.cell_w;
        double sum = 0.0;
        for (std::size_t y = 0; y < grid.cell_h; ++y)
            for (std::size_t x = 0; x < grid.cell_w; ++x) sum += base[(y0 + y) * w + x0 + x];
        scores[cell] = sum * inv_area;
    }
    return scores;
}

std::vector<std::size_t> select_topk(const std::vector<double>& scores, std::size_t k, SelectMode mode) {
    if (k < 1 || 2 * k > scores.size()) {
        throw PreconditionError("top-k needs 1 <= k <= r/2, got k=" + std::to_string(k) + " with r=" +
                                std::to_string(scores.size()));
    }
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (mode == SelectMode::most_uncertain) {
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    } else {
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    }
    idx.resize(k);
    return idx;
}

std::vector<SwapTriple> ranked_pairs(const std::vector<double>& scores1, const std::vector<double>& scores2,
                                     std::size_t k) {
    if (scores1.size() != scores2.size()) throw ShapeError("uncertainty maps disagree on region count");
    const auto unc1 = select_topk(scores1, k, SelectMode::most_uncertain);
    const auto cert2 = select_topk(scores2, k, SelectMode::most_certain);
    const auto unc2 = select_topk(scores2, k, SelectMode::most_uncertain);
    const auto cert1 = select_topk(scores1, k, SelectMode::most_certain);
    std::vector<SwapTriple> pairs;
    pairs.reserve(2 * k);
    for (std::size_t i = 0; i < k; ++i) pairs.push_back({unc1[i], cert2[i], 2});
    for (std::size_t i = 0; i < k; ++i) pairs.push_back({unc2[i], cert1[i], 1});
    return pairs;
}

SwapPlan build_swap_plan(const std::vector<double>& scores1, const std::vector<double>& scores2, std::size_t k) {
    const auto pairs = ranked_pairs(scores1, scores2, k);
    SwapPlan plan;
    plan.k = k;
    for (const auto& p : pairs) {
        const bool overridden =
            p.source_map == 2 && std::any_of(pairs.begin() + static_cast<std::ptrdiff_t>(k), pairs.end(),
                                             [&](const SwapTriple& q) { return q.recipient == p.recipient; });
        if (!overridden) plan.triples.push_back(p);
    }
    return plan;
}

SwapPlan build_swap_plan(const uncertainty::UncertaintyMap& u1, const uncertainty::UncertaintyMap& u2,
                         std::size_t item, const RegionGrid& grid, std::size_t k) {
    return build_swap_plan(region_scores(u1, item, grid), region_scores(u2, item, grid), k);
}

Mixed apply_umix(const Tensor& images, const LabelMap& labels, const std::vector<SwapPlan>& plans,
                 const RegionGrid& grid) {
    check_pair(images, labels);
    if (images.dim(2) != grid.height() || images.dim(3) != grid.width()) {
        throw ShapeError("image geometry does not match region grid");
    }
    if (plans.size() != images.dim(0)) throw ShapeError("one swap plan per batch item is required");
    Mixed out{images, labels};
    const std::size_t channels = images.dim(1), h = images.dim(2), w = images.dim(3);
    for (std::size_t b = 0; b < plans.size(); ++b) {
        for (const auto& t : plans[b].triples) {
            if (t.recipient >= grid.r || t.donor >= grid.r) throw ShapeError("swap plan cell out of range");
            for (std::size_t c = 0; c < channels; ++c) {
                const std::size_t off = (b * channels + c) * h * w;
                copy_cell(grid, t.donor, t.recipient, images.data() + off, out.images.data() + off, w);
            }
            const std::size_t loff = b * h * w;
            copy_cell(grid, t.donor, t.recipient, labels.labels.data() + loff, out.labels.labels.data() + loff, w);
        }
    }
    return out;
}

UmixResult umix(const Tensor& images, const LabelMap& labels, const uncertainty::UncertaintyMap& u1,
                const uncertainty::UncertaintyMap& u2, std::size_t k, std::size_t r) {
    check_pair(images, labels);
    if (u1.values.shape() != u2.values.shape() || u1.batch() != images.dim(0)) {
        throw ShapeError("uncertainty maps do not match the image batch");
    }
    UmixResult res;
    res.grid = partition(images.dim(2), images.dim(3), r);
    for (std::size_t b = 0; b < images.dim(0); ++b) res.plans.push_back(build_swap_plan(u1, u2, b, res.grid, k));
    res.mixed = apply_umix(images, labels, res.plans, res.grid);
    return res;
}

void write_plan_csv(std::ostream& out, const SwapPlan& plan) {
    out << "recipient_cell,donor_cell,source_map\n";
    for (const auto& t : plan.triples) out << t.recipient << ',' << t.donor << ',' << t.source_map << '\n';
}

Box cutmix_box(std::size_t height, std::size_t width, double area, std::uint64_t seed) {
    area = std::clamp(area, 0.0, 1.0);
    const double side = std::sqrt(area);
    Box box;
    box.h = std::min(height, static_cast<std::size_t>(std::llround(side * static_cast<double>(height))));
    box.w = std::min(width, static_cast<std::size_t>(std::llround(side * static_cast<double>(width))));
    CounterRng rng(seed);
    box.y0 = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(height - box.h)));
    box.x0 = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(width - box.w)));
    return box;
}

namespace {

Mixed cutmix_impl(const Tensor& images_a, const LabelMap& labels_a, const Tensor& images_b,
                  const LabelMap& labels_b, const std::optional<double>& area, std::uint64_t seed) {
    check_pair(images_a, labels_a);
    check_pair(images_b, labels_b);
    require_same_shape(images_a, images_b, "cutmix");
    Mixed out{images_a, labels_a};
    const std::size_t channels = images_a.dim(1), h = images_a.dim(2), w = images_a.dim(3);
    const CounterRng root(seed);
    for (std::size_t b = 0; b < images_a.dim(0); ++b) {
        CounterRng rng = root.substream(b);
        const double frac = area ? *area : rng.uniform();
        const Box box = cutmix_box(h, w, frac, rng.next_u64());
        for (std::size_t y = box.y0; y < box.y0 + box.h; ++y) {
            for (std::size_t x = box.x0; x < box.x0 + box.w; ++x) {
                for (std::size_t c = 0; c < channels; ++c) {
                    out.images.at(b, c, y, x) = images_b.at(b, c, y, x);
                }
                out.labels.at(b, y, x) = labels_b.at(b, y, x);
            }
        }
    }
    return out;
}

}  // namespace

Mixed cutmix(const Tensor& images_a, const LabelMap& labels_a, const Tensor& images_b, const LabelMap& labels_b,
             std::uint64_t seed) {
    return cutmix_impl(images_a, labels_a, images_b, labels_b, std::nullopt, seed);
}

Mixed cutmix_with_area(const Tensor& images_a, const LabelMap& labels_a, const Tensor& images_b,
                       const LabelMap& labels_b, double area, std::uint64_t seed) {
    return cutmix_impl(images_a, labels_a, images_b, labels_b, area, seed);
}

Mixed cutmix_reversed(const Tensor& images, const LabelMap& labels, std::uint64_t seed) {
    check_pair(images, labels);
    const std::size_t b_n = images.dim(0);
    Tensor partner(images.shape());
    LabelMap partner_labels(labels.batch, labels.height, labels.width);
    for (std::size_t b = 0; b < b_n; ++b) {
        const auto src = images.item(b_n - 1 - b);
        std::copy(src.begin(), src.end(), partner.item(b).begin());
        const auto lsrc = labels.item(b_n - 1 - b);
        std::copy(lsrc.begin(), lsrc.end(), partner_labels.item(b).begin());
    }
    return cutmix(images, labels, partner, partner_labels, seed);
}

}  // namespace ucmt::mixer
