#include "ucmt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "ucmt/errors.hpp"
#include "ucmt/losses.hpp"

namespace ucmt::metrics {
namespace {

struct Counts {
    std::size_t pred = 0, gt = 0, both = 0;
};

Counts count(Mask pred, Mask gt, std::uint8_t cls) {
    if (pred.size() != gt.size()) throw ShapeError("metric masks differ in size");
    Counts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] == cls, g = gt[i] == cls;
        c.pred += p;
        c.gt += g;
        c.both += p && g;
    }
    return c;
}

constexpr double kFarAway = 1e30;

// Exact 1-D squared distance transform (lower envelope of parabolas).
void edt_1d(const double* f, std::size_t n, double* d, std::vector<std::size_t>& v, std::vector<double>& z) {
    v.assign(n, 0);
    z.assign(n + 1, 0.0);
    std::size_t k = 0;
    v[0] = 0;
    z[0] = -kFarAway;
    z[1] = kFarAway;
    for (std::size_t q = 1; q < n; ++q) {
        double s = 0.0;
        for (;;) {
            const double qd = static_cast<double>(q), vk = static_cast<double>(v[k]);
            s = ((f[q] + qd * qd) - (f[v[k]] + vk * vk)) / (2.0 * qd - 2.0 * vk);
            if (s <= z[k] && k > 0) {
                --k;
                continue;
            }
            break;
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = kFarAway;
    }
    k = 0;
    for (std::size_t q = 0; q < n; ++q) {
        while (z[k + 1] < static_cast<double>(q)) ++k;
        const double diff = static_cast<double>(q) - static_cast<double>(v[k]);
        d[q] = diff * diff + f[v[k]];
    }
}

// Squared Euclidean distance from every pixel to the nearest set pixel.
std::vector<double> squared_distance_to(const std::vector<std::uint8_t>& set, std::size_t h, std::size_t w) {
    std::vector<double> grid(h * w);
    for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = set[i] ? 0.0 : kFarAway;
    std::vector<double> f(std::max(h, w)), d(std::max(h, w));
    std::vector<std::size_t> v;
    std::vector<double> z;
    for (std::size_t x = 0; x < w; ++x) {
        for (std::size_t y = 0; y < h; ++y) f[y] = grid[y * w + x];
        edt_1d(f.data(), h, d.data(), v, z);
        for (std::size_t y = 0; y < h; ++y) grid[y * w + x] = d[y];
    }
    for (std::size_t y = 0; y < h; ++y) {
        edt_1d(grid.data() + y * w, w, d.data(), v, z);
        std::copy(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(w), grid.begin() + static_cast<std::ptrdiff_t>(y * w));
    }
    return grid;
}

std::vector<double> directed(const std::vector<std::uint8_t>& from, const std::vector<double>& sq_to) {
    std::vector<double> out;
    for (std::size_t i = 0; i < from.size(); ++i) {
        if (from[i]) out.push_back(std::sqrt(sq_to[i]));
    }
    return out;
}

double nearest_rank_95(std::vector<double> d) {
    std::sort(d.begin(), d.end());
    const std::size_t rank = (95 * d.size() + 99) / 100;  // ceil(0.95 n)
    return d[std::max<std::size_t>(rank, 1) - 1];
}

void format_value(char* buf, std::size_t n, double v) {
    if (std::isinf(v)) {
        std::snprintf(buf, n, "inf");
    } else {
        std::snprintf(buf, n, "%.17g", v);
    }
}

}  // namespace

double dsc(Mask pred, Mask gt, std::uint8_t cls) {
    const Counts c = count(pred, gt, cls);
    if (c.pred + c.gt == 0) return 1.0;
    return 2.0 * static_cast<double>(c.both) / static_cast<double>(c.pred + c.gt);
}

double jaccard(Mask pred, Mask gt, std::uint8_t cls) {
    const Counts c = count(pred, gt, cls);
    const std::size_t uni = c.pred + c.gt - c.both;
    if (uni == 0) return 1.0;
    return static_cast<double>(c.both) / static_cast<double>(uni);
}

std::vector<std::uint8_t> boundary(Mask mask, std::size_t h, std::size_t w, std::uint8_t cls) {
    if (mask.size() != h * w) throw ShapeError("mask size does not match geometry");
    std::vector<std::uint8_t> out(h * w, 0);
    const auto inside = [&](std::ptrdiff_t y, std::ptrdiff_t x) {
        if (y < 0 || x < 0 || y >= static_cast<std::ptrdiff_t>(h) || x >= static_cast<std::ptrdiff_t>(w)) return false;
        return mask[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)] == cls;
    };
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            if (mask[y * w + x] != cls) continue;
            const auto yy = static_cast<std::ptrdiff_t>(y), xx = static_cast<std::ptrdiff_t>(x);
            if (!inside(yy - 1, xx) || !inside(yy + 1, xx) || !inside(yy, xx - 1) || !inside(yy, xx + 1)) {
                out[y * w + x] = 1;
            }
        }
    }
    return out;
}

SurfaceDistances surface_distances(Mask pred, Mask gt, std::size_t h, std::size_t w, std::uint8_t cls) {
    if (pred.size() != gt.size()) throw ShapeError("metric masks differ in size");
    const auto bp = boundary(pred, h, w, cls);
    const auto bg = boundary(gt, h, w, cls);
    const bool empty_p = std::none_of(bp.begin(), bp.end(), [](std::uint8_t v) { return v != 0; });
    const bool empty_g = std::none_of(bg.begin(), bg.end(), [](std::uint8_t v) { return v != 0; });
    if (empty_p && empty_g) return {0.0, 0.0};
    if (empty_p || empty_g) return {kInfinity, kInfinity};
    const auto p_to_g = directed(bp, squared_distance_to(bg, h, w));
    const auto g_to_p = directed(bg, squared_distance_to(bp, h, w));
    SurfaceDistances out;
    out.hd95 = std::max(nearest_rank_95(p_to_g), nearest_rank_95(g_to_p));
    double sum = 0.0;
    for (double d : p_to_g) sum += d;
    for (double d : g_to_p) sum += d;
    out.asd = sum / static_cast<double>(p_to_g.size() + g_to_p.size());
    return out;
}

double disagreement(const LabelMap& pred1, const LabelMap& pred2, std::size_t classes) {
    return losses::dice_loss(one_hot(pred1, classes), one_hot(pred2, classes), losses::kDiceEps).loss;
}

double mean_entropy(const uncertainty::UncertaintyMap& map) {
    const auto v = map.values.values();
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double mean_entropy(const std::vector<uncertainty::UncertaintyMap>& maps) {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& m : maps) {
        for (double x : m.values.values()) s += x;
        n += m.values.size();
    }
    return n == 0 ? 0.0 : s / static_cast<double>(n);
}

MetricRecord evaluate_sample(Mask pred, Mask gt, std::size_t h, std::size_t w, std::size_t classes, std::int64_t id) {
    if (classes < 2) throw PreconditionError("metrics need at least one foreground class");
    MetricRecord r;
    r.id = id;
    const double n_fg = static_cast<double>(classes - 1);
    for (std::size_t c = 1; c < classes; ++c) {
        const auto cls = static_cast<std::uint8_t>(c);
        r.dsc += dsc(pred, gt, cls) / n_fg;
        r.jaccard += jaccard(pred, gt, cls) / n_fg;
        const auto sd = surface_distances(pred, gt, h, w, cls);
        r.hd95 += sd.hd95 / n_fg;
        r.asd += sd.asd / n_fg;
    }
    return r;
}

Aggregate aggregate(const std::vector<MetricRecord>& records) {
    Aggregate a;
    a.count = records.size();
    std::size_t finite = 0;
    for (const auto& r : records) {
        a.dsc += r.dsc;
        a.jaccard += r.jaccard;
        if (std::isfinite(r.hd95) && std::isfinite(r.asd)) {
            a.hd95 += r.hd95;
            a.asd += r.asd;
            ++finite;
        } else {
            ++a.infinite;
        }
    }
    if (a.count > 0) {
        a.dsc /= static_cast<double>(a.count);
        a.jaccard /= static_cast<double>(a.count);
    }
    if (finite > 0) {
        a.hd95 /= static_cast<double>(finite);
        a.asd /= static_cast<double>(finite);
    }
    return a;
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricRecord>& records) {
    char d[40], j[40], h[40], s[40];
    out << "id,dsc,jaccard,hd95,asd\n";
    for (const auto& r : records) {
        format_value(d, sizeof d, r.dsc);
        format_value(j, sizeof j, r.jaccard);
        format_value(h, sizeof h, r.hd95);
        format_value(s, sizeof s, r.asd);
        out << r.id << ',' << d << ',' << j << ',' << h << ',' << s << '\n';
    }
    const Aggregate a = aggregate(records);
    format_value(d, sizeof d, a.dsc);
    format_value(j, sizeof j, a.jaccard);
    format_value(h, sizeof h, a.hd95);
    format_value(s, sizeof s, a.asd);
    out << "mean," << d << ',' << j << ',' << h << ',' << s << '\n';
}

double mean_dsc(const LabelMap& pred, const LabelMap& gt, std::size_t classes) {
    if (pred.batch != gt.batch || pred.plane() != gt.plane()) throw ShapeError("mean_dsc: label maps differ");
    double total = 0.0;
    for (std::size_t b = 0; b < pred.batch; ++b) {
        double per = 0.0;
        for (std::size_t c = 1; c < classes; ++c) per += dsc(pred.item(b), gt.item(b), static_cast<std::uint8_t>(c));
        total += per / static_cast<double>(classes - 1);
    }
    return pred.batch == 0 ? 0.0 : total / static_cast<double>(pred.batch);
}

}  // namespace ucmt::metrics
