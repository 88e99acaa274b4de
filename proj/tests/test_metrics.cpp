#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "support.hpp"
#include "ucmt/metrics.hpp"

using namespace ucmt;
using namespace ucmt::metrics;

namespace {

using Bytes = std::vector<std::uint8_t>;

Bytes random_mask(std::size_t h, std::size_t w, std::uint64_t seed, double p = 0.4) {
    CounterRng rng(seed);
    Bytes m(h * w);
    for (auto& v : m) v = rng.uniform() < p ? 1 : 0;
    return m;
}

// Blobby masks: a few random rectangles, so boundaries are not just noise.
Bytes blob_mask(std::size_t h, std::size_t w, std::uint64_t seed) {
    CounterRng rng(seed);
    Bytes m(h * w, 0);
    const auto n = rng.uniform_int(0, 3);
    for (std::int64_t i = 0; i < n; ++i) {
        const auto y0 = rng.uniform_int(0, static_cast<std::int64_t>(h) - 1);
        const auto x0 = rng.uniform_int(0, static_cast<std::int64_t>(w) - 1);
        const auto y1 = std::min<std::int64_t>(static_cast<std::int64_t>(h), y0 + rng.uniform_int(1, 6));
        const auto x1 = std::min<std::int64_t>(static_cast<std::int64_t>(w), x0 + rng.uniform_int(1, 6));
        for (auto y = y0; y < y1; ++y)
            for (auto x = x0; x < x1; ++x) m[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)] = 1;
    }
    return m;
}

struct Pt {
    double y, x;
};

std::vector<Pt> brute_boundary(const Bytes& m, std::size_t h, std::size_t w) {
    std::vector<Pt> out;
    auto fg = [&](long y, long x) {
        return y >= 0 && x >= 0 && y < static_cast<long>(h) && x < static_cast<long>(w) && m[y * w + x] == 1;
    };
    for (long y = 0; y < static_cast<long>(h); ++y)
        for (long x = 0; x < static_cast<long>(w); ++x)
            if (fg(y, x) && (!fg(y - 1, x) || !fg(y + 1, x) || !fg(y, x - 1) || !fg(y, x + 1)))
                out.push_back({static_cast<double>(y), static_cast<double>(x)});
    return out;
}

std::vector<double> directed(const std::vector<Pt>& a, const std::vector<Pt>& b) {
    std::vector<double> d;
    for (const auto& p : a) {
        double best = kInfinity;
        for (const auto& q : b) best = std::min(best, std::hypot(p.y - q.y, p.x - q.x));
        d.push_back(best);
    }
    return d;
}

double p95(std::vector<double> d) {
    std::sort(d.begin(), d.end());
    const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(d.size())));
    return d[std::max<std::size_t>(rank, 1) - 1];
}

double mean(const std::vector<double>& d) {
    double s = 0;
    for (double v : d) s += v;
    return s / static_cast<double>(d.size());
}

struct Oracle {
    double hd95, asd, hausdorff, max_directed_mean;
};

Oracle brute(const Bytes& p, const Bytes& g, std::size_t h, std::size_t w) {
    const auto bp = brute_boundary(p, h, w), bg = brute_boundary(g, h, w);
    if (bp.empty() && bg.empty()) return {0, 0, 0, 0};
    if (bp.empty() || bg.empty()) return {kInfinity, kInfinity, kInfinity, kInfinity};
    const auto d1 = directed(bp, bg), d2 = directed(bg, bp);
    std::vector<double> pooled = d1;
    pooled.insert(pooled.end(), d2.begin(), d2.end());
    return {std::max(p95(d1), p95(d2)), mean(pooled),
            std::max(*std::max_element(d1.begin(), d1.end()), *std::max_element(d2.begin(), d2.end())),
            std::max(mean(d1), mean(d2))};
}

}  // namespace

TEST_CASE("overlap examples") {
    Bytes a(16 * 8, 0), b(16 * 8, 0);
    for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 16; ++x) {
            a[y * 16 + x] = x < 8;
            b[y * 16 + x] = x >= 4 && x < 12;
        }
    CHECK(dsc(a, a, 1) == 1.0);
    CHECK(jaccard(a, a, 1) == 1.0);
    CHECK(dsc(a, b, 1) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(jaccard(a, b, 1) == doctest::Approx(1.0 / 3).epsilon(1e-15));
    Bytes c(16 * 8, 0);
    for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 8; x < 16; ++x) c[y * 16 + x] = 1;
    CHECK(dsc(a, c, 1) == 0.0);
    const Bytes empty(16 * 8, 0);
    CHECK(dsc(empty, empty, 1) == 1.0);
    CHECK(jaccard(empty, empty, 1) == 1.0);
    CHECK(dsc(empty, a, 1) == 0.0);
}

TEST_CASE("overlap matches set computation and the dsc-jaccard relation") {
    for (std::uint64_t s = 0; s < 200; ++s) {
        const Bytes p = random_mask(8, 8, 2 * s, 0.1 + 0.004 * static_cast<double>(s));
        const Bytes g = random_mask(8, 8, 2 * s + 1);
        std::size_t inter = 0, uni = 0, np = 0, ng = 0;
        for (std::size_t i = 0; i < 64; ++i) {
            inter += p[i] && g[i];
            uni += p[i] || g[i];
            np += p[i];
            ng += g[i];
        }
        const double j = jaccard(p, g, 1), d = dsc(p, g, 1);
        REQUIRE(j == doctest::Approx(static_cast<double>(inter) / static_cast<double>(uni)).epsilon(1e-15));
        REQUIRE(d == doctest::Approx(2.0 * static_cast<double>(inter) / static_cast<double>(np + ng)).epsilon(1e-15));
        REQUIRE(std::abs(d - 2 * j / (1 + j)) < 1e-9);
        REQUIRE(j <= d);
    }
}

TEST_CASE("surface distance examples") {
    Bytes a(8 * 8, 0), b(8 * 8, 0);
    a[2 * 8 + 1] = 1;
    b[2 * 8 + 4] = 1;
    const SurfaceDistances d = surface_distances(a, b, 8, 8, 1);
    CHECK(d.hd95 == 3.0);
    CHECK(d.asd == 3.0);
    const SurfaceDistances same = surface_distances(a, a, 8, 8, 1);
    CHECK(same.hd95 == 0.0);
    CHECK(same.asd == 0.0);
    const Bytes empty(64, 0);
    const SurfaceDistances none = surface_distances(empty, empty, 8, 8, 1);
    CHECK(none.hd95 == 0.0);
    CHECK(none.asd == 0.0);
    const SurfaceDistances one = surface_distances(a, empty, 8, 8, 1);
    CHECK(std::isinf(one.hd95));
    CHECK(std::isinf(one.asd));
}

TEST_CASE("boundary uses 4-neighbours with the border outside") {
    Bytes full(5 * 5, 1);
    const auto b = boundary(full, 5, 5, 1);
    for (std::size_t y = 0; y < 5; ++y)
        for (std::size_t x = 0; x < 5; ++x) CHECK(b[y * 5 + x] == (y == 0 || x == 0 || y == 4 || x == 4));
}

TEST_CASE("surface distances match the brute-force oracle") {
    for (std::uint64_t s = 0; s < 150; ++s) {
        const bool blobs = s % 2 == 0;
        const Bytes p = blobs ? blob_mask(12, 12, 3 * s) : random_mask(12, 12, 3 * s);
        const Bytes g = blobs ? blob_mask(12, 12, 3 * s + 1) : random_mask(12, 12, 3 * s + 1, 0.2);
        const SurfaceDistances d = surface_distances(p, g, 12, 12, 1);
        const Oracle o = brute(p, g, 12, 12);
        if (std::isinf(o.hd95)) {
            REQUIRE(std::isinf(d.hd95));
            REQUIRE(std::isinf(d.asd));
            continue;
        }
        REQUIRE(std::abs(d.hd95 - o.hd95) < 1e-9);
        REQUIRE(std::abs(d.asd - o.asd) < 1e-9);
        REQUIRE(d.hd95 <= o.hausdorff + 1e-12);
        REQUIRE(d.asd <= o.max_directed_mean + 1e-12);
    }
}

TEST_CASE("metrics are translation invariant") {
    for (std::uint64_t s = 0; s < 40; ++s) {
        // Masks live in the interior so a one-pixel shift stays off the border.
        Bytes p(14 * 14, 0), g(14 * 14, 0), ps(14 * 14, 0), gs(14 * 14, 0);
        const Bytes bp = blob_mask(10, 10, 5 * s), bg = blob_mask(10, 10, 5 * s + 1);
        for (std::size_t y = 0; y < 10; ++y)
            for (std::size_t x = 0; x < 10; ++x) {
                p[(y + 2) * 14 + x + 2] = bp[y * 10 + x];
                g[(y + 2) * 14 + x + 2] = bg[y * 10 + x];
                ps[(y + 3) * 14 + x + 1] = bp[y * 10 + x];
                gs[(y + 3) * 14 + x + 1] = bg[y * 10 + x];
            }
        const MetricRecord a = evaluate_sample(p, g, 14, 14, 2), b = evaluate_sample(ps, gs, 14, 14, 2);
        CHECK(a.dsc == b.dsc);
        CHECK(a.jaccard == b.jaccard);
        if (std::isinf(a.hd95)) {
            CHECK(std::isinf(b.hd95));
        } else {
            CHECK(a.hd95 == doctest::Approx(b.hd95).epsilon(1e-12));
            CHECK(a.asd == doctest::Approx(b.asd).epsilon(1e-12));
        }
    }
}

TEST_CASE("multi-class evaluation macro-averages foreground classes") {
    const Bytes p = {0, 1, 1, 2, 2, 0, 1, 2, 0};
    const Bytes g = {0, 1, 2, 2, 2, 0, 1, 1, 0};
    const MetricRecord r = evaluate_sample(p, g, 3, 3, 3, 42);
    CHECK(r.id == 42);
    CHECK(r.dsc == doctest::Approx(0.5 * (dsc(p, g, 1) + dsc(p, g, 2))).epsilon(1e-15));
    CHECK(r.jaccard == doctest::Approx(0.5 * (jaccard(p, g, 1) + jaccard(p, g, 2))).epsilon(1e-15));
}

TEST_CASE("disagreement") {
    const LabelMap a = testing::random_labels(2, 8, 8, 2, 1), b = testing::random_labels(2, 8, 8, 2, 2);
    CHECK(disagreement(a, a, 2) < 1e-6);
    LabelMap c = a;
    for (auto& v : c.labels) v = 1 - v;
    CHECK(disagreement(a, c, 2) > 1 - 1e-6);
    CHECK(disagreement(a, b, 2) == disagreement(b, a, 2));
}

TEST_CASE("mean entropy") {
    using uncertainty::UncertaintyMap;
    CHECK(mean_entropy(UncertaintyMap{Tensor({2, 4, 4}), 1}) == 0.0);
    CHECK(mean_entropy(UncertaintyMap{Tensor({2, 4, 4}, std::log(2.0)), 1}) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-15));
    const UncertaintyMap u1{testing::random_tensor({2, 4, 4}, 1, 0, 0.6), 1};
    const UncertaintyMap u2{testing::random_tensor({3, 4, 4}, 2, 0, 0.6), 2};
    double s = 0;
    for (double v : u1.values.values()) s += v;
    for (double v : u2.values.values()) s += v;
    CHECK(mean_entropy({u1, u2}) == doctest::Approx(s / 80).epsilon(1e-14));
}

TEST_CASE("aggregate and csv") {
    const std::vector<MetricRecord> rows{{1, 0.8, 0.6, 2.0, 1.0}, {2, 0.6, 0.4, kInfinity, kInfinity}, {3, 0.4, 0.2, 4.0, 3.0}};
    const Aggregate a = aggregate(rows);
    CHECK(a.count == 3);
    CHECK(a.infinite == 1);
    CHECK(a.dsc == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(a.hd95 == 3.0);
    CHECK(a.asd == 2.0);
    std::ostringstream os;
    write_metrics_csv(os, rows);
    const std::string text = os.str();
    CHECK(text.rfind("id,dsc,jaccard,hd95,asd\n", 0) == 0);
    CHECK(text.find("\n2,0.59999999999999998,0.40000000000000002,inf,inf\n") != std::string::npos);
    CHECK(text.find("\nmean,") != std::string::npos);
}

TEST_CASE("mean_dsc over a batch") {
    const LabelMap g = testing::random_labels(3, 6, 6, 2, 4);
    CHECK(mean_dsc(g, g, 2) == 1.0);
    const LabelMap p = testing::random_labels(3, 6, 6, 2, 5);
    double ref = 0;
    for (std::size_t b = 0; b < 3; ++b) ref += dsc(p.item(b), g.item(b), 1) / 3;
    CHECK(mean_dsc(p, g, 2) == doctest::Approx(ref).epsilon(1e-14));
}
