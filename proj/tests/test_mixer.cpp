#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <set>
#include <sstream>

#include "support.hpp"
#include "ucmt/errors.hpp"
#include "ucmt/mixer.hpp"

using namespace ucmt;
using namespace ucmt::mixer;
using uncertainty::UncertaintyMap;

namespace {

UncertaintyMap random_map(std::size_t b, std::size_t h, std::size_t w, std::uint64_t seed) {
    return UncertaintyMap{testing::random_tensor({b, h, w}, seed, 0.0, 0.69), 1};
}

// Map whose cell scores on `grid` are exactly `scores` (constant inside each cell).
UncertaintyMap cell_map(const RegionGrid& g, const std::vector<double>& scores) {
    UncertaintyMap u{Tensor({1, g.height(), g.width()}), 1};
    for (std::size_t y = 0; y < g.height(); ++y)
        for (std::size_t x = 0; x < g.width(); ++x)
            u.values[y * g.width() + x] = scores[(y / g.cell_h) * g.cols + x / g.cell_w];
    return u;
}

std::size_t cell_of(const RegionGrid& g, std::size_t y, std::size_t x) { return (y / g.cell_h) * g.cols + x / g.cell_w; }

// Per-pixel oracle: each pixel of a recipient cell takes the pixel at the
// same offset in its donor cell of the original image.
Mixed naive_apply(const Tensor& img, const LabelMap& lab, const std::vector<SwapPlan>& plans, const RegionGrid& g) {
    Mixed out{img, lab};
    for (std::size_t b = 0; b < img.dim(0); ++b) {
        std::vector<long> donor_of(g.r, -1);
        for (const auto& t : plans[b].triples) donor_of[t.recipient] = static_cast<long>(t.donor);
        for (std::size_t y = 0; y < g.height(); ++y)
            for (std::size_t x = 0; x < g.width(); ++x) {
                const long d = donor_of[cell_of(g, y, x)];
                if (d < 0) continue;
                const std::size_t dy = (static_cast<std::size_t>(d) / g.cols) * g.cell_h + y % g.cell_h;
                const std::size_t dx = (static_cast<std::size_t>(d) % g.cols) * g.cell_w + x % g.cell_w;
                for (std::size_t c = 0; c < img.dim(1); ++c) out.images.at(b, c, y, x) = img.at(b, c, dy, dx);
                out.labels.at(b, y, x) = lab.at(b, dy, dx);
            }
    }
    return out;
}

Tensor coordinate_image(std::size_t b, std::size_t h, std::size_t w) {
    Tensor t({b, 1, h, w});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i);
    return t;
}

}  // namespace

TEST_CASE("partition examples") {
    CHECK(partition(64, 64, 16) == RegionGrid{4, 4, 16, 16, 16});
    CHECK(partition(64, 64, 4) == RegionGrid{2, 2, 32, 32, 4});
    CHECK(partition(64, 64, 8) == RegionGrid{2, 4, 32, 16, 8});
    CHECK(partition(64, 64, 2) == RegionGrid{1, 2, 64, 32, 2});
    CHECK_THROWS_AS(partition(64, 64, 1), PreconditionError);
    CHECK_THROWS_AS(partition(63, 63, 4), GeometryError);
    for (std::size_t r : {2u, 4u, 6u, 8u, 9u, 12u, 16u}) {
        const RegionGrid g = partition(48, 48, r);
        CHECK(g.rows * g.cols == r);
        CHECK(g.rows * g.cell_h == 48);
        CHECK(g.cols * g.cell_w == 48);
        CHECK(g.rows <= g.cols);
    }
}

TEST_CASE("region scores") {
    const RegionGrid g = partition(8, 8, 4);
    UncertaintyMap flat{Tensor({1, 8, 8}, 0.3), 1};
    for (double s : region_scores(flat, 0, g)) CHECK(s == doctest::Approx(0.3).epsilon(1e-15));

    const UncertaintyMap one = cell_map(g, {0, 0, std::log(2.0), 0});
    const auto s = region_scores(one, 0, g);
    CHECK(s == std::vector<double>{0, 0, std::log(2.0), 0});

    const RegionGrid g16 = partition(16, 16, 16);
    const UncertaintyMap r = random_map(2, 16, 16, 5);
    for (std::size_t b = 0; b < 2; ++b) {
        std::vector<double> sum(16, 0.0);
        for (std::size_t y = 0; y < 16; ++y)
            for (std::size_t x = 0; x < 16; ++x) sum[cell_of(g16, y, x)] += r.values[(b * 16 + y) * 16 + x];
        const auto got = region_scores(r, b, g16);
        for (std::size_t c = 0; c < 16; ++c) CHECK(got[c] == doctest::Approx(sum[c] / 16).epsilon(1e-14));
    }
    CHECK_THROWS_AS(region_scores(random_map(1, 8, 8, 1), 0, g16), ShapeError);
}

TEST_CASE("select_topk examples and oracle") {
    const std::vector<double> s{0.1, 0.9, 0.5, 0.5};
    CHECK(select_topk(s, 1, SelectMode::most_uncertain) == std::vector<std::size_t>{1});
    CHECK(select_topk(s, 2, SelectMode::most_certain) == std::vector<std::size_t>{0, 2});
    CHECK(select_topk(s, 2, SelectMode::most_uncertain) == std::vector<std::size_t>{1, 2});
    CHECK_THROWS_AS(select_topk(s, 0, SelectMode::most_certain), PreconditionError);
    CHECK_THROWS_AS(select_topk(s, 3, SelectMode::most_certain), PreconditionError);

    CounterRng rng(17);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> v(16);
        // Coarse values so ties occur.
        for (double& x : v) x = static_cast<double>(rng.uniform_int(0, 5));
        const auto k = static_cast<std::size_t>(rng.uniform_int(1, 8));
        std::vector<std::size_t> idx(16);
        std::iota(idx.begin(), idx.end(), 0);
        auto hi = idx, lo = idx;
        std::stable_sort(hi.begin(), hi.end(), [&](auto a, auto b) { return v[a] > v[b]; });
        std::stable_sort(lo.begin(), lo.end(), [&](auto a, auto b) { return v[a] < v[b]; });
        hi.resize(k);
        lo.resize(k);
        REQUIRE(select_topk(v, k, SelectMode::most_uncertain) == hi);
        REQUIRE(select_topk(v, k, SelectMode::most_certain) == lo);
    }
}

TEST_CASE("swap plan hand trace") {
    const SwapPlan p = build_swap_plan(std::vector<double>{1, 0, 0, 0}, std::vector<double>{0, 0, 0, 1}, 1);
    REQUIRE(p.triples.size() == 2);
    CHECK(p.triples[0] == SwapTriple{0, 0, 2});
    CHECK(p.triples[1] == SwapTriple{3, 1, 1});
    CHECK(p.k == 1);
}

TEST_CASE("swap plan collisions keep the source-1 triple") {
    // Both maps are most uncertain in cell 2.
    const std::vector<double> s1{0.0, 0.1, 0.9, 0.2}, s2{0.3, 0.0, 0.8, 0.1};
    const auto raw = ranked_pairs(s1, s2, 1);
    REQUIRE(raw.size() == 2);
    CHECK(raw[0] == SwapTriple{2, 1, 2});
    CHECK(raw[1] == SwapTriple{2, 0, 1});
    const SwapPlan p = build_swap_plan(s1, s2, 1);
    REQUIRE(p.triples.size() == 1);
    CHECK(p.triples[0] == SwapTriple{2, 0, 1});
}

TEST_CASE("uniform maps give a no-op plan") {
    const RegionGrid g = partition(16, 16, 16);
    const UncertaintyMap u{Tensor({1, 16, 16}, 0.2), 1};
    const SwapPlan p = build_swap_plan(u, u, 0, g, 2);
    CHECK(p.triples.size() <= 2);
    for (const auto& t : p.triples) CHECK(t.donor == t.recipient);
    const Tensor img = coordinate_image(1, 16, 16);
    const LabelMap lab = testing::random_labels(1, 16, 16, 2, 3);
    const Mixed m = apply_umix(img, lab, {p}, g);
    CHECK(m.images == img);
    CHECK(m.labels == lab);
}

TEST_CASE("plan invariants on random maps") {
    const RegionGrid g = partition(16, 16, 16);
    for (std::uint64_t s = 0; s < 50; ++s) {
        const auto k = 1 + s % 8;
        const SwapPlan p = build_swap_plan(random_map(1, 16, 16, 2 * s), random_map(1, 16, 16, 2 * s + 1), 0, g, k);
        CHECK(p.triples.size() <= 2 * k);
        std::set<std::size_t> rec;
        for (const auto& t : p.triples) rec.insert(t.recipient);
        CHECK(rec.size() == p.triples.size());
    }
}

TEST_CASE("increasing k extends the ranked pairs") {
    CounterRng rng(3);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<double> a(16), b(16);
        for (double& x : a) x = rng.uniform();
        for (double& x : b) x = rng.uniform();
        for (std::size_t k = 1; k < 8; ++k) {
            const auto small = ranked_pairs(a, b, k), big = ranked_pairs(a, b, k + 1);
            for (std::size_t i = 0; i < k; ++i) {
                REQUIRE(big[i] == small[i]);
                REQUIRE(big[k + 1 + i] == small[k + i]);
            }
        }
    }
}

TEST_CASE("apply_umix copy semantics") {
    const RegionGrid g = partition(8, 8, 4);
    const Tensor img = coordinate_image(1, 8, 8);
    const LabelMap lab = testing::random_labels(1, 8, 8, 3, 4);
    const Mixed same = apply_umix(img, lab, {SwapPlan{}}, g);
    CHECK(same.images == img);
    CHECK(same.labels == lab);

    const Mixed m = apply_umix(img, lab, {SwapPlan{{{0, 3, 1}}, 1}}, g);
    for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x) {
            const std::size_t c = cell_of(g, y, x);
            if (c == 0)
                CHECK(m.images.at(0, 0, y, x) == img.at(0, 0, y + 4, x + 4));
            else
                CHECK(m.images.at(0, 0, y, x) == img.at(0, 0, y, x));
        }
    CHECK_THROWS_AS(apply_umix(img, lab, {SwapPlan{}}, partition(16, 16, 4)), ShapeError);
    CHECK_THROWS_AS(apply_umix(img, lab, {}, g), ShapeError);
}

TEST_CASE("apply_umix matches a per-pixel oracle and ignores triple order") {
    const RegionGrid g = partition(16, 16, 16);
    const Tensor img = testing::random_tensor({3, 2, 16, 16}, 8);
    const LabelMap lab = testing::random_labels(3, 16, 16, 3, 9);
    std::vector<SwapPlan> plans;
    for (std::size_t b = 0; b < 3; ++b)
        plans.push_back(build_swap_plan(random_map(1, 16, 16, 40 + b), random_map(1, 16, 16, 50 + b), 0, g, 2));
    const Mixed m = apply_umix(img, lab, plans, g);
    const Mixed ref = naive_apply(img, lab, plans, g);
    CHECK(m.images == ref.images);
    CHECK(m.labels == ref.labels);

    auto reversed = plans;
    for (auto& p : reversed) std::reverse(p.triples.begin(), p.triples.end());
    const Mixed r = apply_umix(img, lab, reversed, g);
    CHECK(r.images == m.images);
    CHECK(r.labels == m.labels);
}

TEST_CASE("umix is deterministic, local and keeps image and label together") {
    const Tensor img = coordinate_image(2, 64, 64);
    LabelMap lab(2, 64, 64);
    for (std::size_t i = 0; i < lab.labels.size(); ++i) lab.labels[i] = static_cast<std::uint8_t>(i % 251);
    const UncertaintyMap u1 = random_map(2, 64, 64, 61), u2 = random_map(2, 64, 64, 62);
    const UmixResult a = umix(img, lab, u1, u2, 2, 16);
    const UmixResult b = umix(img, lab, u1, u2, 2, 16);
    CHECK(a.mixed.images == b.mixed.images);
    CHECK(a.mixed.labels == b.mixed.labels);
    for (std::size_t item = 0; item < 2; ++item) {
        std::set<std::size_t> rec;
        for (const auto& t : a.plans[item].triples)
            if (t.donor != t.recipient) rec.insert(t.recipient);
        CHECK(rec.size() <= 4);
        std::set<std::size_t> changed;
        for (std::size_t y = 0; y < 64; ++y)
            for (std::size_t x = 0; x < 64; ++x) {
                const auto src = static_cast<std::size_t>(a.mixed.images.at(item, 0, y, x));
                // Coordinate image: the value names the pixel it came from.
                REQUIRE(a.mixed.labels.at(item, y, x) == lab.labels[src]);
                if (src != (item * 64 + y) * 64 + x) changed.insert(cell_of(a.grid, y, x));
            }
        CHECK(changed == rec);
    }
}

TEST_CASE("plan csv dump") {
    std::ostringstream os;
    write_plan_csv(os, SwapPlan{{{0, 0, 2}, {3, 1, 1}}, 1});
    CHECK(os.str() == "recipient_cell,donor_cell,source_map\n0,0,2\n3,1,1\n");
}

TEST_CASE("cutmix degenerate boxes and determinism") {
    const Tensor a = testing::random_tensor({2, 1, 16, 16}, 1), b = testing::random_tensor({2, 1, 16, 16}, 2);
    const LabelMap la = testing::random_labels(2, 16, 16, 2, 3), lb = testing::random_labels(2, 16, 16, 2, 4);
    const Mixed none = cutmix_with_area(a, la, b, lb, 0.0, 5);
    CHECK(none.images == a);
    CHECK(none.labels == la);
    const Mixed all = cutmix_with_area(a, la, b, lb, 1.0, 5);
    CHECK(all.images == b);
    CHECK(all.labels == lb);

    for (std::uint64_t s = 0; s < 50; ++s) {
        const Box x = cutmix_box(16, 16, 0.37, s), y = cutmix_box(16, 16, 0.37, s);
        CHECK(x.y0 == y.y0);
        CHECK(x.x0 == y.x0);
        CHECK(x.h == y.h);
        CHECK(x.w == y.w);
        CHECK(x.y0 + x.h <= 16);
        CHECK(x.x0 + x.w <= 16);
    }
    const Mixed m1 = cutmix(a, la, b, lb, 9), m2 = cutmix(a, la, b, lb, 9);
    CHECK(m1.images == m2.images);
    CHECK(m1.labels == m2.labels);
}

TEST_CASE("cutmix moves image and label together") {
    const Tensor a = coordinate_image(3, 16, 16);
    LabelMap la(3, 16, 16);
    for (std::size_t i = 0; i < la.labels.size(); ++i) la.labels[i] = static_cast<std::uint8_t>(i % 7);
    const Mixed m = cutmix_reversed(a, la, 11);
    for (std::size_t i = 0; i < m.labels.labels.size(); ++i) {
        const auto src = static_cast<std::size_t>(m.images[i]);
        REQUIRE(m.labels.labels[i] == la.labels[src]);
        // Pixels either stay or come from the reversed partner at the same position.
        const std::size_t plane = 256, b = i / plane, partner = 2 - b;
        REQUIRE((src == i || src == partner * plane + i % plane));
    }
}
