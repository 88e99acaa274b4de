#pragma once

// Uncertainty-guided region mixing (UMIX) and the CutMix baseline.
//
// UMIX lays a grid of r equal cells over the image. For each student m the
// k cells with the highest mean entropy under U^m receive, rank for rank,
// the k lowest-entropy cells under the other student's map. All copies read
// from the original image, and the label map moves with the image.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <vector>

#include "ucmt/tensor.hpp"
#include "ucmt/uncertainty.hpp"

namespace ucmt::mixer {

struct RegionGrid {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t cell_h = 0;
    std::size_t cell_w = 0;
    std::size_t r = 0;

    [[nodiscard]] std::size_t height() const noexcept { return rows * cell_h; }
    [[nodiscard]] std::size_t width() const noexcept { return cols * cell_w; }
    bool operator==(const RegionGrid&) const = default;
};

// Closest-to-square factorization rows * cols = r with rows | H and cols | W
// (ties: rows <= cols). PreconditionError for r < 2, GeometryError when no
// factor pair divides the image.
RegionGrid partition(std::size_t height, std::size_t width, std::size_t r);

// Mean entropy of every cell of batch item `item`, in cell-index order
// (row-major over the grid).
std::vector<double> region_scores(const uncertainty::UncertaintyMap& map, std::size_t item, const RegionGrid& grid);

enum class SelectMode { most_uncertain, most_certain };

// k cell indices in rank order (descending score for most_uncertain,
// ascending for most_certain), ties to the lower index. Requires 1 <= k <= r/2.
std::vector<std::size_t> select_topk(const std::vector<double>& scores, std::size_t k, SelectMode mode);

struct SwapTriple {
    std::size_t recipient;
    std::size_t donor;
    int source_map;  // map whose certain cell donates: 2 for U1-driven swaps, 1 for U2-driven
    bool operator==(const SwapTriple&) const = default;
};

struct SwapPlan {
    std::vector<SwapTriple> triples;
    std::size_t k = 0;
};

// Rank pairs before recipient deduplication: first the U1-driven pairs
// (uncertain_i(U1) <- certain_i(U2)), then the U2-driven ones.
std::vector<SwapTriple> ranked_pairs(const std::vector<double>& scores1, const std::vector<double>& scores2,
                                     std::size_t k);

// ranked_pairs with collisions resolved: a recipient chosen by both halves
// keeps only its U2-driven (source 1) triple.
SwapPlan build_swap_plan(const std::vector<double>& scores1, const std::vector<double>& scores2, std::size_t k);

SwapPlan build_swap_plan(const uncertainty::UncertaintyMap& u1, const uncertainty::UncertaintyMap& u2,
                         std::size_t item, const RegionGrid& grid, std::size_t k);

struct Mixed {
    Tensor images;    // [B, Cin, H, W]
    LabelMap labels;  // [B, H, W]
};

// Applies plans[b] to item b of both tensors. Donor cells are always read
// from the inputs, so the result does not depend on triple order.
Mixed apply_umix(const Tensor& images, const LabelMap& labels, const std::vector<SwapPlan>& plans,
                 const RegionGrid& grid);

struct UmixResult {
    Mixed mixed;
    RegionGrid grid;
    std::vector<SwapPlan> plans;
};

// partition -> scores -> plan -> apply, per batch item. RNG-free.
UmixResult umix(const Tensor& images, const LabelMap& labels, const uncertainty::UncertaintyMap& u1,
                const uncertainty::UncertaintyMap& u2, std::size_t k, std::size_t r);

void write_plan_csv(std::ostream& out, const SwapPlan& plan);

struct Box {
    std::size_t y0 = 0, x0 = 0, h = 0, w = 0;
};

// Rectangle with area fraction `area` of an H x W image, placed uniformly at
// random so that it lies inside the image.
Box cutmix_box(std::size_t height, std::size_t width, double area, std::uint64_t seed);

// Pastes box content of item b of (images_b, labels_b) into a copy of
// (images_a, labels_a). Every item draws its own box from `seed`.
Mixed cutmix(const Tensor& images_a, const LabelMap& labels_a, const Tensor& images_b, const LabelMap& labels_b,
             std::uint64_t seed);

// Same with a fixed area fraction for every item.
Mixed cutmix_with_area(const Tensor& images_a, const LabelMap& labels_a, const Tensor& images_b,
                       const LabelMap& labels_b, double area, std::uint64_t seed);

// Batch reversal partner: item i mixes with item B-1-i.
Mixed cutmix_reversed(const Tensor& images, const LabelMap& labels, std::uint64_t seed);

}  // namespace ucmt::mixer
