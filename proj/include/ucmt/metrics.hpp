#pragma once

// Overlap and surface-distance metrics for 2-D label maps, plus the two
// training diagnostics (student disagreement, mean pseudo-label entropy).

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <span>
#include <vector>

#include "ucmt/tensor.hpp"
#include "ucmt/uncertainty.hpp"

namespace ucmt::metrics {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

using Mask = std::span<const std::uint8_t>;

// 2|P∩G| / (|P|+|G|) for class c; 1 when both are empty.
double dsc(Mask pred, Mask gt, std::uint8_t cls);

// |P∩G| / |P∪G| for class c; 1 when both are empty.
double jaccard(Mask pred, Mask gt, std::uint8_t cls);

struct SurfaceDistances {
    double hd95 = 0.0;
    double asd = 0.0;
};

// Boundary pixels: class-c pixels with a 4-neighbour outside the class (the
// image border counts as outside). hd95 is the larger of the two directed
// nearest-rank 95th percentiles; asd averages the pooled directed
// distances. Both empty -> (0, 0); exactly one empty -> (+inf, +inf).
SurfaceDistances surface_distances(Mask pred, Mask gt, std::size_t height, std::size_t width, std::uint8_t cls);

// Boundary mask of class c, exposed for tests.
std::vector<std::uint8_t> boundary(Mask mask, std::size_t height, std::size_t width, std::uint8_t cls);

// Class-averaged dice loss (eps = 1e-6) between one-hot encodings of two
// hardened predictions.
double disagreement(const LabelMap& pred1, const LabelMap& pred2, std::size_t classes);

double mean_entropy(const uncertainty::UncertaintyMap& map);
double mean_entropy(const std::vector<uncertainty::UncertaintyMap>& maps);

struct MetricRecord {
    std::int64_t id = 0;
    double dsc = 0.0;
    double jaccard = 0.0;
    double hd95 = 0.0;
    double asd = 0.0;
};

// Foreground classes 1..C-1, macro-averaged. A surface distance is +inf if
// any class has one empty side.
MetricRecord evaluate_sample(Mask pred, Mask gt, std::size_t height, std::size_t width, std::size_t classes,
                             std::int64_t id = 0);

struct Aggregate {
    double dsc = 0.0;
    double jaccard = 0.0;
    double hd95 = 0.0;  // over finite rows only
    double asd = 0.0;   // over finite rows only
    std::size_t count = 0;
    std::size_t infinite = 0;  // rows excluded from hd95/asd means
};

Aggregate aggregate(const std::vector<MetricRecord>& records);

// id,dsc,jaccard,hd95,asd rows followed by a "mean" row; +inf is written as "inf".
void write_metrics_csv(std::ostream& out, const std::vector<MetricRecord>& records);

// Mean foreground DSC of hardened predictions against ground truth.
double mean_dsc(const LabelMap& pred, const LabelMap& gt, std::size_t classes);

}  // namespace ucmt::metrics
