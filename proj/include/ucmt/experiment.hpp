#pragma once

// Multi-seed experiments, the (k, r) sweep, and curve reporting.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "ucmt/config.hpp"
#include "ucmt/trainer.hpp"

namespace ucmt::experiment {

// Replicate s draws (init1, init2, data) = (3s+1, 3s+2, 3s+3); replicate 0
// reproduces the default seeds.
TrainConfig with_replicate(TrainConfig cfg, std::uint64_t replicate);

struct ExperimentSpec {
    std::string name;
    TrainConfig cfg;
    std::vector<std::uint64_t> replicates;  // empty: run cfg's own seeds once
    std::filesystem::path out;              // empty: keep nothing on disk
};

struct RunSummary {
    std::uint64_t replicate = 0;
    double final_dsc = 0.0;  // teacher on the held-out set
    bool diverged = false;
    std::vector<trainer::HistoryRecord> history;
    std::filesystem::path history_path;
};

struct ExperimentResult {
    std::vector<RunSummary> runs;
    double mean_dsc = 0.0;
};

// Each run writes <out>/<name>/rep<s>/history.csv when out is set.
ExperimentResult run_experiment(const ExperimentSpec& spec);

struct SweepSpec {
    TrainConfig base;
    std::vector<std::size_t> ks = {1, 2, 3, 4, 5};
    std::vector<std::size_t> rs = {16, 4, 8};
    std::vector<std::uint64_t> replicates;
};

struct SweepCell {
    std::size_t k = 0;
    std::size_t r = 0;
    std::size_t k_effective = 0;  // min(k, r/2)
    double mean_dsc = 0.0;
    std::vector<double> dsc;
    bool diverged = false;
};

// One cell per (k, r). When `table` is given, its header and each finished
// row are written and flushed as they complete.
std::vector<SweepCell> run_sweep(const SweepSpec& spec, std::ostream* table = nullptr);
void write_sweep_header(std::ostream& out);
void write_sweep_row(std::ostream& out, const SweepCell& cell);
// Rows 1/r, columns k, mean teacher DSC.
void write_sweep_matrix(std::ostream& out, const SweepSpec& spec, const std::vector<SweepCell>& cells);

struct CurveInput {
    std::string label;
    std::vector<trainer::HistoryRecord> history;
};

struct CurvePoint {
    std::string method;
    std::int64_t t = 0;
    std::string series;
    double value = 0.0;
};

struct CurveSet {
    std::vector<CurvePoint> points;
    std::vector<std::string> methods;
    std::vector<std::string> warnings;
};

inline const std::vector<std::string>& curve_series() {
    static const std::vector<std::string> names = {"disagreement", "mean_entropy", "val_dsc"};
    return names;
}

// Inputs sharing a label are averaged per t. Differing t grids are resampled
// onto the coarsest one (latest record at or before each t), with a warning.
CurveSet merge_curves(const std::vector<CurveInput>& inputs);
void write_curves_csv(std::ostream& out, const CurveSet& curves);
std::string render_svg(const CurveSet& curves, const std::string& series);

}  // namespace ucmt::experiment
