#pragma once

// Two-student / EMA-teacher training loop and its ablation variants.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <mutex>
#include <string>
#include <vector>

#include "ucmt/config.hpp"
#include "ucmt/data.hpp"
#include "ucmt/gridnet.hpp"
#include "ucmt/losses.hpp"
#include "ucmt/metrics.hpp"
#include "ucmt/mixer.hpp"
#include "ucmt/uncertainty.hpp"

namespace ucmt::trainer {

using gridnet::AdamWState;
using gridnet::LayerSpec;
using gridnet::NetParams;

struct TriadState {
    NetParams teacher;
    NetParams student1;
    NetParams student2;
    AdamWState opt1;
    AdamWState opt2;
    std::int64_t t = 0;
    std::uint64_t rng_seed = 0;
    std::uint64_t ema_updates = 0;
};

// student1 <- init(seed_init1), student2 <- init(seed_init2). The teacher
// starts as beta*student1 + (1-beta)*student2 for two-student methods and as
// a copy of student1 otherwise.
TriadState init_triad(const TrainConfig& cfg, const LayerSpec& spec);
TriadState init_triad(const TrainConfig& cfg);

// teacher <- alpha*teacher + (1-alpha)*(beta*student1 + (1-beta)*student2).
void ema_update(TriadState& state, double alpha, double beta);
// Same, but a single-student architecture tracks student1 alone.
void ema_update(TriadState& state, double alpha, double beta, Architecture arch);

struct StudentGradients {
    losses::LossReport report;
    Tensor probs1;  // over [labeled; unlabeled] when the unlabeled batch takes part
    Tensor probs2;  // empty for single-student architectures
    gridnet::NetGrads grad1;
    gridnet::NetGrads grad2;
};

// Loss and parameter gradients of the students without touching the state.
// Hardened targets (the other student's argmax, the teacher labels) are
// constants. DivergenceError on a non-finite loss.
StudentGradients student_gradients(const TriadState& state, const TrainConfig& cfg, const Tensor& images_l,
                                   const LabelMap& labels_l, const Tensor& images_u, const LabelMap* teacher_target,
                                   const losses::RampConfig& ramp);

struct Phase1Output {
    losses::LossReport report;
    // Uncertainty maps from the pre-update networks. The second-student maps
    // are empty for single-student architectures; labeled maps are filled
    // only when the configuration mixes with umix.
    uncertainty::UncertaintyMap u1_labeled;
    uncertainty::UncertaintyMap u2_labeled;
    uncertainty::UncertaintyMap u1_unlabeled;
    uncertainty::UncertaintyMap u2_unlabeled;
    LabelMap teacher_pseudo;  // hardened pre-update teacher output on the unlabeled batch
    double mean_entropy = 0.0;
};

// Forward, loss, one AdamW step per trained student, one EMA update.
// Does not advance state.t. DivergenceError on a non-finite loss.
Phase1Output step_phase1(TriadState& state, const data::LabeledBatch& labeled, const data::UnlabeledBatch& unlabeled,
                         const TrainConfig& cfg, const losses::RampConfig& ramp);

// Same machinery on mixed inputs; the teacher term uses `mixed_pseudo`
// unless cfg.fresh_phase2_target is set.
losses::LossReport step_phase2(TriadState& state, const Tensor& mixed_labeled_images, const LabelMap& mixed_labels,
                               const Tensor& mixed_unlabeled_images, const LabelMap& mixed_pseudo,
                               const TrainConfig& cfg, const losses::RampConfig& ramp);

struct MixedInputs {
    mixer::Mixed labeled;
    mixer::Mixed unlabeled;  // labels hold the mixed pseudo labels
};

// Phase-2 inputs for the configured mix; seeds for cutmix derive from the
// data seed and t.
MixedInputs mix_inputs(const Phase1Output& p1, const data::LabeledBatch& labeled,
                       const data::UnlabeledBatch& unlabeled, const TrainConfig& cfg, std::int64_t t);

struct IterationResult {
    losses::LossReport report;  // phase-1 losses
    double mean_entropy = 0.0;
};

// phase 1, optional mix + phase 2, then t += 1.
IterationResult run_iteration(TriadState& state, const data::LabeledBatch& labeled,
                              const data::UnlabeledBatch& unlabeled, const TrainConfig& cfg,
                              const losses::RampConfig& ramp);

struct HistoryRecord {
    losses::LossReport loss;
    double disagreement = 0.0;
    double mean_entropy = 0.0;
    double val_dsc = 0.0;  // most recent validation (per epoch, and before training)
};

// Append-only record sink that another thread may drain.
class HistoryChannel {
public:
    void push(const HistoryRecord& record);
    std::vector<HistoryRecord> drain();
    std::size_t pending() const;

private:
    mutable std::mutex mutex_;
    std::vector<HistoryRecord> records_;
};

struct TrainingData {
    data::Split split;
    std::vector<data::Sample> validation;
};

// Quantized synthetic samples split per cfg, plus a held-out validation set
// generated from the same data seed under disjoint ids.
TrainingData make_training_data(const TrainConfig& cfg);
std::vector<data::Sample> make_validation(const TrainConfig& cfg);

inline constexpr std::int64_t kValidationFirstId = 1000000;

struct TrainResult {
    TriadState state;
    std::vector<HistoryRecord> history;
    bool diverged = false;
    std::string error;
};

// Iterations per epoch and in total (the ramp length).
std::size_t iterations_per_epoch(const TrainConfig& cfg, const TrainingData& data);

TrainResult run_training(const TrainConfig& cfg, const TrainingData& data, HistoryChannel* channel = nullptr);

// Teacher predictions on samples with masks, one record per sample.
std::vector<metrics::MetricRecord> evaluate(const NetParams& params, const std::vector<data::Sample>& samples,
                                            std::size_t classes);
double teacher_dsc(const NetParams& params, const std::vector<data::Sample>& samples, std::size_t classes);

void write_history_csv(std::ostream& out, const std::vector<HistoryRecord>& history);
std::vector<HistoryRecord> read_history_csv(std::istream& in);

// teacher.bin, student1.bin, student2.bin and triad.manifest under dir.
void save_triad(const TriadState& state, const TrainConfig& cfg, const std::filesystem::path& dir);
TriadState load_triad(const std::filesystem::path& dir);

}  // namespace ucmt::trainer
