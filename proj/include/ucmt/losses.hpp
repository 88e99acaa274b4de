#pragma once

// Dice-based supervision terms, the Gaussian ramp-up weight and the total
// semi-supervised objective.

#include <cstddef>
#include <cstdint>

#include "ucmt/tensor.hpp"

namespace ucmt::losses {

inline constexpr double kDiceEps = 1e-6;

struct RampConfig {
    double lambda_max = 1.0;
    std::int64_t ramp_length = 1;  // t_m, in outer iterations
};

// lambda_max * exp(-5 (1 - min(t, t_m)/t_m)^2). Held at lambda_max past t_m.
double ramp_up(std::int64_t t, const RampConfig& cfg);

struct DiceResult {
    double loss = 0.0;
    Tensor grad;  // dloss/dprobs, same shape as probs
};

// 1 - mean_{b,c} (2 sum p g + eps) / (sum p + sum g + eps), sums over pixels.
DiceResult dice_loss(const Tensor& probs, const Tensor& target, double eps = kDiceEps);

// Per-pixel argmax over channels, lowest index on ties.
LabelMap harden(const Tensor& probs);

// A loss value together with its gradient for each student's probabilities.
// Students that do not take part have an empty gradient tensor.
struct PairLoss {
    double value = 0.0;
    Tensor grad1;
    Tensor grad2;
};

// dice(p1, Y) + dice(p2, Y), each averaged over the labeled minibatch.
// probs2 may be empty for single-student architectures.
PairLoss supervised_loss(const Tensor& probs1, const Tensor& probs2, const Tensor& target_onehot,
                         double eps = kDiceEps);

// dice(p1, onehot(harden(p2))) + dice(p2, onehot(harden(p1))). Hardened
// targets are constants: no gradient flows into the target branch.
PairLoss cps_loss(const Tensor& probs1, const Tensor& probs2, double eps = kDiceEps);

// dice(p1, onehot(teacher)) + dice(p2, onehot(teacher)); probs2 may be empty.
PairLoss mts_loss(const Tensor& probs1, const Tensor& probs2, const LabelMap& teacher_labels,
                  double eps = kDiceEps);

struct LossReport {
    double l_total = 0.0;
    double l_s = 0.0;
    double l_cps = 0.0;
    double l_mts = 0.0;
    double lambda = 0.0;
    std::int64_t t = 0;
};

// L = L_s + lambda(t) (L_cps + L_mts); disabled terms are reported as 0.
LossReport total_loss(double l_s, double l_cps, double l_mts, std::int64_t t, const RampConfig& cfg,
                      bool enable_cps, bool enable_mts);

}  // namespace ucmt::losses
