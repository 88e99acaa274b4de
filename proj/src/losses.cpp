#include "ucmt/losses.hpp"

#include <algorithm>
#include <cmath>

#include "ucmt/errors.hpp"

namespace ucmt::losses {

double ramp_up(std::int64_t t, const RampConfig& cfg) {
    if (cfg.ramp_length < 1) throw ConfigError("ramp length t_m must be >= 1");
    const double tm = static_cast<double>(cfg.ramp_length);
    const double clamped = static_cast<double>(std::clamp<std::int64_t>(t, 0, cfg.ramp_length));
    const double phase = 1.0 - clamped / tm;
    return cfg.lambda_max * std::exp(-5.0 * phase * phase);
}

DiceResult dice_loss(const Tensor& probs, const Tensor& target, double eps) {
    require_same_shape(probs, target, "dice_loss");
    if (probs.rank() != 4) throw ShapeError("dice_loss expects [B,C,H,W], got " + shape_string(probs.shape()));
    const std::size_t b_n = probs.dim(0), c_n = probs.dim(1), plane = probs.dim(2) * probs.dim(3);
    if (b_n == 0) throw PreconditionError("dice_loss on an empty batch");
    DiceResult out{0.0, Tensor(probs.shape())};
    const double scale = 1.0 / static_cast<double>(b_n * c_n);
    double dice_sum = 0.0;
    for (std::size_t b = 0; b < b_n; ++b) {
        for (std::size_t c = 0; c < c_n; ++c) {
            const std::size_t off = (b * c_n + c) * plane;
            const double* p = probs.data() + off;
            const double* g = target.data() + off;
            double inter = 0.0, sp = 0.0, sg = 0.0;
            for (std::size_t q = 0; q < plane; ++q) {
                inter += p[q] * g[q];
                sp += p[q];
                sg += g[q];
            }
            const double num = 2.0 * inter + eps;
            const double den = sp + sg + eps;
            dice_sum += num / den;
            // d(num/den)/dp = (2 g den - num) / den^2; loss carries a minus sign.
            double* d = out.grad.data() + off;
            const double inv_den2 = 1.0 / (den * den);
            for (std::size_t q = 0; q < plane; ++q) d[q] = -scale * (2.0 * g[q] * den - num) * inv_den2;
        }
    }
    out.loss = 1.0 - scale * dice_sum;
    return out;
}

LabelMap harden(const Tensor& probs) {
    if (probs.rank() != 4 || probs.dim(1) < 2) {
        throw ShapeError("harden expects [B,C>=2,H,W], got " + shape_string(probs.shape()));
    }
    const std::size_t b_n = probs.dim(0), c_n = probs.dim(1), h = probs.dim(2), w = probs.dim(3);
    const std::size_t plane = h * w;
    LabelMap out(b_n, h, w);
    for (std::size_t b = 0; b < b_n; ++b) {
        const double* p = probs.data() + b * c_n * plane;
        for (std::size_t q = 0; q < plane; ++q) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < c_n; ++c) {
                if (p[c * plane + q] > p[best * plane + q]) best = c;
            }
            out.labels[b * plane + q] = static_cast<std::uint8_t>(best);
        }
    }
    return out;
}

PairLoss supervised_loss(const Tensor& probs1, const Tensor& probs2, const Tensor& target_onehot, double eps) {
    if (probs1.empty() || probs1.dim(0) == 0) throw PreconditionError("supervised_loss: empty labeled batch");
    auto d1 = dice_loss(probs1, target_onehot, eps);
    PairLoss out{d1.loss, std::move(d1.grad), Tensor()};
    if (!probs2.empty()) {
        auto d2 = dice_loss(probs2, target_onehot, eps);
        out.value += d2.loss;
        out.grad2 = std::move(d2.grad);
    }
    return out;
}

PairLoss cps_loss(const Tensor& probs1, const Tensor& probs2, double eps) {
    if (probs1.empty() || probs1.dim(0) == 0) throw PreconditionError("cps_loss: empty unlabeled batch");
    require_same_shape(probs1, probs2, "cps_loss");
    const std::size_t classes = probs1.dim(1);
    const Tensor target_from_2 = one_hot(harden(probs2), classes);
    const Tensor target_from_1 = one_hot(harden(probs1), classes);
    auto d1 = dice_loss(probs1, target_from_2, eps);
    auto d2 = dice_loss(probs2, target_from_1, eps);
    return {d1.loss + d2.loss, std::move(d1.grad), std::move(d2.grad)};
}

PairLoss mts_loss(const Tensor& probs1, const Tensor& probs2, const LabelMap& teacher_labels, double eps) {
    if (probs1.empty() || probs1.dim(0) == 0) throw PreconditionError("mts_loss: empty batch");
    const Tensor target = one_hot(teacher_labels, probs1.dim(1));
    auto d1 = dice_loss(probs1, target, eps);
    PairLoss out{d1.loss, std::move(d1.grad), Tensor()};
    if (!probs2.empty()) {
        auto d2 = dice_loss(probs2, target, eps);
        out.value += d2.loss;
        out.grad2 = std::move(d2.grad);
    }
    return out;
}

LossReport total_loss(double l_s, double l_cps, double l_mts, std::int64_t t, const RampConfig& cfg,
                      bool enable_cps, bool enable_mts) {
    LossReport r;
    r.t = t;
    r.lambda = ramp_up(t, cfg);
    r.l_s = l_s;
    r.l_cps = enable_cps ? l_cps : 0.0;
    r.l_mts = enable_mts ? l_mts : 0.0;
    r.l_total = r.l_s + r.lambda * (r.l_cps + r.l_mts);
    return r;
}

}  // namespace ucmt::losses
