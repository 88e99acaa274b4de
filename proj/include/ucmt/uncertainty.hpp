#pragma once

#include <cstddef>
#include <filesystem>

#include "ucmt/tensor.hpp"

namespace ucmt::uncertainty {

// Per-pixel entropy in nats, shape [B, H, W].
struct UncertaintyMap {
    Tensor values;
    int source_student = 0;  // 1 or 2; 0 when not tied to a student

    [[nodiscard]] std::size_t batch() const { return values.dim(0); }
    [[nodiscard]] std::size_t height() const { return values.dim(1); }
    [[nodiscard]] std::size_t width() const { return values.dim(2); }
};

// 0.5 * (softmax(student) + softmax(teacher)).
Tensor fused_probability(const Tensor& student_logits, const Tensor& teacher_logits);

// Same, for probabilities that are already normalized.
Tensor fused_from_probs(const Tensor& student_probs, const Tensor& teacher_probs);

// -sum_c P_c ln P_c with 0 ln 0 = 0. Throws ValidationError when a pixel's
// channel sum is off by more than 1e-6 or a value is negative.
UncertaintyMap entropy_map(const Tensor& probs);

UncertaintyMap student_uncertainty(int student, const Tensor& student_logits, const Tensor& teacher_logits);

// Writes one row-major CSV grid per batch item: <prefix>_<b>.csv.
void export_csv(const UncertaintyMap& map, const std::filesystem::path& dir, const std::string& prefix);

}  // namespace ucmt::uncertainty
