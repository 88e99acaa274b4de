#include "ucmt/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "ucmt/errors.hpp"
#include "ucmt/gridnet.hpp"

namespace ucmt::uncertainty {

Tensor fused_from_probs(const Tensor& student_probs, const Tensor& teacher_probs) {
    require_same_shape(student_probs, teacher_probs, "fused_probability");
    Tensor out(student_probs.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * (student_probs[i] + teacher_probs[i]);
    return out;
}

Tensor fused_probability(const Tensor& student_logits, const Tensor& teacher_logits) {
    require_same_shape(student_logits, teacher_logits, "fused_probability");
    return fused_from_probs(gridnet::softmax_channels(student_logits), gridnet::softmax_channels(teacher_logits));
}

UncertaintyMap entropy_map(const Tensor& probs) {
    if (probs.rank() != 4) throw ShapeError("entropy_map expects [B,C,H,W], got " + shape_string(probs.shape()));
    const std::size_t b_n = probs.dim(0), c_n = probs.dim(1), h = probs.dim(2), w = probs.dim(3);
    const std::size_t plane = h * w;
    UncertaintyMap out{Tensor({b_n, h, w}), 0};
    for (std::size_t b = 0; b < b_n; ++b) {
        const double* p = probs.data() + b * c_n * plane;
        for (std::size_t q = 0; q < plane; ++q) {
            double sum = 0.0;
            double ent = 0.0;
            for (std::size_t c = 0; c < c_n; ++c) {
                const double v = p[c * plane + q];
                if (v < 0.0) throw ValidationError("entropy_map: negative probability");
                sum += v;
                if (v > 0.0) ent -= v * std::log(v);
            }
            if (std::abs(sum - 1.0) > 1e-6) {
                throw ValidationError("entropy_map: channel sum " + std::to_string(sum) + " at item " +
                                      std::to_string(b) + " pixel " + std::to_string(q));
            }
            // Rounding can leave -0 or a hair above ln C; clamp to the exact bounds.
            out.values[b * plane + q] = std::clamp(ent, 0.0, std::log(static_cast<double>(c_n)));
        }
    }
    return out;
}

UncertaintyMap student_uncertainty(int student, const Tensor& student_logits, const Tensor& teacher_logits) {
    if (student != 1 && student != 2) throw PreconditionError("student index must be 1 or 2");
    auto map = entropy_map(fused_probability(student_logits, teacher_logits));
    map.source_student = student;
    return map;
}

void export_csv(const UncertaintyMap& map, const std::filesystem::path& dir, const std::string& prefix) {
    std::filesystem::create_directories(dir);
    const std::size_t h = map.height(), w = map.width();
    for (std::size_t b = 0; b < map.batch(); ++b) {
        const auto path = dir / (prefix + "_" + std::to_string(b) + ".csv");
        std::ofstream out(path);
        if (!out) throw IoError("cannot write " + path.string());
        char buf[32];
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                std::snprintf(buf, sizeof buf, "%.17g", map.values[(b * h + y) * w + x]);
                out << (x == 0 ? "" : ",") << buf;
            }
            out << '\n';
        }
    }
}

}  // namespace ucmt::uncertainty
