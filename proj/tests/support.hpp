#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "ucmt/rng.hpp"
#include "ucmt/tensor.hpp"

namespace testing {

inline ucmt::Tensor random_tensor(ucmt::Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    ucmt::Tensor t(std::move(shape));
    ucmt::CounterRng rng(seed);
    for (double& v : t.values()) v = rng.uniform(lo, hi);
    return t;
}

// Random per-pixel distributions over the channel axis of [B, C, H, W].
inline ucmt::Tensor random_probs(ucmt::Shape shape, std::uint64_t seed) {
    ucmt::Tensor t = random_tensor(shape, seed, 0.01, 1.0);
    const std::size_t b_n = shape[0], c_n = shape[1], plane = shape[2] * shape[3];
    for (std::size_t b = 0; b < b_n; ++b) {
        for (std::size_t p = 0; p < plane; ++p) {
            double s = 0.0;
            for (std::size_t c = 0; c < c_n; ++c) s += t[(b * c_n + c) * plane + p];
            for (std::size_t c = 0; c < c_n; ++c) t[(b * c_n + c) * plane + p] /= s;
        }
    }
    return t;
}

inline ucmt::LabelMap random_labels(std::size_t b, std::size_t h, std::size_t w, std::size_t classes,
                                    std::uint64_t seed) {
    ucmt::LabelMap m(b, h, w);
    ucmt::CounterRng rng(seed);
    for (auto& v : m.labels) v = static_cast<std::uint8_t>(rng.uniform_int(0, static_cast<std::int64_t>(classes) - 1));
    return m;
}

// |a - n| / max(|a|, |n|), with `floor` keeping vanishing gradients from
// turning rounding noise into large ratios.
inline double rel_error(double analytic, double numeric, double floor = 1e-6) {
    return std::abs(analytic - numeric) / std::max({floor, std::abs(analytic), std::abs(numeric)});
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("ucmt_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace testing
