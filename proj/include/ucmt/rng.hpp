#pragma once

#include <cmath>
#include <cstdint>

namespace ucmt {

// Counter-based generator: the n-th draw of a stream is a pure function of
// (key, n), so streams can be split per sample or per tensor without any
// shared state. Conversions to real numbers are done here rather than with
// <random> distributions, whose output is implementation-defined.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t key) noexcept : key_(mix(key ^ 0x6a09e667f3bcc909ULL)) {}

    static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Derive an independent stream, e.g. one per sample id.
    [[nodiscard]] CounterRng substream(std::uint64_t id) const noexcept {
        return CounterRng(mix(key_ ^ mix(id + 0x3c6ef372fe94f82bULL)));
    }

    std::uint64_t next_u64() noexcept { return mix(key_ + mix(counter_++)); }

    // Uniform on [0, 1).
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi].
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) noexcept {
        const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<std::int64_t>(next_u64() % span);
    }

    // Standard normal via Box-Muller (one value per call, the pair's twin is dropped).
    double normal() noexcept {
        const double u1 = 1.0 - uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    [[nodiscard]] std::uint64_t counter() const noexcept { return counter_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace ucmt
