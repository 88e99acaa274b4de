#pragma once

// Inner loops of the same-padding 2-D convolution, in a scalar reference
// flavour and an AVX2/FMA flavour. The AVX2 translation unit is compiled
// with -mavx2 -mfma, so this header deliberately exposes only plain types
// and function pointers (no inline templates that could leak vector code
// into callers through ODR merging).

#include <cstddef>

namespace ucmt::simd {

// One image, one layer. Input planes are zero-padded by kernel/2 on every
// side: padded width = width + kernel - 1, same for height.
struct ConvGeometry {
    std::size_t in_channels;
    std::size_t out_channels;
    std::size_t kernel;  // odd
    std::size_t height;
    std::size_t width;
};

// out[co][y][x] = bias[co] + sum_{ci,ky,kx} w[co][ci][ky][kx] * in_padded[ci][y+ky][x+kx]
// bias may be null (treated as zero). out is overwritten.
using ConvForwardFn = void (*)(const ConvGeometry& g, const double* in_padded, const double* weights,
                               const double* bias, double* out);

// grad_w[co][ci][ky][kx] += sum_{y,x} grad_out[co][y][x] * in_padded[ci][y+ky][x+kx]
// grad_b[co]             += sum_{y,x} grad_out[co][y][x]
using ConvWeightGradFn = void (*)(const ConvGeometry& g, const double* in_padded, const double* grad_out,
                                  double* grad_weights, double* grad_bias);

enum class Isa { scalar, avx2 };

struct KernelTable {
    Isa isa;
    const char* name;
    ConvForwardFn conv_forward;
    ConvWeightGradFn conv_weight_grad;
};

const KernelTable& scalar_kernels() noexcept;

// Null when the build has no AVX2 variant or the CPU lacks AVX2+FMA.
const KernelTable* avx2_kernels() noexcept;

// Kernels used by the network. Chosen once from CPU features; the UCMT_SIMD
// environment variable ("scalar" or "avx2") overrides the choice.
const KernelTable& active_kernels() noexcept;

// Force a variant (tests, benchmarks). Returns false if it is unavailable.
bool select_kernels(Isa isa) noexcept;

}  // namespace ucmt::simd
