#include "ucmt/simd/conv_kernels.hpp"

namespace ucmt::simd {
namespace {

void conv_forward_scalar(const ConvGeometry& g, const double* in, const double* w, const double* bias,
                         double* out) {
    const std::size_t k = g.kernel;
    const std::size_t wp = g.width + k - 1;
    const std::size_t hp = g.height + k - 1;
    for (std::size_t co = 0; co < g.out_channels; ++co) {
        double* out_plane = out + co * g.height * g.width;
        for (std::size_t y = 0; y < g.height; ++y) {
            for (std::size_t x = 0; x < g.width; ++x) {
                double acc = bias != nullptr ? bias[co] : 0.0;
                for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
                    const double* in_plane = in + ci * hp * wp;
                    const double* wk = w + (co * g.in_channels + ci) * k * k;
                    for (std::size_t ky = 0; ky < k; ++ky) {
                        for (std::size_t kx = 0; kx < k; ++kx) {
                            acc += wk[ky * k + kx] * in_plane[(y + ky) * wp + x + kx];
                        }
                    }
                }
                out_plane[y * g.width + x] = acc;
            }
        }
    }
}

void conv_weight_grad_scalar(const ConvGeometry& g, const double* in, const double* gout, double* gw,
                             double* gb) {
    const std::size_t k = g.kernel;
    const std::size_t wp = g.width + k - 1;
    const std::size_t hp = g.height + k - 1;
    const std::size_t plane = g.height * g.width;
    for (std::size_t co = 0; co < g.out_channels; ++co) {
        const double* go = gout + co * plane;
        if (gb != nullptr) {
            double s = 0.0;
            for (std::size_t p = 0; p < plane; ++p) s += go[p];
            gb[co] += s;
        }
        for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
            const double* in_plane = in + ci * hp * wp;
            double* gwk = gw + (co * g.in_channels + ci) * k * k;
            for (std::size_t ky = 0; ky < k; ++ky) {
                for (std::size_t kx = 0; kx < k; ++kx) {
                    double s = 0.0;
                    for (std::size_t y = 0; y < g.height; ++y) {
                        const double* row = in_plane + (y + ky) * wp + kx;
                        const double* grow = go + y * g.width;
                        for (std::size_t x = 0; x < g.width; ++x) s += grow[x] * row[x];
                    }
                    gwk[ky * k + kx] += s;
                }
            }
        }
    }
}

}  // namespace

const KernelTable& scalar_kernels() noexcept {
    static const KernelTable table{Isa::scalar, "scalar", &conv_forward_scalar, &conv_weight_grad_scalar};
    return table;
}

}  // namespace ucmt::simd
