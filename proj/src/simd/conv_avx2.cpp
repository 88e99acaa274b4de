// Built with -mavx2 -mfma (see src/CMakeLists.txt). Only reached through
// the dispatch table after a CPU feature check.

#include <immintrin.h>

#include "ucmt/simd/conv_kernels.hpp"

namespace ucmt::simd {
namespace {

inline double hsum(__m256d v) {
    const __m128d lo = _mm256_castpd256_pd128(v);
    const __m128d hi = _mm256_extractf128_pd(v, 1);
    const __m128d s = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

// Block of CB output channels; 8 columns per step, then 4, then scalar.
template <int CB>
void forward_block(const ConvGeometry& g, const double* in, const double* w, const double* bias, double* out,
                   std::size_t co0) {
    const std::size_t k = g.kernel;
    const std::size_t kk = k * k;
    const std::size_t wp = g.width + k - 1;
    const std::size_t hp_wp = (g.height + k - 1) * wp;
    const std::size_t plane = g.height * g.width;
    const std::size_t cin = g.in_channels;

    double b[CB];
    for (int j = 0; j < CB; ++j) b[j] = bias != nullptr ? bias[co0 + j] : 0.0;
    const double* wbase[CB];
    for (int j = 0; j < CB; ++j) wbase[j] = w + (co0 + j) * cin * kk;

    for (std::size_t y = 0; y < g.height; ++y) {
        std::size_t x = 0;
        for (; x + 8 <= g.width; x += 8) {
            __m256d acc0[CB];
            __m256d acc1[CB];
            for (int j = 0; j < CB; ++j) {
                acc0[j] = _mm256_set1_pd(b[j]);
                acc1[j] = acc0[j];
            }
            for (std::size_t ci = 0; ci < cin; ++ci) {
                const double* src = in + ci * hp_wp + y * wp + x;
                const std::size_t woff = ci * kk;
                for (std::size_t ky = 0; ky < k; ++ky) {
                    const double* row = src + ky * wp;
                    for (std::size_t kx = 0; kx < k; ++kx) {
                        const __m256d v0 = _mm256_loadu_pd(row + kx);
                        const __m256d v1 = _mm256_loadu_pd(row + kx + 4);
                        const std::size_t wi = woff + ky * k + kx;
                        for (int j = 0; j < CB; ++j) {
                            const __m256d wv = _mm256_broadcast_sd(wbase[j] + wi);
                            acc0[j] = _mm256_fmadd_pd(wv, v0, acc0[j]);
                            acc1[j] = _mm256_fmadd_pd(wv, v1, acc1[j]);
                        }
                    }
                }
            }
            for (int j = 0; j < CB; ++j) {
                double* dst = out + (co0 + j) * plane + y * g.width + x;
                _mm256_storeu_pd(dst, acc0[j]);
                _mm256_storeu_pd(dst + 4, acc1[j]);
            }
        }
        for (; x + 4 <= g.width; x += 4) {
            __m256d acc[CB];
            for (int j = 0; j < CB; ++j) acc[j] = _mm256_set1_pd(b[j]);
            for (std::size_t ci = 0; ci < cin; ++ci) {
                const double* src = in + ci * hp_wp + y * wp + x;
                for (std::size_t ky = 0; ky < k; ++ky) {
                    for (std::size_t kx = 0; kx < k; ++kx) {
                        const __m256d v = _mm256_loadu_pd(src + ky * wp + kx);
                        const std::size_t wi = ci * kk + ky * k + kx;
                        for (int j = 0; j < CB; ++j) {
                            acc[j] = _mm256_fmadd_pd(_mm256_broadcast_sd(wbase[j] + wi), v, acc[j]);
                        }
                    }
                }
            }
            for (int j = 0; j < CB; ++j) _mm256_storeu_pd(out + (co0 + j) * plane + y * g.width + x, acc[j]);
        }
        for (; x < g.width; ++x) {
            for (int j = 0; j < CB; ++j) {
                double acc = b[j];
                for (std::size_t ci = 0; ci < cin; ++ci) {
                    const double* src = in + ci * hp_wp + y * wp + x;
                    for (std::size_t ky = 0; ky < k; ++ky) {
                        for (std::size_t kx = 0; kx < k; ++kx) {
                            acc += wbase[j][ci * kk + ky * k + kx] * src[ky * wp + kx];
                        }
                    }
                }
                out[(co0 + j) * plane + y * g.width + x] = acc;
            }
        }
    }
}

// 3x3 specialization: CB output channels x NV vectors of columns per step.
template <int CB, int NV>
inline void forward3_tile(const double* src, std::size_t wp, std::size_t hp_wp, std::size_t cin,
                          const double* const* wbase, const double* b, double* const* dst) {
    __m256d acc[CB][NV];
    for (int j = 0; j < CB; ++j)
        for (int v = 0; v < NV; ++v) acc[j][v] = _mm256_set1_pd(b[j]);
    for (std::size_t ci = 0; ci < cin; ++ci) {
        const double* plane = src + ci * hp_wp;
        const std::size_t woff = ci * 9;
        for (int ky = 0; ky < 3; ++ky) {
            const double* row = plane + ky * wp;
            for (int kx = 0; kx < 3; ++kx) {
                __m256d in[NV];
                for (int v = 0; v < NV; ++v) in[v] = _mm256_loadu_pd(row + kx + 4 * v);
                for (int j = 0; j < CB; ++j) {
                    const __m256d wv = _mm256_broadcast_sd(wbase[j] + woff + ky * 3 + kx);
                    for (int v = 0; v < NV; ++v) acc[j][v] = _mm256_fmadd_pd(wv, in[v], acc[j][v]);
                }
            }
        }
    }
    for (int j = 0; j < CB; ++j)
        for (int v = 0; v < NV; ++v) _mm256_storeu_pd(dst[j] + 4 * v, acc[j][v]);
}

// One output row for CB output channels starting at co0.
template <int CB>
void forward3_row(const ConvGeometry& g, const double* in, const double* w, const double* bias, double* out,
                  std::size_t co0, std::size_t y) {
    const std::size_t wp = g.width + 2;
    const std::size_t hp_wp = (g.height + 2) * wp;
    const std::size_t plane = g.height * g.width;
    const std::size_t cin = g.in_channels;
    double b[CB];
    const double* wbase[CB];
    double* dst[CB];
    for (int j = 0; j < CB; ++j) {
        b[j] = bias != nullptr ? bias[co0 + j] : 0.0;
        wbase[j] = w + (co0 + j) * cin * 9;
    }
    const auto set_dst = [&](std::size_t col) {
        for (int j = 0; j < CB; ++j) dst[j] = out + (co0 + j) * plane + y * g.width + col;
    };
    std::size_t x = 0;
    for (; x + 12 <= g.width; x += 12) {
        set_dst(x);
        forward3_tile<CB, 3>(in + y * wp + x, wp, hp_wp, cin, wbase, b, dst);
    }
    for (; x + 4 <= g.width; x += 4) {
        set_dst(x);
        forward3_tile<CB, 1>(in + y * wp + x, wp, hp_wp, cin, wbase, b, dst);
    }
    for (; x < g.width; ++x) {
        for (int j = 0; j < CB; ++j) {
            double acc = b[j];
            for (std::size_t ci = 0; ci < cin; ++ci) {
                const double* src = in + ci * hp_wp + y * wp + x;
                for (std::size_t ky = 0; ky < 3; ++ky)
                    for (std::size_t kx = 0; kx < 3; ++kx) acc += wbase[j][ci * 9 + ky * 3 + kx] * src[ky * wp + kx];
            }
            out[(co0 + j) * plane + y * g.width + x] = acc;
        }
    }
}

void conv_forward_avx2(const ConvGeometry& g, const double* in, const double* w, const double* bias,
                       double* out) {
    std::size_t co = 0;
    if (g.kernel == 3) {
        // Row-major outer loop keeps the three input rows of every channel hot.
        for (std::size_t y = 0; y < g.height; ++y) {
            std::size_t c = 0;
            for (; c + 4 <= g.out_channels; c += 4) forward3_row<4>(g, in, w, bias, out, c, y);
            switch (g.out_channels - c) {
                case 3: forward3_row<3>(g, in, w, bias, out, c, y); break;
                case 2: forward3_row<2>(g, in, w, bias, out, c, y); break;
                case 1: forward3_row<1>(g, in, w, bias, out, c, y); break;
                default: break;
            }
        }
        return;
    }
    for (; co + 4 <= g.out_channels; co += 4) forward_block<4>(g, in, w, bias, out, co);
    switch (g.out_channels - co) {
        case 3: forward_block<3>(g, in, w, bias, out, co); break;
        case 2: forward_block<2>(g, in, w, bias, out, co); break;
        case 1: forward_block<1>(g, in, w, bias, out, co); break;
        default: break;
    }
}

// 3x3 taps accumulated together so each grad_out vector is loaded once.
void weight_grad_3x3(const ConvGeometry& g, const double* in_plane, const double* go, double* gwk) {
    const std::size_t wp = g.width + 2;
    __m256d acc[9];
    for (auto& a : acc) a = _mm256_setzero_pd();
    double tail[9] = {};
    for (std::size_t y = 0; y < g.height; ++y) {
        const double* grow = go + y * g.width;
        const double* r0 = in_plane + y * wp;
        const double* r1 = r0 + wp;
        const double* r2 = r1 + wp;
        std::size_t x = 0;
        for (; x + 4 <= g.width; x += 4) {
            const __m256d gv = _mm256_loadu_pd(grow + x);
            acc[0] = _mm256_fmadd_pd(gv, _mm256_loadu_pd(r0 + x), acc[0]);
            acc[1] = _mm256_fmadd_pd(gv, _mm256_loadu_pd(r0 + x + 1), acc[1]);
            acc[2] = _mm256_fmadd_pd(gv, _mm256_loadu_pd(r0 + x + 2), acc[2]);
            acc[3] = _mm256_fmadd_pd(gv, _mm256_loadu_pd(r1 + x), acc[3]);
            acc[4] = _mm256_fmadd_pd(gv, _mm256_loadu_pd(r1 + x + 1), acc[4]);
            acc[5] = _mm256_fmadd_pd(gv, _mm256_loadu_pd(r1 + x + 2), acc[5]);
            acc[6] = _mm256_fmadd_pd(gv, _mm256_loadu_pd(r2 + x), acc[6]);
            acc[7] = _mm256_fmadd_pd(gv, _mm256_loadu_pd(r2 + x + 1), acc[7]);
            acc[8] = _mm256_fmadd_pd(gv, _mm256_loadu_pd(r2 + x + 2), acc[8]);
        }
        for (; x < g.width; ++x) {
            const double gs = grow[x];
            for (std::size_t kx = 0; kx < 3; ++kx) {
                tail[kx] += gs * r0[x + kx];
                tail[3 + kx] += gs * r1[x + kx];
                tail[6 + kx] += gs * r2[x + kx];
            }
        }
    }
    for (int t = 0; t < 9; ++t) gwk[t] += hsum(acc[t]) + tail[t];
}

void weight_grad_generic(const ConvGeometry& g, const double* in_plane, const double* go, double* gwk) {
    const std::size_t k = g.kernel;
    const std::size_t wp = g.width + k - 1;
    for (std::size_t ky = 0; ky < k; ++ky) {
        for (std::size_t kx = 0; kx < k; ++kx) {
            __m256d acc = _mm256_setzero_pd();
            double tail = 0.0;
            for (std::size_t y = 0; y < g.height; ++y) {
                const double* grow = go + y * g.width;
                const double* row = in_plane + (y + ky) * wp + kx;
                std::size_t x = 0;
                for (; x + 4 <= g.width; x += 4) {
                    acc = _mm256_fmadd_pd(_mm256_loadu_pd(grow + x), _mm256_loadu_pd(row + x), acc);
                }
                for (; x < g.width; ++x) tail += grow[x] * row[x];
            }
            gwk[ky * k + kx] += hsum(acc) + tail;
        }
    }
}

void conv_weight_grad_avx2(const ConvGeometry& g, const double* in, const double* gout, double* gw,
                           double* gb) {
    const std::size_t k = g.kernel;
    const std::size_t hp_wp = (g.height + k - 1) * (g.width + k - 1);
    const std::size_t plane = g.height * g.width;
    for (std::size_t co = 0; co < g.out_channels; ++co) {
        const double* go = gout + co * plane;
        if (gb != nullptr) {
            __m256d acc = _mm256_setzero_pd();
            std::size_t p = 0;
            for (; p + 4 <= plane; p += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(go + p));
            double s = hsum(acc);
            for (; p < plane; ++p) s += go[p];
            gb[co] += s;
        }
        for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
            double* gwk = gw + (co * g.in_channels + ci) * k * k;
            if (k == 3) {
                weight_grad_3x3(g, in + ci * hp_wp, go, gwk);
            } else {
                weight_grad_generic(g, in + ci * hp_wp, go, gwk);
            }
        }
    }
}

}  // namespace

const KernelTable& avx2_kernel_table() noexcept {
    static const KernelTable table{Isa::avx2, "avx2", &conv_forward_avx2, &conv_weight_grad_avx2};
    return table;
}

}  // namespace ucmt::simd
