// Times one forward+backward of the default network on a 64x64 batch for
// each available kernel variant.

#include <algorithm>
#include <chrono>
#include <cstdio>

#include "ucmt/gridnet.hpp"
#include "ucmt/rng.hpp"
#include "ucmt/simd/conv_kernels.hpp"

int main() {
    using namespace ucmt;
    const auto spec = gridnet::default_spec(1, 2);
    const auto params = gridnet::init_params(spec, 1);
    Tensor batch({8, 1, 64, 64});
    CounterRng rng(3);
    for (double& v : batch.values()) v = rng.uniform();
    Tensor grad({8, 2, 64, 64});
    for (double& v : grad.values()) v = rng.uniform(-1, 1);

    for (auto isa : {simd::Isa::scalar, simd::Isa::avx2}) {
        if (!simd::select_kernels(isa)) continue;
        double fwd = 1e9, bwd = 1e9;
        gridnet::NetGrads grads;
        for (int rep = 0; rep < 5; ++rep) {
            const auto t0 = std::chrono::steady_clock::now();
            const auto trace = gridnet::forward_trace(params, batch);
            const auto t1 = std::chrono::steady_clock::now();
            grads = gridnet::backward(params, trace, grad);
            const auto t2 = std::chrono::steady_clock::now();
            fwd = std::min(fwd, std::chrono::duration<double>(t1 - t0).count());
            bwd = std::min(bwd, std::chrono::duration<double>(t2 - t1).count());
        }
        const double macs = 8.0 * 64 * 64 * static_cast<double>(spec.parameter_count());
        std::printf("%-6s forward %.3fs (%.2f GMAC/s)  backward %.3fs  checksum %.6f\n",
                    simd::active_kernels().name, fwd, macs / fwd * 1e-9, bwd, grads.tensors[0][0]);
    }
}
