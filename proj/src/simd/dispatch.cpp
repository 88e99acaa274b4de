#include <atomic>
#include <cstdlib>
#include <string_view>

#include "ucmt/simd/conv_kernels.hpp"

namespace ucmt::simd {

#if defined(UCMT_HAVE_AVX2)
const KernelTable& avx2_kernel_table() noexcept;
#endif

namespace {

bool cpu_has_avx2() noexcept {
#if defined(UCMT_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const KernelTable* initial_choice() noexcept {
    const char* env = std::getenv("UCMT_SIMD");
    if (env != nullptr && std::string_view(env) == "scalar") return &scalar_kernels();
    if (const KernelTable* avx = avx2_kernels()) return avx;
    return &scalar_kernels();
}

std::atomic<const KernelTable*>& active_slot() noexcept {
    static std::atomic<const KernelTable*> slot{initial_choice()};
    return slot;
}

}  // namespace

const KernelTable* avx2_kernels() noexcept {
#if defined(UCMT_HAVE_AVX2)
    static const bool supported = cpu_has_avx2();
    return supported ? &avx2_kernel_table() : nullptr;
#else
    return nullptr;
#endif
}

const KernelTable& active_kernels() noexcept { return *active_slot().load(std::memory_order_acquire); }

bool select_kernels(Isa isa) noexcept {
    const KernelTable* table = isa == Isa::scalar ? &scalar_kernels() : avx2_kernels();
    if (table == nullptr) return false;
    active_slot().store(table, std::memory_order_release);
    return true;
}

}  // namespace ucmt::simd
