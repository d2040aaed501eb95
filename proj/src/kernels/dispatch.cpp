// Copyright Contributors to the spikesplat project
// SPDX-License-Identifier: Apache-2.0

#include "spikesplat/kernels.hpp"

#include "spikesplat/common.hpp"

#include <atomic>

namespace spikesplat::kernels {

#if defined(__x86_64__) || defined(_M_X64)
const KernelTable* avx2_table_impl();
#endif

const KernelTable* avx2_table() {
#if defined(__x86_64__) || defined(_M_X64)
    if (__builtin_cpu_supports("avx2")) return avx2_table_impl();
#endif
    return nullptr;
}

namespace {
std::atomic<const KernelTable*> g_forced{nullptr};

const KernelTable* detect() {
    if (const KernelTable* t = avx2_table()) return t;
    return &scalar_table();
}
} // namespace

const KernelTable& active() {
    const KernelTable* forced = g_forced.load(std::memory_order_acquire);
    if (forced) return *forced;
    static const KernelTable* detected = detect();
    return *detected;
}

void force_backend(Backend b) {
    switch (b) {
    case Backend::automatic:
        g_forced.store(nullptr, std::memory_order_release);
        return;
    case Backend::scalar:
        g_forced.store(&scalar_table(), std::memory_order_release);
        return;
    case Backend::avx2: {
        const KernelTable* t = avx2_table();
        if (!t) throw invalid_parameter_error("avx2 backend not available on this CPU");
        g_forced.store(t, std::memory_order_release);
        return;
    }
    }
    throw invalid_parameter_error("unknown kernel backend");
}

} // namespace spikesplat::kernels
