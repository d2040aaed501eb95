// Copyright Contributors to the spikesplat project
// SPDX-License-Identifier: Apache-2.0

#include "spikesplat/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace spikesplat {
namespace {

int default_threads() {
    if (const char* env = std::getenv("SPIKESPLAT_THREADS")) {
        int n = std::atoi(env);
        if (n > 0) return n;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}

std::atomic<int> g_max_threads{0}; // 0 = not set yet

} // namespace

int max_threads() {
    int n = g_max_threads.load(std::memory_order_relaxed);
    if (n <= 0) {
        n = default_threads();
        g_max_threads.store(n, std::memory_order_relaxed);
    }
    return n;
}

void set_max_threads(int n) { g_max_threads.store(std::max(1, n), std::memory_order_relaxed); }

void parallel_chunks(int begin, int end, const std::function<void(int, int, int)>& fn) {
    const int total = end - begin;
    if (total <= 0) return;
    const int nthreads = std::min(max_threads(), total);
    if (nthreads <= 1) {
        fn(0, begin, end);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(nthreads);
    const int base = total / nthreads;
    const int extra = total % nthreads;
    int at = begin;
    for (int t = 0; t < nthreads; ++t) {
        const int len = base + (t < extra ? 1 : 0);
        const int lo = at, hi = at + len;
        at = hi;
        pool.emplace_back([&fn, t, lo, hi]() { fn(t, lo, hi); });
    }
    for (auto& th : pool) th.join();
}

} // namespace spikesplat
