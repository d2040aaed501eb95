// Copyright Contributors to the spikesplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>

namespace spikesplat {

// Counter-based RNG. Every consumer derives an independent stream from
// (seed, stream tag, counter...) via a strong 64-bit mixer, so parallel and
// serial execution orders draw identical values, and resuming a run at
// iteration k needs no saved generator state.
//
// Core mixer is splitmix64 (Steele et al.); streams are splitmix sequences
// seeded by the mixed key.
class Rng {
public:
    explicit Rng(uint64_t state) : state_(state) {}

    static uint64_t mix(uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    static uint64_t key(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
        uint64_t k = mix(seed ^ 0x243f6a8885a308d3ULL);
        k = mix(k ^ a);
        k = mix(k ^ b);
        k = mix(k ^ c);
        return k;
    }

    static Rng stream(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
        return Rng(key(seed, a, b, c));
    }

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1). 53 mantissa bits.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform in (0, 1]; safe as a log() argument.
    double next_double_open() {
        return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    uint64_t next_below(uint64_t n) { return next_u64() % n; }

    double normal() {
        // Box-Muller; one value per call keeps the stream layout simple.
        double u1 = next_double_open();
        double u2 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    double exponential(double mean) {
        return mean <= 0.0 ? 0.0 : -mean * std::log(next_double_open());
    }

    // Poisson draw, deterministic across platforms (no std::poisson_distribution,
    // whose mapping is implementation-defined). Knuth product method below
    // lambda=30, PTRD transformed rejection (Hoermann 1993) above.
    uint64_t poisson(double lambda);

private:
    uint64_t state_;
};

} // namespace spikesplat
