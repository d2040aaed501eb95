// Copyright Contributors to the spikesplat project
// SPDX-License-Identifier: Apache-2.0

#include "spikesplat/rng.hpp"

#include "spikesplat/common.hpp"

namespace spikesplat {
namespace {

// log(k!) for k = 0..9, used by the PTRD acceptance test
constexpr double kLogFact[10] = {
    0.0,
    0.0,
    0.6931471805599453,
    1.791759469228055,
    3.1780538303479458,
    4.787491742782046,
    6.579251212010101,
    8.525161361065415,
    10.604602902745251,
    12.801827480081469,
};

} // namespace

uint64_t Rng::poisson(double lambda) {
    if (!(lambda >= 0.0) || !std::isfinite(lambda))
        throw invalid_parameter_error("poisson: lambda must be finite and >= 0");
    if (lambda == 0.0) return 0;

    if (lambda < 30.0) {
        // Knuth: multiply uniforms until the product drops below exp(-lambda)
        const double limit = std::exp(-lambda);
        uint64_t k = 0;
        double prod = next_double_open();
        while (prod > limit) {
            ++k;
            prod *= next_double_open();
        }
        return k;
    }

    // PTRD transformed rejection (Hoermann 1993), constant expected cost
    const double smu = std::sqrt(lambda);
    const double b = 0.931 + 2.53 * smu;
    const double a = -0.059 + 0.02483 * b;
    const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    const double v_r = 0.9277 - 3.6224 / (b - 2.0);
    const double log_sqrt_2pi = 0.9189385332046727;

    for (;;) {
        double u;
        double v = next_double();
        if (v <= 0.86 * v_r) {
            u = v / v_r - 0.43;
            double us = 0.5 - std::fabs(u);
            return static_cast<uint64_t>(
                std::floor((2.0 * a / us + b) * u + lambda + 0.445));
        }
        if (v >= v_r) {
            u = next_double() - 0.5;
        } else {
            u = v / v_r - 0.93;
            u = (u < 0.0 ? -0.5 : 0.5) - u;
            v = next_double() * v_r;
        }
        double us = 0.5 - std::fabs(u);
        if (us < 0.013 && v > us) continue;
        double k = std::floor((2.0 * a / us + b) * u + lambda + 0.445);
        v = v * inv_alpha / (a / (us * us) + b);
        if (k >= 10.0) {
            double lhs = std::log(v * smu);
            double rhs = (k + 0.5) * std::log(lambda / k) - lambda - log_sqrt_2pi +
                         k - (1.0 / 12.0 - 1.0 / (360.0 * k * k)) / k;
            if (lhs <= rhs) return static_cast<uint64_t>(k);
        } else if (k >= 0.0) {
            double lhs = std::log(v);
            double rhs =
                k * std::log(lambda) - lambda - kLogFact[static_cast<int>(k)];
            if (lhs <= rhs) return static_cast<uint64_t>(k);
        }
    }
}

} // namespace spikesplat
