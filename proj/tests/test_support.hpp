// Copyright Contributors to the spikesplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "spikesplat/rasterizer.hpp"
#include "spikesplat/rng.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace spikesplat::testing {

// Independent reference compositor: per pixel, every splat in global depth
// order, same footprint/skip/clamp/stop rules as the tiled path. Keeping the
// per-contribution arithmetic identical is what lets the equivalence test
// demand <= 1e-12 (in practice exact) agreement.
inline RenderOutput naive_rasterize(const std::vector<Splat2D>& splats, int width,
                                    int height, int channels) {
    RenderOutput out;
    out.image = Image(width, height, channels, 0.0);
    out.final_transmittance.assign(static_cast<size_t>(width) * height, 1.0);
    out.contrib_count.assign(static_cast<size_t>(width) * height, 0);

    std::vector<int> order(splats.size());
    for (size_t i = 0; i < splats.size(); ++i) order[i] = static_cast<int>(i);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (splats[a].depth != splats[b].depth) return splats[a].depth < splats[b].depth;
        return splats[a].source_index < splats[b].source_index;
    });
    out.sorted_order = order;

    std::vector<Eigen::Matrix2d> inv(splats.size());
    std::vector<bool> valid(splats.size());
    for (size_t i = 0; i < splats.size(); ++i) {
        const Eigen::Matrix2d& c = splats[i].cov2d;
        double det = c(0, 0) * c(1, 1) - c(0, 1) * c(1, 0);
        valid[i] = det > RasterConstants::kSingularDet;
        if (!valid[i]) {
            ++out.singular_skipped;
            continue;
        }
        inv[i] << c(1, 1) / det, -c(0, 1) / det, -c(1, 0) / det, c(0, 0) / det;
    }

    for (int py = 0; py < height; ++py) {
        for (int px = 0; px < width; ++px) {
            const Eigen::Vector2d pix(px + 0.5, py + 0.5);
            const size_t pi = static_cast<size_t>(py) * width + px;
            double transmit = 1.0;
            int count = 0;
            for (int idx : order) {
                if (!valid[idx]) continue;
                const Splat2D& s = splats[idx];
                const Eigen::Vector2d d = pix - s.mean2d;
                const double qf = d.dot(inv[idx] * d);
                if (qf > RasterConstants::kSupportQf) continue;
                double alpha = s.opacity * std::exp(-0.5 * qf);
                if (alpha > RasterConstants::kAlphaClamp)
                    alpha = RasterConstants::kAlphaClamp;
                if (alpha < RasterConstants::kAlphaSkip) continue;
                const double w = alpha * transmit;
                for (int c = 0; c < channels; ++c)
                    out.image.data[pi * channels + c] += w * s.color(c);
                ++count;
                transmit *= 1.0 - alpha;
                if (transmit < RasterConstants::kTransmitStop) break;
            }
            out.final_transmittance[pi] = transmit;
            out.contrib_count[pi] = count;
        }
    }
    return out;
}

inline Splat2D random_splat(Rng& rng, int width, int height, int channels,
                            int source_index, double alpha_lo = 0.15,
                            double alpha_hi = 0.6) {
    Splat2D s;
    s.mean2d = Eigen::Vector2d(rng.uniform(-2.0, width + 2.0),
                               rng.uniform(-2.0, height + 2.0));
    const double theta = rng.uniform(0.0, 2.0 * M_PI);
    const double l1 = rng.uniform(0.6, 9.0);
    const double l2 = rng.uniform(0.6, 9.0);
    Eigen::Matrix2d rot;
    rot << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
    s.cov2d = rot * Eigen::Vector2d(l1, l2).asDiagonal() * rot.transpose();
    s.cov2d = (0.5 * (s.cov2d + s.cov2d.transpose())).eval();
    s.depth = rng.uniform(0.5, 10.0);
    s.color = Eigen::Vector3d::Zero();
    for (int c = 0; c < channels; ++c) s.color(c) = rng.uniform(0.05, 0.95);
    s.opacity = rng.uniform(alpha_lo, alpha_hi);
    s.source_index = source_index;
    return s;
}

// FD/analytic comparisons that keep margins away from the compositor's
// non-smooth boundaries. Returns false if any (pixel, splat) pair sits too
// close to the support cutoff, the skip threshold, the alpha clamp, or the
// transmittance stop; scenes failing this are regenerated from the next seed.
inline bool scene_has_safe_margins(const std::vector<Splat2D>& splats, int width,
                                   int height, double qf_margin = 0.05,
                                   double skip_margin = 1e-3,
                                   double stop_margin = 3e-4) {
    std::vector<int> order(splats.size());
    for (size_t i = 0; i < splats.size(); ++i) order[i] = static_cast<int>(i);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return splats[a].depth < splats[b].depth; });
    for (int py = 0; py < height; ++py) {
        for (int px = 0; px < width; ++px) {
            const Eigen::Vector2d pix(px + 0.5, py + 0.5);
            double transmit = 1.0;
            for (int idx : order) {
                const Splat2D& s = splats[idx];
                const Eigen::Matrix2d& c = s.cov2d;
                double det = c(0, 0) * c(1, 1) - c(0, 1) * c(1, 0);
                if (!(det > 1e-9)) return false;
                Eigen::Matrix2d inv;
                inv << c(1, 1) / det, -c(0, 1) / det, -c(1, 0) / det, c(0, 0) / det;
                const Eigen::Vector2d d = pix - s.mean2d;
                const double qf = d.dot(inv * d);
                if (std::fabs(qf - RasterConstants::kSupportQf) < qf_margin)
                    return false;
                if (qf > RasterConstants::kSupportQf) continue;
                double alpha = s.opacity * std::exp(-0.5 * qf);
                if (alpha > RasterConstants::kAlphaClamp - 1e-3) return false;
                if (std::fabs(alpha - RasterConstants::kAlphaSkip) < skip_margin)
                    return false;
                if (alpha < RasterConstants::kAlphaSkip) continue;
                transmit *= 1.0 - alpha;
            }
            if (transmit < RasterConstants::kTransmitStop + stop_margin) return false;
        }
    }
    return true;
}

inline double rel_err(double a, double b, double floor = 1e-8) {
    double denom = std::max({std::fabs(a), std::fabs(b), floor});
    return std::fabs(a - b) / denom;
}

// Central finite difference of a scalar functional via a parameter hook.
inline double central_fd(const std::function<void(double)>& set,
                         const std::function<double()>& eval, double base,
                         double eps) {
    set(base + eps);
    const double up = eval();
    set(base - eps);
    const double dn = eval();
    set(base);
    return (up - dn) / (2.0 * eps);
}

// quaternion product (w,x,y,z)
inline Eigen::Vector4d quat_mul(const Eigen::Vector4d& a, const Eigen::Vector4d& b) {
    return Eigen::Vector4d(
        a(0) * b(0) - a(1) * b(1) - a(2) * b(2) - a(3) * b(3),
        a(0) * b(1) + a(1) * b(0) + a(2) * b(3) - a(3) * b(2),
        a(0) * b(2) - a(1) * b(3) + a(2) * b(0) + a(3) * b(1),
        a(0) * b(3) + a(1) * b(2) - a(2) * b(1) + a(3) * b(0));
}

} // namespace spikesplat::testing
