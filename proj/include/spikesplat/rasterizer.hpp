// Copyright Contributors to the spikesplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "spikesplat/gaussian.hpp"

#include <vector>

namespace spikesplat {

// Compositing constants. A splat's footprint is its 3-sigma ellipse: pixels
// outside contribute exactly zero in both the tiled and the reference
// compositor, which is what makes the two agree to the last bit.
struct RasterConstants {
    static constexpr double kAlphaClamp = 0.99;
    static constexpr double kAlphaSkip = 1.0 / 255.0;
    static constexpr double kTransmitStop = 1e-4;
    static constexpr double kSupportQf = 9.0; // (3 sigma)^2
    static constexpr double kSingularDet = 1e-12;
};

struct TileBins {
    int tile_size = 16;
    int tiles_x = 0;
    int tiles_y = 0;
    // CSR lists of splat indices per tile, each depth-sorted (ties by
    // source_index ascending).
    std::vector<int> offsets;
    std::vector<int> indices;
    // Global depth order over all splats.
    std::vector<int> sorted_order;
};

struct RenderOutput {
    Image image; // H x W x C
    std::vector<double> final_transmittance;
    std::vector<int> contrib_count;
    std::vector<int> sorted_order;
    int singular_skipped = 0;
};

struct SplatGrad {
    Eigen::Vector2d d_mean2d = Eigen::Vector2d::Zero();
    Eigen::Matrix2d d_cov2d = Eigen::Matrix2d::Zero();
    Eigen::Vector3d d_color = Eigen::Vector3d::Zero();
    double d_opacity = 0.0;
};

struct ParamGrads {
    Eigen::Vector3d d_mean = Eigen::Vector3d::Zero();
    Eigen::Vector4d d_rot = Eigen::Vector4d::Zero();
    Eigen::Vector3d d_log_scale = Eigen::Vector3d::Zero();
    double d_opacity_logit = 0.0;
    Eigen::MatrixXd d_sh;
};

// Exact minimum of (p-mean)' P (p-mean) over an axis-aligned rectangle;
// P must be positive definite.
double min_quadratic_over_rect(const Eigen::Vector2d& mean, const Eigen::Matrix2d& p,
                               double x0, double x1, double y0, double y1);

// Bins every splat whose 3-sigma ellipse intersects a tile's rectangle into
// that tile's list, in nondecreasing depth. Splats with singular cov2d
// (det <= kSingularDet) are left out of every list.
TileBins sort_and_bin(const std::vector<Splat2D>& splats, int width, int height,
                      int tile_size);

RenderOutput rasterize_forward(const TileBins& tiles, const std::vector<Splat2D>& splats,
                               int width, int height, int channels);

// Exact reverse of rasterize_forward. dl_dimage must match the forward
// output shape. Clamp subgradients are pass-through strictly below the
// 0.99 alpha clamp and zero at/above it; skipped contributions get zero.
std::vector<SplatGrad> rasterize_backward(const TileBins& tiles,
                                          const std::vector<Splat2D>& splats,
                                          const RenderOutput& render,
                                          const Image& dl_dimage);

// Chains splat gradients through projection, covariance build, sigmoid and
// SH basis into per-Gaussian parameter gradients (zeros for culled ones).
std::vector<ParamGrads> chain_to_3d(const std::vector<SplatGrad>& grads,
                                    const ProjectedScene& proj,
                                    const CameraView& view,
                                    const std::vector<Gaussian3D>& scene);

} // namespace spikesplat
