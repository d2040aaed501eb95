// Copyright Contributors to the spikesplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "spikesplat/common.hpp"

#include <Eigen/Dense>

#include <array>
#include <optional>
#include <vector>

namespace spikesplat {

// Camera frame convention used throughout: right-handed, x right, y up,
// camera looking down -z. Depth is distance along the viewing axis,
// d = -z_cam; a point is in front of the camera iff d > 0. Pixel centers sit
// at (col + 0.5, row + 0.5), v grows downward:
//   u = cx + fx * x/d,   v = cy - fy * y/d.
struct CameraView {
    int width = 0;
    int height = 0;
    double fx = 0, fy = 0, cx = 0, cy = 0;
    Eigen::Matrix4d world_to_camera = Eigen::Matrix4d::Identity();
    double near_z = 0.01;
    double far_z = 100.0;

    Eigen::Matrix3d rotation() const { return world_to_camera.topLeftCorner<3, 3>(); }
    Eigen::Vector3d translation() const { return world_to_camera.topRightCorner<3, 1>(); }
    Eigen::Vector3d camera_center() const { return -rotation().transpose() * translation(); }
    Eigen::Vector3d to_camera(const Eigen::Vector3d& p_world) const {
        return rotation() * p_world + translation();
    }

    // Throws invalid_parameter_error on a non-orthonormal rotation block
    // (tolerance 1e-6), non-positive near, or far <= near.
    void validate() const;
};

// One optimizable scene primitive. Scale is stored as log, opacity as a
// logit, so unconstrained gradient steps keep s > 0 and alpha in (0,1).
// sh is channels x basis rows of real-SH coefficients; the rendered color is
// clamp(0.5 + sum_b sh(c,b) * Y_b(dir), 0, 1).
struct Gaussian3D {
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    Eigen::Vector4d rot = Eigen::Vector4d(1, 0, 0, 0); // (w, x, y, z)
    Eigen::Vector3d log_scale = Eigen::Vector3d::Zero();
    double opacity_logit = 0.0;
    Eigen::MatrixXd sh; // channels x (degree+1)^2

    int channels() const { return static_cast<int>(sh.rows()); }
    double opacity() const { return sigmoid(opacity_logit); }
    Eigen::Vector3d scale() const { return log_scale.array().exp(); }
};

struct Splat2D {
    Eigen::Vector2d mean2d;
    Eigen::Matrix2d cov2d;
    double depth;
    Eigen::Vector3d color; // channels beyond the active count stay zero
    double opacity;
    int source_index;
};

// Per-splat state saved by projection for the 2D->3D gradient chain.
struct ProjectionCache {
    Eigen::Vector3d p_cam;
    double depth;
    Eigen::Matrix<double, 2, 3> jacobian;
    Eigen::Matrix3d cov3d;
    Eigen::Matrix3d rot_mat;
    Eigen::Vector3d scale;
    Eigen::Vector4d quat_raw;
    Eigen::Vector3d dir;
    double dir_len;
    Eigen::VectorXd basis;
    std::array<uint8_t, 3> color_inside{1, 1, 1};
    double alpha;
};

struct ProjectOptions {
    double dilation = 0.3;    // px^2 low-pass added to cov2d
    double cull_margin = 1.3; // times the screen extent
};

inline int sh_basis_count(int degree) { return (degree + 1) * (degree + 1); }

// Real SH basis values for a unit direction, degrees 0..3.
void eval_sh_basis(int degree, const Eigen::Vector3d& dir, double* out);
// Basis values plus d(basis_b)/d(dir) columns.
void eval_sh_basis_grad(int degree, const Eigen::Vector3d& dir, double* out,
                        Eigen::Matrix<double, 3, Eigen::Dynamic>& grad);

// Sigma = R(q/|q|) diag(s^2) R^T. Throws invalid_parameter_error on
// non-finite input or non-positive scale.
Eigen::Matrix3d build_covariance(const Eigen::Vector4d& quat,
                                 const Eigen::Vector3d& scale);

Eigen::Matrix3d rotation_from_quat(const Eigen::Vector4d& q_unit);

// Clamped view-dependent color; `inside` (optional) records per channel
// whether the pre-clamp value was strictly inside (0,1), the pass-through
// region of the clamp subgradient.
Eigen::Vector3d eval_color(const Eigen::MatrixXd& sh, const Eigen::Vector3d& view_dir,
                           std::array<uint8_t, 3>* inside = nullptr,
                           Eigen::VectorXd* basis_out = nullptr);

// EWA projection of one Gaussian. Returns nullopt when culled (depth outside
// [near, far] or projected mean beyond cull_margin times the screen extent).
std::optional<Splat2D> project_gaussian(const Gaussian3D& g, const CameraView& view,
                                        const ProjectOptions& opts,
                                        ProjectionCache* cache = nullptr,
                                        int source_index = 0);

struct ProjectedScene {
    std::vector<Splat2D> splats;
    std::vector<ProjectionCache> cache;
};

ProjectedScene project_scene(const std::vector<Gaussian3D>& gaussians,
                             const CameraView& view, const ProjectOptions& opts);

} // namespace spikesplat
