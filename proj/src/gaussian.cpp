// Copyright Contributors to the spikesplat project
// SPDX-License-Identifier: Apache-2.0

#include "spikesplat/gaussian.hpp"

#include <cmath>

namespace spikesplat {
namespace {

constexpr double kSH0 = 0.28209479177387814;
constexpr double kSH1 = 0.4886025119029199;
constexpr double kSH2[5] = {1.0925484305920792, -1.0925484305920792,
                            0.31539156525252005, -1.0925484305920792,
                            0.5462742152960396};
constexpr double kSH3[7] = {-0.5900435899266435, 2.890611442640554,
                            -0.4570457994644658, 0.3731763325901154,
                            -0.4570457994644658, 1.445305721320277,
                            -0.5900435899266435};

int degree_from_basis(int basis_count) {
    switch (basis_count) {
    case 1: return 0;
    case 4: return 1;
    case 9: return 2;
    case 16: return 3;
    default:
        throw invalid_parameter_error("sh coefficient count must be (d+1)^2, d<=3");
    }
}

} // namespace

void CameraView::validate() const {
    Eigen::Matrix3d r = rotation();
    double dev = (r * r.transpose() - Eigen::Matrix3d::Identity())
                     .cwiseAbs()
                     .maxCoeff();
    if (!(dev < 1e-6))
        throw invalid_parameter_error("camera rotation block is not orthonormal");
    if (!(near_z > 0.0)) throw invalid_parameter_error("camera near plane must be > 0");
    if (!(far_z > near_z)) throw invalid_parameter_error("camera far plane must exceed near");
    if (width <= 0 || height <= 0)
        throw invalid_parameter_error("camera image size must be positive");
    if (!world_to_camera.allFinite() || !std::isfinite(fx) || !std::isfinite(fy) ||
        !std::isfinite(cx) || !std::isfinite(cy))
        throw invalid_parameter_error("camera parameters must be finite");
}

void eval_sh_basis(int degree, const Eigen::Vector3d& dir, double* out) {
    const double x = dir.x(), y = dir.y(), z = dir.z();
    out[0] = kSH0;
    if (degree < 1) return;
    out[1] = -kSH1 * y;
    out[2] = kSH1 * z;
    out[3] = -kSH1 * x;
    if (degree < 2) return;
    const double xx = x * x, yy = y * y, zz = z * z;
    out[4] = kSH2[0] * x * y;
    out[5] = kSH2[1] * y * z;
    out[6] = kSH2[2] * (2.0 * zz - xx - yy);
    out[7] = kSH2[3] * x * z;
    out[8] = kSH2[4] * (xx - yy);
    if (degree < 3) return;
    out[9] = kSH3[0] * y * (3.0 * xx - yy);
    out[10] = kSH3[1] * x * y * z;
    out[11] = kSH3[2] * y * (4.0 * zz - xx - yy);
    out[12] = kSH3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    out[13] = kSH3[4] * x * (4.0 * zz - xx - yy);
    out[14] = kSH3[5] * z * (xx - yy);
    out[15] = kSH3[6] * x * (xx - 3.0 * yy);
}

void eval_sh_basis_grad(int degree, const Eigen::Vector3d& dir, double* out,
                        Eigen::Matrix<double, 3, Eigen::Dynamic>& grad) {
    eval_sh_basis(degree, dir, out);
    const int nb = sh_basis_count(degree);
    grad.resize(3, nb);
    grad.setZero();
    if (degree < 1) return;
    const double x = dir.x(), y = dir.y(), z = dir.z();
    grad.col(1) = Eigen::Vector3d(0, -kSH1, 0);
    grad.col(2) = Eigen::Vector3d(0, 0, kSH1);
    grad.col(3) = Eigen::Vector3d(-kSH1, 0, 0);
    if (degree < 2) return;
    const double xx = x * x, yy = y * y, zz = z * z;
    grad.col(4) = kSH2[0] * Eigen::Vector3d(y, x, 0);
    grad.col(5) = kSH2[1] * Eigen::Vector3d(0, z, y);
    grad.col(6) = kSH2[2] * Eigen::Vector3d(-2 * x, -2 * y, 4 * z);
    grad.col(7) = kSH2[3] * Eigen::Vector3d(z, 0, x);
    grad.col(8) = kSH2[4] * Eigen::Vector3d(2 * x, -2 * y, 0);
    if (degree < 3) return;
    grad.col(9) = kSH3[0] * Eigen::Vector3d(6 * x * y, 3 * xx - 3 * yy, 0);
    grad.col(10) = kSH3[1] * Eigen::Vector3d(y * z, x * z, x * y);
    grad.col(11) =
        kSH3[2] * Eigen::Vector3d(-2 * x * y, 4 * zz - xx - 3 * yy, 8 * y * z);
    grad.col(12) = kSH3[3] * Eigen::Vector3d(-6 * x * z, -6 * y * z,
                                             6 * zz - 3 * xx - 3 * yy);
    grad.col(13) =
        kSH3[4] * Eigen::Vector3d(4 * zz - 3 * xx - yy, -2 * x * y, 8 * x * z);
    grad.col(14) = kSH3[5] * Eigen::Vector3d(2 * x * z, -2 * y * z, xx - yy);
    grad.col(15) = kSH3[6] * Eigen::Vector3d(3 * xx - 3 * yy, -6 * x * y, 0);
}

Eigen::Matrix3d rotation_from_quat(const Eigen::Vector4d& q) {
    const double w = q(0), x = q(1), y = q(2), z = q(3);
    Eigen::Matrix3d r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

Eigen::Matrix3d build_covariance(const Eigen::Vector4d& quat,
                                 const Eigen::Vector3d& scale) {
    if (!quat.allFinite() || !scale.allFinite())
        throw invalid_parameter_error("build_covariance: non-finite input");
    if (!(scale.minCoeff() > 0.0))
        throw invalid_parameter_error("build_covariance: scale must be positive");
    const double n = quat.norm();
    if (!(n > 0.0))
        throw invalid_parameter_error("build_covariance: zero quaternion");
    Eigen::Matrix3d r = rotation_from_quat(quat / n);
    Eigen::Matrix3d m = r * scale.array().square().matrix().asDiagonal() * r.transpose();
    return 0.5 * (m + m.transpose());
}

Eigen::Vector3d eval_color(const Eigen::MatrixXd& sh, const Eigen::Vector3d& view_dir,
                           std::array<uint8_t, 3>* inside, Eigen::VectorXd* basis_out) {
    const int channels = static_cast<int>(sh.rows());
    if (channels < 1 || channels > 3)
        throw invalid_parameter_error("eval_color: channels must be 1..3");
    const int nb = static_cast<int>(sh.cols());
    const int degree = degree_from_basis(nb);
    double basis[16];
    eval_sh_basis(degree, view_dir, basis);
    if (basis_out) {
        basis_out->resize(nb);
        for (int b = 0; b < nb; ++b) (*basis_out)(b) = basis[b];
    }
    Eigen::Vector3d color = Eigen::Vector3d::Zero();
    for (int c = 0; c < channels; ++c) {
        double v = 0.5;
        for (int b = 0; b < nb; ++b) v += sh(c, b) * basis[b];
        if (inside) (*inside)[c] = (v > 0.0 && v < 1.0) ? 1 : 0;
        color(c) = clamp01(v);
    }
    return color;
}

std::optional<Splat2D> project_gaussian(const Gaussian3D& g, const CameraView& view,
                                        const ProjectOptions& opts,
                                        ProjectionCache* cache, int source_index) {
    if (!(opts.dilation >= 0.0))
        throw invalid_parameter_error("project_gaussian: dilation must be >= 0");

    const Eigen::Matrix3d w = view.rotation();
    const Eigen::Vector3d p = view.to_camera(g.mean);
    const double depth = -p.z();
    if (depth < view.near_z || depth > view.far_z) return std::nullopt;

    const double u = view.cx + view.fx * p.x() / depth;
    const double v = view.cy - view.fy * p.y() / depth;
    const double mx = opts.cull_margin * view.width;
    const double my = opts.cull_margin * view.height;
    if (u < -mx || u > view.width + mx || v < -my || v > view.height + my)
        return std::nullopt;

    // Pinhole Jacobian at p (d = -z, so d(d)/dz = -1)
    Eigen::Matrix<double, 2, 3> jac;
    jac << view.fx / depth, 0.0, view.fx * p.x() / (depth * depth), //
        0.0, -view.fy / depth, -view.fy * p.y() / (depth * depth);

    const double qn = g.rot.norm();
    if (!(qn > 0.0)) throw invalid_parameter_error("project_gaussian: zero quaternion");
    const Eigen::Vector4d q_unit = g.rot / qn;
    const Eigen::Matrix3d rot = rotation_from_quat(q_unit);
    const Eigen::Vector3d scale = g.scale();
    Eigen::Matrix3d cov3d =
        rot * scale.array().square().matrix().asDiagonal() * rot.transpose();
    cov3d = 0.5 * (cov3d + cov3d.transpose()).eval();

    const Eigen::Matrix<double, 2, 3> m = jac * w;
    Eigen::Matrix2d cov2d = m * cov3d * m.transpose();
    cov2d = (0.5 * (cov2d + cov2d.transpose())).eval();
    cov2d += opts.dilation * Eigen::Matrix2d::Identity();

    const Eigen::Vector3d to_g = g.mean - view.camera_center();
    const double dir_len = to_g.norm();
    const Eigen::Vector3d dir =
        dir_len > 0.0 ? Eigen::Vector3d(to_g / dir_len) : Eigen::Vector3d(0, 0, 1);

    Splat2D s;
    s.mean2d = Eigen::Vector2d(u, v);
    s.cov2d = cov2d;
    s.depth = depth;
    std::array<uint8_t, 3> inside{1, 1, 1};
    Eigen::VectorXd basis;
    s.color = eval_color(g.sh, dir, &inside, &basis);
    s.opacity = g.opacity();
    s.source_index = source_index;

    if (cache) {
        cache->p_cam = p;
        cache->depth = depth;
        cache->jacobian = jac;
        cache->cov3d = cov3d;
        cache->rot_mat = rot;
        cache->scale = scale;
        cache->quat_raw = g.rot;
        cache->dir = dir;
        cache->dir_len = dir_len;
        cache->basis = basis;
        cache->color_inside = inside;
        cache->alpha = s.opacity;
    }
    return s;
}

ProjectedScene project_scene(const std::vector<Gaussian3D>& gaussians,
                             const CameraView& view, const ProjectOptions& opts) {
    ProjectedScene out;
    out.splats.reserve(gaussians.size());
    out.cache.reserve(gaussians.size());
    for (size_t i = 0; i < gaussians.size(); ++i) {
        ProjectionCache cache;
        auto s = project_gaussian(gaussians[i], view, opts, &cache,
                                  static_cast<int>(i));
        if (s) {
            out.splats.push_back(*s);
            out.cache.push_back(std::move(cache));
        }
    }
    return out;
}

} // namespace spikesplat
