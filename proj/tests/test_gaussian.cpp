// Copyright Contributors to the spikesplat project
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "test_support.hpp"

#include "spikesplat/gaussian.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>

using namespace spikesplat;
using namespace spikesplat::testing;

namespace {

CameraView simple_camera(double fx = 60.0, double fy = 60.0, int w = 64, int h = 64) {
    // camera at (0,0,2) looking at the origin: w2c rotation is the identity
    CameraView v;
    v.width = w;
    v.height = h;
    v.fx = fx;
    v.fy = fy;
    v.cx = w / 2.0;
    v.cy = h / 2.0;
    v.near_z = 0.05;
    v.far_z = 50.0;
    v.world_to_camera.setIdentity();
    v.world_to_camera(2, 3) = -2.0;
    return v;
}

Eigen::Vector4d random_quat(Rng& rng) {
    Eigen::Vector4d q;
    for (int i = 0; i < 4; ++i) q(i) = rng.normal();
    if (q.norm() < 1e-6) q = Eigen::Vector4d(1, 0, 0, 0);
    return q.normalized();
}

} // namespace

TEST_CASE("build_covariance examples") {
    // identity rotation, unit scale
    Eigen::Matrix3d s1 =
        build_covariance(Eigen::Vector4d(1, 0, 0, 0), Eigen::Vector3d(1, 1, 1));
    CHECK((s1 - Eigen::Matrix3d::Identity()).norm() < 1e-14);

    // diagonal scaling squares
    Eigen::Matrix3d s2 =
        build_covariance(Eigen::Vector4d(1, 0, 0, 0), Eigen::Vector3d(2, 1, 1));
    CHECK((s2 - Eigen::Vector3d(4, 1, 1).asDiagonal().toDenseMatrix()).norm() < 1e-14);

    // 90 degrees about z: oracle computed numerically as R diag(s^2) R^T
    const double c = std::cos(M_PI / 4.0), s = std::sin(M_PI / 4.0);
    Eigen::Vector4d qz(c, 0, 0, s);
    Eigen::Matrix3d rot =
        Eigen::AngleAxisd(M_PI / 2.0, Eigen::Vector3d::UnitZ()).toRotationMatrix();
    Eigen::Matrix3d expect =
        rot * Eigen::Vector3d(4, 1, 1).asDiagonal().toDenseMatrix() * rot.transpose();
    Eigen::Matrix3d got = build_covariance(qz, Eigen::Vector3d(2, 1, 1));
    CHECK((got - expect).norm() < 1e-12);
    CHECK((got - Eigen::Vector3d(1, 4, 1).asDiagonal().toDenseMatrix()).norm() < 1e-12);

    CHECK_THROWS_AS(
        build_covariance(Eigen::Vector4d(1, 0, 0, 0),
                         Eigen::Vector3d(1, std::nan(""), 1)),
        invalid_parameter_error);
    CHECK_THROWS_AS(
        build_covariance(Eigen::Vector4d(1, 0, 0, 0), Eigen::Vector3d(1, -1, 1)),
        invalid_parameter_error);
}

TEST_CASE("build_covariance is symmetric PSD and rotation-composable") {
    Rng rng(21);
    for (int trial = 0; trial < 200; ++trial) {
        Eigen::Vector4d q = random_quat(rng);
        Eigen::Vector3d s(rng.uniform(0.01, 3.0), rng.uniform(0.01, 3.0),
                          rng.uniform(0.01, 3.0));
        Eigen::Matrix3d sigma = build_covariance(q, s);
        CHECK((sigma - sigma.transpose()).cwiseAbs().maxCoeff() < 1e-15);
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(sigma);
        CHECK(es.eigenvalues().minCoeff() >= -1e-9);

        // composing a rotation on the left conjugates the covariance
        Eigen::Vector4d q0 = random_quat(rng);
        Eigen::Matrix3d lhs = build_covariance(quat_mul(q0, q), s);
        Eigen::Matrix3d r0 = rotation_from_quat(q0);
        Eigen::Matrix3d rhs = r0 * sigma * r0.transpose();
        CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("projection examples") {
    CameraView view = simple_camera();
    ProjectOptions opts;
    opts.dilation = 0.3;

    // on-axis: cov2d = f^2 sigma^2 / d^2 + dilation
    Gaussian3D g;
    g.mean = Eigen::Vector3d(0, 0, 0); // depth 2
    g.log_scale.setConstant(std::log(0.1));
    g.opacity_logit = 0.0;
    g.sh = Eigen::MatrixXd::Zero(1, 1);
    auto splat = project_gaussian(g, view, opts);
    REQUIRE(splat.has_value());
    const double expect = 60.0 * 60.0 * 0.01 / 4.0 + 0.3;
    CHECK(splat->cov2d(0, 0) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(splat->cov2d(1, 1) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(std::fabs(splat->cov2d(0, 1)) < 1e-12);
    CHECK(splat->mean2d.x() == doctest::Approx(32.0));
    CHECK(splat->mean2d.y() == doctest::Approx(32.0));
    CHECK(splat->depth == doctest::Approx(2.0));

    // behind the camera -> culled
    Gaussian3D behind = g;
    behind.mean = Eigen::Vector3d(0, 0, 3.0); // camera z = +1, depth -1
    CHECK_FALSE(project_gaussian(behind, view, opts).has_value());

    // dilation floor as sigma -> 0
    Gaussian3D tiny = g;
    tiny.log_scale.setConstant(std::log(1e-8));
    auto ts = project_gaussian(tiny, view, opts);
    REQUIRE(ts.has_value());
    CHECK(ts->cov2d(0, 0) == doctest::Approx(0.3).epsilon(1e-9));
    CHECK(ts->cov2d(1, 1) == doctest::Approx(0.3).epsilon(1e-9));

    // margin culling: far outside 1.3x the screen extent
    Gaussian3D off = g;
    off.mean = Eigen::Vector3d(10.0, 0, 0);
    CHECK_FALSE(project_gaussian(off, view, opts).has_value());
}

TEST_CASE("projection Jacobian matches finite differences") {
    Rng rng(22);
    CameraView view = simple_camera(73.0, 58.0);
    ProjectOptions opts;
    for (int trial = 0; trial < 50; ++trial) {
        Gaussian3D g;
        g.mean = Eigen::Vector3d(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5),
                                 rng.uniform(-0.5, 0.5));
        g.rot = random_quat(rng);
        g.log_scale.setConstant(std::log(0.05));
        g.sh = Eigen::MatrixXd::Zero(1, 1);
        ProjectionCache cache;
        auto splat = project_gaussian(g, view, opts, &cache);
        REQUIRE(splat.has_value());

        // d(mean2d)/d(world mean) = J * W
        Eigen::Matrix<double, 2, 3> analytic = cache.jacobian * view.rotation();
        const double eps = 1e-6;
        for (int axis = 0; axis < 3; ++axis) {
            Gaussian3D gp = g, gm = g;
            gp.mean(axis) += eps;
            gm.mean(axis) -= eps;
            auto sp = project_gaussian(gp, view, opts);
            auto sm = project_gaussian(gm, view, opts);
            REQUIRE(sp.has_value());
            REQUIRE(sm.has_value());
            Eigen::Vector2d fd = (sp->mean2d - sm->mean2d) / (2.0 * eps);
            CHECK(rel_err(fd.x(), analytic(0, axis), 1e-6) < 1e-5);
            CHECK(rel_err(fd.y(), analytic(1, axis), 1e-6) < 1e-5);
        }
    }
}

TEST_CASE("scene scaling leaves the projection unchanged") {
    Rng rng(23);
    CameraView view = simple_camera();
    ProjectOptions opts;
    const double k = 3.0;
    CameraView scaled_view = view;
    scaled_view.world_to_camera.topRightCorner<3, 1>() *= k;
    for (int trial = 0; trial < 40; ++trial) {
        Gaussian3D g;
        g.mean = Eigen::Vector3d(rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4),
                                 rng.uniform(-0.4, 0.4));
        g.rot = random_quat(rng);
        g.log_scale = Eigen::Vector3d(rng.uniform(-3.0, -1.5), rng.uniform(-3.0, -1.5),
                                      rng.uniform(-3.0, -1.5));
        g.sh = Eigen::MatrixXd::Zero(1, 4);
        Gaussian3D gs = g;
        gs.mean *= k;
        gs.log_scale.array() += std::log(k);

        auto a = project_gaussian(g, view, opts);
        auto b = project_gaussian(gs, scaled_view, opts);
        REQUIRE(a.has_value());
        REQUIRE(b.has_value());
        CHECK((a->mean2d - b->mean2d).norm() < 1e-9);
        CHECK((a->cov2d - b->cov2d).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("eval_color DC conventions and degree-1 parity") {
    // DC chosen so the output is exactly 0.5
    Eigen::MatrixXd sh = Eigen::MatrixXd::Zero(1, 1);
    Eigen::Vector3d dir(0, 0, 1);
    CHECK(eval_color(sh, dir)(0) == doctest::Approx(0.5));

    sh(0, 0) = (0.8 - 0.5) / 0.28209479177387814;
    CHECK(eval_color(sh, dir)(0) == doctest::Approx(0.8));
    CHECK(eval_color(sh, Eigen::Vector3d(1, 0, 0))(0) == doctest::Approx(0.8));

    // degree 1: band contribution flips sign with the direction
    Eigen::MatrixXd sh1 = Eigen::MatrixXd::Zero(1, 4);
    sh1(0, 2) = 0.3;
    Eigen::Vector3d d1 = Eigen::Vector3d(0.2, -0.4, 0.89).normalized();
    double up = eval_color(sh1, d1)(0) - 0.5;
    double dn = eval_color(sh1, -d1)(0) - 0.5;
    CHECK(up == doctest::Approx(-dn).epsilon(1e-12));
}

TEST_CASE("sh basis gradients match finite differences") {
    Rng rng(24);
    for (int degree = 0; degree <= 3; ++degree) {
        const int nb = sh_basis_count(degree);
        for (int trial = 0; trial < 20; ++trial) {
            Eigen::Vector3d dir(rng.normal(), rng.normal(), rng.normal());
            dir.normalize();
            double basis[16];
            Eigen::Matrix<double, 3, Eigen::Dynamic> grad;
            eval_sh_basis_grad(degree, dir, basis, grad);
            const double eps = 1e-6;
            for (int axis = 0; axis < 3; ++axis) {
                Eigen::Vector3d dp = dir, dm = dir;
                dp(axis) += eps;
                dm(axis) -= eps;
                double bp[16], bm[16];
                eval_sh_basis(degree, dp, bp);
                eval_sh_basis(degree, dm, bm);
                for (int b = 0; b < nb; ++b) {
                    double fd = (bp[b] - bm[b]) / (2.0 * eps);
                    CHECK(rel_err(fd, grad(axis, b), 1e-6) < 1e-5);
                }
            }
        }
    }
}

TEST_CASE("camera validation") {
    CameraView v = simple_camera();
    CHECK_NOTHROW(v.validate());
    CameraView bad = v;
    bad.world_to_camera(0, 1) = 0.01; // breaks orthonormality
    CHECK_THROWS_AS(bad.validate(), invalid_parameter_error);
    CameraView nf = v;
    nf.near_z = 0.0;
    CHECK_THROWS_AS(nf.validate(), invalid_parameter_error);
    CameraView ff = v;
    ff.far_z = ff.near_z;
    CHECK_THROWS_AS(ff.validate(), invalid_parameter_error);
}
