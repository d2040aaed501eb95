// Copyright Contributors to the spikesplat project
// SPDX-License-Identifier: Apache-2.0

#include "spikesplat/rasterizer.hpp"

#include <algorithm>
#include <cmath>

namespace spikesplat {
namespace {

struct Prepared {
    Eigen::Matrix2d inv_cov;
    bool valid;
};

std::vector<Prepared> prepare_splats(const std::vector<Splat2D>& splats,
                                     int* singular_count) {
    std::vector<Prepared> out(splats.size());
    int singular = 0;
    for (size_t i = 0; i < splats.size(); ++i) {
        const Eigen::Matrix2d& c = splats[i].cov2d;
        double det = c(0, 0) * c(1, 1) - c(0, 1) * c(1, 0);
        if (!(det > RasterConstants::kSingularDet)) {
            out[i].valid = false;
            ++singular;
            continue;
        }
        Eigen::Matrix2d inv;
        inv << c(1, 1) / det, -c(0, 1) / det, -c(1, 0) / det, c(0, 0) / det;
        out[i].inv_cov = inv;
        out[i].valid = true;
    }
    if (singular_count) *singular_count = singular;
    return out;
}

double edge_min(double dfix, double pff, double pfv, double pvv, double mv,
                double v0, double v1) {
    // min over v in [v0,v1] of pff*dfix^2 + 2*pfv*dfix*(v-mv) + pvv*(v-mv)^2
    double v = mv - pfv * dfix / pvv;
    v = std::clamp(v, v0, v1);
    double dv = v - mv;
    return pff * dfix * dfix + 2.0 * pfv * dfix * dv + pvv * dv * dv;
}

} // namespace

double min_quadratic_over_rect(const Eigen::Vector2d& mean, const Eigen::Matrix2d& p,
                               double x0, double x1, double y0, double y1) {
    const double mx = mean.x(), my = mean.y();
    if (mx >= x0 && mx <= x1 && my >= y0 && my <= y1) return 0.0;
    const double pxx = p(0, 0), pxy = p(0, 1), pyy = p(1, 1);
    double best = edge_min(x0 - mx, pxx, pxy, pyy, my, y0, y1);
    best = std::min(best, edge_min(x1 - mx, pxx, pxy, pyy, my, y0, y1));
    best = std::min(best, edge_min(y0 - my, pyy, pxy, pxx, mx, x0, x1));
    best = std::min(best, edge_min(y1 - my, pyy, pxy, pxx, mx, x0, x1));
    return best;
}

TileBins sort_and_bin(const std::vector<Splat2D>& splats, int width, int height,
                      int tile_size) {
    if (tile_size <= 0) throw invalid_parameter_error("tile_size must be positive");
    TileBins bins;
    bins.tile_size = tile_size;
    bins.tiles_x = (width + tile_size - 1) / tile_size;
    bins.tiles_y = (height + tile_size - 1) / tile_size;
    const int ntiles = bins.tiles_x * bins.tiles_y;

    bins.sorted_order.resize(splats.size());
    for (size_t i = 0; i < splats.size(); ++i) bins.sorted_order[i] = static_cast<int>(i);
    std::sort(bins.sorted_order.begin(), bins.sorted_order.end(),
              [&](int a, int b) {
                  if (splats[a].depth != splats[b].depth)
                      return splats[a].depth < splats[b].depth;
                  return splats[a].source_index < splats[b].source_index;
              });

    std::vector<std::vector<int>> lists(ntiles);
    int singular = 0;
    std::vector<Prepared> prep = prepare_splats(splats, &singular);

    for (int idx : bins.sorted_order) {
        const Splat2D& s = splats[idx];
        if (!prep[idx].valid) continue;
        const Eigen::Matrix2d& c = s.cov2d;
        double mid = 0.5 * (c(0, 0) + c(1, 1));
        double disc = std::sqrt(std::max(0.0, 0.25 * (c(0, 0) - c(1, 1)) * (c(0, 0) - c(1, 1)) +
                                                  c(0, 1) * c(0, 1)));
        double radius = 3.0 * std::sqrt(std::max(0.0, mid + disc));
        int tx0 = std::max(0, static_cast<int>(std::floor((s.mean2d.x() - radius) / tile_size)));
        int tx1 = std::min(bins.tiles_x - 1,
                           static_cast<int>(std::floor((s.mean2d.x() + radius) / tile_size)));
        int ty0 = std::max(0, static_cast<int>(std::floor((s.mean2d.y() - radius) / tile_size)));
        int ty1 = std::min(bins.tiles_y - 1,
                           static_cast<int>(std::floor((s.mean2d.y() + radius) / tile_size)));
        for (int ty = ty0; ty <= ty1; ++ty) {
            double ry0 = ty * static_cast<double>(tile_size);
            double ry1 = std::min<double>(height, ry0 + tile_size);
            for (int tx = tx0; tx <= tx1; ++tx) {
                double rx0 = tx * static_cast<double>(tile_size);
                double rx1 = std::min<double>(width, rx0 + tile_size);
                double qf = min_quadratic_over_rect(s.mean2d, prep[idx].inv_cov, rx0,
                                                    rx1, ry0, ry1);
                if (qf <= RasterConstants::kSupportQf)
                    lists[ty * bins.tiles_x + tx].push_back(idx);
            }
        }
    }

    bins.offsets.assign(ntiles + 1, 0);
    for (int t = 0; t < ntiles; ++t)
        bins.offsets[t + 1] = bins.offsets[t] + static_cast<int>(lists[t].size());
    bins.indices.reserve(bins.offsets.back());
    for (auto& l : lists) bins.indices.insert(bins.indices.end(), l.begin(), l.end());
    return bins;
}

RenderOutput rasterize_forward(const TileBins& tiles, const std::vector<Splat2D>& splats,
                               int width, int height, int channels) {
    if (channels < 1 || channels > 3)
        throw invalid_parameter_error("rasterize_forward: channels must be 1..3");
    RenderOutput out;
    out.image = Image(width, height, channels, 0.0);
    out.final_transmittance.assign(static_cast<size_t>(width) * height, 1.0);
    out.contrib_count.assign(static_cast<size_t>(width) * height, 0);
    out.sorted_order = tiles.sorted_order;
    std::vector<Prepared> prep = prepare_splats(splats, &out.singular_skipped);

    for (int ty = 0; ty < tiles.tiles_y; ++ty) {
        for (int tx = 0; tx < tiles.tiles_x; ++tx) {
            const int tile = ty * tiles.tiles_x + tx;
            const int begin = tiles.offsets[tile];
            const int end = tiles.offsets[tile + 1];
            if (begin == end) continue;
            const int px0 = tx * tiles.tile_size;
            const int px1 = std::min(width, px0 + tiles.tile_size);
            const int py0 = ty * tiles.tile_size;
            const int py1 = std::min(height, py0 + tiles.tile_size);
            for (int py = py0; py < py1; ++py) {
                for (int px = px0; px < px1; ++px) {
                    const Eigen::Vector2d pix(px + 0.5, py + 0.5);
                    const size_t pi = static_cast<size_t>(py) * width + px;
                    double transmit = 1.0;
                    int count = 0;
                    double* img = &out.image.data[pi * channels];
                    for (int k = begin; k < end; ++k) {
                        const int idx = tiles.indices[k];
                        const Splat2D& s = splats[idx];
                        const Eigen::Vector2d d = pix - s.mean2d;
                        const double qf = d.dot(prep[idx].inv_cov * d);
                        if (qf > RasterConstants::kSupportQf) continue;
                        double alpha = s.opacity * std::exp(-0.5 * qf);
                        if (alpha > RasterConstants::kAlphaClamp)
                            alpha = RasterConstants::kAlphaClamp;
                        if (alpha < RasterConstants::kAlphaSkip) continue;
                        const double w = alpha * transmit;
                        for (int c = 0; c < channels; ++c) img[c] += w * s.color(c);
                        ++count;
                        transmit *= 1.0 - alpha;
                        if (transmit < RasterConstants::kTransmitStop) break;
                    }
                    out.final_transmittance[pi] = transmit;
                    out.contrib_count[pi] = count;
                }
            }
        }
    }
    return out;
}

std::vector<SplatGrad> rasterize_backward(const TileBins& tiles,
                                          const std::vector<Splat2D>& splats,
                                          const RenderOutput& render,
                                          const Image& dl_dimage) {
    const int width = render.image.width;
    const int height = render.image.height;
    const int channels = render.image.channels;
    if (dl_dimage.width != width || dl_dimage.height != height ||
        dl_dimage.channels != channels)
        throw invalid_parameter_error("rasterize_backward: gradient shape mismatch");

    std::vector<SplatGrad> grads(splats.size());
    int singular = 0;
    std::vector<Prepared> prep = prepare_splats(splats, &singular);

    struct Contrib {
        int idx;
        double alpha;   // post-clamp
        double gauss;   // exp(-qf/2)
        bool clamped;
        double transmit; // before this splat
        Eigen::Vector2d delta;
    };
    std::vector<Contrib> stack;
    stack.reserve(64);

    for (int ty = 0; ty < tiles.tiles_y; ++ty) {
        for (int tx = 0; tx < tiles.tiles_x; ++tx) {
            const int tile = ty * tiles.tiles_x + tx;
            const int begin = tiles.offsets[tile];
            const int end = tiles.offsets[tile + 1];
            if (begin == end) continue;
            const int px0 = tx * tiles.tile_size;
            const int px1 = std::min(width, px0 + tiles.tile_size);
            const int py0 = ty * tiles.tile_size;
            const int py1 = std::min(height, py0 + tiles.tile_size);
            for (int py = py0; py < py1; ++py) {
                for (int px = px0; px < px1; ++px) {
                    const size_t pi = static_cast<size_t>(py) * width + px;
                    const double* dimg = &dl_dimage.data[pi * channels];
                    bool any = false;
                    for (int c = 0; c < channels; ++c) any = any || dimg[c] != 0.0;
                    if (!any) continue;

                    // replay the forward pass for this pixel
                    const Eigen::Vector2d pix(px + 0.5, py + 0.5);
                    stack.clear();
                    double transmit = 1.0;
                    for (int k = begin; k < end; ++k) {
                        const int idx = tiles.indices[k];
                        const Splat2D& s = splats[idx];
                        const Eigen::Vector2d d = pix - s.mean2d;
                        const double qf = d.dot(prep[idx].inv_cov * d);
                        if (qf > RasterConstants::kSupportQf) continue;
                        const double gauss = std::exp(-0.5 * qf);
                        double alpha = s.opacity * gauss;
                        const bool clamped = alpha > RasterConstants::kAlphaClamp;
                        if (clamped) alpha = RasterConstants::kAlphaClamp;
                        if (alpha < RasterConstants::kAlphaSkip) continue;
                        stack.push_back({idx, alpha, gauss, clamped, transmit, d});
                        transmit *= 1.0 - alpha;
                        if (transmit < RasterConstants::kTransmitStop) break;
                    }

                    // back-to-front: suffix color accumulates what lies behind
                    Eigen::Vector3d suffix = Eigen::Vector3d::Zero();
                    for (size_t r = stack.size(); r-- > 0;) {
                        const Contrib& cb = stack[r];
                        const Splat2D& s = splats[cb.idx];
                        SplatGrad& g = grads[cb.idx];
                        const double w = cb.alpha * cb.transmit;
                        double dalpha_path = 0.0;
                        for (int c = 0; c < channels; ++c) {
                            g.d_color(c) += dimg[c] * w;
                            dalpha_path += dimg[c] * (s.color(c) * cb.transmit -
                                                      suffix(c) / (1.0 - cb.alpha));
                            suffix(c) = s.color(c) * w + (1.0 - cb.alpha) * suffix(c);
                        }
                        if (!cb.clamped) {
                            g.d_opacity += cb.gauss * dalpha_path;
                            const double dqf = -0.5 * cb.alpha * dalpha_path;
                            const Eigen::Vector2d pd = prep[cb.idx].inv_cov * cb.delta;
                            g.d_mean2d += -2.0 * dqf * pd;
                            g.d_cov2d += -dqf * (pd * pd.transpose());
                        }
                    }
                }
            }
        }
    }
    return grads;
}

std::vector<ParamGrads> chain_to_3d(const std::vector<SplatGrad>& grads,
                                    const ProjectedScene& proj,
                                    const CameraView& view,
                                    const std::vector<Gaussian3D>& scene) {
    if (grads.size() != proj.splats.size())
        throw invalid_parameter_error("chain_to_3d: gradient/splat count mismatch");
    std::vector<ParamGrads> out(scene.size());
    for (size_t i = 0; i < scene.size(); ++i) {
        out[i].d_sh = Eigen::MatrixXd::Zero(scene[i].sh.rows(), scene[i].sh.cols());
    }
    const Eigen::Matrix3d w = view.rotation();

    for (size_t k = 0; k < proj.splats.size(); ++k) {
        const Splat2D& s = proj.splats[k];
        const ProjectionCache& pc = proj.cache[k];
        const SplatGrad& sg = grads[k];
        ParamGrads& pg = out[s.source_index];
        const Gaussian3D& gsn = scene[s.source_index];
        const int channels = gsn.channels();
        const int nb = static_cast<int>(gsn.sh.cols());

        // opacity through the sigmoid
        pg.d_opacity_logit += sg.d_opacity * pc.alpha * (1.0 - pc.alpha);

        // color -> SH coefficients and view direction
        Eigen::Vector3d d_dir = Eigen::Vector3d::Zero();
        if (nb > 0) {
            double basis[16];
            Eigen::Matrix<double, 3, Eigen::Dynamic> bgrad;
            int degree = static_cast<int>(std::lround(std::sqrt(double(nb)))) - 1;
            eval_sh_basis_grad(degree, pc.dir, basis, bgrad);
            for (int c = 0; c < channels; ++c) {
                if (!pc.color_inside[c]) continue;
                const double dc = sg.d_color(c);
                if (dc == 0.0) continue;
                for (int b = 0; b < nb; ++b) {
                    pg.d_sh(c, b) += dc * basis[b];
                    d_dir += dc * gsn.sh(c, b) * bgrad.col(b);
                }
            }
        }
        if (pc.dir_len > 0.0) {
            Eigen::Matrix3d dnorm =
                (Eigen::Matrix3d::Identity() - pc.dir * pc.dir.transpose()) / pc.dir_len;
            pg.d_mean += dnorm.transpose() * d_dir;
        }

        // geometry: cov2d = M Sigma M' + dil I with M = J W
        const Eigen::Matrix<double, 2, 3> m = pc.jacobian * w;
        const Eigen::Matrix2d dc2 = 0.5 * (sg.d_cov2d + sg.d_cov2d.transpose());
        const Eigen::Matrix<double, 2, 3> dm = 2.0 * dc2 * m * pc.cov3d;
        const Eigen::Matrix3d dsigma = m.transpose() * dc2 * m;
        const Eigen::Matrix<double, 2, 3> dj = dm * w.transpose();

        // position gradient: through the projected mean and through J
        Eigen::Vector3d dp = pc.jacobian.transpose() * sg.d_mean2d;
        const double d = pc.depth;
        const double d2 = d * d, d3 = d2 * d;
        dp.x() += dj(0, 2) * view.fx / d2;
        dp.y() += dj(1, 2) * (-view.fy / d2);
        dp.z() += dj(0, 0) * view.fx / d2 + dj(0, 2) * 2.0 * view.fx * pc.p_cam.x() / d3 +
                  dj(1, 1) * (-view.fy / d2) +
                  dj(1, 2) * (-2.0 * view.fy * pc.p_cam.y() / d3);
        pg.d_mean += w.transpose() * dp;

        // Sigma = R diag(s^2) R'
        const Eigen::Matrix3d rtdr = pc.rot_mat.transpose() * dsigma * pc.rot_mat;
        for (int i = 0; i < 3; ++i)
            pg.d_log_scale(i) += 2.0 * pc.scale(i) * pc.scale(i) * rtdr(i, i);

        const Eigen::Matrix3d dr =
            2.0 * dsigma * pc.rot_mat * pc.scale.array().square().matrix().asDiagonal();
        const Eigen::Vector4d q = pc.quat_raw / pc.quat_raw.norm();
        const double qw = q(0), qx = q(1), qy = q(2), qz = q(3);
        Eigen::Matrix3d dRdq[4];
        dRdq[0] << 0, -qz, qy, qz, 0, -qx, -qy, qx, 0;
        dRdq[1] << 0, qy, qz, qy, -2 * qx, -qw, qz, qw, -2 * qx;
        dRdq[2] << -2 * qy, qx, qw, qx, 0, qz, -qw, qz, -2 * qy;
        dRdq[3] << -2 * qz, -qw, qx, qw, -2 * qz, qy, qx, qy, 0;
        Eigen::Vector4d dq_unit;
        for (int i = 0; i < 4; ++i)
            dq_unit(i) = 2.0 * (dr.array() * dRdq[i].array()).sum();
        // through the normalization q_unit = q_raw / |q_raw|
        const double qn = pc.quat_raw.norm();
        pg.d_rot += (dq_unit - q * q.dot(dq_unit)) / qn;
    }
    return out;
}

} // namespace spikesplat
