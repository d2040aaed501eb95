// Copyright Contributors to the spikesplat project
// SPDX-License-Identifier: Apache-2.0

#include "spikesplat/trainer.hpp"

#include "spikesplat/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace spikesplat {
namespace {

constexpr uint64_t kTagEpoch = 0xe9;
constexpr uint64_t kTagA0Iter = 0xa1;
constexpr uint64_t kTagInit = 0x11;
constexpr uint64_t kTagSplit = 0x5b;

constexpr double kSH0 = 0.28209479177387814;

size_t param_stride(const TrainConfig& cfg) {
    return static_cast<size_t>(io::checkpoint_param_stride(cfg.channels, cfg.sh_degree));
}

} // namespace

void TrainConfig::validate() const {
    if (iterations <= 0) throw invalid_parameter_error("iterations must be > 0");
    if (!(lr_mean > 0 && lr_rot > 0 && lr_scale > 0 && lr_opacity > 0 && lr_sh > 0))
        throw invalid_parameter_error("learning rates must be > 0");
    if (!(densify_grad_threshold >= 0 && prune_opacity_threshold >= 0))
        throw invalid_parameter_error("densify/prune thresholds must be >= 0");
    if (!(omega > 0)) throw invalid_parameter_error("omega must be > 0");
    if (window <= 0) throw invalid_parameter_error("window must be > 0");
    if (channels != 1 && channels != 3)
        throw invalid_parameter_error("channels must be 1 or 3");
    if (sh_degree < 0 || sh_degree > 3)
        throw invalid_parameter_error("sh_degree must be in 0..3");
    loss.validate();
}

double TrainConfig::lr_mean_at(int iteration) const {
    const double t = std::clamp(iteration / static_cast<double>(iterations), 0.0, 1.0);
    return lr_mean * std::pow(lr_mean_final / lr_mean, t);
}

void SceneDataset::validate() const {
    if (views.empty()) throw invalid_parameter_error("dataset has no views");
    if (views.size() != streams.size())
        throw invalid_parameter_error("dataset views/streams count mismatch");
    for (const SpikeStream& s : streams) {
        if (s.width != width || s.height != height || s.window != window ||
            s.threshold != omega)
            throw invalid_parameter_error("dataset streams disagree on shape metadata");
    }
    if (rnu.width != width || rnu.height != height)
        throw invalid_parameter_error("dataset rnu map shape mismatch");
    for (const CameraView& v : views) v.validate();
}

std::vector<Gaussian3D> init_gaussians_random(int count, const Eigen::Vector3d& bbox_min,
                                              const Eigen::Vector3d& bbox_max,
                                              int channels, int sh_degree,
                                              uint64_t seed) {
    if (count <= 0) throw invalid_parameter_error("init_gaussians_random: count must be > 0");
    const Eigen::Vector3d extent = bbox_max - bbox_min;
    if (!(extent.minCoeff() > 0.0))
        throw invalid_parameter_error("init_gaussians_random: empty bbox");
    // bbox-relative spacing constant: mean extent over the cube-root grid
    const double spacing =
        extent.mean() / std::cbrt(static_cast<double>(count)) * 0.5;
    std::vector<Gaussian3D> out(count);
    Rng rng = Rng::stream(seed, kTagInit);
    for (int i = 0; i < count; ++i) {
        Gaussian3D& g = out[i];
        for (int c = 0; c < 3; ++c)
            g.mean(c) = bbox_min(c) + extent(c) * rng.next_double();
        g.rot = Eigen::Vector4d(1, 0, 0, 0);
        g.log_scale.setConstant(std::log(spacing));
        g.opacity_logit = logit(0.1);
        g.sh = Eigen::MatrixXd::Zero(channels, sh_basis_count(sh_degree));
    }
    return out;
}

std::vector<Gaussian3D> init_gaussians_from_cloud(const io::PointCloud& cloud,
                                                  int channels, int sh_degree) {
    const size_t n = cloud.positions.size();
    if (n == 0) throw invalid_parameter_error("init_gaussians_from_cloud: empty cloud");
    std::vector<Gaussian3D> out(n);
    for (size_t i = 0; i < n; ++i) {
        Gaussian3D& g = out[i];
        g.mean = cloud.positions[i];
        g.rot = Eigen::Vector4d(1, 0, 0, 0);

        // scale: mean distance to the 3 nearest neighbors
        double best[3] = {1e300, 1e300, 1e300};
        for (size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            double d = (cloud.positions[j] - cloud.positions[i]).norm();
            if (d < best[0]) {
                best[2] = best[1];
                best[1] = best[0];
                best[0] = d;
            } else if (d < best[1]) {
                best[2] = best[1];
                best[1] = d;
            } else if (d < best[2]) {
                best[2] = d;
            }
        }
        double sum = 0.0;
        int k = 0;
        for (double d : best)
            if (d < 1e300) {
                sum += d;
                ++k;
            }
        double dist = k > 0 ? sum / k : 0.01;
        dist = std::max(dist, 1e-7);
        g.log_scale.setConstant(std::log(dist));
        g.opacity_logit = logit(0.1);
        g.sh = Eigen::MatrixXd::Zero(channels, sh_basis_count(sh_degree));
        if (cloud.has_colors()) {
            for (int c = 0; c < channels; ++c) {
                double col = channels == 1 ? cloud.colors[i].mean() : cloud.colors[i](c);
                g.sh(c, 0) = (col - 0.5) / kSH0;
            }
        }
    }
    return out;
}

void adam_update(std::vector<Gaussian3D>& scene, const std::vector<ParamGrads>& grads,
                 AdamState& state, const TrainConfig& cfg, int iteration) {
    if (scene.size() != grads.size())
        throw invalid_parameter_error("adam_update: scene/gradient count mismatch");
    const size_t stride = param_stride(cfg);
    if (state.m.size() != scene.size() * stride) state.resize(scene.size() * stride);

    state.t += 1;
    const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
    const double lr_mean = cfg.lr_mean_at(iteration);

    for (size_t i = 0; i < scene.size(); ++i) {
        Gaussian3D& g = scene[i];
        const ParamGrads& pg = grads[i];
        double* m = state.m.data() + i * stride;
        double* v = state.v.data() + i * stride;

        auto step_one = [&](double& param, double grad, double lr, size_t slot) {
            if (!std::isfinite(grad)) {
                ++state.skipped_nonfinite;
                return;
            }
            m[slot] = b1 * m[slot] + (1.0 - b1) * grad;
            v[slot] = b2 * v[slot] + (1.0 - b2) * grad * grad;
            const double mhat = m[slot] / bc1;
            const double vhat = v[slot] / bc2;
            param -= lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
        };

        for (int c = 0; c < 3; ++c) step_one(g.mean(c), pg.d_mean(c), lr_mean, c);
        for (int c = 0; c < 4; ++c) step_one(g.rot(c), pg.d_rot(c), cfg.lr_rot, 3 + c);
        for (int c = 0; c < 3; ++c)
            step_one(g.log_scale(c), pg.d_log_scale(c), cfg.lr_scale, 7 + c);
        step_one(g.opacity_logit, pg.d_opacity_logit, cfg.lr_opacity, 10);
        size_t slot = 11;
        for (int c = 0; c < g.sh.rows(); ++c)
            for (int b = 0; b < g.sh.cols(); ++b)
                step_one(g.sh(c, b), pg.d_sh(c, b), cfg.lr_sh, slot++);

        const double qn = g.rot.norm();
        if (qn > 0.0) g.rot /= qn;
    }
}

void densify_and_prune(std::vector<Gaussian3D>& scene, const DensifyStats& stats,
                       AdamState& state, const TrainConfig& cfg, int iteration) {
    if (stats.grad2d_sum.size() != scene.size())
        throw invalid_parameter_error("densify_and_prune: stats size mismatch");
    const size_t stride = param_stride(cfg);

    std::vector<Gaussian3D> next;
    std::vector<double> next_m, next_v;
    next.reserve(scene.size() + 64);
    next_m.reserve(state.m.size());
    next_v.reserve(state.v.size());

    auto push_with_state = [&](const Gaussian3D& g, const double* m, const double* v) {
        next.push_back(g);
        if (m) {
            next_m.insert(next_m.end(), m, m + stride);
            next_v.insert(next_v.end(), v, v + stride);
        } else {
            next_m.insert(next_m.end(), stride, 0.0);
            next_v.insert(next_v.end(), stride, 0.0);
        }
    };

    const bool can_grow = scene.size() < static_cast<size_t>(cfg.max_gaussians);
    for (size_t i = 0; i < scene.size(); ++i) {
        const Gaussian3D& g = scene[i];
        if (g.opacity() < cfg.prune_opacity_threshold) continue; // pruned

        const double* m = state.m.empty() ? nullptr : state.m.data() + i * stride;
        const double* v = state.v.empty() ? nullptr : state.v.data() + i * stride;
        const double avg_grad =
            stats.count[i] > 0 ? stats.grad2d_sum[i] / stats.count[i] : 0.0;

        if (!can_grow || avg_grad <= cfg.densify_grad_threshold) {
            push_with_state(g, m, v);
            continue;
        }

        const Eigen::Vector3d s = g.scale();
        if (s.maxCoeff() > cfg.split_scale_threshold) {
            // split: two children sampled from the parent, scales / 1.6
            Eigen::Matrix3d rot = rotation_from_quat(g.rot / g.rot.norm());
            Rng rng = Rng::stream(cfg.seed, kTagSplit, static_cast<uint64_t>(iteration), i);
            for (int child = 0; child < 2; ++child) {
                Gaussian3D c = g;
                Eigen::Vector3d z(rng.normal(), rng.normal(), rng.normal());
                c.mean = g.mean + rot * (s.asDiagonal() * z);
                c.log_scale = g.log_scale.array() - std::log(1.6);
                push_with_state(c, nullptr, nullptr);
            }
        } else {
            // clone: original keeps its moments, the copy starts fresh
            push_with_state(g, m, v);
            push_with_state(g, nullptr, nullptr);
        }
    }

    scene = std::move(next);
    state.m = std::move(next_m);
    state.v = std::move(next_v);
}

Image render_scene(const std::vector<Gaussian3D>& scene, const CameraView& view,
                   const ProjectOptions& opts, int tile_size, int channels) {
    ProjectedScene proj = project_scene(scene, view, opts);
    TileBins bins = sort_and_bin(proj.splats, view.width, view.height, tile_size);
    RenderOutput out = rasterize_forward(bins, proj.splats, view.width, view.height, channels);
    return std::move(out.image);
}

Trainer::Trainer(SceneDataset dataset, TrainConfig cfg)
    : dataset_(std::move(dataset)), cfg_(cfg) {
    cfg_.validate();
    dataset_.validate();
    if (cfg_.loss.mode == LossMode::no_noise_embed)
        embed_ = NonUniformityMap::uniform(dataset_.width, dataset_.height);
    else
        embed_ = dataset_.rnu.reciprocal();
}

void Trainer::init_scene(std::vector<Gaussian3D> gaussians) {
    if (gaussians.empty()) throw invalid_parameter_error("empty initial scene");
    for (const Gaussian3D& g : gaussians) {
        if (g.channels() != cfg_.channels ||
            g.sh.cols() != sh_basis_count(cfg_.sh_degree))
            throw invalid_parameter_error("initial scene disagrees with config sh layout");
    }
    scene_ = std::move(gaussians);
    adam_ = AdamState{};
    adam_.resize(scene_.size() * param_stride(cfg_));
    densify_.reset(scene_.size());
    iteration_ = 0;
}

void Trainer::restore(const io::CheckpointData& ckpt) {
    if (ckpt.channels != cfg_.channels || ckpt.sh_degree != cfg_.sh_degree)
        throw invalid_parameter_error("checkpoint sh layout disagrees with config");
    scene_ = ckpt.gaussians;
    iteration_ = static_cast<int>(ckpt.iteration);
    adam_ = AdamState{};
    const size_t n = scene_.size() * param_stride(cfg_);
    if (!ckpt.adam_m.empty()) {
        if (ckpt.adam_m.size() != n)
            throw invalid_parameter_error("checkpoint adam state size mismatch");
        adam_.m = ckpt.adam_m;
        adam_.v = ckpt.adam_v;
        adam_.t = ckpt.adam_step;
    } else {
        adam_.resize(n);
    }
    densify_.reset(scene_.size());
}

int Trainer::pick_view(int iteration) const {
    const int nviews = static_cast<int>(dataset_.views.size());
    const int epoch = iteration / nviews;
    const int pos = iteration % nviews;
    // Fisher-Yates permutation of this epoch, derived only from (seed, epoch)
    std::vector<int> perm(nviews);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng = Rng::stream(cfg_.seed, kTagEpoch, static_cast<uint64_t>(epoch));
    for (int i = nviews - 1; i > 0; --i) {
        int j = static_cast<int>(rng.next_below(static_cast<uint64_t>(i) + 1));
        std::swap(perm[i], perm[j]);
    }
    return perm[pos];
}

StepStats Trainer::step() {
    if (scene_.empty()) throw invalid_parameter_error("trainer has no scene");
    const int view_idx = pick_view(iteration_);
    const CameraView& view = dataset_.views[view_idx];
    const SpikeStream& gt = dataset_.streams[view_idx];
    const size_t npix = static_cast<size_t>(dataset_.width) * dataset_.height;

    // render
    ProjectedScene proj = project_scene(scene_, view, cfg_.project);
    TileBins bins = sort_and_bin(proj.splats, view.width, view.height, cfg_.tile_size);
    RenderOutput render =
        rasterize_forward(bins, proj.splats, view.width, view.height, cfg_.channels);

    // luminance collapse for supervision
    std::vector<double> intensity(npix);
    if (cfg_.channels == 1) {
        intensity.assign(render.image.data.begin(), render.image.data.end());
    } else {
        for (size_t p = 0; p < npix; ++p) {
            double y = 0.0;
            for (int c = 0; c < 3; ++c)
                y += cfg_.luminance_weights(c) * render.image.data[p * 3 + c];
            intensity[p] = y;
        }
    }

    // spike neuron layer (also used for the accuracy metric in intensity mode)
    std::vector<double> a0 =
        draw_a0(cfg_.a0_mode, cfg_.seed, dataset_.width, dataset_.height, cfg_.omega,
                kTagA0Iter ^ (static_cast<uint64_t>(iteration_) << 8));
    SnlResult snl = snl_forward(intensity, dataset_.width, dataset_.height, embed_,
                                cfg_.omega, dataset_.window, a0, cfg_.snl_mode,
                                cfg_.surrogate);

    StepStats stats;
    stats.view_index = view_idx;
    stats.spike_accuracy = spike_accuracy(snl.stream, gt);

    std::vector<double> d_intensity;
    if (cfg_.loss.mode == LossMode::intensity) {
        LossValue lv = rendering_loss(intensity, gt, cfg_.loss);
        stats.loss = lv.loss;
        stats.l1 = lv.l1;
        stats.dssim = lv.dssim;
        d_intensity = std::move(lv.grad);
    } else {
        LossValue lv = rendering_loss(snl.pred, gt, cfg_.loss);
        stats.loss = lv.loss;
        stats.l1 = lv.l1;
        stats.dssim = lv.dssim;
        d_intensity =
            snl_backward(snl.tape, lv.grad, cfg_.surrogate, embed_, cfg_.reset_flow);
    }

    // image gradient from the luminance gradient
    Image dimage(dataset_.width, dataset_.height, cfg_.channels, 0.0);
    if (cfg_.channels == 1) {
        dimage.data.assign(d_intensity.begin(), d_intensity.end());
    } else {
        for (size_t p = 0; p < npix; ++p)
            for (int c = 0; c < 3; ++c)
                dimage.data[p * 3 + c] = cfg_.luminance_weights(c) * d_intensity[p];
    }

    std::vector<SplatGrad> splat_grads = rasterize_backward(bins, proj.splats, render, dimage);
    std::vector<ParamGrads> grads = chain_to_3d(splat_grads, proj, view, scene_);

    // densification bookkeeping (screen-space positional gradient norms)
    if (densify_.grad2d_sum.size() != scene_.size()) densify_.reset(scene_.size());
    for (size_t k = 0; k < proj.splats.size(); ++k) {
        const int src = proj.splats[k].source_index;
        densify_.grad2d_sum[src] += splat_grads[k].d_mean2d.norm();
        densify_.count[src] += 1;
    }

    adam_update(scene_, grads, adam_, cfg_, iteration_);
    ++iteration_;

    if (cfg_.densify_interval > 0 && iteration_ <= cfg_.densify_until() &&
        iteration_ % cfg_.densify_interval == 0) {
        densify_and_prune(scene_, densify_, adam_, cfg_, iteration_);
        densify_.reset(scene_.size());
    }

    stats.gaussian_count = scene_.size();
    return stats;
}

Image Trainer::render(const CameraView& view) const {
    return render_scene(scene_, view, cfg_.project, cfg_.tile_size, cfg_.channels);
}

io::CheckpointData Trainer::checkpoint() const {
    io::CheckpointData ckpt;
    ckpt.iteration = static_cast<uint64_t>(iteration_);
    ckpt.seed = cfg_.seed;
    ckpt.channels = cfg_.channels;
    ckpt.sh_degree = cfg_.sh_degree;
    ckpt.window = cfg_.window;
    ckpt.omega = cfg_.omega;
    ckpt.adam_step = adam_.t;
    ckpt.gaussians = scene_;
    ckpt.adam_m = adam_.m;
    ckpt.adam_v = adam_.v;
    return ckpt;
}

} // namespace spikesplat
