// Copyright Contributors to the spikesplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "spikesplat/io.hpp"
#include "spikesplat/loss.hpp"
#include "spikesplat/rasterizer.hpp"
#include "spikesplat/spike.hpp"

#include <string>
#include <vector>

namespace spikesplat {

struct TrainConfig {
    int iterations = 2000;

    // per-group learning rates (3DGS-style defaults)
    double lr_mean = 1.6e-4;
    double lr_mean_final = 1.6e-6; // exponential decay target at `iterations`
    double lr_rot = 1e-3;
    double lr_scale = 5e-3;
    double lr_opacity = 5e-2;
    double lr_sh = 2.5e-3;

    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    int densify_interval = 100;
    double densify_grad_threshold = 2e-4;
    double prune_opacity_threshold = 5e-3;
    int densify_until_iter = -1;        // < 0: iterations / 2
    double split_scale_threshold = 0.05; // world units: above -> split, else clone
    int max_gaussians = 200000;

    LossConfig loss;
    double omega = 1.0;
    int window = 256;
    A0Mode a0_mode = A0Mode::seeded_uniform;
    SurrogateConfig surrogate;
    bool reset_flow = false;

    uint64_t seed = 0;
    bool deterministic = true;
    SnlMode snl_mode = SnlMode::hard;

    int channels = 1;
    int sh_degree = 1;
    Eigen::Vector3d luminance_weights =
        Eigen::Vector3d(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0);

    ProjectOptions project;
    int tile_size = 16;

    void validate() const;
    int densify_until() const {
        return densify_until_iter >= 0 ? densify_until_iter : iterations / 2;
    }
    double lr_mean_at(int iteration) const;
};

struct SceneDataset {
    int width = 0, height = 0, window = 0, channels = 1;
    double omega = 1.0;
    std::vector<CameraView> views;
    std::vector<SpikeStream> streams;   // aligned with views
    std::vector<Image> gt_images;       // optional, simulation mode
    NonUniformityMap rnu;               // calibrated ratio map

    void validate() const;
};

// Flat Adam moments; layout matches io::checkpoint_param_stride per Gaussian.
struct AdamState {
    std::vector<double> m, v;
    uint64_t t = 0;
    int skipped_nonfinite = 0;

    void resize(size_t n) {
        m.assign(n, 0.0);
        v.assign(n, 0.0);
    }
};

struct DensifyStats {
    std::vector<double> grad2d_sum;
    std::vector<int> count;

    void reset(size_t n) {
        grad2d_sum.assign(n, 0.0);
        count.assign(n, 0);
    }
};

struct StepStats {
    double loss = 0.0, l1 = 0.0, dssim = 0.0;
    double spike_accuracy = 0.0;
    int view_index = 0;
    size_t gaussian_count = 0;
};

// --- spec operations ---------------------------------------------------------

std::vector<Gaussian3D> init_gaussians_random(int count, const Eigen::Vector3d& bbox_min,
                                              const Eigen::Vector3d& bbox_max,
                                              int channels, int sh_degree,
                                              uint64_t seed);
std::vector<Gaussian3D> init_gaussians_from_cloud(const io::PointCloud& cloud,
                                                  int channels, int sh_degree);

// One Adam step over every parameter group; bias-corrected, per-group rates,
// quaternions renormalized afterwards. Non-finite gradient entries skip that
// scalar parameter and bump state.skipped_nonfinite.
void adam_update(std::vector<Gaussian3D>& scene, const std::vector<ParamGrads>& grads,
                 AdamState& state, const TrainConfig& cfg, int iteration);

// Clone / split on accumulated screen-space gradient, prune on opacity.
// Adam moments move with surviving Gaussians; new ones start at zero.
void densify_and_prune(std::vector<Gaussian3D>& scene, const DensifyStats& stats,
                       AdamState& state, const TrainConfig& cfg, int iteration);

class Trainer {
public:
    Trainer(SceneDataset dataset, TrainConfig cfg);

    void init_scene(std::vector<Gaussian3D> gaussians);
    void restore(const io::CheckpointData& ckpt);

    StepStats step(); // one train iteration
    Image render(const CameraView& view) const;

    const std::vector<Gaussian3D>& scene() const { return scene_; }
    int iteration() const { return iteration_; }
    const TrainConfig& config() const { return cfg_; }
    const SceneDataset& dataset() const { return dataset_; }
    io::CheckpointData checkpoint() const;

private:
    int pick_view(int iteration) const;

    SceneDataset dataset_;
    TrainConfig cfg_;
    std::vector<Gaussian3D> scene_;
    AdamState adam_;
    DensifyStats densify_;
    NonUniformityMap embed_; // reciprocal of the calibrated map (sensitivity)
    int iteration_ = 0;
};

Image render_scene(const std::vector<Gaussian3D>& scene, const CameraView& view,
                   const ProjectOptions& opts, int tile_size, int channels);

} // namespace spikesplat
