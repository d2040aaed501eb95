// Copyright Contributors to the spikesplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "spikesplat/trainer.hpp"

#include <string>
#include <vector>

namespace spikesplat {

// Procedural scenes usable with zero external data. blobs3 is a monochrome
// 3-Gaussian arrangement; checker_sphere is an RGB sphere shell.
std::vector<Gaussian3D> fixture_scene(const std::string& name, int* channels_out);
bool fixture_exists(const std::string& name);

// Cameras on an orbit around the origin, alternating elevation bands.
std::vector<CameraView> orbit_rig(int count, int width, int height,
                                  double radius = 1.35, double focal = 70.0);

struct SimulateOptions {
    std::string fixture = "blobs3";
    int views = 25;
    int holdout = 5;
    int width = 64;
    int height = 64;
    int window = 256;
    double omega = 1.0;
    double light_scale = 1.0;
    int calib_streams = 32;
    NoiseConfig noise;
    A0Mode a0_mode = A0Mode::seeded_uniform;
};

// Renders ground-truth intensities for the fixture, simulates per-view
// streams and calibration data, and writes streams + GT images + poses +
// response maps + manifest.json into out_dir.
void simulate_to_dir(const SimulateOptions& opts, const std::string& out_dir);

struct LoadedDataset {
    SceneDataset train;
    std::vector<int> train_indices;
    std::vector<int> holdout_indices;
    std::vector<CameraView> all_views;
    std::vector<Image> all_gt; // empty entries when absent
    int channels = 1;
};

LoadedDataset load_dataset(const std::string& dir);

struct EvalRow {
    std::string name;
    double psnr = 0.0;
    double ssim = 0.0;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
};

// Pairs same-named images from two directories (sorted); mismatched listings
// are an error.
EvalReport evaluate_dirs(const std::string& rendered_dir, const std::string& gt_dir);
EvalReport evaluate_images(const std::vector<Image>& rendered,
                           const std::vector<Image>& gt,
                           const std::vector<std::string>& names);

std::string format_eval_table(const EvalReport& report);
std::string format_eval_csv(const EvalReport& report);

} // namespace spikesplat
