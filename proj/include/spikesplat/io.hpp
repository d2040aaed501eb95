// Copyright Contributors to the spikesplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "spikesplat/common.hpp"
#include "spikesplat/gaussian.hpp"
#include "spikesplat/spike.hpp"

#include <string>
#include <vector>

namespace spikesplat::io {

// --- spike stream container -------------------------------------------------
// "SPK1" | version u32 | width u32 | height u32 | window u32 | threshold f64 |
// timestep_hz f64, all little-endian, followed by `window` frames of
// row-major bits, 8 pixels per byte LSB-first, rows padded to byte
// boundaries. read(write(s)) is bit-exact.
void write_spike_dat(const SpikeStream& stream, const std::string& path);
SpikeStream read_spike_dat(const std::string& path);
// Headerless payload for real-camera dumps; the caller supplies the geometry.
SpikeStream read_spike_dat_raw(const std::string& path, int width, int height,
                               int window, double threshold = 1.0,
                               double timestep_hz = 20000.0);

// --- poses -------------------------------------------------------------------
// JSON: shared pinhole intrinsics plus per-frame 4x4 camera-to-world
// row-major matrices (right-handed, camera looks down -z). Rotation blocks
// off orthonormal by more than 1e-4 are a validation error; accepted ones
// are re-orthonormalized before inversion.
std::vector<CameraView> read_poses(const std::string& path);
void write_poses(const std::vector<CameraView>& views, const std::string& path);

// --- point clouds -------------------------------------------------------------
struct PointCloud {
    std::vector<Eigen::Vector3d> positions;
    std::vector<Eigen::Vector3d> colors; // empty when the file has none
    bool has_colors() const { return !colors.empty(); }
};

// ASCII and binary_little_endian PLY with float/double x y z and optional
// uchar red green blue. Big-endian files are an unsupported-format error.
PointCloud read_ply_points(const std::string& path);
void write_ply_points(const PointCloud& cloud, const std::string& path,
                      bool binary = true);

// --- images -------------------------------------------------------------------
// .pgm (P5) for 1 channel, .ppm (P6) or .png for 3 channels; linear [0,1]
// mapped through round(255 * clamp).
void write_image(const Image& img, const std::string& path);
Image read_image(const std::string& path); // P5/P6 only

// --- response map -------------------------------------------------------------
// "RNU1" | version | width | height | ref_x | ref_y | f64 ratios | u8 dead.
void write_rnu_map(const NonUniformityMap& map, const std::string& path);
NonUniformityMap read_rnu_map(const std::string& path);

// --- checkpoints ---------------------------------------------------------------
// "SSCK" | version u32, then tagged blocks (tag u32, byte length u64):
//   1 meta (iteration, seed, channels, sh degree, window, omega, adam step)
//   2 parameters f32 (interchange; enough to render)
//   3 parameters f64 } exact training state, required for bit-identical
//   4 adam moments f64 } resume
// Unknown tags are skipped. Parameter layout per Gaussian:
// mean[3], rot[4], log_scale[3], opacity_logit, sh[channels * basis].
struct CheckpointData {
    uint64_t iteration = 0;
    uint64_t seed = 0;
    int channels = 1;
    int sh_degree = 1;
    int window = 256;
    double omega = 1.0;
    uint64_t adam_step = 0;
    std::vector<Gaussian3D> gaussians;
    std::vector<double> adam_m; // empty when absent
    std::vector<double> adam_v;
    bool precise = false; // params came from the f64 block
};

void write_checkpoint(const CheckpointData& ckpt, const std::string& path);
CheckpointData read_checkpoint(const std::string& path);

int checkpoint_param_stride(int channels, int sh_degree);

} // namespace spikesplat::io
