// Copyright Contributors to the spikesplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "spikesplat/common.hpp"
#include "spikesplat/spike.hpp"

#include <vector>

namespace spikesplat {

enum class LossMode { full_spike, l1_only, intensity, no_noise_embed };

LossMode loss_mode_from_string(const std::string& s);
const char* to_string(LossMode m);

struct LossConfig {
    LossMode mode = LossMode::full_spike;
    double lambda = 0.2;
    int ssim_window = 11;
    double ssim_c1 = 1e-4; // (0.01)^2 at dynamic range 1
    double ssim_c2 = 9e-4; // (0.03)^2

    void validate() const {
        if (!(lambda >= 0.0 && lambda <= 1.0))
            throw invalid_parameter_error("lambda must be in [0, 1]");
        if (ssim_window < 3 || ssim_window % 2 == 0)
            throw invalid_parameter_error("ssim_window must be odd and >= 3");
    }
};

struct LossValue {
    double loss = 0.0;
    double l1 = 0.0;
    double dssim = 0.0;
    std::vector<double> grad; // dL/dpred, same size as pred
};

// Gaussian-window SSIM over one frame shape. The window is never padded:
// borders use the clipped taps renormalized per pixel, which also covers
// frames smaller than the window.
class SsimContext {
public:
    SsimContext(int width, int height, int window, double sigma = 1.5);

    // Mean SSIM of one frame pair; when grad_acc is non-null adds
    // map_coef * d(sum_p SSIM_p)/dx to it.
    double ssim(const double* x, const double* y, double c1, double c2,
                double map_coef = 0.0, double* grad_acc = nullptr);

    int width() const { return width_; }
    int height() const { return height_; }

private:
    const double* blur(const double* src, double* dst); // normalized
    void adjoint_blur(const double* src, double* dst);   // conv(src / Z)

    int width_, height_, half_;
    std::vector<double> taps_;
    std::vector<double> inv_z_;
    std::vector<double> tmp_, sq_, mu_x_, mu_y_, mxx_, myy_, mxy_, map_;
    std::vector<double> d_mux_, d_mxx_, d_mxy_, adj_;
};

// Mean absolute difference over all entries; grad = sign(pred-gt)/n, zero at
// exact ties. pred holds hard or surrogate-relaxed spikes in [0,1].
LossValue spike_l1(const std::vector<double>& pred, const SpikeStream& gt);

// Per-frame SSIM across the window (stream viewed as N frames of H x W);
// D-SSIM = mean over frames of (1 - SSIM)/2, with its analytic gradient.
LossValue spike_dssim(const std::vector<double>& pred, const SpikeStream& gt,
                      const LossConfig& cfg = {});

// The spike rendering loss. full_spike / no_noise_embed / l1_only modes take
// pred as window frames of H*W stream values; intensity mode takes pred as a
// single H*W rendered image and compares against tfp_reconstruct(gt).
LossValue rendering_loss(const std::vector<double>& pred, const SpikeStream& gt,
                         const LossConfig& cfg);

// 10*log10(1 / MSE); +infinity for identical images.
double psnr(const Image& a, const Image& b);

// Gaussian-window SSIM per channel, averaged.
double ssim_image(const Image& a, const Image& b, const LossConfig& cfg = {});

} // namespace spikesplat
