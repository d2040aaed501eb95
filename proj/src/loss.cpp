// Copyright Contributors to the spikesplat project
// SPDX-License-Identifier: Apache-2.0

#include "spikesplat/loss.hpp"

#include "spikesplat/kernels.hpp"
#include "spikesplat/parallel.hpp"

#include <cmath>

namespace spikesplat {

LossMode loss_mode_from_string(const std::string& s) {
    if (s == "full_spike") return LossMode::full_spike;
    if (s == "l1_only") return LossMode::l1_only;
    if (s == "intensity") return LossMode::intensity;
    if (s == "no_noise_embed") return LossMode::no_noise_embed;
    throw invalid_parameter_error("unknown loss mode: " + s);
}

const char* to_string(LossMode m) {
    switch (m) {
    case LossMode::full_spike: return "full_spike";
    case LossMode::l1_only: return "l1_only";
    case LossMode::intensity: return "intensity";
    case LossMode::no_noise_embed: return "no_noise_embed";
    }
    return "?";
}

SsimContext::SsimContext(int width, int height, int window, double sigma)
    : width_(width), height_(height), half_((window - 1) / 2) {
    if (window < 3 || window % 2 == 0)
        throw invalid_parameter_error("ssim window must be odd and >= 3");
    const int n = 2 * half_ + 1;
    taps_.resize(n);
    double sum = 0.0;
    for (int k = 0; k < n; ++k) {
        double d = k - half_;
        taps_[k] = std::exp(-0.5 * d * d / (sigma * sigma));
        sum += taps_[k];
    }
    for (double& t : taps_) t /= sum;

    // per-pixel clipped tap mass Z = Zx(x) * Zy(y)
    auto axis_z = [&](int len) {
        std::vector<double> z(len, 0.0);
        for (int i = 0; i < len; ++i) {
            int k0 = i - half_ < 0 ? -i : -half_;
            int k1 = i + half_ >= len ? len - 1 - i : half_;
            for (int k = k0; k <= k1; ++k) z[i] += taps_[k + half_];
        }
        return z;
    };
    std::vector<double> zx = axis_z(width);
    std::vector<double> zy = axis_z(height);
    inv_z_.resize(static_cast<size_t>(width) * height);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            inv_z_[static_cast<size_t>(y) * width + x] = 1.0 / (zx[x] * zy[y]);

    const size_t npix = static_cast<size_t>(width) * height;
    tmp_.resize(npix);
    sq_.resize(npix);
    mu_x_.resize(npix);
    mu_y_.resize(npix);
    mxx_.resize(npix);
    myy_.resize(npix);
    mxy_.resize(npix);
    map_.resize(npix);
    d_mux_.resize(npix);
    d_mxx_.resize(npix);
    d_mxy_.resize(npix);
    adj_.resize(npix);
}

const double* SsimContext::blur(const double* src, double* dst) {
    const auto& k = kernels::active();
    k.conv_h(src, height_, width_, taps_.data(), half_, tmp_.data());
    k.conv_v(tmp_.data(), height_, width_, taps_.data(), half_, dst);
    k.vec_mul(dst, dst, inv_z_.data(), static_cast<size_t>(width_) * height_);
    return dst;
}

void SsimContext::adjoint_blur(const double* src, double* dst) {
    // adjoint of the normalized blur: conv(src / Z) (taps are symmetric)
    const auto& k = kernels::active();
    const size_t npix = static_cast<size_t>(width_) * height_;
    k.vec_mul(adj_.data(), src, inv_z_.data(), npix);
    k.conv_h(adj_.data(), height_, width_, taps_.data(), half_, tmp_.data());
    k.conv_v(tmp_.data(), height_, width_, taps_.data(), half_, dst);
}

double SsimContext::ssim(const double* x, const double* y, double c1, double c2,
                         double map_coef, double* grad_acc) {
    const auto& k = kernels::active();
    const size_t npix = static_cast<size_t>(width_) * height_;

    blur(x, mu_x_.data());
    blur(y, mu_y_.data());
    k.vec_mul(sq_.data(), x, x, npix);
    blur(sq_.data(), mxx_.data());
    k.vec_mul(sq_.data(), y, y, npix);
    blur(sq_.data(), myy_.data());
    k.vec_mul(sq_.data(), x, y, npix);
    blur(sq_.data(), mxy_.data());

    k.ssim_map(npix, mu_x_.data(), mu_y_.data(), mxx_.data(), myy_.data(),
               mxy_.data(), c1, c2, map_.data());
    double mean = 0.0;
    for (size_t i = 0; i < npix; ++i) mean += map_[i];
    mean /= static_cast<double>(npix);

    if (grad_acc && map_coef != 0.0) {
        k.ssim_grad_terms(npix, mu_x_.data(), mu_y_.data(), mxx_.data(),
                          myy_.data(), mxy_.data(), c1, c2, map_coef,
                          d_mux_.data(), d_mxx_.data(), d_mxy_.data());
        adjoint_blur(d_mux_.data(), map_.data());
        k.vec_axpy(grad_acc, map_.data(), 1.0, npix);
        adjoint_blur(d_mxx_.data(), map_.data());
        k.vec_muladd(grad_acc, map_.data(), x, 2.0, npix);
        adjoint_blur(d_mxy_.data(), map_.data());
        k.vec_muladd(grad_acc, map_.data(), y, 1.0, npix);
    }
    return mean;
}

namespace {

void check_stream_pred(const std::vector<double>& pred, const SpikeStream& gt) {
    if (pred.size() != gt.bit_count())
        throw invalid_parameter_error("prediction / stream shape mismatch");
}

// Per-frame SSIM over the window; frames are independent, so chunks run in
// parallel with private contexts and the per-frame values sum in index order.
double framewise_ssim(const std::vector<double>& pred, const std::vector<double>& gtd,
                      int width, int height, int frames, const LossConfig& cfg,
                      double map_coef, double* grad) {
    const size_t npix = static_cast<size_t>(width) * height;
    std::vector<double> per_frame(frames, 0.0);
    parallel_chunks(0, frames, [&](int, int lo, int hi) {
        SsimContext ctx(width, height, cfg.ssim_window);
        for (int t = lo; t < hi; ++t) {
            per_frame[t] = ctx.ssim(pred.data() + npix * t, gtd.data() + npix * t,
                                    cfg.ssim_c1, cfg.ssim_c2, map_coef,
                                    grad ? grad + npix * t : nullptr);
        }
    });
    double total = 0.0;
    for (double v : per_frame) total += v;
    return total / frames;
}

} // namespace

LossValue spike_l1(const std::vector<double>& pred, const SpikeStream& gt) {
    check_stream_pred(pred, gt);
    const auto& k = kernels::active();
    std::vector<double> gtd = unpack_stream(gt);
    LossValue out;
    out.grad.assign(pred.size(), 0.0);
    const double inv_n = 1.0 / static_cast<double>(pred.size());
    double sum = k.abs_diff_sum_grad(pred.data(), gtd.data(), pred.size(), inv_n,
                                     out.grad.data());
    out.l1 = sum * inv_n;
    out.loss = out.l1;
    return out;
}

LossValue spike_dssim(const std::vector<double>& pred, const SpikeStream& gt,
                      const LossConfig& cfg) {
    check_stream_pred(pred, gt);
    cfg.validate();
    std::vector<double> gtd = unpack_stream(gt);
    LossValue out;
    out.grad.assign(pred.size(), 0.0);
    // D-SSIM = mean over frames of (1 - mean_p S)/2
    const double map_coef = -0.5 / (static_cast<double>(gt.pixel_count()) * gt.window);
    double mean = framewise_ssim(pred, gtd, gt.width, gt.height, gt.window, cfg,
                                 map_coef, out.grad.data());
    out.dssim = (1.0 - mean) * 0.5;
    out.loss = out.dssim;
    return out;
}

LossValue rendering_loss(const std::vector<double>& pred, const SpikeStream& gt,
                         const LossConfig& cfg) {
    cfg.validate();
    const auto& k = kernels::active();
    LossValue out;

    if (cfg.mode == LossMode::intensity) {
        // supervise the rendered image against the TFP estimate of the stream
        const size_t npix = gt.pixel_count();
        if (pred.size() != npix)
            throw invalid_parameter_error("intensity mode expects an H*W prediction");
        Image target = tfp_reconstruct(gt);
        out.grad.assign(npix, 0.0);
        const double inv_n = 1.0 / static_cast<double>(npix);
        double sum = k.abs_diff_sum_grad(pred.data(), target.data.data(), npix,
                                         (1.0 - cfg.lambda) * inv_n, out.grad.data());
        out.l1 = sum * inv_n;
        SsimContext ctx(gt.width, gt.height, cfg.ssim_window);
        const double map_coef = -0.5 * cfg.lambda * inv_n;
        double s = ctx.ssim(pred.data(), target.data.data(), cfg.ssim_c1,
                            cfg.ssim_c2, map_coef, out.grad.data());
        out.dssim = (1.0 - s) * 0.5;
        out.loss = (1.0 - cfg.lambda) * out.l1 + cfg.lambda * out.dssim;
        return out;
    }

    check_stream_pred(pred, gt);
    if (cfg.mode == LossMode::l1_only) {
        out = spike_l1(pred, gt);
        return out;
    }

    // full_spike and no_noise_embed (the latter differs upstream only)
    std::vector<double> gtd = unpack_stream(gt);
    out.grad.assign(pred.size(), 0.0);
    const double inv_n = 1.0 / static_cast<double>(pred.size());
    double sum = k.abs_diff_sum_grad(pred.data(), gtd.data(), pred.size(),
                                     (1.0 - cfg.lambda) * inv_n, out.grad.data());
    out.l1 = sum * inv_n;

    const double map_coef =
        -0.5 * cfg.lambda / (static_cast<double>(gt.pixel_count()) * gt.window);
    double mean = framewise_ssim(pred, gtd, gt.width, gt.height, gt.window, cfg,
                                 map_coef, out.grad.data());
    out.dssim = (1.0 - mean) * 0.5;
    out.loss = (1.0 - cfg.lambda) * out.l1 + cfg.lambda * out.dssim;
    return out;
}

double psnr(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw invalid_parameter_error("psnr: shape mismatch");
    double mse = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        double d = a.data[i] - b.data[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.data.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

double ssim_image(const Image& a, const Image& b, const LossConfig& cfg) {
    if (!a.same_shape(b)) throw invalid_parameter_error("ssim: shape mismatch");
    SsimContext ctx(a.width, a.height, cfg.ssim_window);
    const size_t npix = static_cast<size_t>(a.width) * a.height;
    std::vector<double> pa(npix), pb(npix);
    double total = 0.0;
    for (int c = 0; c < a.channels; ++c) {
        for (size_t p = 0; p < npix; ++p) {
            pa[p] = a.data[p * a.channels + c];
            pb[p] = b.data[p * b.channels + c];
        }
        total += ctx.ssim(pa.data(), pb.data(), cfg.ssim_c1, cfg.ssim_c2);
    }
    return total / a.channels;
}

} // namespace spikesplat
