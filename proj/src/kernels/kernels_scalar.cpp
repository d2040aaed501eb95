// Copyright Contributors to the spikesplat project
// SPDX-License-Identifier: Apache-2.0

// Reference kernels. Plain loops, no intrinsics; the AVX2 variants are
// checked against these.

#include "spikesplat/kernels.hpp"

#include <bit>
#include <cmath>
#include <cstring>

namespace spikesplat::kernels {
namespace {

int if_step_row_scalar(double* acc, const double* input, int n, double omega,
                       uint8_t* bits_out, double* v_out) {
    int clamped = 0;
    const int nbytes = (n + 7) / 8;
    std::memset(bits_out, 0, static_cast<size_t>(nbytes));
    for (int i = 0; i < n; ++i) {
        double in = input[i];
        if (!std::isfinite(in)) return -1;
        if (in < 0.0) {
            in = 0.0;
            ++clamped;
        }
        double v = acc[i] + in;
        if (v_out) v_out[i] = v;
        if (v >= omega) {
            bits_out[i >> 3] |= static_cast<uint8_t>(1u << (i & 7));
            v -= omega;
            if (v >= omega) v = std::fmod(v, omega);
        }
        acc[i] = v;
    }
    return clamped;
}

void unpack_bits_row_scalar(const uint8_t* bits, int n, double* out) {
    for (int i = 0; i < n; ++i)
        out[i] = (bits[i >> 3] >> (i & 7)) & 1u ? 1.0 : 0.0;
}

void bits_accum_row_scalar(const uint8_t* bits, int n, double* acc) {
    for (int i = 0; i < n; ++i)
        acc[i] += (bits[i >> 3] >> (i & 7)) & 1u ? 1.0 : 0.0;
}

uint64_t xor_popcount_scalar(const uint8_t* a, const uint8_t* b, size_t nbytes) {
    uint64_t total = 0;
    size_t i = 0;
    for (; i + 8 <= nbytes; i += 8) {
        uint64_t wa, wb;
        std::memcpy(&wa, a + i, 8);
        std::memcpy(&wb, b + i, 8);
        total += static_cast<uint64_t>(std::popcount(wa ^ wb));
    }
    for (; i < nbytes; ++i)
        total += static_cast<uint64_t>(std::popcount(static_cast<unsigned>(a[i] ^ b[i])));
    return total;
}

double abs_diff_sum_grad_scalar(const double* pred, const double* gt, size_t n,
                                double gcoef, double* grad_acc) {
    double sum = 0.0;
    for (size_t i = 0; i < n; ++i) {
        double d = pred[i] - gt[i];
        sum += std::fabs(d);
        if (grad_acc && d != 0.0)
            grad_acc[i] += d > 0.0 ? gcoef : -gcoef;
    }
    return sum;
}

void conv_h_scalar(const double* src, int h, int w, const double* taps, int half,
                   double* dst) {
    for (int y = 0; y < h; ++y) {
        const double* row = src + static_cast<size_t>(y) * w;
        double* out = dst + static_cast<size_t>(y) * w;
        for (int x = 0; x < w; ++x) {
            int k0 = x - half < 0 ? -x : -half;
            int k1 = x + half >= w ? w - 1 - x : half;
            double s = 0.0;
            for (int k = k0; k <= k1; ++k) s += taps[k + half] * row[x + k];
            out[x] = s;
        }
    }
}

void conv_v_scalar(const double* src, int h, int w, const double* taps, int half,
                   double* dst) {
    for (int y = 0; y < h; ++y) {
        int k0 = y - half < 0 ? -y : -half;
        int k1 = y + half >= h ? h - 1 - y : half;
        double* out = dst + static_cast<size_t>(y) * w;
        // accumulate rows in k order so the sum order matches the AVX2 path
        for (int x = 0; x < w; ++x) out[x] = 0.0;
        for (int k = k0; k <= k1; ++k) {
            const double* row = src + static_cast<size_t>(y + k) * w;
            double t = taps[k + half];
            for (int x = 0; x < w; ++x) out[x] += t * row[x];
        }
    }
}

void ssim_map_scalar(size_t n, const double* mu_x, const double* mu_y,
                     const double* mxx, const double* myy, const double* mxy,
                     double c1, double c2, double* out) {
    for (size_t i = 0; i < n; ++i) {
        double ux = mu_x[i], uy = mu_y[i];
        double sxx = mxx[i] - ux * ux;
        double syy = myy[i] - uy * uy;
        double sxy = mxy[i] - ux * uy;
        double a1 = 2.0 * ux * uy + c1;
        double a2 = 2.0 * sxy + c2;
        double b1 = ux * ux + uy * uy + c1;
        double b2 = sxx + syy + c2;
        out[i] = (a1 * a2) / (b1 * b2);
    }
}

void ssim_grad_terms_scalar(size_t n, const double* mu_x, const double* mu_y,
                            const double* mxx, const double* myy,
                            const double* mxy, double c1, double c2, double coef,
                            double* d_mux, double* d_mxx, double* d_mxy) {
    for (size_t i = 0; i < n; ++i) {
        double ux = mu_x[i], uy = mu_y[i];
        double sxx = mxx[i] - ux * ux;
        double syy = myy[i] - uy * uy;
        double sxy = mxy[i] - ux * uy;
        double a1 = 2.0 * ux * uy + c1;
        double a2 = 2.0 * sxy + c2;
        double b1 = ux * ux + uy * uy + c1;
        double b2 = sxx + syy + c2;
        double s = (a1 * a2) / (b1 * b2);
        // dS/dmu_x with mxx, mxy held fixed (sxx, sxy depend on mu_x)
        d_mux[i] = coef * (2.0 * uy * (s * (1.0 / a1 - 1.0 / a2)) +
                           2.0 * ux * (s * (1.0 / b2 - 1.0 / b1)));
        d_mxx[i] = coef * (-(s * (1.0 / b2)));
        d_mxy[i] = coef * (2.0 * (s * (1.0 / a2)));
    }
}

void surrogate_accum_scalar(double* acc, const double* g, const double* v,
                            size_t n, double omega, double a, int kind) {
    const double peak = 0.5 / a;
    if (kind == 0) {
        for (size_t i = 0; i < n; ++i)
            acc[i] += std::fabs(v[i] - omega) <= a ? g[i] * peak : 0.0;
    } else {
        for (size_t i = 0; i < n; ++i) {
            double t = 1.0 + std::fabs(v[i] - omega) / a;
            acc[i] += g[i] * peak / (t * t);
        }
    }
}

void vec_axpy_scalar(double* out, const double* a, double s, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] += s * a[i];
}

void vec_muladd_scalar(double* out, const double* a, const double* b, double s,
                       size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] += s * (a[i] * b[i]);
}

void vec_mul_scalar(double* out, const double* a, const double* b, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void vec_scale_scalar(double* out, const double* a, double s, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = s * a[i];
}

constexpr KernelTable kScalarTable = {
    "scalar",
    &if_step_row_scalar,
    &unpack_bits_row_scalar,
    &bits_accum_row_scalar,
    &xor_popcount_scalar,
    &abs_diff_sum_grad_scalar,
    &conv_h_scalar,
    &conv_v_scalar,
    &ssim_map_scalar,
    &ssim_grad_terms_scalar,
    &surrogate_accum_scalar,
    &vec_axpy_scalar,
    &vec_muladd_scalar,
    &vec_mul_scalar,
    &vec_scale_scalar,
};

} // namespace

const KernelTable& scalar_table() { return kScalarTable; }

} // namespace spikesplat::kernels
