// Copyright Contributors to the spikesplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>

namespace spikesplat::kernels {

// Flat-array inner loops shared by the spike, loss and image modules.
// Every entry has a scalar reference implementation and (on x86-64) an AVX2
// variant; the two are equivalence-tested and selected at runtime. All
// translation units are built with -ffp-contract=off and the AVX2 variants
// avoid FMA, so elementwise kernels are bit-identical across backends;
// reduction kernels may differ in summation order and are compared with a
// tolerance instead.
struct KernelTable {
    const char* name;

    // One integrate-and-fire step over a row of `n` pixels (hard spikes).
    //   in' = max(input, 0); V = acc + in'; spike = V >= omega;
    //   acc = V - omega*spike, folded once by fmod if still >= omega.
    // Spikes are packed LSB-first into bits_out (pad bits cleared); V is
    // recorded into v_out when non-null. Returns the number of negative
    // inputs clamped, or -1 if any input is non-finite (acc then unspecified).
    int (*if_step_row)(double* acc, const double* input, int n, double omega,
                       uint8_t* bits_out, double* v_out);

    // bits -> {0.0, 1.0}
    void (*unpack_bits_row)(const uint8_t* bits, int n, double* out);
    // acc[i] += bit_i
    void (*bits_accum_row)(const uint8_t* bits, int n, double* acc);

    uint64_t (*xor_popcount)(const uint8_t* a, const uint8_t* b, size_t nbytes);

    // Returns sum |pred - gt|; grad_acc[i] += gcoef * sign(pred[i] - gt[i])
    // (0 at exact ties). grad_acc may be null for loss-only evaluation.
    double (*abs_diff_sum_grad)(const double* pred, const double* gt, size_t n,
                                double gcoef, double* grad_acc);

    // Separable 1D correlations with a symmetric tap vector of length
    // 2*half+1, window clipped at the frame border (no padding, no
    // normalization -- callers divide by the clipped tap sum).
    void (*conv_h)(const double* src, int h, int w, const double* taps, int half,
                   double* dst);
    void (*conv_v)(const double* src, int h, int w, const double* taps, int half,
                   double* dst);

    // SSIM map from blurred moments: mu_x, mu_y, mxx=E[x^2], myy=E[y^2],
    // mxy=E[xy] (all already normalized blurs).
    void (*ssim_map)(size_t n, const double* mu_x, const double* mu_y,
                     const double* mxx, const double* myy, const double* mxy,
                     double c1, double c2, double* out);

    // Per-pixel partials of coef*SSIM w.r.t. the pred-side moments
    // (mu_x, mxx, mxy); the adjoint blur back to pixels is the caller's job.
    void (*ssim_grad_terms)(size_t n, const double* mu_x, const double* mu_y,
                            const double* mxx, const double* myy,
                            const double* mxy, double c1, double c2, double coef,
                            double* d_mux, double* d_mxx, double* d_mxy);

    // acc[i] += g[i] * Thr'(v[i]) for the configured surrogate:
    // kind 0: rectangular, Thr'(v) = 1/(2a) if |v-omega| <= a else 0
    // kind 1: fast sigmoid, Thr'(v) = 1/(2a) / (1 + |v-omega|/a)^2
    void (*surrogate_accum)(double* acc, const double* g, const double* v,
                            size_t n, double omega, double a, int kind);

    void (*vec_axpy)(double* out, const double* a, double s, size_t n);   // out += s*a
    void (*vec_muladd)(double* out, const double* a, const double* b, double s,
                       size_t n);                                         // out += s*a*b
    void (*vec_mul)(double* out, const double* a, const double* b, size_t n);
    void (*vec_scale)(double* out, const double* a, double s, size_t n);
};

enum class Backend { automatic, scalar, avx2 };

const KernelTable& scalar_table();
// Null when the build or the running CPU lacks AVX2.
const KernelTable* avx2_table();

// Active table; defaults to the best backend the CPU supports.
const KernelTable& active();
// Force a backend (tests); Backend::automatic restores detection.
// Throws invalid_parameter_error if the backend is unavailable.
void force_backend(Backend b);

} // namespace spikesplat::kernels
