// Copyright Contributors to the spikesplat project
// SPDX-License-Identifier: Apache-2.0

// AVX2 kernel variants. Mul/add only (no FMA) and the same per-element
// operation order as the scalar reference, so elementwise kernels match the
// reference bit for bit; reductions use striped lane accumulators and are
// tolerance-checked instead. Built with -mavx2 for this TU only; dispatch.cpp
// gates selection on a runtime CPUID check.

#if defined(__x86_64__) || defined(_M_X64)

#include "spikesplat/kernels.hpp"

#include <cmath>
#include <cstring>
#include <immintrin.h>

namespace spikesplat::kernels {
namespace {

inline __m256d abs_pd(__m256d x) {
    const __m256d signmask = _mm256_set1_pd(-0.0);
    return _mm256_andnot_pd(signmask, x);
}

inline double hsum_pd(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(lo) + _mm_cvtsd_f64(_mm_unpackhi_pd(lo, lo));
}

int if_step_row_avx2(double* acc, const double* input, int n, double omega,
                     uint8_t* bits_out, double* v_out) {
    const int nbytes = (n + 7) / 8;
    std::memset(bits_out, 0, static_cast<size_t>(nbytes));
    const __m256d zero = _mm256_setzero_pd();
    const __m256d om = _mm256_set1_pd(omega);
    int clamped = 0;
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d in = _mm256_loadu_pd(input + i);
        // finite <=> in - in == 0 (NaN/Inf both yield NaN)
        __m256d diff = _mm256_sub_pd(in, in);
        if (_mm256_movemask_pd(_mm256_cmp_pd(diff, zero, _CMP_NEQ_UQ)) != 0)
            return -1;
        __m256d neg = _mm256_cmp_pd(in, zero, _CMP_LT_OQ);
        clamped += _mm_popcnt_u32(static_cast<unsigned>(_mm256_movemask_pd(neg)));
        in = _mm256_max_pd(in, zero);
        __m256d v = _mm256_add_pd(_mm256_loadu_pd(acc + i), in);
        if (v_out) _mm256_storeu_pd(v_out + i, v);
        __m256d spike = _mm256_cmp_pd(v, om, _CMP_GE_OQ);
        int mask = _mm256_movemask_pd(spike);
        bits_out[i >> 3] |= static_cast<uint8_t>(mask << (i & 7));
        __m256d a = _mm256_sub_pd(v, _mm256_and_pd(spike, om));
        int refire = _mm256_movemask_pd(_mm256_cmp_pd(a, om, _CMP_GE_OQ));
        _mm256_storeu_pd(acc + i, a);
        if (refire) {
            // inputs above omega fold once; rare, fix the lanes in place
            for (int l = 0; l < 4; ++l)
                if (refire & (1 << l)) acc[i + l] = std::fmod(acc[i + l], omega);
        }
    }
    for (; i < n; ++i) {
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

inline __m256d bits_to_pd(uint8_t byte, int shift) {
    // lanes test bits shift..shift+3 of the byte
    __m256i b = _mm256_set1_epi64x(static_cast<long long>(byte));
    __m256i sel = _mm256_set_epi64x(8LL << shift, 4LL << shift, 2LL << shift,
                                    1LL << shift);
    __m256i hit = _mm256_cmpeq_epi64(_mm256_and_si256(b, sel), sel);
    return _mm256_and_pd(_mm256_castsi256_pd(hit), _mm256_set1_pd(1.0));
}

void unpack_bits_row_avx2(const uint8_t* bits, int n, double* out) {
    int i = 0;
    for (; i + 8 <= n; i += 8) {
        uint8_t b = bits[i >> 3];
        _mm256_storeu_pd(out + i, bits_to_pd(b, 0));
        _mm256_storeu_pd(out + i + 4, bits_to_pd(b, 4));
    }
    for (; i < n; ++i)
        out[i] = (bits[i >> 3] >> (i & 7)) & 1u ? 1.0 : 0.0;
}

void bits_accum_row_avx2(const uint8_t* bits, int n, double* acc) {
    int i = 0;
    for (; i + 8 <= n; i += 8) {
        uint8_t b = bits[i >> 3];
        _mm256_storeu_pd(acc + i,
                         _mm256_add_pd(_mm256_loadu_pd(acc + i), bits_to_pd(b, 0)));
        _mm256_storeu_pd(
            acc + i + 4,
            _mm256_add_pd(_mm256_loadu_pd(acc + i + 4), bits_to_pd(b, 4)));
    }
    for (; i < n; ++i)
        acc[i] += (bits[i >> 3] >> (i & 7)) & 1u ? 1.0 : 0.0;
}

uint64_t xor_popcount_avx2(const uint8_t* a, const uint8_t* b, size_t nbytes) {
    // nibble-LUT popcount over 32-byte blocks
    const __m256i lut = _mm256_setr_epi8(0, 1, 1, 2, 1, 2, 2, 3, 1, 2, 2, 3, 2, 3,
                                         3, 4, 0, 1, 1, 2, 1, 2, 2, 3, 1, 2, 2, 3,
                                         2, 3, 3, 4);
    const __m256i low = _mm256_set1_epi8(0x0f);
    __m256i acc = _mm256_setzero_si256();
    size_t i = 0;
    for (; i + 32 <= nbytes; i += 32) {
        __m256i va = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(a + i));
        __m256i vb = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(b + i));
        __m256i x = _mm256_xor_si256(va, vb);
        __m256i lo = _mm256_shuffle_epi8(lut, _mm256_and_si256(x, low));
        __m256i hi = _mm256_shuffle_epi8(
            lut, _mm256_and_si256(_mm256_srli_epi16(x, 4), low));
        __m256i cnt = _mm256_add_epi8(lo, hi);
        acc = _mm256_add_epi64(acc, _mm256_sad_epu8(cnt, _mm256_setzero_si256()));
    }
    alignas(32) uint64_t lanes[4];
    _mm256_store_si256(reinterpret_cast<__m256i*>(lanes), acc);
    uint64_t total = lanes[0] + lanes[1] + lanes[2] + lanes[3];
    for (; i < nbytes; ++i)
        total += static_cast<uint64_t>(
            _mm_popcnt_u32(static_cast<unsigned>(a[i] ^ b[i])));
    return total;
}

double abs_diff_sum_grad_avx2(const double* pred, const double* gt, size_t n,
                              double gcoef, double* grad_acc) {
    const __m256d zero = _mm256_setzero_pd();
    const __m256d gpos = _mm256_set1_pd(gcoef);
    const __m256d gneg = _mm256_set1_pd(-gcoef);
    __m256d sum = zero;
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d d = _mm256_sub_pd(_mm256_loadu_pd(pred + i), _mm256_loadu_pd(gt + i));
        sum = _mm256_add_pd(sum, abs_pd(d));
        if (grad_acc) {
            __m256d up = _mm256_and_pd(_mm256_cmp_pd(d, zero, _CMP_GT_OQ), gpos);
            __m256d dn = _mm256_and_pd(_mm256_cmp_pd(d, zero, _CMP_LT_OQ), gneg);
            __m256d g = _mm256_or_pd(up, dn);
            _mm256_storeu_pd(grad_acc + i,
                             _mm256_add_pd(_mm256_loadu_pd(grad_acc + i), g));
        }
    }
    double total = hsum_pd(sum);
    for (; i < n; ++i) {
        double d = pred[i] - gt[i];
        total += std::fabs(d);
        if (grad_acc && d != 0.0) grad_acc[i] += d > 0.0 ? gcoef : -gcoef;
    }
    return total;
}

void conv_h_avx2(const double* src, int h, int w, const double* taps, int half,
                 double* dst) {
    const int ntaps = 2 * half + 1;
    for (int y = 0; y < h; ++y) {
        const double* row = src + static_cast<size_t>(y) * w;
        double* out = dst + static_cast<size_t>(y) * w;
        int x = 0;
        int interior_end = w - half;
        for (; x < half && x < w; ++x) {
            int k0 = -x, k1 = x + half >= w ? w - 1 - x : half;
            double s = 0.0;
            for (int k = k0; k <= k1; ++k) s += taps[k + half] * row[x + k];
            out[x] = s;
        }
        for (; x + 4 <= interior_end; x += 4) {
            __m256d acc = _mm256_setzero_pd();
            const double* base = row + x - half;
            for (int k = 0; k < ntaps; ++k)
                acc = _mm256_add_pd(
                    acc, _mm256_mul_pd(_mm256_set1_pd(taps[k]),
                                       _mm256_loadu_pd(base + k)));
            _mm256_storeu_pd(out + x, acc);
        }
        for (; x < w; ++x) {
            int k0 = x - half < 0 ? -x : -half;
            int k1 = x + half >= w ? w - 1 - x : half;
            double s = 0.0;
            for (int k = k0; k <= k1; ++k) s += taps[k + half] * row[x + k];
            out[x] = s;
        }
    }
}

void conv_v_avx2(const double* src, int h, int w, const double* taps, int half,
                 double* dst) {
    for (int y = 0; y < h; ++y) {
        int k0 = y - half < 0 ? -y : -half;
        int k1 = y + half >= h ? h - 1 - y : half;
        double* out = dst + static_cast<size_t>(y) * w;
        int x = 0;
        for (; x + 4 <= w; x += 4) _mm256_storeu_pd(out + x, _mm256_setzero_pd());
        for (; x < w; ++x) out[x] = 0.0;
        for (int k = k0; k <= k1; ++k) {
            const double* row = src + static_cast<size_t>(y + k) * w;
            __m256d t = _mm256_set1_pd(taps[k + half]);
            x = 0;
            for (; x + 4 <= w; x += 4)
                _mm256_storeu_pd(
                    out + x, _mm256_add_pd(_mm256_loadu_pd(out + x),
                                           _mm256_mul_pd(t, _mm256_loadu_pd(row + x))));
            for (; x < w; ++x) out[x] += taps[k + half] * row[x];
        }
    }
}

void ssim_map_avx2(size_t n, const double* mu_x, const double* mu_y,
                   const double* mxx, const double* myy, const double* mxy,
                   double c1, double c2, double* out) {
    const __m256d vc1 = _mm256_set1_pd(c1);
    const __m256d vc2 = _mm256_set1_pd(c2);
    const __m256d two = _mm256_set1_pd(2.0);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d ux = _mm256_loadu_pd(mu_x + i);
        __m256d uy = _mm256_loadu_pd(mu_y + i);
        __m256d uxux = _mm256_mul_pd(ux, ux);
        __m256d uyuy = _mm256_mul_pd(uy, uy);
        __m256d uxuy = _mm256_mul_pd(ux, uy);
        __m256d sxx = _mm256_sub_pd(_mm256_loadu_pd(mxx + i), uxux);
        __m256d syy = _mm256_sub_pd(_mm256_loadu_pd(myy + i), uyuy);
        __m256d sxy = _mm256_sub_pd(_mm256_loadu_pd(mxy + i), uxuy);
        __m256d a1 = _mm256_add_pd(_mm256_mul_pd(two, uxuy), vc1);
        __m256d a2 = _mm256_add_pd(_mm256_mul_pd(two, sxy), vc2);
        __m256d b1 = _mm256_add_pd(_mm256_add_pd(uxux, uyuy), vc1);
        __m256d b2 = _mm256_add_pd(_mm256_add_pd(sxx, syy), vc2);
        _mm256_storeu_pd(out + i, _mm256_div_pd(_mm256_mul_pd(a1, a2),
                                                _mm256_mul_pd(b1, b2)));
    }
    for (; i < n; ++i) {
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

void ssim_grad_terms_avx2(size_t n, const double* mu_x, const double* mu_y,
                          const double* mxx, const double* myy,
                          const double* mxy, double c1, double c2, double coef,
                          double* d_mux, double* d_mxx, double* d_mxy) {
    const __m256d vc1 = _mm256_set1_pd(c1);
    const __m256d vc2 = _mm256_set1_pd(c2);
    const __m256d two = _mm256_set1_pd(2.0);
    const __m256d one = _mm256_set1_pd(1.0);
    const __m256d vcoef = _mm256_set1_pd(coef);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d ux = _mm256_loadu_pd(mu_x + i);
        __m256d uy = _mm256_loadu_pd(mu_y + i);
        __m256d uxux = _mm256_mul_pd(ux, ux);
        __m256d uyuy = _mm256_mul_pd(uy, uy);
        __m256d uxuy = _mm256_mul_pd(ux, uy);
        __m256d sxx = _mm256_sub_pd(_mm256_loadu_pd(mxx + i), uxux);
        __m256d syy = _mm256_sub_pd(_mm256_loadu_pd(myy + i), uyuy);
        __m256d sxy = _mm256_sub_pd(_mm256_loadu_pd(mxy + i), uxuy);
        __m256d a1 = _mm256_add_pd(_mm256_mul_pd(two, uxuy), vc1);
        __m256d a2 = _mm256_add_pd(_mm256_mul_pd(two, sxy), vc2);
        __m256d b1 = _mm256_add_pd(_mm256_add_pd(uxux, uyuy), vc1);
        __m256d b2 = _mm256_add_pd(_mm256_add_pd(sxx, syy), vc2);
        __m256d s = _mm256_div_pd(_mm256_mul_pd(a1, a2), _mm256_mul_pd(b1, b2));
        __m256d ia1 = _mm256_div_pd(one, a1);
        __m256d ia2 = _mm256_div_pd(one, a2);
        __m256d ib1 = _mm256_div_pd(one, b1);
        __m256d ib2 = _mm256_div_pd(one, b2);
        __m256d t1 = _mm256_mul_pd(_mm256_mul_pd(two, uy),
                                   _mm256_mul_pd(s, _mm256_sub_pd(ia1, ia2)));
        __m256d t2 = _mm256_mul_pd(_mm256_mul_pd(two, ux),
                                   _mm256_mul_pd(s, _mm256_sub_pd(ib2, ib1)));
        _mm256_storeu_pd(d_mux + i, _mm256_mul_pd(vcoef, _mm256_add_pd(t1, t2)));
        _mm256_storeu_pd(d_mxx + i,
                         _mm256_mul_pd(vcoef, _mm256_sub_pd(_mm256_setzero_pd(),
                                                            _mm256_mul_pd(s, ib2))));
        _mm256_storeu_pd(d_mxy + i,
                         _mm256_mul_pd(vcoef, _mm256_mul_pd(two, _mm256_mul_pd(s, ia2))));
    }
    for (; i < n; ++i) {
        double ux = mu_x[i], uy = mu_y[i];
        double sxx = mxx[i] - ux * ux;
        double syy = myy[i] - uy * uy;
        double sxy = mxy[i] - ux * uy;
        double a1 = 2.0 * ux * uy + c1;
        double a2 = 2.0 * sxy + c2;
        double b1 = ux * ux + uy * uy + c1;
        double b2 = sxx + syy + c2;
        double s = (a1 * a2) / (b1 * b2);
        d_mux[i] = coef * (2.0 * uy * (s * (1.0 / a1 - 1.0 / a2)) +
                           2.0 * ux * (s * (1.0 / b2 - 1.0 / b1)));
        d_mxx[i] = coef * (-(s * (1.0 / b2)));
        d_mxy[i] = coef * (2.0 * (s * (1.0 / a2)));
    }
}

void surrogate_accum_avx2(double* acc, const double* g, const double* v,
                          size_t n, double omega, double a, int kind) {
    const double peak = 0.5 / a;
    const __m256d om = _mm256_set1_pd(omega);
    const __m256d va = _mm256_set1_pd(a);
    const __m256d vpeak = _mm256_set1_pd(peak);
    size_t i = 0;
    if (kind == 0) {
        for (; i + 4 <= n; i += 4) {
            __m256d dist = abs_pd(_mm256_sub_pd(_mm256_loadu_pd(v + i), om));
            __m256d mask = _mm256_cmp_pd(dist, va, _CMP_LE_OQ);
            __m256d add =
                _mm256_and_pd(mask, _mm256_mul_pd(_mm256_loadu_pd(g + i), vpeak));
            _mm256_storeu_pd(acc + i, _mm256_add_pd(_mm256_loadu_pd(acc + i), add));
        }
        for (; i < n; ++i)
            acc[i] += std::fabs(v[i] - omega) <= a ? g[i] * peak : 0.0;
    } else {
        const __m256d one = _mm256_set1_pd(1.0);
        for (; i + 4 <= n; i += 4) {
            __m256d dist = abs_pd(_mm256_sub_pd(_mm256_loadu_pd(v + i), om));
            __m256d t = _mm256_add_pd(one, _mm256_div_pd(dist, va));
            __m256d add = _mm256_div_pd(_mm256_mul_pd(_mm256_loadu_pd(g + i), vpeak),
                                        _mm256_mul_pd(t, t));
            _mm256_storeu_pd(acc + i, _mm256_add_pd(_mm256_loadu_pd(acc + i), add));
        }
        for (; i < n; ++i) {
            double t = 1.0 + std::fabs(v[i] - omega) / a;
            acc[i] += g[i] * peak / (t * t);
        }
    }
}

void vec_axpy_avx2(double* out, const double* a, double s, size_t n) {
    const __m256d vs = _mm256_set1_pd(s);
    size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i,
                         _mm256_add_pd(_mm256_loadu_pd(out + i),
                                       _mm256_mul_pd(vs, _mm256_loadu_pd(a + i))));
    for (; i < n; ++i) out[i] += s * a[i];
}

void vec_muladd_avx2(double* out, const double* a, const double* b, double s,
                     size_t n) {
    const __m256d vs = _mm256_set1_pd(s);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d prod = _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(out + i),
                                                _mm256_mul_pd(vs, prod)));
    }
    for (; i < n; ++i) out[i] += s * (a[i] * b[i]);
}

void vec_mul_avx2(double* out, const double* a, const double* b, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i),
                                                _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void vec_scale_avx2(double* out, const double* a, double s, size_t n) {
    const __m256d vs = _mm256_set1_pd(s);
    size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_mul_pd(vs, _mm256_loadu_pd(a + i)));
    for (; i < n; ++i) out[i] = s * a[i];
}

constexpr KernelTable kAvx2Table = {
    "avx2",
    &if_step_row_avx2,
    &unpack_bits_row_avx2,
    &bits_accum_row_avx2,
    &xor_popcount_avx2,
    &abs_diff_sum_grad_avx2,
    &conv_h_avx2,
    &conv_v_avx2,
    &ssim_map_avx2,
    &ssim_grad_terms_avx2,
    &surrogate_accum_avx2,
    &vec_axpy_avx2,
    &vec_muladd_avx2,
    &vec_mul_avx2,
    &vec_scale_avx2,
};

} // namespace

const KernelTable* avx2_table_impl() { return &kAvx2Table; }

} // namespace spikesplat::kernels

#endif // x86-64
