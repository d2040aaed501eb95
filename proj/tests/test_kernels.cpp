// Copyright Contributors to the spikesplat project
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "spikesplat/kernels.hpp"
#include "spikesplat/rng.hpp"

#include <cmath>
#include <vector>

using namespace spikesplat;
namespace k = spikesplat::kernels;

namespace {

std::vector<double> random_vec(Rng& rng, size_t n, double lo, double hi) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(lo, hi);
    return v;
}

std::vector<uint8_t> random_bits(Rng& rng, size_t nbytes) {
    std::vector<uint8_t> v(nbytes);
    for (uint8_t& b : v) b = static_cast<uint8_t>(rng.next_u64());
    return v;
}

} // namespace

TEST_CASE("if_step_row semantics") {
    const auto& t = k::scalar_table();
    const int n = 13; // exercise the byte tail
    std::vector<double> acc(n, 0.25);
    std::vector<double> in(n, 0.5);
    in[3] = -0.1; // clamped
    in[7] = 0.9;  // fires
    std::vector<uint8_t> bits(2, 0xff);
    std::vector<double> v(n, 0.0);
    int clamped = t.if_step_row(acc.data(), in.data(), n, 1.0, bits.data(), v.data());
    CHECK(clamped == 1);
    CHECK(v[0] == 0.75);
    CHECK(v[3] == 0.25); // negative input clamped to zero
    CHECK(v[7] == doctest::Approx(1.15));
    CHECK(((bits[0] >> 7) & 1) == 1); // pixel 7 fired
    CHECK(((bits[0] >> 0) & 1) == 0);
    CHECK(acc[7] == doctest::Approx(0.15));
    // pad bits beyond n cleared
    CHECK((bits[1] >> (n - 8)) == 0);

    // inputs above omega fold mod omega with a single spike
    std::fill(acc.begin(), acc.end(), 0.0);
    std::fill(in.begin(), in.end(), 2.7);
    t.if_step_row(acc.data(), in.data(), n, 1.0, bits.data(), nullptr);
    for (int i = 0; i < n; ++i) {
        CHECK(acc[i] == doctest::Approx(0.7));
        CHECK(((bits[i >> 3] >> (i & 7)) & 1) == 1);
    }

    in[5] = std::numeric_limits<double>::quiet_NaN();
    CHECK(t.if_step_row(acc.data(), in.data(), n, 1.0, bits.data(), nullptr) == -1);
    in[5] = std::numeric_limits<double>::infinity();
    CHECK(t.if_step_row(acc.data(), in.data(), n, 1.0, bits.data(), nullptr) == -1);
}

TEST_CASE("xor_popcount matches a bit loop") {
    Rng rng(11);
    for (size_t nbytes : {1u, 7u, 32u, 33u, 100u, 1031u}) {
        auto a = random_bits(rng, nbytes);
        auto b = random_bits(rng, nbytes);
        uint64_t expect = 0;
        for (size_t i = 0; i < nbytes; ++i) {
            unsigned x = a[i] ^ b[i];
            while (x) {
                expect += x & 1u;
                x >>= 1;
            }
        }
        CHECK(k::scalar_table().xor_popcount(a.data(), b.data(), nbytes) == expect);
    }
}

TEST_CASE("conv kernels match a direct correlation") {
    Rng rng(12);
    const int h = 9, w = 13, half = 5;
    auto src = random_vec(rng, static_cast<size_t>(h) * w, -1.0, 1.0);
    std::vector<double> taps(2 * half + 1);
    for (double& t : taps) t = rng.uniform(0.01, 1.0);

    std::vector<double> got(src.size()), expect(src.size());
    k::scalar_table().conv_h(src.data(), h, w, taps.data(), half, got.data());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int t = -half; t <= half; ++t) {
                int xx = x + t;
                if (xx < 0 || xx >= w) continue;
                s += taps[t + half] * src[y * w + xx];
            }
            expect[y * w + x] = s;
        }
    for (size_t i = 0; i < got.size(); ++i)
        CHECK(got[i] == doctest::Approx(expect[i]).epsilon(1e-12));

    k::scalar_table().conv_v(src.data(), h, w, taps.data(), half, got.data());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int t = -half; t <= half; ++t) {
                int yy = y + t;
                if (yy < 0 || yy >= h) continue;
                s += taps[t + half] * src[yy * w + x];
            }
            expect[y * w + x] = s;
        }
    for (size_t i = 0; i < got.size(); ++i)
        CHECK(got[i] == doctest::Approx(expect[i]).epsilon(1e-12));
}

TEST_CASE("avx2 variants agree with the scalar reference") {
    const k::KernelTable* avx2 = k::avx2_table();
    if (!avx2) {
        MESSAGE("avx2 unavailable on this machine; skipping");
        return;
    }
    const auto& ref = k::scalar_table();
    Rng rng(13);

    for (int trial = 0; trial < 20; ++trial) {
        const int n = 1 + static_cast<int>(rng.next_below(300));
        const size_t un = static_cast<size_t>(n);

        { // if_step_row: bit-exact including accumulators and tape
            auto in = random_vec(rng, un, -0.2, 1.8);
            auto acc0 = random_vec(rng, un, 0.0, 0.999);
            std::vector<double> acc_a = acc0, acc_b = acc0;
            std::vector<double> va(un), vb(un);
            std::vector<uint8_t> ba((un + 7) / 8, 0), bb((un + 7) / 8, 0);
            int ra = ref.if_step_row(acc_a.data(), in.data(), n, 1.0, ba.data(), va.data());
            int rb = avx2->if_step_row(acc_b.data(), in.data(), n, 1.0, bb.data(), vb.data());
            CHECK(ra == rb);
            CHECK(acc_a == acc_b);
            CHECK(va == vb);
            CHECK(ba == bb);
        }
        { // unpack / accumulate / popcount
            auto bits = random_bits(rng, (un + 7) / 8);
            std::vector<double> ua(un), ub(un);
            ref.unpack_bits_row(bits.data(), n, ua.data());
            avx2->unpack_bits_row(bits.data(), n, ub.data());
            CHECK(ua == ub);
            auto acc_a = random_vec(rng, un, 0.0, 5.0);
            auto acc_b = acc_a;
            ref.bits_accum_row(bits.data(), n, acc_a.data());
            avx2->bits_accum_row(bits.data(), n, acc_b.data());
            CHECK(acc_a == acc_b);
            auto bits2 = random_bits(rng, bits.size());
            CHECK(ref.xor_popcount(bits.data(), bits2.data(), bits.size()) ==
                  avx2->xor_popcount(bits.data(), bits2.data(), bits.size()));
        }
        { // abs diff reduction (order differs -> tolerance) and its gradient
            auto a = random_vec(rng, un, 0.0, 1.0);
            auto b = random_vec(rng, un, 0.0, 1.0);
            std::vector<double> ga(un, 0.0), gb(un, 0.0);
            double sa = ref.abs_diff_sum_grad(a.data(), b.data(), un, 0.5, ga.data());
            double sb = avx2->abs_diff_sum_grad(a.data(), b.data(), un, 0.5, gb.data());
            CHECK(sa == doctest::Approx(sb).epsilon(1e-13));
            CHECK(ga == gb);
        }
        { // surrogate accumulation, both kinds
            auto g = random_vec(rng, un, -1.0, 1.0);
            auto v = random_vec(rng, un, 0.0, 2.0);
            for (int kind = 0; kind < 2; ++kind) {
                auto aa = random_vec(rng, un, -1.0, 1.0);
                auto ab = aa;
                ref.surrogate_accum(aa.data(), g.data(), v.data(), un, 1.0, 0.5, kind);
                avx2->surrogate_accum(ab.data(), g.data(), v.data(), un, 1.0, 0.5, kind);
                CHECK(aa == ab);
            }
        }
        { // elementwise vec ops
            auto a = random_vec(rng, un, -2.0, 2.0);
            auto b = random_vec(rng, un, -2.0, 2.0);
            auto o1 = random_vec(rng, un, -2.0, 2.0);
            auto o2 = o1;
            ref.vec_axpy(o1.data(), a.data(), 0.7, un);
            avx2->vec_axpy(o2.data(), a.data(), 0.7, un);
            CHECK(o1 == o2);
            ref.vec_muladd(o1.data(), a.data(), b.data(), -1.3, un);
            avx2->vec_muladd(o2.data(), a.data(), b.data(), -1.3, un);
            CHECK(o1 == o2);
            std::vector<double> m1(un), m2(un);
            ref.vec_mul(m1.data(), a.data(), b.data(), un);
            avx2->vec_mul(m2.data(), a.data(), b.data(), un);
            CHECK(m1 == m2);
            ref.vec_scale(m1.data(), a.data(), 2.5, un);
            avx2->vec_scale(m2.data(), a.data(), 2.5, un);
            CHECK(m1 == m2);
        }
    }

    { // conv + ssim kernels on a frame shape
        const int h = 24, w = 31;
        const size_t npix = static_cast<size_t>(h) * w;
        auto src = random_vec(rng, npix, -1.0, 1.0);
        std::vector<double> taps = {0.1, 0.2, 0.4, 0.2, 0.1};
        std::vector<double> da(npix), db(npix);
        ref.conv_h(src.data(), h, w, taps.data(), 2, da.data());
        avx2->conv_h(src.data(), h, w, taps.data(), 2, db.data());
        CHECK(da == db);
        ref.conv_v(src.data(), h, w, taps.data(), 2, da.data());
        avx2->conv_v(src.data(), h, w, taps.data(), 2, db.data());
        CHECK(da == db);

        auto mux = random_vec(rng, npix, 0.0, 1.0);
        auto muy = random_vec(rng, npix, 0.0, 1.0);
        auto mxx = random_vec(rng, npix, 0.1, 1.2);
        auto myy = random_vec(rng, npix, 0.1, 1.2);
        auto mxy = random_vec(rng, npix, 0.0, 1.0);
        ref.ssim_map(npix, mux.data(), muy.data(), mxx.data(), myy.data(),
                     mxy.data(), 1e-4, 9e-4, da.data());
        avx2->ssim_map(npix, mux.data(), muy.data(), mxx.data(), myy.data(),
                       mxy.data(), 1e-4, 9e-4, db.data());
        CHECK(da == db);

        std::vector<double> a1(npix), a2(npix), a3(npix), b1(npix), b2(npix), b3(npix);
        ref.ssim_grad_terms(npix, mux.data(), muy.data(), mxx.data(), myy.data(),
                            mxy.data(), 1e-4, 9e-4, 0.37, a1.data(), a2.data(),
                            a3.data());
        avx2->ssim_grad_terms(npix, mux.data(), muy.data(), mxx.data(), myy.data(),
                              mxy.data(), 1e-4, 9e-4, 0.37, b1.data(), b2.data(),
                              b3.data());
        CHECK(a1 == b1);
        CHECK(a2 == b2);
        CHECK(a3 == b3);
    }
}

TEST_CASE("poisson sampler moments") {
    for (double lambda : {0.5, 5.0, 29.5, 50.0, 500.0}) {
        Rng rng(Rng::key(99, static_cast<uint64_t>(lambda * 100)));
        const int n = 20000;
        double sum = 0.0, sum2 = 0.0;
        for (int i = 0; i < n; ++i) {
            double x = static_cast<double>(rng.poisson(lambda));
            sum += x;
            sum2 += x * x;
        }
        double mean = sum / n;
        double var = sum2 / n - mean * mean;
        // mean and variance both equal lambda; allow 6 sigma of the estimator
        double tol = 6.0 * std::sqrt(lambda / n);
        CHECK(std::fabs(mean - lambda) < tol);
        CHECK(std::fabs(var - lambda) < 0.1 * lambda + 6.0 * lambda * std::sqrt(2.0 / n));
    }
}

TEST_CASE("dispatch reports a backend and can be forced") {
    CHECK(std::string(k::active().name).size() > 0);
    k::force_backend(k::Backend::scalar);
    CHECK(std::string(k::active().name) == "scalar");
    k::force_backend(k::Backend::automatic);
}
