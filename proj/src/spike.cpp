// Copyright Contributors to the spikesplat project
// SPDX-License-Identifier: Apache-2.0

#include "spikesplat/spike.hpp"

#include "spikesplat/kernels.hpp"
#include "spikesplat/rng.hpp"

#include <cmath>

namespace spikesplat {
namespace {

// stream tags for counter-based draws
constexpr uint64_t kTagA0 = 0xa0;
constexpr uint64_t kTagSim = 0x51;
constexpr uint64_t kTagRnu = 0x72;

double surrogate_cdf(double v, double omega, const SurrogateConfig& s) {
    const double x = v - omega;
    if (s.kind == SurrogateKind::rectangular) {
        double o = (x + s.width) / (2.0 * s.width);
        return o < 0.0 ? 0.0 : (o > 1.0 ? 1.0 : o);
    }
    return 0.5 * (1.0 + x / (s.width + std::fabs(x)));
}

double surrogate_deriv(double v, double omega, const SurrogateConfig& s) {
    const double x = std::fabs(v - omega);
    const double peak = 0.5 / s.width;
    if (s.kind == SurrogateKind::rectangular) return x <= s.width ? peak : 0.0;
    const double t = 1.0 + x / s.width;
    return peak / (t * t);
}

} // namespace

bool NonUniformityMap::is_uniform() const {
    for (double v : r)
        if (v != 1.0) return false;
    return true;
}

NonUniformityMap NonUniformityMap::reciprocal() const {
    NonUniformityMap out = *this;
    for (size_t i = 0; i < r.size(); ++i)
        out.r[i] = dead[i] ? 0.0 : 1.0 / r[i];
    return out;
}

IfStepResult if_step(AccumulatorState& state, const double* input,
                     uint8_t* spike_frame, double* v_frame) {
    const auto& k = kernels::active();
    const int w = state.width, h = state.height;
    const int row_bytes = (w + 7) / 8;
    int clamped = 0;
    for (int y = 0; y < h; ++y) {
        const size_t off = static_cast<size_t>(y) * w;
        int rc = k.if_step_row(state.a.data() + off, input + off, w,
                               state.threshold, spike_frame + static_cast<size_t>(y) * row_bytes,
                               v_frame ? v_frame + off : nullptr);
        if (rc < 0) throw invalid_parameter_error("if_step: non-finite input");
        clamped += rc;
    }
    return {clamped};
}

std::vector<double> draw_a0(A0Mode mode, uint64_t seed, int width, int height,
                            double omega, uint64_t tag) {
    std::vector<double> a0(static_cast<size_t>(width) * height, 0.0);
    if (mode == A0Mode::seeded_uniform) {
        for (size_t i = 0; i < a0.size(); ++i)
            a0[i] = Rng::stream(seed, kTagA0, tag, i).next_double() * omega;
    }
    return a0;
}

SpikeStream simulate_stream(const std::vector<double>& intensity, int width,
                            int height, int window, double omega,
                            const NoiseConfig& noise, const NonUniformityMap& rnu,
                            A0Mode a0_mode) {
    noise.validate();
    if (rnu.width != width || rnu.height != height)
        throw invalid_parameter_error("simulate_stream: rnu shape mismatch");
    if (!(omega > 0.0)) throw invalid_parameter_error("simulate_stream: omega must be > 0");
    if (window <= 0) throw invalid_parameter_error("simulate_stream: window must be > 0");
    const size_t npix = static_cast<size_t>(width) * height;
    const bool per_step = intensity.size() == npix * static_cast<size_t>(window);
    if (!per_step && intensity.size() != npix)
        throw invalid_parameter_error("simulate_stream: intensity must be H*W or H*W*N");

    SpikeStream stream = SpikeStream::create(width, height, window, omega);
    AccumulatorState state = AccumulatorState::zeros(width, height, omega);
    state.a = draw_a0(a0_mode, noise.seed, width, height, omega);

    const bool noiseless = !noise.shot_noise() && noise.dark_rate == 0.0;
    std::vector<double> input(npix);
    for (int t = 0; t < window; ++t) {
        const double* plane = intensity.data() + (per_step ? npix * t : 0);
        if (noiseless) {
            for (size_t i = 0; i < npix; ++i)
                input[i] = noise.eta * rnu.r[i] * plane[i];
        } else {
            for (size_t i = 0; i < npix; ++i) {
                Rng rng = Rng::stream(noise.seed, kTagSim, i, static_cast<uint64_t>(t));
                double photons = plane[i];
                if (noise.shot_noise()) {
                    photons = static_cast<double>(
                                  rng.poisson(noise.photon_gain * plane[i])) /
                              noise.photon_gain;
                }
                const double dark = rng.exponential(noise.dark_rate);
                input[i] = noise.eta * rnu.r[i] * (photons + dark);
            }
        }
        if_step(state, input.data(), stream.frame(t));
    }
    return stream;
}

NonUniformityMap synthesize_response_map(int width, int height, double rnu_sigma,
                                         uint64_t seed) {
    NonUniformityMap m = NonUniformityMap::uniform(width, height);
    if (rnu_sigma > 0.0) {
        for (size_t i = 0; i < m.r.size(); ++i)
            m.r[i] = std::exp(rnu_sigma * Rng::stream(seed, kTagRnu, i).normal());
    }
    return m;
}

NonUniformityMap calibrate_nonuniformity(const std::vector<SpikeStream>& streams) {
    if (streams.empty())
        throw invalid_parameter_error("calibrate_nonuniformity: empty stream list");
    const int w = streams[0].width, h = streams[0].height;
    const size_t npix = static_cast<size_t>(w) * h;
    uint64_t total_steps = 0;
    std::vector<double> counts(npix, 0.0);
    const auto& k = kernels::active();
    for (const SpikeStream& s : streams) {
        if (s.width != w || s.height != h)
            throw invalid_parameter_error("calibrate_nonuniformity: stream shape mismatch");
        total_steps += static_cast<uint64_t>(s.window);
        for (int t = 0; t < s.window; ++t)
            for (int y = 0; y < h; ++y)
                k.bits_accum_row(s.row(t, y), w, counts.data() + static_cast<size_t>(y) * w);
    }

    std::vector<double> rate(npix);
    double mean = 0.0;
    for (size_t i = 0; i < npix; ++i) {
        rate[i] = counts[i] / static_cast<double>(total_steps);
        mean += rate[i];
    }
    mean /= static_cast<double>(npix);

    size_t ref = 0;
    double best = std::fabs(rate[0] - mean);
    for (size_t i = 1; i < npix; ++i) {
        double d = std::fabs(rate[i] - mean);
        if (d < best) {
            best = d;
            ref = i;
        }
    }

    NonUniformityMap m = NonUniformityMap::uniform(w, h);
    m.ref_x = static_cast<int>(ref % w);
    m.ref_y = static_cast<int>(ref / w);
    const double r_ref = rate[ref];
    for (size_t i = 0; i < npix; ++i) {
        if (rate[i] == 0.0) {
            m.r[i] = std::numeric_limits<double>::infinity();
            m.dead[i] = 1;
        } else {
            m.r[i] = r_ref / rate[i];
        }
    }
    return m;
}

SnlResult snl_forward(const std::vector<double>& intensity_hat, int width,
                      int height, const NonUniformityMap& rnu, double omega,
                      int window, const std::vector<double>& a0, SnlMode mode,
                      const SurrogateConfig& surrogate) {
    const size_t npix = static_cast<size_t>(width) * height;
    if (rnu.width != width || rnu.height != height)
        throw invalid_parameter_error("snl_forward: rnu shape mismatch");
    if (intensity_hat.size() != npix)
        throw invalid_parameter_error("snl_forward: intensity shape mismatch");
    if (a0.size() != npix)
        throw invalid_parameter_error("snl_forward: a0 shape mismatch");

    SnlResult out;
    out.stream = SpikeStream::create(width, height, window, omega);
    out.tape.width = width;
    out.tape.height = height;
    out.tape.window = window;
    out.tape.threshold = omega;
    out.tape.v.resize(npix * static_cast<size_t>(window));
    out.tape.a0 = a0;
    out.pred.resize(npix * static_cast<size_t>(window));

    std::vector<double> input(npix);
    for (size_t i = 0; i < npix; ++i) input[i] = intensity_hat[i] * rnu.r[i];

    AccumulatorState state = AccumulatorState::zeros(width, height, omega);
    state.a = a0;

    if (mode == SnlMode::hard) {
        const auto& k = kernels::active();
        for (int t = 0; t < window; ++t) {
            double* v_frame = out.tape.v.data() + npix * t;
            if_step(state, input.data(), out.stream.frame(t), v_frame);
            double* pred = out.pred.data() + npix * t;
            for (int y = 0; y < height; ++y)
                k.unpack_bits_row(out.stream.row(t, y), width,
                                  pred + static_cast<size_t>(y) * width);
        }
    } else {
        // smooth forward: O is the surrogate CDF, reset uses the relaxed O
        for (int t = 0; t < window; ++t) {
            double* v_frame = out.tape.v.data() + npix * t;
            double* pred = out.pred.data() + npix * t;
            for (size_t i = 0; i < npix; ++i) {
                const double in = input[i] < 0.0 ? 0.0 : input[i];
                const double v = state.a[i] + in;
                v_frame[i] = v;
                const double o = surrogate_cdf(v, omega, surrogate);
                pred[i] = o;
                state.a[i] = v - omega * o;
            }
            for (int y = 0; y < height; ++y)
                for (int x = 0; x < width; ++x)
                    out.stream.set(x, y, t, v_frame[static_cast<size_t>(y) * width + x] >= omega);
        }
    }
    return out;
}

std::vector<double> snl_backward(const NeuronTape& tape,
                                 const std::vector<double>& dl_dstream,
                                 const SurrogateConfig& surrogate,
                                 const NonUniformityMap& rnu, bool reset_flow) {
    const size_t npix = static_cast<size_t>(tape.width) * tape.height;
    if (dl_dstream.size() != npix * static_cast<size_t>(tape.window))
        throw invalid_parameter_error("snl_backward: gradient shape mismatch");
    if (rnu.width != tape.width || rnu.height != tape.height)
        throw invalid_parameter_error("snl_backward: rnu shape mismatch");

    const double omega = tape.threshold;
    std::vector<double> acc(npix, 0.0);
    const auto& k = kernels::active();
    const int kind = surrogate.kind == SurrogateKind::rectangular ? 0 : 1;

    if (!reset_flow) {
        for (int t = 0; t < tape.window; ++t) {
            k.surrogate_accum(acc.data(), dl_dstream.data() + npix * t,
                              tape.frame(t), npix, omega, surrogate.width, kind);
        }
    } else {
        std::vector<double> phi(npix, 1.0);
        for (int t = 0; t < tape.window; ++t) {
            const double* v = tape.frame(t);
            const double* g = dl_dstream.data() + npix * t;
            for (size_t i = 0; i < npix; ++i) {
                const double thr = surrogate_deriv(v[i], omega, surrogate);
                acc[i] += g[i] * thr * phi[i];
                phi[i] = 1.0 + phi[i] * (1.0 - omega * thr);
            }
        }
    }
    for (size_t i = 0; i < npix; ++i) acc[i] *= rnu.r[i];
    return acc;
}

Image tfp_reconstruct(const SpikeStream& stream) {
    Image img(stream.width, stream.height, 1, 0.0);
    const auto& k = kernels::active();
    for (int t = 0; t < stream.window; ++t)
        for (int y = 0; y < stream.height; ++y)
            k.bits_accum_row(stream.row(t, y), stream.width,
                             img.data.data() + static_cast<size_t>(y) * stream.width);
    const double scale = stream.window > 0 ? stream.threshold / stream.window : 0.0;
    for (double& v : img.data) v = clamp01(v * scale);
    return img;
}

std::vector<double> unpack_stream(const SpikeStream& stream) {
    const size_t npix = stream.pixel_count();
    std::vector<double> out(npix * static_cast<size_t>(stream.window));
    const auto& k = kernels::active();
    for (int t = 0; t < stream.window; ++t)
        for (int y = 0; y < stream.height; ++y)
            k.unpack_bits_row(stream.row(t, y), stream.width,
                              out.data() + npix * t + static_cast<size_t>(y) * stream.width);
    return out;
}

double spike_accuracy(const SpikeStream& pred, const SpikeStream& gt) {
    if (pred.width != gt.width || pred.height != gt.height || pred.window != gt.window)
        throw invalid_parameter_error("spike_accuracy: shape mismatch");
    const auto& k = kernels::active();
    const uint64_t diff = k.xor_popcount(pred.bits.data(), gt.bits.data(), pred.bits.size());
    const double total = static_cast<double>(pred.bit_count());
    return total > 0.0 ? 1.0 - static_cast<double>(diff) / total : 1.0;
}

} // namespace spikesplat
