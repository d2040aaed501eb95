// Copyright Contributors to the spikesplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "spikesplat/common.hpp"

#include <limits>
#include <vector>

namespace spikesplat {

// Binary spike tensor, bit-packed. Frames are stored in readout order; within
// a frame rows pack 8 pixels per byte LSB-first and pad to a byte boundary,
// the same layout the .dat container uses, so row access is O(1) and file IO
// is a straight copy.
struct SpikeStream {
    int width = 0;
    int height = 0;
    int window = 0;
    double threshold = 1.0;      // omega the stream was produced with
    double timestep_hz = 20000.0; // metadata only
    std::vector<uint8_t> bits;

    static SpikeStream create(int w, int h, int n, double omega = 1.0,
                              double hz = 20000.0) {
        SpikeStream s;
        s.width = w;
        s.height = h;
        s.window = n;
        s.threshold = omega;
        s.timestep_hz = hz;
        s.bits.assign(static_cast<size_t>(s.row_bytes()) * h * n, 0);
        return s;
    }

    int row_bytes() const { return (width + 7) / 8; }
    size_t frame_bytes() const { return static_cast<size_t>(row_bytes()) * height; }
    uint8_t* frame(int t) { return bits.data() + frame_bytes() * t; }
    const uint8_t* frame(int t) const { return bits.data() + frame_bytes() * t; }
    uint8_t* row(int t, int y) { return frame(t) + static_cast<size_t>(row_bytes()) * y; }
    const uint8_t* row(int t, int y) const {
        return frame(t) + static_cast<size_t>(row_bytes()) * y;
    }

    bool get(int x, int y, int t) const {
        return (row(t, y)[x >> 3] >> (x & 7)) & 1u;
    }
    void set(int x, int y, int t, bool v) {
        uint8_t& b = row(t, y)[x >> 3];
        uint8_t m = static_cast<uint8_t>(1u << (x & 7));
        b = v ? (b | m) : (b & static_cast<uint8_t>(~m));
    }

    size_t pixel_count() const { return static_cast<size_t>(width) * height; }
    size_t bit_count() const { return pixel_count() * window; }
};

struct AccumulatorState {
    int width = 0;
    int height = 0;
    double threshold = 1.0;
    std::vector<double> a; // H*W, each in [0, threshold)

    static AccumulatorState zeros(int w, int h, double omega) {
        AccumulatorState s;
        s.width = w;
        s.height = h;
        s.threshold = omega;
        s.a.assign(static_cast<size_t>(w) * h, 0.0);
        return s;
    }
};

// Generative noise parameters. photon_gain is the expected photon count at
// intensity 1.0; +infinity disables shot noise entirely (the noiseless flag).
struct NoiseConfig {
    double photon_gain = std::numeric_limits<double>::infinity();
    double dark_rate = 0.0;  // mean dark-current intensity per step
    double rnu_sigma = 0.0;  // log-std of the synthesized response map
    uint64_t seed = 0;
    double eta = 1.0;        // photoelectric conversion rate
    double charge_ref = 1.0; // relative charge quantity Q_r

    bool shot_noise() const { return std::isfinite(photon_gain); }
    void validate() const {
        if (!(photon_gain > 0.0))
            throw invalid_parameter_error("photon_gain must be > 0");
        if (!(dark_rate >= 0.0))
            throw invalid_parameter_error("dark_rate must be >= 0");
        if (!(rnu_sigma >= 0.0 && rnu_sigma <= 0.5))
            throw invalid_parameter_error("rnu_sigma must be in [0, 0.5]");
        if (!(eta > 0.0)) throw invalid_parameter_error("eta must be > 0");
    }
};

// Per-pixel response-ratio map R(x,y) = rate(ref) / rate(x,y); the reference
// pixel has R = 1. Dead pixels (zero rate) carry an infinity sentinel and a
// flag. reciprocal() gives the relative-sensitivity view rate(x,y)/rate(ref)
// that the trainer uses as the noise-embedding multiplier (dead -> 0).
struct NonUniformityMap {
    int width = 0;
    int height = 0;
    std::vector<double> r;
    int ref_x = 0;
    int ref_y = 0;
    std::vector<uint8_t> dead;

    static NonUniformityMap uniform(int w, int h) {
        NonUniformityMap m;
        m.width = w;
        m.height = h;
        m.r.assign(static_cast<size_t>(w) * h, 1.0);
        m.dead.assign(static_cast<size_t>(w) * h, 0);
        return m;
    }

    double at(int x, int y) const { return r[static_cast<size_t>(y) * width + x]; }
    bool is_uniform() const;
    NonUniformityMap reciprocal() const;
};

// Saved membrane values V_t = A_{t-1} + I_t for the unrolled backward pass.
struct NeuronTape {
    int width = 0;
    int height = 0;
    int window = 0;
    double threshold = 1.0; // omega the layer ran with
    std::vector<double> v;  // window frames of H*W
    std::vector<double> a0; // initial accumulator

    const double* frame(int t) const {
        return v.data() + static_cast<size_t>(t) * width * height;
    }
};

enum class A0Mode { zero, seeded_uniform };

enum class SurrogateKind { rectangular, fast_sigmoid };

struct SurrogateConfig {
    SurrogateKind kind = SurrogateKind::rectangular;
    double width = 0.5; // a; default omega/2 with omega = 1
};

enum class SnlMode {
    hard,    // binary spikes forward, surrogate gradients backward
    relaxed  // surrogate CDF forward: smooth end to end, for gradient checks
};

struct IfStepResult {
    int clamped_negative = 0;
};

// One IF step over the full plane: V = A + max(input, 0); spike where
// V >= omega; A <- V - omega*spike, folded mod omega if still above.
// spike_frame uses the stream's row-padded bit layout; v_frame (optional)
// receives the dense H*W membrane values.
IfStepResult if_step(AccumulatorState& state, const double* input,
                     uint8_t* spike_frame, double* v_frame = nullptr);

// Initial accumulator values for a window; seeded_uniform draws are
// counter-based on (seed, pixel), so they are order-independent.
std::vector<double> draw_a0(A0Mode mode, uint64_t seed, int width, int height,
                            double omega, uint64_t tag = 0);

// Physically-motivated simulator. intensity holds either one H*W plane
// (static scene) or window*H*W per-step planes. Per step and pixel:
//   I_t = eta * R(x,y) * [Poisson(photon_gain*L)/photon_gain + Dark_t]
// with Dark_t exponential of mean dark_rate; all draws are counter-based on
// (seed, pixel, step) so results are reproducible and order-independent.
SpikeStream simulate_stream(const std::vector<double>& intensity, int width,
                            int height, int window, double omega,
                            const NoiseConfig& noise, const NonUniformityMap& rnu,
                            A0Mode a0_mode);

// Synthesizes a ground-truth per-pixel response map exp(rnu_sigma * z) for
// the simulator (value 1 everywhere when rnu_sigma == 0).
NonUniformityMap synthesize_response_map(int width, int height, double rnu_sigma,
                                         uint64_t seed);

// Estimates R from streams of a spatially uniform scene: per-pixel mean
// firing rate r, reference pixel closest to the global mean rate (ties ->
// smallest row-major index), R = r_ref / r. Zero-rate pixels are flagged
// dead with an infinity sentinel.
NonUniformityMap calibrate_nonuniformity(const std::vector<SpikeStream>& uniform_streams);

struct SnlResult {
    SpikeStream stream;
    NeuronTape tape;
    // Prediction as doubles, window frames of H*W: the hard bits in hard
    // mode, the relaxed spike values in relaxed mode.
    std::vector<double> pred;
};

// Spike neuron layer: per-step input is intensity_hat * R (static within the
// window); runs if_step `window` times recording every membrane value.
SnlResult snl_forward(const std::vector<double>& intensity_hat, int width,
                      int height, const NonUniformityMap& rnu, double omega,
                      int window, const std::vector<double>& a0,
                      SnlMode mode = SnlMode::hard,
                      const SurrogateConfig& surrogate = {});

// Unrolled-in-time surrogate backward:
//   dL/dI_hat = sum_t dL/dO_t * Thr'(V_t) * dV_t/dI_hat,
// with the reset pathway detached by default (dV_t/dI_hat = R) and a full
// recursive flow through resets when reset_flow is set.
std::vector<double> snl_backward(const NeuronTape& tape,
                                 const std::vector<double>& dl_dstream,
                                 const SurrogateConfig& surrogate,
                                 const NonUniformityMap& rnu,
                                 bool reset_flow = false);

// Texture-from-playback estimate: omega * spike count / window, clipped to [0,1].
Image tfp_reconstruct(const SpikeStream& stream);

// Dense double view of the packed stream (window frames of H*W).
std::vector<double> unpack_stream(const SpikeStream& stream);

// Fraction of matching bits between a prediction (thresholded at 0.5 when
// real-valued) and a ground-truth stream.
double spike_accuracy(const SpikeStream& pred, const SpikeStream& gt);

} // namespace spikesplat
