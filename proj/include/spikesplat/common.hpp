// Copyright Contributors to the spikesplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace spikesplat {

class invalid_parameter_error : public std::invalid_argument {
public:
    explicit invalid_parameter_error(const std::string& what)
        : std::invalid_argument(what) {}
};

// Typed I/O failures so callers (and the malformed-file tests) can tell
// a bad magic from a short read without string matching.
class io_error : public std::runtime_error {
public:
    enum class kind {
        open_failed,
        bad_magic,
        truncated,
        version_mismatch,
        parse,
        unsupported,
        validation,
    };

    io_error(kind k, const std::string& what) : std::runtime_error(what), kind_(k) {}
    kind error_kind() const noexcept { return kind_; }

private:
    kind kind_;
};

// Row-major image, channel-interleaved: data[(y*width + x)*channels + c].
// Intensities live in [0, 1] by convention; nothing here enforces it.
struct Image {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<double> data;

    Image() = default;
    Image(int w, int h, int c, double fill = 0.0)
        : width(w), height(h), channels(c),
          data(static_cast<size_t>(w) * h * c, fill) {}

    double& at(int x, int y, int c = 0) {
        return data[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    double at(int x, int y, int c = 0) const {
        return data[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    size_t size() const { return data.size(); }
    bool same_shape(const Image& o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }
};

inline double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

inline double sigmoid(double x) {
    if (x >= 0.0) {
        double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

} // namespace spikesplat
