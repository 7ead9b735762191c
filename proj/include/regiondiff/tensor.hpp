#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "regiondiff/errors.hpp"

namespace regiondiff {

// Row-major 2D field. Used for real-valued masks (values in [0,1]) and for the
// binary quantized masks (values exactly 0 or 1).
template <typename T>
struct Grid {
    int height = 0;
    int width  = 0;
    std::vector<T> data;

    Grid() = default;
    Grid(int h, int w, T fill = T{}) : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {
        if (h < 0 || w < 0) {
            throw ParameterError("grid dimensions must be non-negative");
        }
    }

    T& at(int r, int c) { return data[static_cast<std::size_t>(r) * width + c]; }
    const T& at(int r, int c) const { return data[static_cast<std::size_t>(r) * width + c]; }

    bool same_shape(const Grid& o) const { return height == o.height && width == o.width; }
    bool operator==(const Grid&) const = default;
};

using Mask = Grid<float>;

// H' x W' x D latent, channel-interleaved (HWC).
struct LatentCanvas {
    int height   = 0;
    int width    = 0;
    int channels = 0;
    std::vector<float> data;

    LatentCanvas() = default;
    LatentCanvas(int h, int w, int d, float fill = 0.0f);

    std::size_t index(int r, int c, int ch) const {
        return (static_cast<std::size_t>(r) * width + c) * channels + ch;
    }
    float& at(int r, int c, int ch) { return data[index(r, c, ch)]; }
    float at(int r, int c, int ch) const { return data[index(r, c, ch)]; }

    std::size_t size() const { return data.size(); }
    bool same_shape(const LatentCanvas& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }
    bool operator==(const LatentCanvas&) const = default;
};

// 3-channel RGB image, HWC, values nominally in [0,1].
struct RgbImage {
    int height = 0;
    int width  = 0;
    std::vector<float> data;

    RgbImage() = default;
    RgbImage(int h, int w, float fill = 0.0f);

    float& at(int r, int c, int ch) { return data[(static_cast<std::size_t>(r) * width + c) * 3 + ch]; }
    float at(int r, int c, int ch) const { return data[(static_cast<std::size_t>(r) * width + c) * 3 + ch]; }
    bool operator==(const RgbImage&) const = default;
};

void require_same_shape(const LatentCanvas& a, const LatentCanvas& b, const char* what);

bool all_finite(const LatentCanvas& x);
// Throws NumericError naming `context` if any value is NaN or infinite.
void require_finite(const LatentCanvas& x, const std::string& context);

// Crop the rectangle [top, top+h) x [left, left+w) out of a canvas / grid.
LatentCanvas crop(const LatentCanvas& x, int top, int left, int h, int w);
Mask crop(const Mask& m, int top, int left, int h, int w);

// Circular shift: output(r + drow, c + dcol) = input(r, c), indices modulo size.
LatentCanvas roll_by(const LatentCanvas& x, int drow, int dcol);

// 8-bit quantization of an RGB image (round half up, clamped).
std::vector<unsigned char> to_rgb8(const RgbImage& img);

// 64-bit FNV-1a over raw bytes; used for frame identity checks.
std::uint64_t fnv1a(std::span<const unsigned char> bytes);
std::uint64_t hash_image(const RgbImage& img);
std::uint64_t hash_latent(const LatentCanvas& x);

}  // namespace regiondiff
