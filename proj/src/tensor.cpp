#include "regiondiff/tensor.hpp"

#include <algorithm>
#include <cstring>

#include "regiondiff/rng.hpp"

namespace regiondiff {

LatentCanvas::LatentCanvas(int h, int w, int d, float fill)
    : height(h), width(w), channels(d), data(static_cast<std::size_t>(h) * w * d, fill) {
    if (h < 0 || w < 0 || d < 0) {
        throw ParameterError("latent dimensions must be non-negative");
    }
}

RgbImage::RgbImage(int h, int w, float fill) : height(h), width(w), data(static_cast<std::size_t>(h) * w * 3, fill) {
    if (h < 0 || w < 0) {
        throw ParameterError("image dimensions must be non-negative");
    }
}

void require_same_shape(const LatentCanvas& a, const LatentCanvas& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(what) + ": shape mismatch (" + std::to_string(a.height) + "x" +
                         std::to_string(a.width) + "x" + std::to_string(a.channels) + " vs " +
                         std::to_string(b.height) + "x" + std::to_string(b.width) + "x" +
                         std::to_string(b.channels) + ")");
    }
}

bool all_finite(const LatentCanvas& x) {
    return std::all_of(x.data.begin(), x.data.end(), [](float v) { return std::isfinite(v); });
}

void require_finite(const LatentCanvas& x, const std::string& context) {
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        if (!std::isfinite(x.data[i])) {
            throw NumericError("non-finite latent value at flat index " + std::to_string(i) + " (" + context + ")");
        }
    }
}

LatentCanvas crop(const LatentCanvas& x, int top, int left, int h, int w) {
    if (top < 0 || left < 0 || h < 0 || w < 0 || top + h > x.height || left + w > x.width) {
        throw ShapeError("crop rectangle outside canvas");
    }
    LatentCanvas out(h, w, x.channels);
    const std::size_t row_len = static_cast<std::size_t>(w) * x.channels;
    for (int r = 0; r < h; ++r) {
        std::memcpy(&out.data[out.index(r, 0, 0)], &x.data[x.index(top + r, left, 0)], row_len * sizeof(float));
    }
    return out;
}

Mask crop(const Mask& m, int top, int left, int h, int w) {
    if (top < 0 || left < 0 || h < 0 || w < 0 || top + h > m.height || left + w > m.width) {
        throw ShapeError("crop rectangle outside mask");
    }
    Mask out(h, w);
    for (int r = 0; r < h; ++r) {
        std::copy_n(&m.data[static_cast<std::size_t>(top + r) * m.width + left], w,
                    &out.data[static_cast<std::size_t>(r) * w]);
    }
    return out;
}

namespace {
int wrap(int v, int n) {
    int m = v % n;
    return m < 0 ? m + n : m;
}
}  // namespace

LatentCanvas roll_by(const LatentCanvas& x, int drow, int dcol) {
    if (x.height == 0 || x.width == 0) {
        return x;
    }
    LatentCanvas out(x.height, x.width, x.channels);
    const int dr = wrap(drow, x.height);
    const int dc = wrap(dcol, x.width);
    for (int r = 0; r < x.height; ++r) {
        const int rr = (r + dr) % x.height;
        for (int c = 0; c < x.width; ++c) {
            const int cc = (c + dc) % x.width;
            std::copy_n(&x.data[x.index(r, c, 0)], x.channels, &out.data[out.index(rr, cc, 0)]);
        }
    }
    return out;
}

std::vector<unsigned char> to_rgb8(const RgbImage& img) {
    std::vector<unsigned char> out(img.data.size());
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        const float v = std::clamp(img.data[i], 0.0f, 1.0f);
        out[i] = static_cast<unsigned char>(std::floor(v * 255.0f + 0.5f));
    }
    return out;
}

std::uint64_t fnv1a(std::span<const unsigned char> bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace {

// FNV-1a over 32-bit words of the float bit patterns, then a final mix.
std::uint64_t hash_floats(const std::vector<float>& data) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (float v : data) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        h = (h ^ bits) * 0x100000001b3ull;
    }
    return splitmix64(h ^ data.size());
}

}  // namespace

std::uint64_t hash_image(const RgbImage& img) { return hash_floats(img.data); }

std::uint64_t hash_latent(const LatentCanvas& x) { return hash_floats(x.data); }

}  // namespace regiondiff
