#include "regiondiff/codec.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cmath>
#include <thread>

namespace regiondiff {

LatentCanvas BlockMeanCodec::encode(const RgbImage& image) const {
    if (image.height % kLatentScale != 0 || image.width % kLatentScale != 0 || image.height == 0 ||
        image.width == 0) {
        throw ShapeError("image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                         " is not a positive multiple of " + std::to_string(kLatentScale));
    }
    const int H = image.height / kLatentScale;
    const int W = image.width / kLatentScale;
    LatentCanvas out(H, W, kLatentChannels);
    constexpr double inv = 1.0 / (kLatentScale * kLatentScale);
    for (int r = 0; r < H; ++r) {
        for (int c = 0; c < W; ++c) {
            double sum[3] = {0.0, 0.0, 0.0};
            for (int dr = 0; dr < kLatentScale; ++dr) {
                for (int dc = 0; dc < kLatentScale; ++dc) {
                    for (int ch = 0; ch < 3; ++ch) {
                        sum[ch] += image.at(r * kLatentScale + dr, c * kLatentScale + dc, ch);
                    }
                }
            }
            const double R = sum[0] * inv, G = sum[1] * inv, B = sum[2] * inv;
            out.at(r, c, 0) = static_cast<float>(R);
            out.at(r, c, 1) = static_cast<float>(G);
            out.at(r, c, 2) = static_cast<float>(B);
            out.at(r, c, 3) = static_cast<float>(0.299 * R + 0.587 * G + 0.114 * B);
        }
    }
    return out;
}

namespace {

// Solves A u = v in place, where A has 3/4 on the diagonal (7/8 at clamped
// ends) and 1/8 off-diagonal: the block-mean operator of x8 bilinear upsampling.
void unblur_inplace(std::vector<double>& v) {
    const std::size_t n = v.size();
    if (n <= 1) {
        return;
    }
    std::vector<double> cprime(n);
    const double off = 0.125;
    auto diag = [n](std::size_t i) { return (i == 0 || i + 1 == n) ? 0.875 : 0.75; };
    cprime[0] = off / diag(0);
    v[0] = v[0] / diag(0);
    for (std::size_t i = 1; i < n; ++i) {
        const double m = diag(i) - off * cprime[i - 1];
        cprime[i] = off / m;
        v[i] = (v[i] - off * v[i - 1]) / m;
    }
    for (std::size_t i = n - 1; i-- > 0;) {
        v[i] -= cprime[i] * v[i + 1];
    }
}

struct Tap {
    int lo;
    int hi;
    double frac;
};

std::vector<Tap> bilinear_taps(int src, int dst_scale) {
    std::vector<Tap> taps(static_cast<std::size_t>(src) * dst_scale);
    for (int x = 0; x < src * dst_scale; ++x) {
        const double s  = (x + 0.5) / dst_scale - 0.5;
        const int i0    = static_cast<int>(std::floor(s));
        const double f  = s - i0;
        taps[static_cast<std::size_t>(x)] = {std::clamp(i0, 0, src - 1), std::clamp(i0 + 1, 0, src - 1), f};
    }
    return taps;
}

}  // namespace

RgbImage BlockMeanCodec::decode(const LatentCanvas& latent) const {
    if (latent.channels < 3) {
        throw ShapeError("decode needs at least 3 latent channels");
    }
    const auto deadline = std::chrono::steady_clock::now() + decode_latency_;
    const int H = latent.height;
    const int W = latent.width;

    // Prefiltered planes, one per RGB channel.
    std::vector<std::vector<double>> planes(3, std::vector<double>(static_cast<std::size_t>(H) * W));
    std::vector<double> line;
    for (int ch = 0; ch < 3; ++ch) {
        auto& p = planes[static_cast<std::size_t>(ch)];
        for (int r = 0; r < H; ++r) {
            line.assign(static_cast<std::size_t>(W), 0.0);
            for (int c = 0; c < W; ++c) {
                line[static_cast<std::size_t>(c)] = latent.at(r, c, ch);
            }
            unblur_inplace(line);
            std::copy(line.begin(), line.end(), p.begin() + static_cast<std::ptrdiff_t>(r) * W);
        }
        for (int c = 0; c < W; ++c) {
            line.assign(static_cast<std::size_t>(H), 0.0);
            for (int r = 0; r < H; ++r) {
                line[static_cast<std::size_t>(r)] = p[static_cast<std::size_t>(r) * W + c];
            }
            unblur_inplace(line);
            for (int r = 0; r < H; ++r) {
                p[static_cast<std::size_t>(r) * W + c] = line[static_cast<std::size_t>(r)];
            }
        }
    }

    const auto row_taps = bilinear_taps(H, kLatentScale);
    const auto col_taps = bilinear_taps(W, kLatentScale);
    RgbImage out(H * kLatentScale, W * kLatentScale);
    // Horizontal pass per latent row, then a vertical blend per output row.
    const std::size_t OW = static_cast<std::size_t>(out.width);
    std::vector<double> wide(static_cast<std::size_t>(H) * OW * 3);
    for (int r = 0; r < H; ++r) {
        double* dst = &wide[static_cast<std::size_t>(r) * OW * 3];
        for (std::size_t x = 0; x < OW; ++x) {
            const Tap& tx = col_taps[x];
            for (int ch = 0; ch < 3; ++ch) {
                const double* row = &planes[static_cast<std::size_t>(ch)][static_cast<std::size_t>(r) * W];
                dst[x * 3 + ch] = (1.0 - tx.frac) * row[tx.lo] + tx.frac * row[tx.hi];
            }
        }
    }
    for (int y = 0; y < out.height; ++y) {
        const Tap& ty = row_taps[static_cast<std::size_t>(y)];
        const double* top = &wide[static_cast<std::size_t>(ty.lo) * OW * 3];
        const double* bot = &wide[static_cast<std::size_t>(ty.hi) * OW * 3];
        float* dst = &out.data[static_cast<std::size_t>(y) * OW * 3];
        for (std::size_t k = 0; k < OW * 3; ++k) {
            dst[k] = static_cast<float>((1.0 - ty.frac) * top[k] + ty.frac * bot[k]);
        }
        // Clamp to [0, 1] on the bit patterns (non-negative floats order like
        // integers), which vectorizes where a float min/max does not.
        for (std::size_t k = 0; k < OW * 3; ++k) {
            std::int32_t b = std::bit_cast<std::int32_t>(dst[k]);
            b = b < 0 ? 0 : b;
            b = b > 0x3f800000 ? 0x3f800000 : b;
            dst[k] = std::bit_cast<float>(b);
        }
    }
    std::this_thread::sleep_until(deadline);
    return out;
}

std::shared_ptr<const Codec> make_codec(CodecKind kind, bool simulate_latency) {
    using std::chrono::microseconds;
    if (kind == CodecKind::tiny) {
        return std::make_shared<BlockMeanCodec>("tiny", simulate_latency ? kTinyDecodeLatency : microseconds{0});
    }
    return std::make_shared<BlockMeanCodec>("standard", simulate_latency ? kStandardDecodeLatency : microseconds{0});
}

LatentCanvas encode_constant_color(const Codec& codec, int latent_height, int latent_width, float r, float g,
                                   float b) {
    RgbImage img(latent_height * kLatentScale, latent_width * kLatentScale);
    for (std::size_t k = 0; k < img.data.size(); k += 3) {
        img.data[k]     = r;
        img.data[k + 1] = g;
        img.data[k + 2] = b;
    }
    return codec.encode(img);
}

}  // namespace regiondiff
