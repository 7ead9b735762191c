#pragma once

#include <chrono>
#include <memory>
#include <string>
#include <string_view>

#include "regiondiff/tensor.hpp"

namespace regiondiff {

inline constexpr int kLatentScale = 8;
inline constexpr int kLatentChannels = 4;

// Latent autoencoder contract: 8H' x 8W' RGB <-> H' x W' x D latent.
class Codec {
public:
    virtual ~Codec() = default;
    virtual LatentCanvas encode(const RgbImage& image) const = 0;
    virtual RgbImage decode(const LatentCanvas& latent) const = 0;
    virtual std::string_view name() const = 0;
};

// Deterministic stand-in for a VAE.
//
// encode: per-channel 8x8 block mean; channel 3 is block-mean luminance
//         (0.299 R + 0.587 G + 0.114 B).
// decode: bilinear x8 upsample of channels 0-2, preceded by the inverse of the
//         3-tap block-averaging filter bilinear interpolation induces, so that
//         decode(encode(img)) keeps every 8x8 block mean wherever the final
//         [0,1] clamp is inactive.
//
// decode sleeps for `decode_latency` to model the cost of a real decoder.
class BlockMeanCodec final : public Codec {
public:
    explicit BlockMeanCodec(std::string name = "standard",
                            std::chrono::microseconds decode_latency = std::chrono::microseconds{0})
        : name_(std::move(name)), decode_latency_(decode_latency) {}

    LatentCanvas encode(const RgbImage& image) const override;
    RgbImage decode(const LatentCanvas& latent) const override;
    std::string_view name() const override { return name_; }
    std::chrono::microseconds decode_latency() const { return decode_latency_; }

private:
    std::string name_;
    std::chrono::microseconds decode_latency_;
};

enum class CodecKind { standard, tiny };

inline constexpr std::chrono::microseconds kStandardDecodeLatency{4000};
inline constexpr std::chrono::microseconds kTinyDecodeLatency{1000};

// Both kinds share the math; "tiny" models the compressed autoencoder's
// lower decode cost.
std::shared_ptr<const Codec> make_codec(CodecKind kind, bool simulate_latency = true);

// Latent of a constant-color image (what enc(c 1) produces), at latent size.
LatentCanvas encode_constant_color(const Codec& codec, int latent_height, int latent_width, float r, float g,
                                   float b);

}  // namespace regiondiff
