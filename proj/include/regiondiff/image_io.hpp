#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "regiondiff/masks.hpp"
#include "regiondiff/tensor.hpp"

namespace regiondiff {

using Bytes = std::vector<std::uint8_t>;

// 8-bit RGB PNG of an image in [0,1] (values are clamped and rounded).
Bytes encode_png(const RgbImage& image);
// Any PNG decoded to RGB in [0,1]; alpha is composited over black.
RgbImage decode_png_rgb(std::span<const std::uint8_t> png);

Bytes encode_png_gray(const Grid<std::uint8_t>& gray);
// Any PNG decoded to 8-bit grayscale (color inputs are converted).
Grid<std::uint8_t> decode_png_gray(std::span<const std::uint8_t> png);

// Animated PNG with one grayscale frame per entry; all frames share a size.
// Viewers without APNG support show the first frame.
Bytes encode_apng_gray(const std::vector<Grid<std::uint8_t>>& frames);

// Quantized masks as an APNG, frame k = step n - k (execution order), 0/255.
Bytes encode_mask_stack(const QuantizedMaskStack& stack);

// Raw latent dump: "SMDL", u32 H, u32 W, u32 D, H*W*D f32, all little-endian.
Bytes encode_latent_dump(const LatentCanvas& latent);
LatentCanvas decode_latent_dump(std::span<const std::uint8_t> bytes);

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace regiondiff
