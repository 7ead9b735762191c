#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "regiondiff/conditioning.hpp"
#include "regiondiff/schedule.hpp"
#include "regiondiff/tensor.hpp"

namespace regiondiff {

using BrushId = std::uint32_t;

// A prompt-mask pair. raw_mask lives at latent resolution.
struct SemanticBrush {
    BrushId id = 0;
    std::string name;
    Conditioning conditioning;
    Mask raw_mask;
    double alpha = 1.0;
    double blur_sigma = 0.0;  // latent pixels
    double strength = 1.0;
    bool is_background = false;
};

// Per-step binary masks w^(t_i), i = 1..n.
struct QuantizedMaskStack {
    std::vector<Mask> by_step;  // by_step[i - 1]

    int steps() const { return static_cast<int>(by_step.size()); }
    const Mask& at_step(int i) const { return by_step.at(static_cast<std::size_t>(i - 1)); }
};

struct GridPoint {
    int row = 0;
    int col = 0;
    bool operator==(const GridPoint&) const = default;
};

// Area-average an image-resolution 8-bit mask down by `factor` into [0,1].
Mask downsample_mask(const Grid<std::uint8_t>& image_mask, int factor = 8);

// Separable Gaussian blur, radius ceil(3 sigma), mirror padding without edge
// repetition, kernel normalized to 1. sigma = 0 is the identity.
Mask smooth_mask(const Mask& mask, double sigma);

// w^(t_i) = 1[a * smoothed > beta(t_i)] (strict).
QuantizedMaskStack quantize_mask(const Mask& smoothed, double alpha, const TimestepPlan& plan,
                                 const NoiseSchedule& schedule);

// Midpoint of the tight bounding box of nonzero pixels, rounded half up.
GridPoint bounding_box_center(const Mask& mask);

bool mask_is_empty(const Mask& mask);

// Validates palette-level invariants: at least one brush, exactly one
// background, masks in [0,1] with the canvas shape.
void validate_palette(const std::vector<SemanticBrush>& palette, int height, int width);

}  // namespace regiondiff
