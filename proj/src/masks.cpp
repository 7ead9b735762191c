#include "regiondiff/masks.hpp"

#include <algorithm>
#include <cmath>

namespace regiondiff {

Mask downsample_mask(const Grid<std::uint8_t>& image_mask, int factor) {
    if (factor < 1 || image_mask.height % factor != 0 || image_mask.width % factor != 0) {
        throw ShapeError("mask dimensions " + std::to_string(image_mask.height) + "x" +
                         std::to_string(image_mask.width) + " not divisible by " + std::to_string(factor));
    }
    Mask out(image_mask.height / factor, image_mask.width / factor);
    const double norm = 1.0 / (255.0 * factor * factor);
    for (int r = 0; r < out.height; ++r) {
        for (int c = 0; c < out.width; ++c) {
            unsigned sum = 0;
            for (int dr = 0; dr < factor; ++dr) {
                for (int dc = 0; dc < factor; ++dc) {
                    sum += image_mask.at(r * factor + dr, c * factor + dc);
                }
            }
            out.at(r, c) = static_cast<float>(sum * norm);
        }
    }
    return out;
}

namespace {

int reflect_index(int i, int n) {
    if (n == 1) {
        return 0;
    }
    const int period = 2 * (n - 1);
    int m = i % period;
    if (m < 0) {
        m += period;
    }
    return m < n ? m : period - m;
}

std::vector<double> gaussian_kernel(double sigma) {
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int d = -radius; d <= radius; ++d) {
        const double v = std::exp(-0.5 * (d * d) / (sigma * sigma));
        k[static_cast<std::size_t>(d + radius)] = v;
        sum += v;
    }
    for (double& v : k) {
        v /= sum;
    }
    return k;
}

}  // namespace

Mask smooth_mask(const Mask& mask, double sigma) {
    if (!(sigma >= 0.0)) {
        throw ParameterError("blur sigma must be >= 0");
    }
    if (sigma == 0.0 || mask.data.empty()) {
        return mask;
    }
    const auto kernel = gaussian_kernel(sigma);
    const int radius = static_cast<int>(kernel.size() / 2);
    const int H = mask.height;
    const int W = mask.width;

    std::vector<double> rows(mask.data.size());
    for (int r = 0; r < H; ++r) {
        for (int c = 0; c < W; ++c) {
            double acc = 0.0;
            for (int d = -radius; d <= radius; ++d) {
                acc += kernel[static_cast<std::size_t>(d + radius)] * mask.at(r, reflect_index(c + d, W));
            }
            rows[static_cast<std::size_t>(r) * W + c] = acc;
        }
    }
    Mask out(H, W);
    for (int r = 0; r < H; ++r) {
        for (int c = 0; c < W; ++c) {
            double acc = 0.0;
            for (int d = -radius; d <= radius; ++d) {
                acc += kernel[static_cast<std::size_t>(d + radius)] *
                       rows[static_cast<std::size_t>(reflect_index(r + d, H)) * W + c];
            }
            out.at(r, c) = static_cast<float>(acc);
        }
    }
    return out;
}

QuantizedMaskStack quantize_mask(const Mask& smoothed, double alpha, const TimestepPlan& plan,
                                 const NoiseSchedule& schedule) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        throw ParameterError("mask alpha must lie in [0,1]");
    }
    QuantizedMaskStack stack;
    stack.by_step.reserve(static_cast<std::size_t>(plan.size()));
    for (int i = 1; i <= plan.size(); ++i) {
        const double level = schedule.noise_level(plan.timestep(i));
        Mask q(smoothed.height, smoothed.width);
        for (std::size_t k = 0; k < q.data.size(); ++k) {
            q.data[k] = alpha * smoothed.data[k] > level ? 1.0f : 0.0f;
        }
        stack.by_step.push_back(std::move(q));
    }
    return stack;
}

bool mask_is_empty(const Mask& mask) {
    return std::none_of(mask.data.begin(), mask.data.end(), [](float v) { return v != 0.0f; });
}

GridPoint bounding_box_center(const Mask& mask) {
    int r0 = mask.height, r1 = -1, c0 = mask.width, c1 = -1;
    for (int r = 0; r < mask.height; ++r) {
        for (int c = 0; c < mask.width; ++c) {
            if (mask.at(r, c) != 0.0f) {
                r0 = std::min(r0, r);
                r1 = std::max(r1, r);
                c0 = std::min(c0, c);
                c1 = std::max(c1, c);
            }
        }
    }
    if (r1 < 0) {
        throw EmptyMaskError("bounding box of an empty mask");
    }
    return {(r0 + r1 + 1) / 2, (c0 + c1 + 1) / 2};
}

void validate_palette(const std::vector<SemanticBrush>& palette, int height, int width) {
    if (palette.empty()) {
        throw ParameterError("palette is empty");
    }
    int backgrounds = 0;
    for (const auto& b : palette) {
        if (b.raw_mask.height != height || b.raw_mask.width != width) {
            throw ShapeError("brush '" + b.name + "' mask is " + std::to_string(b.raw_mask.height) + "x" +
                             std::to_string(b.raw_mask.width) + ", canvas is " + std::to_string(height) + "x" +
                             std::to_string(width));
        }
        for (float v : b.raw_mask.data) {
            if (!(v >= 0.0f && v <= 1.0f)) {
                throw ParameterError("brush '" + b.name + "' mask values must lie in [0,1]");
            }
        }
        if (!(b.alpha >= 0.0 && b.alpha <= 1.0) || !(b.strength >= 0.0 && b.strength <= 1.0) ||
            !(b.blur_sigma >= 0.0)) {
            throw ParameterError("brush '" + b.name + "' has out-of-range alpha/strength/sigma");
        }
        if (b.is_background) {
            ++backgrounds;
            if (std::any_of(b.raw_mask.data.begin(), b.raw_mask.data.end(), [](float v) { return v != 1.0f; })) {
                throw ParameterError("background brush mask must be all ones");
            }
        }
    }
    if (backgrounds != 1) {
        throw ParameterError("palette needs exactly one background brush, found " + std::to_string(backgrounds));
    }
}

}  // namespace regiondiff
