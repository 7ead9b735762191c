#pragma once

#include <array>
#include <string>

#include "regiondiff/engine.hpp"

namespace testing_support {

using namespace regiondiff;

inline std::array<double, 4> color_latent(double r, double g, double b) {
    return {r, g, b, 0.299 * r + 0.587 * g + 0.114 * b};
}

inline Conditioning color_conditioning(ConditioningId id, double r, double g, double b, Size2 tile) {
    Conditioning c;
    c.id = id;
    const auto v = color_latent(r, g, b);
    c.vector.assign(v.begin(), v.end());
    LatentCanvas t(tile.height, tile.width, 4);
    for (int y = 0; y < tile.height; ++y) {
        for (int x = 0; x < tile.width; ++x) {
            for (int ch = 0; ch < 4; ++ch) {
                t.at(y, x, ch) = static_cast<float>(v[static_cast<std::size_t>(ch)]);
            }
        }
    }
    c.target = std::move(t);
    return c;
}

inline SemanticBrush background_brush(Size2 canvas, double r, double g, double b, Size2 tile = {64, 64}) {
    SemanticBrush br;
    br.id = 0;
    br.name = "background";
    br.is_background = true;
    br.conditioning = color_conditioning(0, r, g, b, tile);
    br.raw_mask = Mask(canvas.height, canvas.width, 1.0f);
    return br;
}

inline SemanticBrush rect_brush(BrushId id, Size2 canvas, int top, int left, int bottom, int right, double r,
                                double g, double b, Size2 tile = {64, 64}) {
    SemanticBrush br;
    br.id = id;
    br.name = "brush" + std::to_string(id);
    br.conditioning = color_conditioning(id, r, g, b, tile);
    br.raw_mask = Mask(canvas.height, canvas.width, 0.0f);
    for (int y = top; y < bottom; ++y) {
        for (int x = left; x < right; ++x) {
            br.raw_mask.at(y, x) = 1.0f;
        }
    }
    return br;
}

inline double max_abs_diff(const std::vector<float>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        m = std::max(m, std::abs(static_cast<double>(a[k]) - b[k]));
    }
    return m;
}

}  // namespace testing_support
