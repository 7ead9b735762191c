#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "regiondiff/tensor.hpp"

namespace regiondiff {

using ConditioningId = std::uint32_t;

// Opaque prompt embedding y in R^K. The analytic backend additionally carries
// the clean latent it steers toward.
struct Conditioning {
    ConditioningId id = 0;
    std::vector<float> vector;
    std::optional<LatentCanvas> target;

    bool operator==(const Conditioning&) const = default;
};

// s * fg + (1 - s) * bg on the embedding and, when both carry one, the target.
Conditioning mix_conditioning(const Conditioning& fg, const Conditioning& bg, double s);

}  // namespace regiondiff
