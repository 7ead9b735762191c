#pragma once

#include <cstdint>
#include <span>

namespace regiondiff {

// What a noise draw is used for. Part of the counter key so that independent
// uses never share a stream.
enum class NoisePurpose : std::uint32_t {
    initial_latent   = 1,
    post_step        = 2,
    bootstrap_noise  = 3,
    bootstrap_color  = 4,
};

// Counter-based generator: every value is a pure function of
// (seed, purpose, step, slot, element index). Draws are reproducible regardless
// of the order in which tiles, prompts, or stream slots are processed.
struct NoiseKey {
    std::uint64_t seed = 0;
    NoisePurpose purpose = NoisePurpose::initial_latent;
    std::uint32_t step = 0;
    std::uint32_t slot = 0;

    std::uint64_t stream_id() const;
};

std::uint64_t splitmix64(std::uint64_t x);

// Uniform in [0, 1) with 53 bits of resolution.
double uniform_at(const NoiseKey& key, std::uint64_t counter);

// Standard normal draws, two per element pair, by the polar method. Pair p
// tries counters (p, attempt) until a point falls inside the unit disc, so
// every element depends only on the key and its index.
void fill_gaussian(const NoiseKey& key, std::span<float> out);

}  // namespace regiondiff
