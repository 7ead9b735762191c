#pragma once

#include <cstdint>

#include "regiondiff/schedule.hpp"

namespace regiondiff {

// Everything one reverse step needs besides the latent itself. `slot`
// separates independent noise streams that share (seed, step), e.g. the
// per-tile, per-prompt noise of the unstabilized baseline.
struct StepContext {
    const TimestepPlan* plan = nullptr;
    const NoiseSchedule* schedule = nullptr;
    int step_index = 1;
    std::uint64_t seed = 0;
    std::uint32_t slot = 0;

    int timestep() const { return plan->timestep(step_index); }
    int next_timestep() const { return plan->timestep(step_index - 1); }
};

// Deterministic part of a reverse step from t_i to t_{i-1}.
//   DDIM: sqrt(ab') x0p + sqrt(1 - ab') eps_hat
//   LCM:  sqrt(ab') x0p
// where x0p = estimate_x0(x_t, eps_hat, t_i). At i = 1 both return x0p.
LatentCanvas step_except_noise(const LatentCanvas& x_t, const LatentCanvas& eps_hat, const StepContext& ctx);

// x_tilde + eta_{t_{i-1}} eps, eps drawn from (seed, post_step, i, slot).
// Returns the input unchanged when eta is zero (DDIM, or the final step).
LatentCanvas inject_noise(const LatentCanvas& x_tilde, const StepContext& ctx);

LatentCanvas step_full(const LatentCanvas& x_t, const LatentCanvas& eps_hat, const StepContext& ctx);

}  // namespace regiondiff
