#include "regiondiff/sampler.hpp"

#include <cmath>

#include "regiondiff/rng.hpp"

namespace regiondiff {

namespace {
void check_context(const StepContext& ctx) {
    if (ctx.plan == nullptr || ctx.schedule == nullptr) {
        throw ParameterError("step context is missing its plan or schedule");
    }
    if (ctx.step_index < 1 || ctx.step_index > ctx.plan->size()) {
        throw ParameterError("step index " + std::to_string(ctx.step_index) + " outside plan");
    }
}
}  // namespace

LatentCanvas step_except_noise(const LatentCanvas& x_t, const LatentCanvas& eps_hat, const StepContext& ctx) {
    check_context(ctx);
    require_same_shape(x_t, eps_hat, "step_except_noise");
    LatentCanvas x0p = estimate_x0(x_t, eps_hat, ctx.timestep(), *ctx.schedule);
    if (ctx.step_index == 1) {
        return x0p;
    }
    const double ab_next = ctx.schedule->alpha_bar(ctx.next_timestep());
    const double a = std::sqrt(ab_next);
    if (ctx.plan->mode() == SamplerMode::ddim) {
        const double b = std::sqrt(1.0 - ab_next);
        for (std::size_t k = 0; k < x0p.data.size(); ++k) {
            x0p.data[k] = static_cast<float>(a * x0p.data[k] + b * eps_hat.data[k]);
        }
    } else {
        for (float& v : x0p.data) {
            v = static_cast<float>(a * v);
        }
    }
    return x0p;
}

LatentCanvas inject_noise(const LatentCanvas& x_tilde, const StepContext& ctx) {
    check_context(ctx);
    const double eta = ctx.plan->eta_after(ctx.step_index);
    if (eta == 0.0) {
        return x_tilde;
    }
    LatentCanvas out = x_tilde;
    std::vector<float> eps(out.data.size());
    fill_gaussian({ctx.seed, NoisePurpose::post_step, static_cast<std::uint32_t>(ctx.step_index), ctx.slot}, eps);
    for (std::size_t k = 0; k < out.data.size(); ++k) {
        out.data[k] = static_cast<float>(out.data[k] + eta * eps[k]);
    }
    return out;
}

LatentCanvas step_full(const LatentCanvas& x_t, const LatentCanvas& eps_hat, const StepContext& ctx) {
    return inject_noise(step_except_noise(x_t, eps_hat, ctx), ctx);
}

}  // namespace regiondiff
