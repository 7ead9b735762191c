#include "regiondiff/schedule.hpp"

#include <cmath>

namespace regiondiff {

std::string_view to_string(SamplerMode m) {
    return m == SamplerMode::ddim ? "ddim" : "lcm";
}

SamplerMode parse_sampler_mode(std::string_view s) {
    if (s == "ddim") {
        return SamplerMode::ddim;
    }
    if (s == "lcm") {
        return SamplerMode::lcm;
    }
    throw ParameterError("unknown sampler mode '" + std::string(s) + "' (expected ddim or lcm)");
}

NoiseSchedule NoiseSchedule::build(int max_timestep, double beta_start, double beta_end, SamplerMode mode) {
    if (max_timestep < 2) {
        throw ParameterError("max timestep must be >= 2");
    }
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
        throw ParameterError("beta bounds must satisfy 0 < beta_start <= beta_end < 1");
    }
    const double s0 = std::sqrt(beta_start);
    const double s1 = std::sqrt(beta_end);
    std::vector<double> ab(static_cast<std::size_t>(max_timestep) + 1);
    double prod = 1.0;
    for (int k = 0; k <= max_timestep; ++k) {
        // k = T lies one past the spaced range; it reuses beta_end.
        const double frac = std::min(1.0, static_cast<double>(k) / (max_timestep - 1));
        const double s    = s0 + frac * (s1 - s0);
        prod *= 1.0 - s * s;
        ab[static_cast<std::size_t>(k)] = prod;
    }
    ab[0] = 1.0;
    return NoiseSchedule(max_timestep, beta_start, beta_end, mode, std::move(ab));
}

double NoiseSchedule::alpha_bar(int t) const {
    if (t < 0 || t > max_timestep_) {
        throw ParameterError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(max_timestep_) + "]");
    }
    return alpha_bar_[static_cast<std::size_t>(t)];
}

double NoiseSchedule::noise_level(int t) const {
    return std::sqrt(std::max(0.0, 1.0 - alpha_bar(t)));
}

int TimestepPlan::timestep(int i) const {
    if (i < 0 || i > size()) {
        throw ParameterError("step index " + std::to_string(i) + " outside [0, " + std::to_string(size()) + "]");
    }
    if (i == 0) {
        return 0;
    }
    return descending_[static_cast<std::size_t>(size() - i)];
}

double TimestepPlan::eta_after(int i) const {
    if (i < 1 || i > size()) {
        throw ParameterError("step index " + std::to_string(i) + " outside [1, " + std::to_string(size()) + "]");
    }
    return eta_after_[static_cast<std::size_t>(i - 1)];
}

TimestepPlan make_timesteps(const NoiseSchedule& schedule, int n) {
    const int T = schedule.max_timestep();
    if (n < 1 || n > T) {
        throw ParameterError("step count " + std::to_string(n) + " outside [1, " + std::to_string(T) + "]");
    }
    TimestepPlan plan;
    plan.mode_ = schedule.mode();
    const int spacing = T / n;
    for (int k = 0; k < n; ++k) {
        plan.descending_.push_back(T - 1 - k * spacing);
    }
    plan.eta_after_.resize(static_cast<std::size_t>(n), 0.0);
    if (plan.mode_ == SamplerMode::lcm) {
        for (int i = 2; i <= n; ++i) {
            plan.eta_after_[static_cast<std::size_t>(i - 1)] = schedule.noise_level(plan.timestep(i - 1));
        }
    }
    return plan;
}

LatentCanvas add_noise(const LatentCanvas& x0, const LatentCanvas& eps, int t, const NoiseSchedule& schedule) {
    require_same_shape(x0, eps, "add_noise");
    const double ab = schedule.alpha_bar(t);
    const double a = std::sqrt(ab);
    const double b = std::sqrt(1.0 - ab);
    LatentCanvas out(x0.height, x0.width, x0.channels);
    for (std::size_t k = 0; k < out.data.size(); ++k) {
        out.data[k] = static_cast<float>(a * x0.data[k] + b * eps.data[k]);
    }
    return out;
}

LatentCanvas estimate_x0(const LatentCanvas& x_t, const LatentCanvas& eps_hat, int t, const NoiseSchedule& schedule) {
    require_same_shape(x_t, eps_hat, "estimate_x0");
    if (t == 0) {
        return x_t;
    }
    const double ab = schedule.alpha_bar(t);
    const double a = std::sqrt(ab);
    const double b = std::sqrt(1.0 - ab);
    LatentCanvas out(x_t.height, x_t.width, x_t.channels);
    for (std::size_t k = 0; k < out.data.size(); ++k) {
        out.data[k] = static_cast<float>((x_t.data[k] - b * eps_hat.data[k]) / a);
    }
    return out;
}

}  // namespace regiondiff
