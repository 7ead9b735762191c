#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "regiondiff/tensor.hpp"

namespace regiondiff {

// DDIM: deterministic denoise, no per-step noise (eta = 0).
// LCM: denoise to x0 then re-noise to the next level (eta = beta(t_{i-1})).
enum class SamplerMode { ddim, lcm };

std::string_view to_string(SamplerMode m);
SamplerMode parse_sampler_mode(std::string_view s);

class NoiseSchedule {
public:
    static constexpr int kDefaultMaxTimestep = 1000;
    static constexpr double kDefaultBetaStart = 0.00085;
    static constexpr double kDefaultBetaEnd   = 0.012;

    NoiseSchedule() : NoiseSchedule(build(kDefaultMaxTimestep, kDefaultBetaStart, kDefaultBetaEnd)) {}

    // Scaled-linear spacing: beta_lin(k) = (sqrt(bs) + k/(T-1) (sqrt(be) - sqrt(bs)))^2,
    // alpha_bar(t) = prod_{k<=t} (1 - beta_lin(k)), alpha_bar(0) forced to 1.
    static NoiseSchedule build(int max_timestep, double beta_start, double beta_end,
                               SamplerMode mode = SamplerMode::lcm);

    int max_timestep() const { return max_timestep_; }
    SamplerMode mode() const { return mode_; }
    double beta_start() const { return beta_start_; }
    double beta_end() const { return beta_end_; }

    // Signal retention alpha_bar(t), t in [0, T].
    double alpha_bar(int t) const;
    // Noise level beta(t) = sqrt(1 - alpha_bar(t)).
    double noise_level(int t) const;

    NoiseSchedule with_mode(SamplerMode m) const {
        NoiseSchedule s = *this;
        s.mode_ = m;
        return s;
    }

private:
    NoiseSchedule(int t, double bs, double be, SamplerMode mode, std::vector<double> ab)
        : max_timestep_(t), beta_start_(bs), beta_end_(be), mode_(mode), alpha_bar_(std::move(ab)) {}

    int max_timestep_ = 0;
    double beta_start_ = 0.0;
    double beta_end_ = 0.0;
    SamplerMode mode_ = SamplerMode::lcm;
    std::vector<double> alpha_bar_;
};

// Step indices run i = n..1 in execution order; t_0 denotes the clean output
// (alpha_bar(0) = 1).
class TimestepPlan {
public:
    TimestepPlan() = default;

    int size() const { return static_cast<int>(descending_.size()); }
    SamplerMode mode() const { return mode_; }

    // Timesteps in execution order: t_n, t_{n-1}, ..., t_1.
    const std::vector<int>& descending() const { return descending_; }

    // t_i for i in [0, n]; t_0 = 0.
    int timestep(int i) const;

    // eta_{t_{i-1}}: scale of the noise added after executing step i.
    double eta_after(int i) const;

    friend TimestepPlan make_timesteps(const NoiseSchedule& schedule, int n);

private:
    SamplerMode mode_ = SamplerMode::lcm;
    std::vector<int> descending_;
    std::vector<double> eta_after_;  // indexed by i - 1
};

// Evenly spaced descending steps with t_n = T-1 and spacing floor(T/n).
TimestepPlan make_timesteps(const NoiseSchedule& schedule, int n);

// sqrt(alpha_bar(t)) x0 + sqrt(1 - alpha_bar(t)) eps.
LatentCanvas add_noise(const LatentCanvas& x0, const LatentCanvas& eps, int t, const NoiseSchedule& schedule);

// (x_t - sqrt(1 - alpha_bar(t)) eps_hat) / sqrt(alpha_bar(t)); identity at t = 0.
LatentCanvas estimate_x0(const LatentCanvas& x_t, const LatentCanvas& eps_hat, int t, const NoiseSchedule& schedule);

}  // namespace regiondiff
