#pragma once

#include <atomic>
#include <chrono>
#include <map>
#include <memory>
#include <mutex>
#include <vector>

#include "regiondiff/conditioning.hpp"
#include "regiondiff/schedule.hpp"

namespace regiondiff {

struct DenoiseItem {
    LatentCanvas latent;
    int timestep = 0;
    ConditioningId conditioning = 0;
};

// One batched call. Timesteps may differ per element.
struct DenoiseRequest {
    std::vector<DenoiseItem> items;
};

// Throws ShapeError unless every tile shares one H x W x D shape.
void check_request_shapes(const DenoiseRequest& req);

// The noise estimator eps_theta(x_t, t, y).
class Denoiser {
public:
    virtual ~Denoiser() = default;

    virtual void register_conditioning(const Conditioning& cond) = 0;

    // Returns one eps_hat per request item, same shapes. Throws
    // ConditioningError for unknown ids and BackendError on transport failure.
    virtual std::vector<LatentCanvas> predict_noise(const DenoiseRequest& req) = 0;
};

// Test oracle: eps_hat = (x_t - sqrt(ab(t)) target) / max(beta(t), 1e-6), so
// estimate_x0 recovers the conditioning's target exactly. Every pixel evolves
// independently, which gives the whole pipeline a closed-form reference.
//
// A target whose spatial size differs from the request tile is indexed
// modulo its own size.
class AnalyticDenoiser final : public Denoiser {
public:
    explicit AnalyticDenoiser(NoiseSchedule schedule) : schedule_(std::move(schedule)) {}

    void register_conditioning(const Conditioning& cond) override;
    std::vector<LatentCanvas> predict_noise(const DenoiseRequest& req) override;

    bool has_conditioning(ConditioningId id) const;

private:
    NoiseSchedule schedule_;
    mutable std::mutex mu_;
    std::map<ConditioningId, Conditioning> store_;
};

// Wraps a backend and adds a fixed delay per call, independent of batch size,
// the way a GPU U-Net amortizes a batch.
class LatencySimulator final : public Denoiser {
public:
    LatencySimulator(std::shared_ptr<Denoiser> inner, std::chrono::microseconds latency)
        : inner_(std::move(inner)), latency_(latency) {}

    void register_conditioning(const Conditioning& cond) override { inner_->register_conditioning(cond); }
    std::vector<LatentCanvas> predict_noise(const DenoiseRequest& req) override;

    std::uint64_t call_count() const { return calls_.load(); }
    std::chrono::microseconds latency() const { return latency_; }

private:
    std::shared_ptr<Denoiser> inner_;
    std::chrono::microseconds latency_;
    std::atomic<std::uint64_t> calls_{0};
};

}  // namespace regiondiff
