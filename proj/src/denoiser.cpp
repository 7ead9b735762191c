#include "regiondiff/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

namespace regiondiff {

Conditioning mix_conditioning(const Conditioning& fg, const Conditioning& bg, double s) {
    if (!(s >= 0.0 && s <= 1.0)) {
        throw ParameterError("prompt strength must lie in [0,1]");
    }
    if (s == 1.0) {
        return fg;
    }
    if (fg.vector.size() != bg.vector.size()) {
        throw ConditioningError("cannot mix conditionings of length " + std::to_string(fg.vector.size()) + " and " +
                                std::to_string(bg.vector.size()));
    }
    if (fg.target.has_value() != bg.target.has_value()) {
        throw ConditioningError("cannot mix a conditioning with a target and one without");
    }
    if (s == 0.0) {
        Conditioning out = bg;
        out.id = fg.id;
        return out;
    }
    Conditioning out;
    out.id = fg.id;
    out.vector.resize(fg.vector.size());
    for (std::size_t k = 0; k < fg.vector.size(); ++k) {
        out.vector[k] = static_cast<float>(s * fg.vector[k] + (1.0 - s) * bg.vector[k]);
    }
    if (fg.target) {
        require_same_shape(*fg.target, *bg.target, "mix_conditioning");
        LatentCanvas t(fg.target->height, fg.target->width, fg.target->channels);
        for (std::size_t k = 0; k < t.data.size(); ++k) {
            t.data[k] = static_cast<float>(s * fg.target->data[k] + (1.0 - s) * bg.target->data[k]);
        }
        out.target = std::move(t);
    }
    return out;
}

void check_request_shapes(const DenoiseRequest& req) {
    if (req.items.empty()) {
        return;
    }
    const LatentCanvas& first = req.items.front().latent;
    for (const auto& item : req.items) {
        if (!item.latent.same_shape(first)) {
            throw ShapeError("denoise request mixes tile shapes");
        }
    }
}

void AnalyticDenoiser::register_conditioning(const Conditioning& cond) {
    if (!cond.target) {
        throw ConditioningError("analytic backend needs a target for conditioning " + std::to_string(cond.id));
    }
    std::lock_guard lock(mu_);
    store_[cond.id] = cond;
}

bool AnalyticDenoiser::has_conditioning(ConditioningId id) const {
    std::lock_guard lock(mu_);
    return store_.count(id) != 0;
}

std::vector<LatentCanvas> AnalyticDenoiser::predict_noise(const DenoiseRequest& req) {
    check_request_shapes(req);
    std::vector<LatentCanvas> out;
    out.reserve(req.items.size());
    std::lock_guard lock(mu_);
    for (const auto& item : req.items) {
        auto it = store_.find(item.conditioning);
        if (it == store_.end()) {
            throw ConditioningError("unknown conditioning id " + std::to_string(item.conditioning));
        }
        const LatentCanvas& target = *it->second.target;
        const LatentCanvas& x = item.latent;
        if (target.channels != x.channels || target.height == 0 || target.width == 0) {
            throw ShapeError("conditioning target channels do not match the latent");
        }
        const double a = std::sqrt(schedule_.alpha_bar(item.timestep));
        const double b = std::max(schedule_.noise_level(item.timestep), 1e-6);
        LatentCanvas eps(x.height, x.width, x.channels);
        const bool direct = target.same_shape(x);
        for (int r = 0; r < x.height; ++r) {
            for (int c = 0; c < x.width; ++c) {
                const int tr = direct ? r : r % target.height;
                const int tc = direct ? c : c % target.width;
                for (int ch = 0; ch < x.channels; ++ch) {
                    eps.at(r, c, ch) = static_cast<float>((x.at(r, c, ch) - a * target.at(tr, tc, ch)) / b);
                }
            }
        }
        out.push_back(std::move(eps));
    }
    return out;
}

std::vector<LatentCanvas> LatencySimulator::predict_noise(const DenoiseRequest& req) {
    ++calls_;
    const auto deadline = std::chrono::steady_clock::now() + latency_;
    auto out = inner_->predict_noise(req);
    std::this_thread::sleep_until(deadline);
    return out;
}

}  // namespace regiondiff
