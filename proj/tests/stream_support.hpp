#pragma once

#include <atomic>
#include <set>

#include "regiondiff/scene.hpp"
#include "regiondiff/stream.hpp"

namespace testing_support {

using namespace regiondiff;

// 128x128 image (16x16 latent) with a background and two rectangles.
inline Scene small_scene(int steps = 4, SamplerMode mode = SamplerMode::lcm, std::uint64_t seed = 100) {
    Scene s = blank_scene({128, 128}, {1.0, 1.0, 1.0});
    s.steps = steps;
    s.mode = mode;
    s.seed = seed;
    SceneBrush a;
    a.id = 1;
    a.name = "left";
    a.mask = Grid<std::uint8_t>(128, 128, 0);
    for (int r = 16; r < 112; ++r)
        for (int c = 0; c < 64; ++c) a.mask.at(r, c) = 255;
    a.target.color = std::array<double, 3>{0.9, 0.1, 0.1};
    a.sigma = 1.0;
    SceneBrush b = a;
    b.id = 2;
    b.name = "right";
    b.mask = Grid<std::uint8_t>(128, 128, 0);
    for (int r = 0; r < 128; ++r)
        for (int c = 80; c < 128; ++c) b.mask.at(r, c) = 255;
    b.target.color = std::array<double, 3>{0.1, 0.2, 0.9};
    s.brushes.push_back(a);
    s.brushes.push_back(b);
    return s;
}

// Fails the calls whose (1-based) numbers are listed.
class FlakyDenoiser final : public Denoiser {
public:
    FlakyDenoiser(std::shared_ptr<Denoiser> inner, std::set<int> failing)
        : inner_(std::move(inner)), failing_(std::move(failing)) {}
    void register_conditioning(const Conditioning& c) override { inner_->register_conditioning(c); }
    std::vector<LatentCanvas> predict_noise(const DenoiseRequest& req) override {
        const int n = ++calls_;
        if (failing_.count(n)) throw BackendError("injected failure on call " + std::to_string(n));
        return inner_->predict_noise(req);
    }

private:
    std::shared_ptr<Denoiser> inner_;
    std::set<int> failing_;
    std::atomic<int> calls_{0};
};

// Latents of sequential generation of frames base, base+1, ... for a scene.
inline std::vector<std::uint64_t> sequential_hashes(const Scene& scene, std::uint64_t base, int count) {
    auto codec = make_codec(CodecKind::standard, false);
    auto den = std::make_shared<AnalyticDenoiser>(scene_schedule(scene));
    Engine engine(scene_schedule(scene), scene_config(scene), den, codec);
    const auto prepared = engine.prepare(scene_palette(scene, *codec), scene.latent_size());
    std::vector<std::uint64_t> out;
    for (int k = 0; k < count; ++k) {
        out.push_back(hash_image(engine.run(prepared, base + static_cast<std::uint64_t>(k)).image));
    }
    return out;
}

}  // namespace testing_support
