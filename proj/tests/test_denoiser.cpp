#include "doctest.h"

#include <chrono>

#include "helpers.hpp"
#include "regiondiff/denoiser.hpp"
#include "regiondiff/rng.hpp"

using namespace regiondiff;
using testing_support::color_conditioning;

namespace {

LatentCanvas noise(int h, int w, std::uint32_t slot) {
    LatentCanvas x(h, w, 4);
    fill_gaussian({17, NoisePurpose::initial_latent, 0, slot}, x.data);
    return x;
}

}  // namespace

TEST_CASE("analytic backend inverts the forward process") {
    const NoiseSchedule s;
    AnalyticDenoiser den(s);
    const auto cond = color_conditioning(4, 0.3, 0.6, 0.1, {8, 8});
    den.register_conditioning(cond);
    const auto eps = noise(8, 8, 1);
    for (int t : {1, 100, 499, 999}) {
        const auto xt = add_noise(*cond.target, eps, t, s);
        DenoiseRequest req{{{xt, t, 4}}};
        const auto got = den.predict_noise(req);
        for (std::size_t k = 0; k < eps.data.size(); ++k) REQUIRE(got[0].data[k] == doctest::Approx(eps.data[k]).epsilon(1e-5));
    }
}

TEST_CASE("analytic backend: x0 estimate equals target for any latent") {
    const NoiseSchedule s;
    AnalyticDenoiser den(s);
    const auto cond = color_conditioning(2, 0.9, 0.2, 0.4, {8, 8});
    den.register_conditioning(cond);
    for (int t : {10, 300, 999}) {
        const auto xt = noise(8, 8, static_cast<std::uint32_t>(t));
        DenoiseRequest req{{{xt, t, 2}}};
        const auto x0 = estimate_x0(xt, den.predict_noise(req)[0], t, s);
        for (std::size_t k = 0; k < x0.data.size(); ++k) REQUIRE(x0.data[k] == doctest::Approx(cond.target->data[k]).epsilon(1e-5));
    }
}

TEST_CASE("batched heterogeneous timesteps equal singleton calls") {
    const NoiseSchedule s;
    AnalyticDenoiser den(s);
    den.register_conditioning(color_conditioning(1, 0.1, 0.2, 0.3, {8, 8}));
    den.register_conditioning(color_conditioning(2, 0.7, 0.8, 0.9, {8, 8}));
    const auto a = noise(8, 8, 5), b = noise(8, 8, 6);
    DenoiseRequest batch{{{a, 999, 1}, {b, 499, 2}}};
    const auto both = den.predict_noise(batch);
    DenoiseRequest ra{{{a, 999, 1}}}, rb{{{b, 499, 2}}};
    CHECK(both[0] == den.predict_noise(ra)[0]);
    CHECK(both[1] == den.predict_noise(rb)[0]);
}

TEST_CASE("analytic backend errors") {
    const NoiseSchedule s;
    AnalyticDenoiser den(s);
    DenoiseRequest req{{{noise(4, 4, 0), 10, 77}}};
    CHECK_THROWS_AS(den.predict_noise(req), ConditioningError);
    Conditioning bare;
    bare.id = 3;
    CHECK_THROWS_AS(den.register_conditioning(bare), ConditioningError);
    den.register_conditioning(color_conditioning(1, 0.1, 0.2, 0.3, {4, 4}));
    DenoiseRequest mixed{{{noise(4, 4, 0), 10, 1}, {noise(4, 5, 0), 10, 1}}};
    CHECK_THROWS_AS(den.predict_noise(mixed), ShapeError);
}

TEST_CASE("mix_conditioning") {
    const auto fg = color_conditioning(1, 0.0, 0.0, 0.0, {4, 4});
    const auto bg = color_conditioning(2, 1.0, 1.0, 1.0, {4, 4});
    CHECK(mix_conditioning(fg, bg, 1.0) == fg);
    const auto zero = mix_conditioning(fg, bg, 0.0);
    CHECK(zero.vector == bg.vector);
    CHECK(*zero.target == *bg.target);
    const auto half = mix_conditioning(fg, bg, 0.5);
    for (float v : half.target->data) CHECK(v == doctest::Approx(0.5));
    for (float v : half.vector) CHECK(v == doctest::Approx(0.5));

    Conditioning short_vec = fg;
    short_vec.vector.pop_back();
    CHECK_THROWS_AS(mix_conditioning(short_vec, bg, 0.5), ConditioningError);
    CHECK_THROWS_AS(mix_conditioning(fg, bg, 1.5), ParameterError);
}

TEST_CASE("latency simulator charges per call, not per element") {
    const NoiseSchedule s;
    auto inner = std::make_shared<AnalyticDenoiser>(s);
    inner->register_conditioning(color_conditioning(1, 0.1, 0.2, 0.3, {8, 8}));
    LatencySimulator sim(inner, std::chrono::milliseconds(30));
    DenoiseRequest one{{{noise(8, 8, 1), 999, 1}}};
    DenoiseRequest many;
    for (int k = 0; k < 10; ++k) many.items.push_back({noise(8, 8, static_cast<std::uint32_t>(k)), 999, 1});

    auto t0 = std::chrono::steady_clock::now();
    sim.predict_noise(one);
    auto t1 = std::chrono::steady_clock::now();
    sim.predict_noise(many);
    auto t2 = std::chrono::steady_clock::now();
    CHECK(t1 - t0 >= std::chrono::milliseconds(30));
    CHECK(t2 - t1 >= std::chrono::milliseconds(30));
    CHECK(t2 - t1 < std::chrono::milliseconds(60));
    CHECK(sim.call_count() == 2);
}
