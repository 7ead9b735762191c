#include "doctest.h"

#include <cmath>
#include <set>

#include "helpers.hpp"
#include "oracle.hpp"
#include "regiondiff/engine.hpp"
#include "regiondiff/rng.hpp"

using namespace regiondiff;
using namespace testing_support;

namespace {

struct Fixture {
    NoiseSchedule schedule;
    std::shared_ptr<AnalyticDenoiser> denoiser;
    std::shared_ptr<const Codec> codec;

    explicit Fixture(SamplerMode mode = SamplerMode::lcm)
        : schedule(NoiseSchedule().with_mode(mode)),
          denoiser(std::make_shared<AnalyticDenoiser>(schedule)),
          codec(make_codec(CodecKind::standard, false)) {}

    GenerationConfig config(int n, Size2 tile = {64, 64}, Size2 stride = {32, 32}, std::uint64_t seed = 7) const {
        auto cfg = default_config(make_timesteps(schedule, n));
        cfg.tile = tile;
        cfg.stride = stride;
        cfg.seed = seed;
        return cfg;
    }
};

oracle::Brush to_oracle(const SemanticBrush& b) {
    oracle::Brush o;
    o.background = b.is_background;
    o.mask.assign(b.raw_mask.data.begin(), b.raw_mask.data.end());
    for (int ch = 0; ch < 4; ++ch) o.target[static_cast<std::size_t>(ch)] = b.conditioning.vector[static_cast<std::size_t>(ch)];
    o.alpha = b.alpha;
    o.sigma = b.blur_sigma;
    o.strength = b.strength;
    return o;
}

std::vector<oracle::Brush> to_oracle(const std::vector<SemanticBrush>& p) {
    std::vector<oracle::Brush> out;
    for (const auto& b : p) out.push_back(to_oracle(b));
    return out;
}

double channel_value(const LatentCanvas& x, int r, int c, int ch) { return x.at(r, c, ch); }

}  // namespace

TEST_CASE("tiling covers the canvas") {
    SUBCASE("canvas equal to tile gives one tile") {
        const auto t = make_tiles({64, 64}, {64, 64}, {32, 32});
        REQUIRE(t.size() == 1);
        CHECK(t.tiles[0] == TileRect{0, 0, 64, 64});
    }
    SUBCASE("panorama strip") {
        const auto t = make_tiles({64, 576}, {64, 64}, {32, 32});
        CHECK(t.size() == 17);
        CHECK(t.tiles.back().right() == 576);
    }
    SUBCASE("uneven sizes snap to the edge") {
        const auto t = make_tiles({70, 100}, {64, 64}, {32, 32});
        std::vector<int> cover(70 * 100, 0);
        for (const auto& r : t.tiles) {
            CHECK(r.height == 64);
            CHECK(r.width == 64);
            for (int y = r.top; y < r.bottom(); ++y)
                for (int x = r.left; x < r.right(); ++x) cover[static_cast<std::size_t>(y) * 100 + x]++;
        }
        for (int c : cover) REQUIRE(c >= 1);
    }
    SUBCASE("small canvas collapses the tile") {
        const auto t = make_tiles({16, 24}, {64, 64}, {32, 32});
        REQUIRE(t.size() == 1);
        CHECK(t.tiles[0] == TileRect{0, 0, 16, 24});
    }
    CHECK_THROWS_AS(make_tiles({64, 64}, {64, 64}, {0, 32}), ParameterError);
}

TEST_CASE("aggregation examples") {
    const TileRect r{0, 0, 2, 2};
    SUBCASE("single full-weight tile is the identity") {
        Aggregator agg(2, 2, 1);
        LatentCanvas x(2, 2, 1);
        x.data = {0.1f, 0.2f, 0.3f, 0.4f};
        agg.add(r, x, Mask(2, 2, 1.0f));
        CHECK(agg.normalize() == x);
    }
    SUBCASE("equal weights average") {
        Aggregator agg(2, 2, 1);
        agg.add(r, LatentCanvas(2, 2, 1, 0.0f), Mask(2, 2, 1.0f));
        agg.add(r, LatentCanvas(2, 2, 1, 1.0f), Mask(2, 2, 1.0f));
        for (float v : agg.normalize().data) CHECK(v == doctest::Approx(0.5));
    }
    SUBCASE("weights 3 and 1") {
        Aggregator agg(2, 2, 1);
        agg.add(r, LatentCanvas(2, 2, 1, 0.0f), Mask(2, 2, 1.0f));
        agg.add(r, LatentCanvas(2, 2, 1, 4.0f / 3.0f), Mask(2, 2, 3.0f));
        for (float v : agg.normalize().data) CHECK(v == doctest::Approx(1.0));
    }
    SUBCASE("uncovered pixel") {
        Aggregator agg(2, 2, 1);
        Mask w(2, 2, 1.0f);
        w.at(1, 1) = 0.0f;
        agg.add(r, LatentCanvas(2, 2, 1, 1.0f), w);
        CHECK_THROWS_AS(agg.normalize(), AggregationError);
    }
}

TEST_CASE("bootstrap_mix") {
    const NoiseSchedule s;
    const LatentCanvas tile(4, 4, 4, 0.25f);
    const LatentCanvas white(4, 4, 4, 1.0f);
    LatentCanvas eps(4, 4, 4);
    fill_gaussian({3, NoisePurpose::bootstrap_noise, 1, 0}, eps.data);
    CHECK(bootstrap_mix(tile, Mask(4, 4, 1.0f), white, eps, 999, s) == tile);
    const auto noised = add_noise(white, eps, 999, s);
    CHECK(bootstrap_mix(tile, Mask(4, 4, 0.0f), white, eps, 999, s) == noised);
    Mask half(4, 4, 0.0f);
    for (int c = 0; c < 2; ++c)
        for (int r = 0; r < 4; ++r) half.at(r, c) = 1.0f;
    const auto mixed = bootstrap_mix(tile, half, white, eps, 999, s);
    CHECK(mixed.at(1, 0, 2) == tile.at(1, 0, 2));
    CHECK(mixed.at(1, 3, 2) == noised.at(1, 3, 2));
    CHECK_THROWS_AS(bootstrap_mix(tile, Mask(3, 4, 1.0f), white, eps, 999, s), ShapeError);
}

TEST_CASE("background-only DDIM recovers the target") {
    Fixture f(SamplerMode::ddim);
    const Size2 canvas{64, 64};
    const std::vector<SemanticBrush> palette{background_brush(canvas, 0.2, 0.5, 0.8)};
    auto cfg = f.config(5);
    const auto res = generate(palette, canvas, cfg, f.schedule, f.denoiser, f.codec);
    const auto g = color_latent(0.2, 0.5, 0.8);
    for (int r = 0; r < 64; ++r)
        for (int c = 0; c < 64; ++c)
            for (int ch = 0; ch < 4; ++ch)
                REQUIRE(channel_value(res.latent, r, c, ch) == doctest::Approx(g[static_cast<std::size_t>(ch)]).epsilon(1e-5));
}

TEST_CASE("disjoint halves produce their own colors") {
    for (auto mode : {SamplerMode::ddim, SamplerMode::lcm}) {
        Fixture f(mode);
        const Size2 canvas{64, 64};
        const std::vector<SemanticBrush> palette{background_brush(canvas, 1, 1, 1),
                                                 rect_brush(1, canvas, 0, 0, 64, 32, 1, 0, 0),
                                                 rect_brush(2, canvas, 0, 32, 64, 64, 0, 0, 1)};
        const auto res = generate(palette, canvas, f.config(4), f.schedule, f.denoiser, f.codec);
        const auto red = color_latent(1, 0, 0), blue = color_latent(0, 0, 1);
        for (int r = 0; r < 64; ++r)
            for (int c = 0; c < 64; ++c)
                for (int ch = 0; ch < 4; ++ch) {
                    const double want = (c < 32 ? red : blue)[static_cast<std::size_t>(ch)];
                    REQUIRE(std::abs(channel_value(res.latent, r, c, ch) - want) < 1e-5);
                }
    }
}

TEST_CASE("engine matches the scalar oracle on random scenes") {
    std::uint64_t scene = 0;
    for (auto mode : {SamplerMode::lcm, SamplerMode::ddim}) {
        for (int n : {1, 4, 5, 8}) {
            Fixture f(mode);
            const Size2 canvas{40, 72};
            std::vector<float> rnd(32);
            fill_gaussian({1000 + scene, NoisePurpose::bootstrap_color, 0, 0}, rnd);
            auto u = [&](int k) { return 0.5 + 0.5 * std::tanh(rnd[static_cast<std::size_t>(k)]); };
            std::vector<SemanticBrush> palette{background_brush(canvas, u(0), u(1), u(2), {32, 32})};
            auto a = rect_brush(1, canvas, 4, 6, 30, 40, u(3), u(4), u(5), {32, 32});
            a.blur_sigma = 2.0;
            a.alpha = 0.9 + 0.1 * u(6);
            a.strength = 0.5 + 0.5 * u(7);
            auto b = rect_brush(2, canvas, 12, 30, 40, 72, u(8), u(9), u(10), {32, 32});
            b.blur_sigma = 1.0 + u(11);
            palette.push_back(a);
            palette.push_back(b);
            auto cfg = f.config(n, {32, 32}, {16, 16}, 11 + scene);
            const auto res = generate(palette, canvas, cfg, f.schedule, f.denoiser, f.codec);
            const auto want = oracle::stabilized_latent(to_oracle(palette), canvas.height, canvas.width, n,
                                                        mode == SamplerMode::lcm, cfg.seed);
            CAPTURE(n);
            CAPTURE(static_cast<int>(mode));
            CHECK(max_abs_diff(res.latent.data, want) < 1e-4);
            ++scene;
        }
    }
}

TEST_CASE("tiling is transparent for constant targets") {
    Fixture f;
    const Size2 canvas{64, 576};
    const std::vector<SemanticBrush> palette{background_brush(canvas, 0.3, 0.6, 0.9),
                                             rect_brush(1, canvas, 10, 100, 50, 300, 0.9, 0.3, 0.1),
                                             rect_brush(2, canvas, 0, 320, 64, 500, 0.1, 0.8, 0.2)};
    auto tiled = f.config(5);
    auto whole = f.config(5, {64, 576}, {64, 576});
    const auto a = generate(palette, canvas, tiled, f.schedule, f.denoiser, f.codec);
    const auto b = generate(palette, canvas, whole, f.schedule, f.denoiser, f.codec);
    CHECK(a.tile_count == 17);
    CHECK(b.tile_count == 1);
    double m = 0.0;
    for (std::size_t k = 0; k < a.latent.data.size(); ++k)
        m = std::max(m, static_cast<double>(std::abs(a.latent.data[k] - b.latent.data[k])));
    CHECK(m < 1e-5);
}

TEST_CASE("generation is deterministic and seed-sensitive") {
    Fixture f;
    const Size2 canvas{64, 96};
    const std::vector<SemanticBrush> palette{background_brush(canvas, 1, 1, 1),
                                             rect_brush(1, canvas, 8, 8, 40, 60, 0.8, 0.1, 0.1)};
    const auto a = generate(palette, canvas, f.config(5), f.schedule, f.denoiser, f.codec);
    const auto b = generate(palette, canvas, f.config(5), f.schedule, f.denoiser, f.codec);
    CHECK(hash_latent(a.latent) == hash_latent(b.latent));
    CHECK(hash_image(a.image) == hash_image(b.image));
    auto other = f.config(5);
    other.seed = 8;
    CHECK(hash_latent(generate(palette, canvas, other, f.schedule, f.denoiser, f.codec).latent) !=
          hash_latent(a.latent));
}

TEST_CASE("every pixel keeps total weight >= 1 and masks nest") {
    Fixture f;
    const Size2 canvas{64, 96};
    auto soft = rect_brush(1, canvas, 8, 8, 40, 60, 0.8, 0.1, 0.1);
    soft.blur_sigma = 3.0;
    soft.alpha = 0.98;
    const std::vector<SemanticBrush> palette{background_brush(canvas, 1, 1, 1), soft};
    Engine engine(f.schedule, f.config(5), f.denoiser, f.codec);
    const auto prepared = engine.prepare(palette, canvas);
    const auto& fg = prepared->brushes[1].weights;
    for (int i = 2; i <= 5; ++i)
        for (std::size_t k = 0; k < fg.at_step(i).data.size(); ++k) REQUIRE(fg.at_step(i).data[k] <= fg.at_step(i - 1).data[k]);
    std::vector<double> mins;
    engine.run(prepared, 3, [&](const StepTrace& t) { mins.push_back(t.min_weight); });
    REQUIRE(mins.size() == 5);
    for (double m : mins) CHECK(m >= 1.0);
}

TEST_CASE("centering roll is undone after the step") {
    // With a constant target every pixel evolves independently, so the output
    // must not depend on whether the tile is rolled.
    Fixture f(SamplerMode::ddim);
    const Size2 canvas{64, 64};
    const std::vector<SemanticBrush> palette{background_brush(canvas, 1, 1, 1),
                                             rect_brush(1, canvas, 0, 0, 20, 20, 0.9, 0.2, 0.4)};
    Engine engine(f.schedule, f.config(5), f.denoiser, f.codec);
    const auto prepared = engine.prepare(palette, canvas);
    auto state = engine.start(prepared, 5);
    const auto pending = engine.collect(state);
    bool rolled = false;
    for (const auto& e : pending.entries) rolled = rolled || e.roll.row != 0 || e.roll.col != 0;
    CHECK(rolled);
    const auto want = oracle::stabilized_latent(to_oracle(palette), 64, 64, 5, false, 5);
    const auto res = engine.run(prepared, 5);
    CHECK(max_abs_diff(res.latent.data, want) < 1e-4);
}

TEST_CASE("baseline equals stabilized for a single prompt under DDIM") {
    Fixture f(SamplerMode::ddim);
    const Size2 canvas{64, 96};
    const std::vector<SemanticBrush> palette{background_brush(canvas, 0.4, 0.5, 0.6)};
    const auto cfg = f.config(5);
    const auto a = generate(palette, canvas, cfg, f.schedule, f.denoiser, f.codec);
    const auto b = generate_baseline(palette, canvas, cfg, f.schedule, f.denoiser, f.codec);
    CHECK(a.latent == b.latent);
}

TEST_CASE("baseline averages per-tile noise, stabilized injects once") {
    Fixture f(SamplerMode::lcm);
    const Size2 canvas{64, 96};
    const std::vector<SemanticBrush> palette{background_brush(canvas, 0.5, 0.5, 0.5)};
    const auto cfg = f.config(5);
    const auto g = color_latent(0.5, 0.5, 0.5);
    const int n = 5;
    const double eta = f.schedule.noise_level(cfg.plan.timestep(n - 1));
    const double mean_scale = std::sqrt(f.schedule.alpha_bar(cfg.plan.timestep(n - 1)));

    auto overlap_variance = [&](const LatentCanvas& x) {
        double s = 0.0, s2 = 0.0;
        int cnt = 0;
        for (int r = 0; r < 64; ++r)
            for (int c = 32; c < 64; ++c)
                for (int ch = 0; ch < 4; ++ch) {
                    const double d = x.at(r, c, ch) - mean_scale * g[static_cast<std::size_t>(ch)];
                    s += d;
                    s2 += d * d;
                    ++cnt;
                }
        return s2 / cnt - (s / cnt) * (s / cnt);
    };
    double stab = 0.0, base = 0.0;
    auto grab = [](double& out, auto&& fn) {
        return [&out, fn](const StepTrace& t) {
            if (t.step_index == 5) out = fn(*t.after);
        };
    };
    generate(palette, canvas, cfg, f.schedule, f.denoiser, f.codec, grab(stab, overlap_variance));
    generate_baseline(palette, canvas, cfg, f.schedule, f.denoiser, f.codec, grab(base, overlap_variance));
    CHECK(stab == doctest::Approx(eta * eta).epsilon(0.08));
    CHECK(base == doctest::Approx(eta * eta / 2).epsilon(0.08));
}

TEST_CASE("50-step DDIM baseline reaches the targets inside the masks") {
    Fixture f(SamplerMode::ddim);
    const Size2 canvas{64, 64};
    const std::vector<SemanticBrush> palette{background_brush(canvas, 1, 1, 1),
                                             rect_brush(1, canvas, 0, 0, 64, 32, 0.9, 0.1, 0.1),
                                             rect_brush(2, canvas, 0, 32, 64, 64, 0.1, 0.1, 0.9)};
    const auto res = generate_baseline(palette, canvas, f.config(50), f.schedule, f.denoiser, f.codec);
    const auto a = color_latent(0.9, 0.1, 0.1), b = color_latent(0.1, 0.1, 0.9);
    double m = 0.0;
    for (int r = 0; r < 64; ++r)
        for (int c = 0; c < 64; ++c)
            for (int ch = 0; ch < 4; ++ch)
                m = std::max(m, std::abs(res.latent.at(r, c, ch) - (c < 32 ? a : b)[static_cast<std::size_t>(ch)]));
    CHECK(m < 2e-2);
}

TEST_CASE("engine errors") {
    Fixture f;
    Engine engine(f.schedule, f.config(4), f.denoiser, f.codec);
    CHECK_THROWS_AS(engine.prepare({}, {64, 64}), ParameterError);
    const Size2 canvas{64, 64};
    const std::vector<SemanticBrush> two_bg{background_brush(canvas, 1, 1, 1), background_brush(canvas, 0, 0, 0)};
    CHECK_THROWS_AS(engine.prepare(two_bg, canvas), ParameterError);

    auto mismatched = f.config(4);
    mismatched.plan = make_timesteps(f.schedule.with_mode(SamplerMode::ddim), 4);
    CHECK_THROWS_AS(Engine(f.schedule, mismatched, f.denoiser, f.codec), ParameterError);

    auto bad_boot = f.config(4);
    bad_boot.centering = false;
    CHECK_THROWS_AS(Engine(f.schedule, bad_boot, f.denoiser, f.codec), ParameterError);

    const std::vector<SemanticBrush> ok{background_brush(canvas, 1, 1, 1)};
    auto state = engine.start(engine.prepare(ok, canvas), 1);
    auto pending = engine.collect(state);
    CHECK_THROWS_AS(engine.advance(state, pending, {}), BackendError);
}

TEST_CASE("conditionings are registered once per content") {
    Fixture f;
    Engine engine(f.schedule, f.config(4), f.denoiser, f.codec);
    const Size2 canvas{64, 64};
    const std::vector<SemanticBrush> palette{background_brush(canvas, 1, 1, 1),
                                             rect_brush(1, canvas, 0, 0, 32, 32, 1, 0, 0)};
    const auto a = engine.prepare(palette, canvas);
    const auto b = engine.prepare(palette, canvas);
    CHECK(a->brushes[1].conditioning == b->brushes[1].conditioning);
    CHECK((a->brushes[1].conditioning & 0x80000000u) != 0);
    CHECK(a->brushes[0].conditioning != a->brushes[1].conditioning);
}
