#include "doctest.h"

#include <future>

#include "stream_support.hpp"

using namespace regiondiff;
using namespace testing_support;

namespace {

std::unique_ptr<StreamPipeline> make_pipeline(const Scene& scene, std::shared_ptr<Denoiser> den = nullptr) {
    if (!den) den = std::make_shared<AnalyticDenoiser>(scene_schedule(scene));
    return std::make_unique<StreamPipeline>(scene, den, make_codec(CodecKind::standard, false));
}

// Runs ticks until a frame arrives; returns the number of ticks used.
int ticks_to_frame(StreamPipeline& p, int limit = 100) {
    for (int k = 1; k <= limit; ++k) {
        if (p.tick().frame) return k;
    }
    return -1;
}

}  // namespace

TEST_CASE("command classes") {
    CHECK(is_slow(CommandKind::register_brush));
    CHECK(is_slow(CommandKind::set_background));
    for (auto k : {CommandKind::update_mask, CommandKind::set_alpha, CommandKind::set_sigma, CommandKind::set_strength,
                   CommandKind::set_seed, CommandKind::play, CommandKind::pause, CommandKind::step_once,
                   CommandKind::remove_brush}) {
        CHECK_FALSE(is_slow(k));
    }
    CHECK(kind_of(Command{SetAlpha{}}) == CommandKind::set_alpha);
    CHECK(to_string(CommandKind::update_mask) == "update_mask");
}

TEST_CASE("pipeline fills in n ticks then emits one frame per tick") {
    for (int n : {1, 4, 5}) {
        auto p = make_pipeline(small_scene(n));
        p->apply(Play{});
        for (int k = 1; k < n; ++k) CHECK_FALSE(p->tick().frame);
        auto first = p->tick();
        REQUIRE(first.frame);
        CHECK(first.frame->tick == static_cast<std::uint64_t>(n));
        CHECK(first.frame->index == 0);
        CHECK(p->in_flight() == static_cast<std::size_t>(n - 1));
        for (int k = 1; k <= 6; ++k) {
            auto t = p->tick();
            REQUIRE(t.frame);
            CHECK(t.frame->index == static_cast<std::uint64_t>(k));
            CHECK(p->in_flight() == static_cast<std::size_t>(n - 1));
        }
    }
}

TEST_CASE("steady state slots hold distinct step indices") {
    auto p = make_pipeline(small_scene(5));
    p->apply(Play{});
    for (int k = 0; k < 7; ++k) p->tick();
    // After a tick the survivors sit at steps 1..n-1; injection adds step n.
    CHECK(p->in_flight() == 4);
}

TEST_CASE("streamed frames equal sequential generation") {
    for (auto mode : {SamplerMode::lcm, SamplerMode::ddim}) {
        const Scene scene = small_scene(4, mode, 77);
        auto p = make_pipeline(scene);
        p->apply(Play{});
        std::vector<std::uint64_t> got;
        while (got.size() < 10) {
            if (auto t = p->tick(); t.frame) {
                CHECK(t.frame->seed == 77 + got.size());
                got.push_back(hash_image(t.frame->image));
            }
        }
        CHECK(got == sequential_hashes(scene, 77, 10));
    }
}

TEST_CASE("pause, play and step once") {
    auto p = make_pipeline(small_scene(4));
    CHECK_FALSE(p->tick().ran);  // starts paused
    p->apply(StepOnce{});
    CHECK(ticks_to_frame(*p) == 4);
    CHECK_FALSE(p->tick().ran);  // the step delivered its frame
    p->apply(StepOnce{});
    CHECK(ticks_to_frame(*p) == 1);
    CHECK_FALSE(p->tick().ran);
    p->apply(Play{});
    CHECK(p->tick().frame);
    p->apply(Pause{});
    const auto before = p->tick_count();
    for (int k = 0; k < 3; ++k) CHECK_FALSE(p->tick().ran);
    CHECK(p->tick_count() == before);
}

TEST_CASE("slow commands flush; next frame exactly n ticks later") {
    auto p = make_pipeline(small_scene(5));
    p->apply(Play{});
    for (int k = 0; k < 7; ++k) p->tick();
    SceneBrush extra;
    extra.name = "extra";
    extra.mask = Grid<std::uint8_t>(128, 128, 0);
    for (int r = 0; r < 32; ++r)
        for (int c = 0; c < 32; ++c) extra.mask.at(r, c) = 255;
    extra.target.color = std::array<double, 3>{0.0, 1.0, 0.0};
    const auto res = p->apply(RegisterBrush{extra});
    REQUIRE(res.ok);
    CHECK(res.brush == 3u);
    CHECK(p->in_flight() == 0);
    const auto version = res.palette_version;
    for (int k = 1; k < 5; ++k) CHECK_FALSE(p->tick().frame);
    auto t = p->tick();
    REQUIRE(t.frame);
    CHECK(t.frame->palette_version == version);

    const auto bg = p->apply(SetBackground{SceneTarget{std::array<double, 3>{0.0, 0.0, 0.0}, {}, {}}});
    REQUIRE(bg.ok);
    CHECK(bg.palette_version > version);
    CHECK(ticks_to_frame(*p) == 5);
}

TEST_CASE("flush is idempotent and then n ticks give one frame") {
    auto p = make_pipeline(small_scene(4));
    p->apply(Play{});
    for (int k = 0; k < 6; ++k) p->tick();
    p->flush();
    p->flush();
    int frames = 0;
    for (int k = 0; k < 4; ++k) frames += p->tick().frame ? 1 : 0;
    CHECK(frames == 1);
}

TEST_CASE("flush keeps frame seeds contiguous") {
    const Scene scene = small_scene(4, SamplerMode::lcm, 5);
    auto p = make_pipeline(scene);
    p->apply(Play{});
    std::vector<std::uint64_t> seeds;
    for (int k = 0; k < 6; ++k)
        if (auto t = p->tick(); t.frame) seeds.push_back(t.frame->seed);
    p->flush();
    for (int k = 0; k < 5; ++k)
        if (auto t = p->tick(); t.frame) seeds.push_back(t.frame->seed);
    CHECK(seeds == std::vector<std::uint64_t>{5, 6, 7, 8, 9});
}

TEST_CASE("fast commands apply to slots born after them") {
    auto p = make_pipeline(small_scene(4));
    p->apply(Play{});
    for (int k = 0; k < 5; ++k) p->tick();
    const auto v0 = p->palette_version();
    Grid<std::uint8_t> m(128, 128, 0);
    for (int r = 0; r < 128; ++r)
        for (int c = 0; c < 32; ++c) m.at(r, c) = 255;
    const auto res = p->apply(UpdateMask{1, m});
    REQUIRE(res.ok);
    CHECK(res.applies_at_tick == p->tick_count() + 1);
    CHECK(res.palette_version == v0 + 1);
    CHECK(p->in_flight() == 3);  // no flush
    // The 3 in-flight frames keep the old palette; the next one adopts the edit.
    std::vector<std::uint64_t> versions;
    for (int k = 0; k < 4; ++k) versions.push_back(p->tick().frame->palette_version);
    CHECK(versions == std::vector<std::uint64_t>{v0, v0, v0, v0 + 1});
    // The first slot born after the edit was injected on the very next tick.
    CHECK(p->scene().find(1)->mask == m);
}

TEST_CASE("edited palette frames match sequential generation of the edited scene") {
    Scene scene = small_scene(4, SamplerMode::lcm, 20);
    auto p = make_pipeline(scene);
    p->apply(Play{});
    p->apply(SetAlpha{1, 0.98});
    p->apply(SetSigma{2, 3.0});
    p->apply(SetStrength{1, 0.5});
    scene.find(1)->alpha = 0.98;
    scene.find(2)->sigma = 3.0;
    scene.find(1)->strength = 0.5;
    const int first = ticks_to_frame(*p);
    CHECK(first == 4);
    std::vector<std::uint64_t> got;
    p->flush();
    for (int k = 0; k < 4; ++k)
        if (auto t = p->tick(); t.frame) got.push_back(hash_image(t.frame->image));
    CHECK(got == sequential_hashes(scene, 21, 1));
}

TEST_CASE("set seed restarts numbering for new slots") {
    auto p = make_pipeline(small_scene(4, SamplerMode::lcm, 0));
    p->apply(Play{});
    p->apply(SetSeed{500});
    std::vector<std::uint64_t> seeds;
    for (int k = 0; k < 6; ++k)
        if (auto t = p->tick(); t.frame) seeds.push_back(t.frame->seed);
    CHECK(seeds == std::vector<std::uint64_t>{500, 501, 502});
}

TEST_CASE("malformed commands are rejected and the stream continues") {
    auto p = make_pipeline(small_scene(4));
    p->apply(Play{});
    p->tick();
    const auto v = p->palette_version();
    CHECK_FALSE(p->apply(UpdateMask{1, Grid<std::uint8_t>(64, 64, 0)}).ok);
    CHECK_FALSE(p->apply(UpdateMask{9, Grid<std::uint8_t>(128, 128, 0)}).ok);
    CHECK_FALSE(p->apply(SetAlpha{1, 1.5}).ok);
    CHECK_FALSE(p->apply(SetSigma{1, -1.0}).ok);
    CHECK_FALSE(p->apply(SetStrength{2, 2.0}).ok);
    CHECK_FALSE(p->apply(RemoveBrush{0}).ok);
    CHECK_FALSE(p->apply(SetAlpha{0, 0.5}).ok);
    SceneBrush no_target;
    no_target.mask = Grid<std::uint8_t>(128, 128, 255);
    CHECK_FALSE(p->apply(RegisterBrush{no_target}).ok);
    CHECK(p->palette_version() == v);
    CHECK(p->in_flight() == 1);  // failed slow command did not flush
    CHECK(ticks_to_frame(*p) == 3);
}

TEST_CASE("id-only conditionings are checked by the backend") {
    auto p = make_pipeline(small_scene(4));
    p->apply(Play{});
    SceneBrush id_only;
    id_only.mask = Grid<std::uint8_t>(128, 128, 255);
    id_only.target.conditioning = 999;  // unknown to the analytic backend
    const auto r = p->apply(RegisterBrush{id_only});
    REQUIRE(r.ok);
    auto t = p->tick();
    REQUIRE(t.error);
    CHECK(t.error->find("999") != std::string::npos);
    CHECK(p->in_flight() == 0);
    CHECK(p->apply(RemoveBrush{*r.brush}).ok);
    CHECK(ticks_to_frame(*p) == 4);
}

TEST_CASE("remove brush is a fast palette edit") {
    auto p = make_pipeline(small_scene(4));
    const auto res = p->apply(RemoveBrush{2});
    REQUIRE(res.ok);
    CHECK(p->scene().find(2) == nullptr);
    CHECK(p->scene().brushes.size() == 2);
}

TEST_CASE("backend errors skip the frame and keep the pipeline state") {
    const Scene scene = small_scene(4, SamplerMode::lcm, 9);
    auto inner = std::make_shared<AnalyticDenoiser>(scene_schedule(scene));
    auto flaky = std::make_shared<FlakyDenoiser>(inner, std::set<int>{2, 6, 7});
    auto p = make_pipeline(scene, flaky);
    p->apply(Play{});
    std::vector<std::uint64_t> got;
    int errors = 0;
    for (int k = 0; k < 20 && got.size() < 6; ++k) {
        auto t = p->tick();
        if (t.error) {
            ++errors;
            CHECK(t.error->find("injected") != std::string::npos);
        }
        if (t.frame) got.push_back(hash_image(t.frame->image));
    }
    CHECK(errors == 3);
    CHECK(got == sequential_hashes(scene, 9, 6));
}

TEST_CASE("event queue drops the oldest when full") {
    EventQueue q(2);
    for (std::uint64_t k = 1; k <= 4; ++k) q.push({nullptr, {}, k});
    CHECK(q.dropped() == 2);
    CHECK(q.pop(std::chrono::milliseconds(10))->tick == 3);
    CHECK(q.pop(std::chrono::milliseconds(10))->tick == 4);
    CHECK_FALSE(q.pop(std::chrono::milliseconds(10)));
}

TEST_CASE("driver applies commands between ticks and broadcasts frames") {
    auto driver = std::make_unique<StreamDriver>(make_pipeline(small_scene(4)));
    EventQueue a(64), b(64);
    auto ta = driver->events().subscribe([&](const StreamEvent& e) { a.push(e); });
    driver->events().subscribe([&](const StreamEvent& e) { b.push(e); });
    CHECK(driver->events().subscriber_count() == 2);

    std::promise<CommandResult> played;
    driver->enqueue(Play{}, [&](const CommandResult& r) { played.set_value(r); });
    const auto pr = played.get_future().get();
    CHECK(pr.ok);
    CHECK(pr.applies_at_tick == 1);

    std::vector<std::uint64_t> ia, ib;
    while (ia.size() < 5) {
        auto e = a.pop(std::chrono::seconds(5));
        REQUIRE(e);
        REQUIRE(e->frame);
        ia.push_back(e->frame->frame().index);
    }
    while (ib.size() < 5) {
        auto e = b.pop(std::chrono::seconds(5));
        REQUIRE(e);
        ib.push_back(e->frame->frame().index);
    }
    CHECK(ia == ib);
    CHECK(ia.front() == 0);
    // PNG is encoded once and decodes to the frame size.
    auto e = a.pop(std::chrono::seconds(5));
    REQUIRE(e);
    const auto img = decode_png_rgb(e->frame->png());
    CHECK(img.height == 128);

    std::promise<CommandResult> bad;
    driver->enqueue(SetAlpha{7, 0.5}, [&](const CommandResult& r) { bad.set_value(r); });
    CHECK_FALSE(bad.get_future().get().ok);

    std::promise<std::string> snap;
    driver->control([&](StreamPipeline& p) { snap.set_value(dump_scene(p.scene())); });
    CHECK(snap.get_future().get() == dump_scene(small_scene(4)));

    driver->events().unsubscribe(ta);
    CHECK(driver->events().subscriber_count() == 1);
    driver->stop();
}
