#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "regiondiff/engine.hpp"
#include "regiondiff/scene.hpp"

namespace regiondiff {

// ---- commands -------------------------------------------------------------

struct UpdateMask {
    BrushId brush = 0;
    Grid<std::uint8_t> mask;  // image resolution
};
struct SetAlpha {
    BrushId brush = 0;
    double value = 1.0;
};
struct SetSigma {
    BrushId brush = 0;
    double value = 0.0;
};
struct SetStrength {
    BrushId brush = 0;
    double value = 1.0;
};
struct SetSeed {
    std::uint64_t seed = 0;
};
struct Play {};
struct Pause {};
struct StepOnce {};
struct RegisterBrush {
    SceneBrush brush;  // id is assigned by the pipeline; a background brush replaces id 0
};
struct RemoveBrush {
    BrushId brush = 0;
};
struct SetBackground {
    SceneTarget target;
};

using Command = std::variant<UpdateMask, SetAlpha, SetSigma, SetStrength, SetSeed, Play, Pause, StepOnce,
                             RegisterBrush, RemoveBrush, SetBackground>;

enum class CommandKind {
    update_mask,
    set_alpha,
    set_sigma,
    set_strength,
    set_seed,
    play,
    pause,
    step_once,
    register_brush,
    remove_brush,
    set_background,
};

CommandKind kind_of(const Command& cmd);
std::string_view to_string(CommandKind kind);
// Slow commands flush the pipeline and redo conditioning registration.
bool is_slow(CommandKind kind);

struct CommandResult {
    bool ok = true;
    std::string error;
    CommandKind kind{};
    std::uint64_t applies_at_tick = 0;  // first tick that sees the change
    std::uint64_t palette_version = 0;
    std::optional<BrushId> brush;  // id assigned by RegisterBrush
};

// ---- pipeline -------------------------------------------------------------

struct Frame {
    std::uint64_t tick = 0;   // tick that finished the frame
    std::uint64_t index = 0;  // frames emitted since the seed base was set
    std::uint64_t palette_version = 0;
    std::uint64_t seed = 0;
    RgbImage image;
    LatentCanvas latent;
};

struct TickOutcome {
    bool ran = false;  // false when paused
    std::optional<Frame> frame;
    std::optional<std::string> error;  // backend failure; the tick was rolled back
};

// Ring of n staggered canvases advanced together with one denoiser call per
// tick. Not thread-safe; StreamDriver serializes access.
//
// Frame k after the seed base s was set is rendered with seed s + k, so the
// frame stream equals sequential generation with seeds s, s+1, ...
class StreamPipeline {
public:
    StreamPipeline(Scene scene, std::shared_ptr<Denoiser> denoiser, std::shared_ptr<const Codec> codec);

    CommandResult apply(const Command& cmd);
    TickOutcome tick();
    // Discards all in-flight slots and re-prepares the palette.
    void flush();
    // Full reinitialization from a new scene (seed base, engine settings).
    void replace_scene(Scene scene);

    bool playing() const { return playing_; }
    // True while ticks should run: playing, or a StepOnce still owes a frame.
    bool active() const { return playing_ || step_frames_ > 0; }
    std::uint64_t tick_count() const { return tick_; }
    std::uint64_t palette_version() const { return version_; }
    int depth() const { return engine_->config().plan.size(); }
    std::size_t in_flight() const { return slots_.size(); }
    const Scene& scene() const { return scene_; }
    const Engine& engine() const { return *engine_; }

private:
    struct Slot {
        CanvasState state;
        std::uint64_t index = 0;
        std::uint64_t version = 0;
    };

    void rebuild_engine();
    void reprepare();
    void check_brush(BrushId id, bool allow_background) const;

    Scene scene_;
    std::shared_ptr<Denoiser> denoiser_;
    std::shared_ptr<const Codec> codec_;
    std::unique_ptr<Engine> engine_;
    std::shared_ptr<const PreparedPalette> palette_;
    std::deque<Slot> slots_;  // oldest first
    bool playing_ = false;
    int step_frames_ = 0;  // frames still owed to StepOnce
    std::uint64_t tick_ = 0;
    std::uint64_t version_ = 0;
    std::uint64_t seed_base_ = 0;
    std::uint64_t emitted_ = 0;  // frames since the seed base was set
    std::uint64_t births_ = 0;   // slots injected since the seed base was set
};

// ---- broadcast ------------------------------------------------------------

// Frame with a lazily encoded PNG shared by every subscriber.
class FramePacket {
public:
    explicit FramePacket(Frame frame) : frame_(std::move(frame)) {}
    const Frame& frame() const { return frame_; }
    const Bytes& png() const;

private:
    Frame frame_;
    mutable std::once_flag once_;
    mutable Bytes png_;
};

struct StreamEvent {
    std::shared_ptr<const FramePacket> frame;  // set for frames
    std::string error;                         // set for backend errors
    std::uint64_t tick = 0;
};

// Fan-out of stream events. Callbacks run on the publishing thread and must
// not block; a slow subscriber should queue and drop on its side.
class Broadcaster {
public:
    using Callback = std::function<void(const StreamEvent&)>;
    using Token = std::uint64_t;

    Token subscribe(Callback cb);
    void unsubscribe(Token token);
    void publish(const StreamEvent& ev);
    std::size_t subscriber_count() const;

private:
    mutable std::mutex mu_;
    Token next_ = 1;
    std::vector<std::pair<Token, std::shared_ptr<Callback>>> subs_;
};

// Bounded queue for blocking consumers; the oldest event is dropped when
// full, so a slow reader never stalls the producer.
class EventQueue {
public:
    explicit EventQueue(std::size_t capacity = 8) : capacity_(capacity) {}
    void push(const StreamEvent& ev);
    std::optional<StreamEvent> pop(std::chrono::milliseconds timeout);
    std::uint64_t dropped() const;

private:
    std::size_t capacity_;
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::deque<StreamEvent> q_;
    std::uint64_t dropped_ = 0;
};

// ---- driver ---------------------------------------------------------------

// Owns a pipeline on a dedicated thread. Commands are the only way in; they
// are applied between ticks in arrival order.
class StreamDriver {
public:
    using Done = std::function<void(const CommandResult&)>;
    using Control = std::function<void(StreamPipeline&)>;

    StreamDriver(std::unique_ptr<StreamPipeline> pipeline, std::chrono::milliseconds min_tick_period = {});
    ~StreamDriver();
    StreamDriver(const StreamDriver&) = delete;
    StreamDriver& operator=(const StreamDriver&) = delete;

    void enqueue(Command cmd, Done done = {});
    // Runs `fn` on the driver thread between ticks (scene snapshots/loads).
    void control(Control fn);
    Broadcaster& events() { return events_; }
    void stop();

private:
    struct Item {
        std::optional<Command> cmd;
        Done done;
        Control control;
    };
    void loop();

    std::unique_ptr<StreamPipeline> pipeline_;
    std::chrono::milliseconds min_period_;
    Broadcaster events_;
    std::mutex mu_;
    std::condition_variable cv_;
    std::deque<Item> queue_;
    bool stopping_ = false;
    std::thread thread_;
};

}  // namespace regiondiff
