#include "regiondiff/stream.hpp"

#include <algorithm>

namespace regiondiff {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

}  // namespace

CommandKind kind_of(const Command& cmd) { return static_cast<CommandKind>(cmd.index()); }

std::string_view to_string(CommandKind kind) {
    switch (kind) {
        case CommandKind::update_mask: return "update_mask";
        case CommandKind::set_alpha: return "set_alpha";
        case CommandKind::set_sigma: return "set_sigma";
        case CommandKind::set_strength: return "set_strength";
        case CommandKind::set_seed: return "set_seed";
        case CommandKind::play: return "play";
        case CommandKind::pause: return "pause";
        case CommandKind::step_once: return "step_once";
        case CommandKind::register_brush: return "register_brush";
        case CommandKind::remove_brush: return "remove_brush";
        case CommandKind::set_background: return "set_background";
    }
    return "unknown";
}

bool is_slow(CommandKind kind) { return kind == CommandKind::register_brush || kind == CommandKind::set_background; }

StreamPipeline::StreamPipeline(Scene scene, std::shared_ptr<Denoiser> denoiser, std::shared_ptr<const Codec> codec)
    : scene_(std::move(scene)), denoiser_(std::move(denoiser)), codec_(std::move(codec)) {
    validate_scene(scene_);
    seed_base_ = scene_.seed;
    rebuild_engine();
    reprepare();
}

void StreamPipeline::rebuild_engine() {
    engine_ = std::make_unique<Engine>(scene_schedule(scene_), scene_config(scene_), denoiser_, codec_);
}

void StreamPipeline::reprepare() {
    palette_ = engine_->prepare(scene_palette(scene_, *codec_), scene_.latent_size(), version_ + 1);
    ++version_;
}

void StreamPipeline::check_brush(BrushId id, bool allow_background) const {
    const SceneBrush* b = scene_.find(id);
    if (!b) {
        throw CommandError("no brush with id " + std::to_string(id));
    }
    if (b->is_background && !allow_background) {
        throw CommandError("brush 0 is the background and has no mask or mask parameters");
    }
}

void StreamPipeline::flush() {
    slots_.clear();
    births_ = emitted_;
    reprepare();
}

void StreamPipeline::replace_scene(Scene scene) {
    validate_scene(scene);
    Scene old = std::move(scene_);
    scene_ = std::move(scene);
    try {
        rebuild_engine();
        slots_.clear();
        reprepare();
    } catch (...) {
        scene_ = std::move(old);
        rebuild_engine();
        throw;
    }
    seed_base_ = scene_.seed;
    emitted_ = births_ = 0;
}

CommandResult StreamPipeline::apply(const Command& cmd) {
    CommandResult res;
    res.kind = kind_of(cmd);
    try {
        // Edits go to a copy so a failing re-preparation leaves the stream untouched.
        Scene next = scene_;
        bool palette_changed = false;
        std::visit(overloaded{
                       [&](const UpdateMask& c) {
                           check_brush(c.brush, false);
                           if (c.mask.height != scene_.canvas.height || c.mask.width != scene_.canvas.width) {
                               throw CommandError("mask is " + std::to_string(c.mask.height) + "x" +
                                                  std::to_string(c.mask.width) + ", canvas is " +
                                                  std::to_string(scene_.canvas.height) + "x" +
                                                  std::to_string(scene_.canvas.width));
                           }
                           next.find(c.brush)->mask = c.mask;
                           palette_changed = true;
                       },
                       [&](const SetAlpha& c) {
                           check_brush(c.brush, false);
                           if (!(c.value >= 0.0 && c.value <= 1.0)) throw CommandError("alpha must lie in [0,1]");
                           next.find(c.brush)->alpha = c.value;
                           palette_changed = true;
                       },
                       [&](const SetSigma& c) {
                           check_brush(c.brush, false);
                           if (!(c.value >= 0.0 && c.value <= 64.0)) throw CommandError("sigma must lie in [0,64]");
                           next.find(c.brush)->sigma = c.value;
                           palette_changed = true;
                       },
                       [&](const SetStrength& c) {
                           check_brush(c.brush, false);
                           if (!(c.value >= 0.0 && c.value <= 1.0)) throw CommandError("strength must lie in [0,1]");
                           next.find(c.brush)->strength = c.value;
                           palette_changed = true;
                       },
                       [&](const SetSeed& c) {
                           next.seed = c.seed;
                           seed_base_ = c.seed - births_;
                       },
                       [&](const Play&) { playing_ = true; },
                       [&](const Pause&) {
                           playing_ = false;
                           step_frames_ = 0;
                       },
                       [&](const StepOnce&) {
                           if (!playing_) ++step_frames_;
                       },
                       [&](const RegisterBrush& c) {
                           SceneBrush b = c.brush;
                           if (b.is_background) {
                               b.id = kBackgroundBrushId;
                               *next.find(kBackgroundBrushId) = b;
                           } else {
                               b.id = next.next_id();
                               next.brushes.push_back(b);
                           }
                           res.brush = b.id;
                       },
                       [&](const RemoveBrush& c) {
                           check_brush(c.brush, false);
                           std::erase_if(next.brushes, [&](const SceneBrush& b) { return b.id == c.brush; });
                           palette_changed = true;
                       },
                       [&](const SetBackground& c) { next.find(kBackgroundBrushId)->target = c.target; },
                   },
                   cmd);
        try {
            validate_scene(next);
        } catch (const SceneError& e) {
            throw CommandError(e.what());
        }
        if (is_slow(res.kind)) {
            Scene old = std::move(scene_);
            scene_ = std::move(next);
            try {
                flush();
            } catch (...) {
                scene_ = std::move(old);
                throw;
            }
        } else if (palette_changed) {
            const auto prepared =
                engine_->prepare(scene_palette(next, *codec_), next.latent_size(), version_ + 1);
            scene_ = std::move(next);
            palette_ = prepared;
            ++version_;
        } else {
            scene_ = std::move(next);
        }
    } catch (const Error& e) {
        res.ok = false;
        res.error = e.what();
    }
    res.applies_at_tick = tick_ + 1;
    res.palette_version = version_;
    return res;
}

TickOutcome StreamPipeline::tick() {
    TickOutcome out;
    if (!active()) {
        return out;
    }
    out.ran = true;
    bool injected = false;
    if (slots_.size() < static_cast<std::size_t>(depth())) {
        slots_.push_back({engine_->start(palette_, seed_base_ + births_), births_, version_});
        ++births_;
        injected = true;
    }
    try {
        std::vector<PendingStep> pending;
        DenoiseRequest req;
        for (const auto& s : slots_) {
            pending.push_back(engine_->collect(s.state));
            req.items.insert(req.items.end(), pending.back().items.begin(), pending.back().items.end());
        }
        std::vector<LatentCanvas> eps = denoiser_->predict_noise(req);
        if (eps.size() != req.items.size()) {
            throw BackendError("denoiser returned " + std::to_string(eps.size()) + " results for " +
                               std::to_string(req.items.size()) + " requests");
        }
        std::vector<CanvasState> advanced;
        std::size_t offset = 0;
        for (std::size_t k = 0; k < slots_.size(); ++k) {
            const std::size_t count = pending[k].items.size();
            std::vector<LatentCanvas> part(std::make_move_iterator(eps.begin() + static_cast<std::ptrdiff_t>(offset)),
                                           std::make_move_iterator(eps.begin() +
                                                                   static_cast<std::ptrdiff_t>(offset + count)));
            offset += count;
            CanvasState st = slots_[k].state;
            engine_->advance(st, pending[k], part);
            advanced.push_back(std::move(st));
        }
        for (std::size_t k = 0; k < slots_.size(); ++k) slots_[k].state = std::move(advanced[k]);
    } catch (const Error& e) {
        if (injected) {
            slots_.pop_back();
            --births_;
        }
        out.error = e.what();
        return out;
    }
    ++tick_;
    if (!slots_.empty() && slots_.front().state.step_index == 0) {
        Slot done = std::move(slots_.front());
        slots_.pop_front();
        Frame f;
        f.tick = tick_;
        f.index = done.index;
        f.palette_version = done.version;
        f.seed = done.state.seed;
        f.image = codec_->decode(done.state.latent);
        f.latent = std::move(done.state.latent);
        out.frame = std::move(f);
        ++emitted_;
        if (step_frames_ > 0) --step_frames_;
    }
    return out;
}

const Bytes& FramePacket::png() const {
    std::call_once(once_, [this] { png_ = encode_png(frame_.image); });
    return png_;
}

Broadcaster::Token Broadcaster::subscribe(Callback cb) {
    std::lock_guard lock(mu_);
    const Token t = next_++;
    subs_.emplace_back(t, std::make_shared<Callback>(std::move(cb)));
    return t;
}

void Broadcaster::unsubscribe(Token token) {
    std::lock_guard lock(mu_);
    std::erase_if(subs_, [&](const auto& s) { return s.first == token; });
}

void Broadcaster::publish(const StreamEvent& ev) {
    std::vector<std::shared_ptr<Callback>> targets;
    {
        std::lock_guard lock(mu_);
        for (const auto& s : subs_) targets.push_back(s.second);
    }
    for (const auto& cb : targets) (*cb)(ev);
}

std::size_t Broadcaster::subscriber_count() const {
    std::lock_guard lock(mu_);
    return subs_.size();
}

void EventQueue::push(const StreamEvent& ev) {
    {
        std::lock_guard lock(mu_);
        if (q_.size() >= capacity_) {
            q_.pop_front();
            ++dropped_;
        }
        q_.push_back(ev);
    }
    cv_.notify_one();
}

std::optional<StreamEvent> EventQueue::pop(std::chrono::milliseconds timeout) {
    std::unique_lock lock(mu_);
    if (!cv_.wait_for(lock, timeout, [&] { return !q_.empty(); })) {
        return std::nullopt;
    }
    StreamEvent ev = std::move(q_.front());
    q_.pop_front();
    return ev;
}

std::uint64_t EventQueue::dropped() const {
    std::lock_guard lock(mu_);
    return dropped_;
}

StreamDriver::StreamDriver(std::unique_ptr<StreamPipeline> pipeline, std::chrono::milliseconds min_tick_period)
    : pipeline_(std::move(pipeline)), min_period_(min_tick_period), thread_([this] { loop(); }) {}

StreamDriver::~StreamDriver() { stop(); }

void StreamDriver::stop() {
    {
        std::lock_guard lock(mu_);
        stopping_ = true;
    }
    cv_.notify_all();
    if (thread_.joinable()) {
        thread_.join();
    }
}

void StreamDriver::enqueue(Command cmd, Done done) {
    {
        std::lock_guard lock(mu_);
        queue_.push_back({std::move(cmd), std::move(done), {}});
    }
    cv_.notify_all();
}

void StreamDriver::control(Control fn) {
    {
        std::lock_guard lock(mu_);
        queue_.push_back({std::nullopt, {}, std::move(fn)});
    }
    cv_.notify_all();
}

void StreamDriver::loop() {
    auto next_tick = std::chrono::steady_clock::now();
    while (true) {
        std::deque<Item> items;
        {
            std::unique_lock lock(mu_);
            cv_.wait(lock, [&] { return stopping_ || !queue_.empty() || pipeline_->active(); });
            if (stopping_) {
                return;
            }
            items.swap(queue_);
        }
        for (auto& item : items) {
            if (item.cmd) {
                const CommandResult res = pipeline_->apply(*item.cmd);
                if (item.done) item.done(res);
            } else if (item.control) {
                try {
                    item.control(*pipeline_);
                } catch (const std::exception&) {
                    // control callbacks report their own failures
                }
            }
        }
        if (!pipeline_->active()) {
            continue;
        }
        if (min_period_.count() > 0) {
            std::unique_lock lock(mu_);
            if (cv_.wait_until(lock, next_tick, [&] { return stopping_ || !queue_.empty(); })) {
                continue;  // commands first; the tick stays due
            }
        }
        next_tick = std::chrono::steady_clock::now() + min_period_;
        TickOutcome out = pipeline_->tick();
        if (out.error) {
            events_.publish({nullptr, *out.error, pipeline_->tick_count()});
            // Back off so a dead backend does not spin the driver.
            std::unique_lock lock(mu_);
            cv_.wait_for(lock, std::chrono::milliseconds(100), [&] { return stopping_ || !queue_.empty(); });
        } else if (out.frame) {
            const std::uint64_t t = out.frame->tick;
            events_.publish({std::make_shared<const FramePacket>(std::move(*out.frame)), {}, t});
        }
    }
}

}  // namespace regiondiff
