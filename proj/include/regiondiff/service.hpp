#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>

#include "regiondiff/scene.hpp"
#include "regiondiff/stream.hpp"

namespace regiondiff {

struct ServiceConfig {
    std::string host = "0.0.0.0";
    std::uint16_t port = 8080;
    std::optional<std::filesystem::path> scene;  // initial scene; blank white canvas otherwise
    // Override the scene's values when set.
    std::optional<Size2> canvas;                  // image pixels
    std::optional<int> steps;
    std::optional<SamplerMode> mode;
    std::optional<std::uint64_t> seed;
    std::string backend = "analytic";
    std::chrono::milliseconds latency{0};  // simulated per-call denoiser latency
    CodecKind codec = CodecKind::standard;
    std::chrono::milliseconds min_tick_period{0};  // frame-rate cap; 0 = free-running
    bool autoplay = false;
};

// Reads a JSON config file (missing keys keep defaults). Keys: host, port,
// scene, canvas {height, width}, steps, mode, seed, backend, latency_ms,
// codec, fps_cap, autoplay.
ServiceConfig load_service_config(const std::filesystem::path& path);

// Environment overrides: REGIONDIFF_HOST, _PORT, _SCENE, _CANVAS ("HxW"),
// _STEPS, _MODE, _SEED, _BACKEND, _LATENCY_MS, _CODEC, _FPS_CAP, _AUTOPLAY.
void apply_env_overrides(ServiceConfig& cfg, const std::function<const char*(const char*)>& getenv);

// Initial scene for a config.
Scene initial_scene(const ServiceConfig& cfg);

// WebSocket command message -> Command. Throws CommandError.
//   {"cmd": "update_mask", "brush": 1, "mask": "<base64 PNG>"}
//   {"cmd": "set_alpha" | "set_sigma" | "set_strength", "brush": 1, "value": 0.5}
//   {"cmd": "set_seed", "seed": 7}
//   {"cmd": "play" | "pause" | "step_once"}
//   {"cmd": "register_brush", "brush": {<scene brush object>}}
//   {"cmd": "remove_brush", "brush": 2}
//   {"cmd": "set_background", "target": {<scene target object>}}
// An optional "req" field is echoed in the reply.
Command parse_ws_command(std::string_view text, Size2 canvas);

// Binary frame message: "SMDF", u64 tick, u64 frame index, u64 palette
// version, u64 seed, u32 width, u32 height (image pixels), then PNG bytes.
// Integers little-endian.
inline constexpr std::size_t kFrameHeaderSize = 44;
Bytes encode_frame_message(const FramePacket& packet);

struct FrameHeader {
    std::uint64_t tick = 0;
    std::uint64_t index = 0;
    std::uint64_t palette_version = 0;
    std::uint64_t seed = 0;
    std::uint32_t width = 0;
    std::uint32_t height = 0;
};
FrameHeader decode_frame_header(std::span<const std::uint8_t> message);

// HTTP + WebSocket front end on one port:
//   POST /palette, DELETE /palette/{id}, POST /background, GET /scene,
//   PUT /scene, WS /stream.
class Service {
public:
    explicit Service(const ServiceConfig& cfg);
    Service(const ServiceConfig& cfg, std::shared_ptr<Denoiser> backend);
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    std::uint16_t port() const;
    // Serves on a background thread.
    void start();
    // Serves on the calling thread until stop().
    void run();
    void stop();
    StreamDriver& driver();

    struct Impl;

private:
    std::unique_ptr<Impl> impl_;
};

}  // namespace regiondiff
