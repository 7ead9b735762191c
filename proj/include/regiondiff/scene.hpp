#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "regiondiff/codec.hpp"
#include "regiondiff/engine.hpp"
#include "regiondiff/image_io.hpp"

namespace regiondiff {

inline constexpr int kSceneVersion = 1;
inline constexpr BrushId kBackgroundBrushId = 0;

// What a brush steers towards. Exactly one of the three is set.
struct SceneTarget {
    std::optional<std::array<double, 3>> color;  // RGB in [0,1]
    std::optional<Bytes> image_png;               // fitted to one tile
    std::optional<ConditioningId> conditioning;   // id the backend already knows

    bool operator==(const SceneTarget&) const = default;
};

struct SceneBrush {
    BrushId id = 0;
    std::string name;
    bool is_background = false;
    Grid<std::uint8_t> mask;  // image resolution; empty for the background
    SceneTarget target;
    double alpha = 1.0;
    double sigma = 0.0;  // latent pixels
    double strength = 1.0;

    bool operator==(const SceneBrush&) const = default;
};

// Serializable session: canvas, sampler settings and the brush list. Sizes
// are image pixels except tile/stride, which are latent pixels.
struct Scene {
    Size2 canvas{512, 512};
    std::uint64_t seed = 0;
    SamplerMode mode = SamplerMode::lcm;
    int steps = 4;
    Size2 tile{64, 64};
    Size2 stride{32, 32};
    std::optional<int> bootstrap;  // default_config() decides when unset
    std::vector<SceneBrush> brushes;

    Size2 latent_size() const { return {canvas.height / kLatentScale, canvas.width / kLatentScale}; }
    const SceneBrush* find(BrushId id) const;
    SceneBrush* find(BrushId id);
    BrushId next_id() const;

    bool operator==(const Scene&) const = default;
};

// Scene with only a background brush of the given color.
Scene blank_scene(Size2 canvas, std::array<double, 3> background = {1.0, 1.0, 1.0});

// Checks dimensions, id uniqueness, the single background (id 0) and value
// ranges. Throws SceneError.
void validate_scene(const Scene& scene);

// Canonical text form: fixed key order, masks and target images inlined as
// base64 PNG, trailing newline. save -> load -> save is byte-identical.
std::string dump_scene(const Scene& scene);

// Accepts the canonical form plus authoring shortcuts: masks given as
// {"path"}, {"rect": [top, left, bottom, right]} or {"full": true}, and
// target images as {"path"}. Relative paths resolve against base_dir.
Scene parse_scene(std::string_view text, const std::filesystem::path& base_dir = {});

// JSON brush object (as found in the "brushes" array) without the id.
SceneBrush parse_brush(std::string_view json, Size2 canvas, const std::filesystem::path& base_dir = {});
SceneTarget parse_target(std::string_view json, const std::filesystem::path& base_dir = {});

Scene load_scene(const std::filesystem::path& path);
void save_scene(const Scene& scene, const std::filesystem::path& path);

// Engine inputs derived from a scene.
NoiseSchedule scene_schedule(const Scene& scene);
GenerationConfig scene_config(const Scene& scene);
Conditioning target_conditioning(const SceneTarget& target, const Codec& codec, Size2 tile);
std::vector<SemanticBrush> scene_palette(const Scene& scene, const Codec& codec);

std::string base64_encode(std::span<const std::uint8_t> bytes);
Bytes base64_decode(std::string_view text);

}  // namespace regiondiff
