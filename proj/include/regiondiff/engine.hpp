#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <set>
#include <vector>

#include "regiondiff/codec.hpp"
#include "regiondiff/denoiser.hpp"
#include "regiondiff/masks.hpp"
#include "regiondiff/sampler.hpp"

namespace regiondiff {

struct Size2 {
    int height = 0;
    int width = 0;
    bool operator==(const Size2&) const = default;
};

struct TileRect {
    int top = 0;
    int left = 0;
    int height = 0;
    int width = 0;

    int bottom() const { return top + height; }
    int right() const { return left + width; }
    bool operator==(const TileRect&) const = default;
};

struct TileSet {
    Size2 canvas;
    Size2 tile;
    Size2 stride;
    std::vector<TileRect> tiles;

    std::size_t size() const { return tiles.size(); }
};

// Grid of tile-sized windows at `stride`; the last row/column snaps to the
// canvas edge so every window is exactly tile-sized and the union covers the
// canvas. A tile larger than the canvas collapses to one canvas-sized window.
TileSet make_tiles(Size2 canvas, Size2 tile, Size2 stride);

// Weighted accumulation sum_k w_k x_k / sum_k w_k over a canvas.
class Aggregator {
public:
    Aggregator(int height, int width, int channels);

    void add(const TileRect& rect, const LatentCanvas& tile_latent, const Mask& tile_weight);

    // Throws AggregationError if some pixel received zero total weight.
    LatentCanvas normalize() const;

    double min_weight() const;
    double max_weight() const;
    const std::vector<double>& weights() const { return weight_; }

private:
    int height_;
    int width_;
    int channels_;
    std::vector<double> value_;
    std::vector<double> weight_;
};

enum class BootstrapColor { white, random_uniform };
enum class Algorithm { stabilized, baseline };

struct GenerationConfig {
    TimestepPlan plan;
    int n_bootstrap = 1;
    BootstrapColor bootstrap_color = BootstrapColor::white;
    bool centering = true;
    Size2 tile{64, 64};
    Size2 stride{32, 32};
    std::uint64_t seed = 0;
    Algorithm algorithm = Algorithm::stabilized;
};

// Stabilized defaults: white bootstrap with centering for the first step
// (first 3 when n > 6).
GenerationConfig default_config(const TimestepPlan& plan);

// Unstabilized reference: random-color bootstrap over the first ceil(0.4 n)
// steps, no centering, full sampler step (with its noise) inside aggregation.
GenerationConfig baseline_config(const TimestepPlan& plan);

// One brush after preprocessing, bound to a registered conditioning.
struct PreparedBrush {
    BrushId id = 0;
    std::string name;
    bool is_background = false;
    ConditioningId conditioning = 0;
    // Aggregation weights per step. Foreground: quantized masks. Background:
    // complement of the union of the foreground masks at that step.
    QuantizedMaskStack weights;
    // Binary masks for the baseline algorithm (1[raw >= 0.5]; background is
    // the complement of their union).
    Mask binary;
};

struct PreparedPalette {
    Size2 canvas;
    std::uint64_t version = 0;
    std::vector<PreparedBrush> brushes;
    LatentCanvas white_tile;  // enc(1) at tile size
    int channels = kLatentChannels;
};

// Content-derived id for conditionings that carry a vector or target.
ConditioningId content_id(const Conditioning& cond);

// White (or colored) background noised to level t, pasted outside the mask:
// mask * tile + (1 - mask) * add_noise(background, eps, t).
LatentCanvas bootstrap_mix(const LatentCanvas& tile, const Mask& mask, const LatentCanvas& background,
                           const LatentCanvas& eps, int t, const NoiseSchedule& schedule);

// Latent being denoised. step_index is the next step to run; 0 once finished.
struct CanvasState {
    LatentCanvas latent;
    int step_index = 0;
    std::uint64_t seed = 0;
    std::shared_ptr<const PreparedPalette> palette;
};

// Requests one canvas contributes to a step, plus what is needed to fold the
// answers back in.
struct PendingStep {
    struct Entry {
        std::size_t tile = 0;
        std::size_t brush = 0;
        GridPoint roll{};  // offset applied before denoising (undone after)
        Mask weight;       // tile crop of the brush weight for this step
    };
    int step_index = 0;
    std::vector<DenoiseItem> items;
    std::vector<Entry> entries;
};

struct StepTrace {
    int step_index = 0;
    const LatentCanvas* before_noise = nullptr;  // aggregated deterministic part
    const LatentCanvas* after = nullptr;         // latent handed to the next step
    double min_weight = 0.0;
    double max_weight = 0.0;
};
using StepObserver = std::function<void(const StepTrace&)>;

struct GenerationResult {
    RgbImage image;
    LatentCanvas latent;
    std::size_t tile_count = 0;
    double min_weight = 0.0;
    double max_weight = 0.0;
};

class Engine {
public:
    Engine(NoiseSchedule schedule, GenerationConfig config, std::shared_ptr<Denoiser> denoiser,
           std::shared_ptr<const Codec> codec);

    const NoiseSchedule& schedule() const { return schedule_; }
    const GenerationConfig& config() const { return config_; }
    Denoiser& denoiser() const { return *denoiser_; }
    const Codec& codec() const { return *codec_; }

    void set_seed(std::uint64_t seed) { config_.seed = seed; }

    TileSet tiles_for(Size2 canvas) const { return make_tiles(canvas, config_.tile, config_.stride); }

    // Validates the palette, mixes prompt strengths, registers conditionings
    // with the denoiser and quantizes masks.
    std::shared_ptr<const PreparedPalette> prepare(const std::vector<SemanticBrush>& palette, Size2 canvas,
                                                   std::uint64_t version = 0);

    CanvasState start(std::shared_ptr<const PreparedPalette> palette, std::uint64_t seed) const;
    PendingStep collect(const CanvasState& state) const;
    void advance(CanvasState& state, const PendingStep& pending, const std::vector<LatentCanvas>& eps,
                 const StepObserver& observer = {}) const;

    // Runs all steps of one canvas with one denoiser call per step.
    GenerationResult run(std::shared_ptr<const PreparedPalette> palette, std::uint64_t seed,
                         const StepObserver& observer = {});

    GenerationResult generate(const std::vector<SemanticBrush>& palette, Size2 canvas,
                              const StepObserver& observer = {});

private:
    void check_config() const;
    bool bootstrapping(int step_index) const;

    NoiseSchedule schedule_;
    GenerationConfig config_;
    std::shared_ptr<Denoiser> denoiser_;
    std::shared_ptr<const Codec> codec_;
    std::mutex registered_mu_;
    std::set<ConditioningId> registered_;
};

// Stabilized generation (config.algorithm decides which algorithm runs).
GenerationResult generate(const std::vector<SemanticBrush>& palette, Size2 canvas, const GenerationConfig& config,
                          const NoiseSchedule& schedule, std::shared_ptr<Denoiser> denoiser,
                          std::shared_ptr<const Codec> codec, const StepObserver& observer = {});

// Same scene through the unstabilized baseline; `config` supplies plan, tiles
// and seed, bootstrap settings are replaced by the baseline's.
GenerationResult generate_baseline(const std::vector<SemanticBrush>& palette, Size2 canvas,
                                   const GenerationConfig& config, const NoiseSchedule& schedule,
                                   std::shared_ptr<Denoiser> denoiser, std::shared_ptr<const Codec> codec,
                                   const StepObserver& observer = {});

}  // namespace regiondiff
