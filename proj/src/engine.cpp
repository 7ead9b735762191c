#include "regiondiff/engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "regiondiff/rng.hpp"

namespace regiondiff {

namespace {

std::vector<int> axis_positions(int canvas, int tile, int stride) {
    std::vector<int> pos;
    int p = 0;
    while (true) {
        pos.push_back(p);
        if (p + tile >= canvas) {
            break;
        }
        p = std::min(p + stride, canvas - tile);
    }
    return pos;
}

}  // namespace

TileSet make_tiles(Size2 canvas, Size2 tile, Size2 stride) {
    if (canvas.height <= 0 || canvas.width <= 0 || tile.height <= 0 || tile.width <= 0) {
        throw ParameterError("canvas and tile dimensions must be positive");
    }
    if (stride.height < 1 || stride.width < 1) {
        throw ParameterError("tile stride must be >= 1");
    }
    TileSet set;
    set.canvas = canvas;
    set.tile   = {std::min(tile.height, canvas.height), std::min(tile.width, canvas.width)};
    set.stride = stride;
    const auto rows = axis_positions(canvas.height, set.tile.height, stride.height);
    const auto cols = axis_positions(canvas.width, set.tile.width, stride.width);
    for (int r : rows) {
        for (int c : cols) {
            set.tiles.push_back({r, c, set.tile.height, set.tile.width});
        }
    }
    return set;
}

Aggregator::Aggregator(int height, int width, int channels)
    : height_(height),
      width_(width),
      channels_(channels),
      value_(static_cast<std::size_t>(height) * width * channels, 0.0),
      weight_(static_cast<std::size_t>(height) * width, 0.0) {}

void Aggregator::add(const TileRect& rect, const LatentCanvas& tile_latent, const Mask& tile_weight) {
    if (tile_latent.height != rect.height || tile_latent.width != rect.width || tile_latent.channels != channels_ ||
        tile_weight.height != rect.height || tile_weight.width != rect.width) {
        throw ShapeError("aggregated tile does not match its rectangle");
    }
    if (rect.top < 0 || rect.left < 0 || rect.bottom() > height_ || rect.right() > width_) {
        throw ShapeError("aggregated tile lies outside the canvas");
    }
    for (int r = 0; r < rect.height; ++r) {
        for (int c = 0; c < rect.width; ++c) {
            const double w = tile_weight.at(r, c);
            if (w == 0.0) {
                continue;
            }
            const std::size_t p = static_cast<std::size_t>(rect.top + r) * width_ + rect.left + c;
            weight_[p] += w;
            for (int ch = 0; ch < channels_; ++ch) {
                value_[p * channels_ + ch] += w * tile_latent.at(r, c, ch);
            }
        }
    }
}

LatentCanvas Aggregator::normalize() const {
    LatentCanvas out(height_, width_, channels_);
    for (std::size_t p = 0; p < weight_.size(); ++p) {
        if (!(weight_[p] > 0.0)) {
            throw AggregationError("pixel (" + std::to_string(p / width_) + ", " + std::to_string(p % width_) +
                                   ") received zero aggregation weight");
        }
        for (int ch = 0; ch < channels_; ++ch) {
            out.data[p * channels_ + ch] = static_cast<float>(value_[p * channels_ + ch] / weight_[p]);
        }
    }
    return out;
}

double Aggregator::min_weight() const {
    return weight_.empty() ? 0.0 : *std::min_element(weight_.begin(), weight_.end());
}

double Aggregator::max_weight() const {
    return weight_.empty() ? 0.0 : *std::max_element(weight_.begin(), weight_.end());
}

GenerationConfig default_config(const TimestepPlan& plan) {
    GenerationConfig cfg;
    cfg.plan = plan;
    cfg.n_bootstrap = plan.size() <= 6 ? 1 : 3;
    return cfg;
}

GenerationConfig baseline_config(const TimestepPlan& plan) {
    GenerationConfig cfg;
    cfg.plan = plan;
    cfg.n_bootstrap = static_cast<int>(std::ceil(0.4 * plan.size()));
    cfg.bootstrap_color = BootstrapColor::random_uniform;
    cfg.centering = false;
    cfg.algorithm = Algorithm::baseline;
    return cfg;
}

ConditioningId content_id(const Conditioning& cond) {
    std::uint64_t h = fnv1a({reinterpret_cast<const unsigned char*>(cond.vector.data()),
                             cond.vector.size() * sizeof(float)});
    if (cond.target) {
        const auto& t = *cond.target;
        const int dims[3] = {t.height, t.width, t.channels};
        h = splitmix64(h ^ fnv1a({reinterpret_cast<const unsigned char*>(dims), sizeof(dims)}));
        h = splitmix64(h ^ hash_latent(t));
    }
    return 0x80000000u | static_cast<ConditioningId>(h & 0x7fffffffu);
}

LatentCanvas bootstrap_mix(const LatentCanvas& tile, const Mask& mask, const LatentCanvas& background,
                           const LatentCanvas& eps, int t, const NoiseSchedule& schedule) {
    require_same_shape(tile, background, "bootstrap_mix");
    if (mask.height != tile.height || mask.width != tile.width) {
        throw ShapeError("bootstrap mask does not match the tile");
    }
    const LatentCanvas bg = add_noise(background, eps, t, schedule);
    LatentCanvas out(tile.height, tile.width, tile.channels);
    for (int r = 0; r < tile.height; ++r) {
        for (int c = 0; c < tile.width; ++c) {
            const float w = mask.at(r, c);
            for (int ch = 0; ch < tile.channels; ++ch) {
                out.at(r, c, ch) = w * tile.at(r, c, ch) + (1.0f - w) * bg.at(r, c, ch);
            }
        }
    }
    return out;
}

Engine::Engine(NoiseSchedule schedule, GenerationConfig config, std::shared_ptr<Denoiser> denoiser,
               std::shared_ptr<const Codec> codec)
    : schedule_(std::move(schedule)), config_(std::move(config)), denoiser_(std::move(denoiser)),
      codec_(std::move(codec)) {
    if (!denoiser_ || !codec_) {
        throw ParameterError("engine needs a denoiser and a codec");
    }
    check_config();
}

void Engine::check_config() const {
    const int n = config_.plan.size();
    if (n < 1) {
        throw ParameterError("generation config has an empty timestep plan");
    }
    if (config_.n_bootstrap < 0 || config_.n_bootstrap > n) {
        throw ParameterError("n_bootstrap must lie in [0, n]");
    }
    if (config_.algorithm == Algorithm::stabilized &&
        (config_.bootstrap_color != BootstrapColor::white || !config_.centering) && config_.n_bootstrap > 0) {
        throw ParameterError("stabilized generation bootstraps with white backgrounds and centering");
    }
    if (config_.plan.mode() != schedule_.mode()) {
        throw ParameterError("timestep plan and schedule disagree on the sampler mode");
    }
}

bool Engine::bootstrapping(int step_index) const {
    return step_index > config_.plan.size() - config_.n_bootstrap;
}

std::shared_ptr<const PreparedPalette> Engine::prepare(const std::vector<SemanticBrush>& palette, Size2 canvas,
                                                       std::uint64_t version) {
    validate_palette(palette, canvas.height, canvas.width);
    const auto bg_it = std::find_if(palette.begin(), palette.end(), [](const auto& b) { return b.is_background; });
    const SemanticBrush& background = *bg_it;
    const TimestepPlan& plan = config_.plan;

    auto out = std::make_shared<PreparedPalette>();
    out->canvas = canvas;
    out->version = version;

    const TileSet tiles = tiles_for(canvas);
    out->white_tile = encode_constant_color(*codec_, tiles.tile.height, tiles.tile.width, 1.0f, 1.0f, 1.0f);
    out->channels = out->white_tile.channels;

    std::vector<Mask> union_by_step(static_cast<std::size_t>(plan.size()), Mask(canvas.height, canvas.width));
    Mask union_binary(canvas.height, canvas.width);

    for (const auto& brush : palette) {
        PreparedBrush pb;
        pb.id = brush.id;
        pb.name = brush.name;
        pb.is_background = brush.is_background;

        Conditioning cond = brush.is_background ? brush.conditioning
                                                : mix_conditioning(brush.conditioning, background.conditioning,
                                                                   brush.strength);
        const bool has_content = !cond.vector.empty() || cond.target.has_value();
        if (!has_content && brush.strength != 1.0 && !brush.is_background) {
            throw ConditioningError("brush '" + brush.name + "' references conditioning " +
                                    std::to_string(cond.id) + " by id only; strength mixing needs its vector");
        }
        if (has_content) {
            cond.id = content_id(cond);
            std::lock_guard lock(registered_mu_);
            if (registered_.insert(cond.id).second) {
                try {
                    denoiser_->register_conditioning(cond);
                } catch (...) {
                    registered_.erase(cond.id);
                    throw;
                }
            }
        }
        pb.conditioning = cond.id;

        if (!brush.is_background) {
            pb.weights = quantize_mask(smooth_mask(brush.raw_mask, brush.blur_sigma), brush.alpha, plan, schedule_);
            for (int i = 1; i <= plan.size(); ++i) {
                auto& u = union_by_step[static_cast<std::size_t>(i - 1)];
                const auto& w = pb.weights.at_step(i);
                for (std::size_t k = 0; k < u.data.size(); ++k) {
                    u.data[k] = std::max(u.data[k], w.data[k]);
                }
            }
            pb.binary = Mask(canvas.height, canvas.width);
            for (std::size_t k = 0; k < pb.binary.data.size(); ++k) {
                pb.binary.data[k] = brush.raw_mask.data[k] >= 0.5f ? 1.0f : 0.0f;
                union_binary.data[k] = std::max(union_binary.data[k], pb.binary.data[k]);
            }
        }
        out->brushes.push_back(std::move(pb));
    }

    for (auto& pb : out->brushes) {
        if (!pb.is_background) {
            continue;
        }
        for (const auto& u : union_by_step) {
            Mask w(canvas.height, canvas.width);
            for (std::size_t k = 0; k < w.data.size(); ++k) {
                w.data[k] = 1.0f - u.data[k];
            }
            pb.weights.by_step.push_back(std::move(w));
        }
        pb.binary = Mask(canvas.height, canvas.width);
        for (std::size_t k = 0; k < pb.binary.data.size(); ++k) {
            pb.binary.data[k] = 1.0f - union_binary.data[k];
        }
    }
    return out;
}

CanvasState Engine::start(std::shared_ptr<const PreparedPalette> palette, std::uint64_t seed) const {
    CanvasState s;
    s.latent = LatentCanvas(palette->canvas.height, palette->canvas.width, palette->channels);
    fill_gaussian({seed, NoisePurpose::initial_latent, 0, 0}, s.latent.data);
    s.step_index = config_.plan.size();
    s.seed = seed;
    s.palette = std::move(palette);
    return s;
}

PendingStep Engine::collect(const CanvasState& state) const {
    if (state.step_index < 1) {
        throw ParameterError("canvas has already finished all steps");
    }
    const PreparedPalette& palette = *state.palette;
    const int i = state.step_index;
    const int t = config_.plan.timestep(i);
    const bool baseline = config_.algorithm == Algorithm::baseline;
    const bool boot = bootstrapping(i);
    const TileSet tiles = tiles_for(palette.canvas);
    const std::size_t P = palette.brushes.size();

    PendingStep pending;
    pending.step_index = i;
    for (std::size_t j = 0; j < tiles.size(); ++j) {
        const TileRect& rect = tiles.tiles[j];
        const LatentCanvas x_tile = crop(state.latent, rect.top, rect.left, rect.height, rect.width);
        for (std::size_t k = 0; k < P; ++k) {
            const PreparedBrush& brush = palette.brushes[k];
            const Mask& full = baseline ? brush.binary : brush.weights.at_step(i);
            Mask w = crop(full, rect.top, rect.left, rect.height, rect.width);
            if (mask_is_empty(w)) {
                continue;  // zero weight everywhere: no contribution to aggregate
            }
            PendingStep::Entry entry;
            entry.tile = j;
            entry.brush = k;
            LatentCanvas x = x_tile;
            if (boot && !brush.is_background) {
                const auto slot = static_cast<std::uint32_t>(j * P + k);
                LatentCanvas eps(rect.height, rect.width, x.channels);
                fill_gaussian({state.seed, NoisePurpose::bootstrap_noise, static_cast<std::uint32_t>(i), slot},
                              eps.data);
                if (config_.bootstrap_color == BootstrapColor::white) {
                    x = bootstrap_mix(x, w, palette.white_tile, eps, t, schedule_);
                } else {
                    const NoiseKey ck{state.seed, NoisePurpose::bootstrap_color, static_cast<std::uint32_t>(i), slot};
                    const LatentCanvas color = encode_constant_color(
                        *codec_, rect.height, rect.width, static_cast<float>(uniform_at(ck, 0)),
                        static_cast<float>(uniform_at(ck, 1)), static_cast<float>(uniform_at(ck, 2)));
                    x = bootstrap_mix(x, w, color, eps, t, schedule_);
                }
                if (config_.centering) {
                    const GridPoint center = bounding_box_center(w);
                    entry.roll = {rect.height / 2 - center.row, rect.width / 2 - center.col};
                    x = roll_by(x, entry.roll.row, entry.roll.col);
                }
            }
            entry.weight = std::move(w);
            pending.items.push_back({std::move(x), t, brush.conditioning});
            pending.entries.push_back(std::move(entry));
        }
    }
    return pending;
}

void Engine::advance(CanvasState& state, const PendingStep& pending, const std::vector<LatentCanvas>& eps,
                     const StepObserver& observer) const {
    if (eps.size() != pending.items.size()) {
        throw BackendError("denoiser returned " + std::to_string(eps.size()) + " tiles for " +
                           std::to_string(pending.items.size()) + " requests");
    }
    if (pending.step_index != state.step_index) {
        throw ParameterError("pending step does not belong to this canvas state");
    }
    const PreparedPalette& palette = *state.palette;
    const int i = state.step_index;
    const bool baseline = config_.algorithm == Algorithm::baseline;
    const TileSet tiles = tiles_for(palette.canvas);
    const std::size_t P = palette.brushes.size();

    Aggregator agg(palette.canvas.height, palette.canvas.width, palette.channels);
    for (std::size_t e = 0; e < pending.entries.size(); ++e) {
        const auto& entry = pending.entries[e];
        StepContext ctx{&config_.plan, &schedule_, i, state.seed, 0};
        LatentCanvas y;
        if (baseline) {
            ctx.slot = static_cast<std::uint32_t>(1 + entry.tile * P + entry.brush);
            y = step_full(pending.items[e].latent, eps[e], ctx);
        } else {
            y = step_except_noise(pending.items[e].latent, eps[e], ctx);
        }
        if (entry.roll.row != 0 || entry.roll.col != 0) {
            y = roll_by(y, -entry.roll.row, -entry.roll.col);
        }
        if (!all_finite(y)) require_finite(y, "step " + std::to_string(i) + ", tile " + std::to_string(entry.tile) + ", brush '" +
                              palette.brushes[entry.brush].name + "'");
        agg.add(tiles.tiles[entry.tile], y, entry.weight);
    }
    LatentCanvas before = agg.normalize();
    LatentCanvas after = baseline ? before : inject_noise(before, StepContext{&config_.plan, &schedule_, i, state.seed, 0});
    if (!all_finite(after)) require_finite(after, "step " + std::to_string(i) + " after noise injection");
    if (observer) {
        observer(StepTrace{i, &before, &after, agg.min_weight(), agg.max_weight()});
    }
    state.latent = std::move(after);
    state.step_index = i - 1;
}

GenerationResult Engine::run(std::shared_ptr<const PreparedPalette> palette, std::uint64_t seed,
                             const StepObserver& observer) {
    GenerationResult result;
    result.tile_count = tiles_for(palette->canvas).size();
    result.min_weight = std::numeric_limits<double>::infinity();
    result.max_weight = 0.0;
    CanvasState state = start(std::move(palette), seed);
    const StepObserver track = [&](const StepTrace& tr) {
        result.min_weight = std::min(result.min_weight, tr.min_weight);
        result.max_weight = std::max(result.max_weight, tr.max_weight);
        if (observer) {
            observer(tr);
        }
    };
    while (state.step_index > 0) {
        const PendingStep pending = collect(state);
        DenoiseRequest req{pending.items};
        const auto eps = denoiser_->predict_noise(req);
        advance(state, pending, eps, track);
    }
    result.image = codec_->decode(state.latent);
    result.latent = std::move(state.latent);
    return result;
}

GenerationResult Engine::generate(const std::vector<SemanticBrush>& palette, Size2 canvas,
                                  const StepObserver& observer) {
    return run(prepare(palette, canvas), config_.seed, observer);
}

GenerationResult generate(const std::vector<SemanticBrush>& palette, Size2 canvas, const GenerationConfig& config,
                          const NoiseSchedule& schedule, std::shared_ptr<Denoiser> denoiser,
                          std::shared_ptr<const Codec> codec, const StepObserver& observer) {
    Engine engine(schedule, config, std::move(denoiser), std::move(codec));
    return engine.generate(palette, canvas, observer);
}

GenerationResult generate_baseline(const std::vector<SemanticBrush>& palette, Size2 canvas,
                                   const GenerationConfig& config, const NoiseSchedule& schedule,
                                   std::shared_ptr<Denoiser> denoiser, std::shared_ptr<const Codec> codec,
                                   const StepObserver& observer) {
    GenerationConfig cfg = baseline_config(config.plan);
    cfg.tile = config.tile;
    cfg.stride = config.stride;
    cfg.seed = config.seed;
    Engine engine(schedule, cfg, std::move(denoiser), std::move(codec));
    return engine.generate(palette, canvas, observer);
}

}  // namespace regiondiff
