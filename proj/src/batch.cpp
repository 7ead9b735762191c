#include "regiondiff/batch.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "regiondiff/stream.hpp"

namespace regiondiff {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

Grid<std::uint8_t> rect_mask(Size2 canvas, int top, int left, int bottom, int right) {
    Grid<std::uint8_t> m(canvas.height, canvas.width, 0);
    for (int r = std::max(top, 0); r < std::min(bottom, canvas.height); ++r)
        for (int c = std::max(left, 0); c < std::min(right, canvas.width); ++c) m.at(r, c) = 255;
    return m;
}

SceneBrush color_brush(BrushId id, std::string name, Grid<std::uint8_t> mask, std::array<double, 3> rgb,
                       double sigma) {
    SceneBrush b;
    b.id = id;
    b.name = std::move(name);
    b.mask = std::move(mask);
    b.target.color = rgb;
    b.sigma = sigma;
    return b;
}

}  // namespace

Scene resize_scene(const Scene& scene, Size2 canvas) {
    Scene out = scene;
    out.canvas = canvas;
    for (auto& b : out.brushes) {
        if (b.is_background) continue;
        Grid<std::uint8_t> m(canvas.height, canvas.width, 0);
        for (int r = 0; r < canvas.height; ++r) {
            const int sr = static_cast<int>(static_cast<long long>(r) * b.mask.height / canvas.height);
            for (int c = 0; c < canvas.width; ++c) {
                const int sc = static_cast<int>(static_cast<long long>(c) * b.mask.width / canvas.width);
                m.at(r, c) = b.mask.at(sr, sc);
            }
        }
        b.mask = std::move(m);
    }
    return out;
}

Scene default_panorama_scene(Size2 canvas) {
    Scene s = blank_scene(canvas, {0.55, 0.75, 0.95});
    s.brushes[0].name = "sky";
    const int h = canvas.height;
    s.brushes.push_back(color_brush(1, "ground", rect_mask(canvas, h - h / 3, 0, h, canvas.width), {0.35, 0.55, 0.2}, 2.0));
    const int side = std::max(h / 6, 8);
    s.brushes.push_back(color_brush(2, "sun", rect_mask(canvas, h / 8, canvas.width / 8, h / 8 + side, canvas.width / 8 + side),
                                    {1.0, 0.85, 0.3}, 2.0));
    return s;
}

Scene default_regions_scene(Size2 canvas, double sigma) {
    Scene s = blank_scene(canvas, {1.0, 1.0, 1.0});
    const int h = canvas.height;
    const int w = canvas.width;
    s.brushes.push_back(color_brush(1, "red", rect_mask(canvas, 0, 0, h, w / 2 - w / 16), {0.9, 0.1, 0.1}, sigma));
    s.brushes.push_back(color_brush(2, "blue", rect_mask(canvas, 0, w / 2 + w / 16, h, w), {0.1, 0.2, 0.9}, sigma));
    return s;
}

GenerationConfig job_config(const Scene& scene, Algorithm algorithm) {
    if (algorithm == Algorithm::stabilized) return scene_config(scene);
    GenerationConfig cfg = baseline_config(make_timesteps(scene_schedule(scene), scene.steps));
    cfg.tile = scene.tile;
    cfg.stride = scene.stride;
    cfg.seed = scene.seed;
    return cfg;
}

PanoramaReport render_panorama(const Scene& scene, std::shared_ptr<Denoiser> denoiser,
                               std::shared_ptr<const Codec> codec, Algorithm algorithm) {
    validate_scene(scene);
    const auto t0 = Clock::now();
    Engine engine(scene_schedule(scene), job_config(scene, algorithm), std::move(denoiser), codec);
    PanoramaReport report;
    report.result = engine.generate(scene_palette(scene, *codec), scene.latent_size());
    for (float v : report.result.image.data) {
        if (!std::isfinite(v)) throw NumericError("non-finite pixel in the rendered image");
    }
    report.seconds = seconds_since(t0);
    return report;
}

std::array<double, 3> target_color(const SceneTarget& target) {
    if (target.color) return *target.color;
    if (target.image_png) {
        const RgbImage img = decode_png_rgb(*target.image_png);
        std::array<double, 3> sum{0.0, 0.0, 0.0};
        for (std::size_t k = 0; k < img.data.size(); ++k) sum[k % 3] += img.data[k];
        const double n = static_cast<double>(img.data.size() / 3);
        return {sum[0] / n, sum[1] / n, sum[2] / n};
    }
    throw ParameterError("a conditioning-only target has no color to classify against");
}

std::vector<BrushIoU> region_iou(const Scene& scene, const RgbImage& image) {
    if (image.height != scene.canvas.height || image.width != scene.canvas.width) {
        throw ShapeError("image size does not match the scene canvas");
    }
    std::vector<const SceneBrush*> order;
    for (const auto& b : scene.brushes) order.push_back(&b);
    std::sort(order.begin(), order.end(), [](const SceneBrush* a, const SceneBrush* b) { return a->id < b->id; });
    std::vector<std::array<double, 3>> colors;
    for (const auto* b : order) colors.push_back(target_color(b->target));

    std::vector<BrushIoU> out;
    std::vector<std::size_t> index_of(order.size(), 0);
    for (std::size_t k = 0; k < order.size(); ++k) {
        if (order[k]->is_background) continue;
        index_of[k] = out.size();
        out.push_back({order[k]->id, order[k]->name});
    }
    std::vector<std::size_t> inter(out.size(), 0);
    for (int r = 0; r < image.height; ++r) {
        for (int c = 0; c < image.width; ++c) {
            std::size_t best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < colors.size(); ++k) {
                double d = 0.0;
                for (int ch = 0; ch < 3; ++ch) {
                    const double e = image.at(r, c, ch) - colors[k][ch];
                    d += e * e;
                }
                if (d < best_d) {
                    best_d = d;
                    best = k;
                }
            }
            for (std::size_t k = 0; k < order.size(); ++k) {
                if (order[k]->is_background) continue;
                auto& s = out[index_of[k]];
                const bool expected = order[k]->mask.at(r, c) >= 128;
                const bool predicted = best == k;
                s.expected += expected;
                s.predicted += predicted;
                inter[index_of[k]] += expected && predicted;
            }
        }
    }
    for (std::size_t k = 0; k < out.size(); ++k) {
        const std::size_t uni = out[k].expected + out[k].predicted - inter[k];
        out[k].iou = uni == 0 ? 1.0 : static_cast<double>(inter[k]) / static_cast<double>(uni);
    }
    // Report in scene order.
    std::vector<BrushIoU> ordered;
    for (const auto& b : scene.brushes) {
        for (const auto& s : out)
            if (s.id == b.id) ordered.push_back(s);
    }
    return ordered;
}

RegionsReport render_regions(const Scene& scene, std::shared_ptr<Denoiser> denoiser,
                             std::shared_ptr<const Codec> codec, Algorithm algorithm) {
    if (scene.brushes.size() < 2) throw ParameterError("regions needs at least two brushes");
    RegionsReport report;
    report.result = render_panorama(scene, std::move(denoiser), std::move(codec), algorithm).result;
    report.brushes = region_iou(scene, report.result.image);
    return report;
}

BenchReport run_bench(const Scene& base, const BenchConfig& config,
                      const std::function<std::shared_ptr<Denoiser>()>& make_denoiser) {
    if (config.frames < 1) throw ParameterError("bench needs at least one timed frame");
    Scene scene = base;
    scene.steps = config.steps;
    validate_scene(scene);
    auto delayed = [&] { return std::make_shared<LatencySimulator>(make_denoiser(), config.latency); };

    BenchReport report;
    report.config = config;
    {
        BenchRow row;
        row.name = "sequential";
        auto codec = make_codec(CodecKind::standard);
        Engine engine(scene_schedule(scene), scene_config(scene), delayed(), codec);
        const auto prepared = engine.prepare(scene_palette(scene, *codec), scene.latent_size());
        row.hashes.push_back(hash_image(engine.run(prepared, scene.seed).image));
        const auto t0 = Clock::now();
        for (int k = 1; k <= config.frames; ++k) {
            row.hashes.push_back(hash_image(engine.run(prepared, scene.seed + static_cast<std::uint64_t>(k)).image));
        }
        row.fps = config.frames / seconds_since(t0);
        report.rows.push_back(std::move(row));
    }
    for (const auto kind : {CodecKind::standard, CodecKind::tiny}) {
        BenchRow row;
        row.name = kind == CodecKind::standard ? "+stream batch" : "+tiny codec";
        StreamPipeline pipeline(scene, delayed(), make_codec(kind));
        pipeline.apply(Play{});
        Clock::time_point t0;
        while (row.hashes.size() < static_cast<std::size_t>(config.frames) + 1) {
            const TickOutcome out = pipeline.tick();
            if (out.error) throw BackendError(*out.error);
            if (!out.frame) continue;
            row.hashes.push_back(hash_image(out.frame->image));
            if (row.hashes.size() == 1) t0 = Clock::now();
        }
        row.fps = config.frames / seconds_since(t0);
        report.rows.push_back(std::move(row));
    }
    for (auto& row : report.rows) row.speedup = row.fps / report.rows.front().fps;
    return report;
}

std::string format_bench(const BenchReport& report) {
    std::ostringstream os;
    os << "steps " << report.config.steps << ", denoiser latency " << report.config.latency.count() << " ms, "
       << report.config.frames << " timed frames\n";
    os << std::left << std::setw(16) << "pipeline" << std::right << std::setw(10) << "FPS" << std::setw(10)
       << "speedup" << "\n";
    for (const auto& row : report.rows) {
        os << std::left << std::setw(16) << row.name << std::right << std::fixed << std::setprecision(2)
           << std::setw(10) << row.fps << std::setw(9) << row.speedup << "x\n";
    }
    return os.str();
}

}  // namespace regiondiff
