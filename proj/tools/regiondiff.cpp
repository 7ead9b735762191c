#include <csignal>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "regiondiff/backend.hpp"
#include "regiondiff/batch.hpp"
#include "regiondiff/service.hpp"
#include "regiondiff/wire.hpp"

using namespace regiondiff;
using json = nlohmann::ordered_json;

namespace {

struct CommonOptions {
    std::string scene;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<int> steps;
    std::optional<std::string> mode;
    std::optional<std::string> tile;
    std::optional<std::string> stride;
    std::optional<int> bootstrap;
    std::string backend = "analytic";
    std::string codec = "standard";
    std::string report;
    bool baseline = false;
};

void add_common(CLI::App* app, CommonOptions& o) {
    app->add_option("--scene", o.scene, "Scene file")->check(CLI::ExistingFile);
    app->add_option("--out", o.out, "Output path");
    app->add_option("--seed", o.seed, "Generation seed");
    app->add_option("--steps", o.steps, "Sampling steps")->check(CLI::PositiveNumber);
    app->add_option("--mode", o.mode, "Sampler")->check(CLI::IsMember({"ddim", "lcm"}));
    app->add_option("--tile", o.tile, "Tile size in latent pixels, N or HxW");
    app->add_option("--stride", o.stride, "Tile stride in latent pixels, N or HxW");
    app->add_option("--bootstrap", o.bootstrap, "Number of bootstrapped steps")->check(CLI::NonNegativeNumber);
    app->add_option("--backend", o.backend, "analytic or external:HOST:PORT");
}

Size2 parse_size(const std::string& s) {
    const auto x = s.find('x');
    try {
        if (x == std::string::npos) {
            const int n = std::stoi(s);
            return {n, n};
        }
        return {std::stoi(s.substr(0, x)), std::stoi(s.substr(x + 1))};
    } catch (const std::exception&) {
        throw ParameterError("expected N or HxW, got '" + s + "'");
    }
}

CodecKind codec_kind(const std::string& s) {
    if (s == "standard") return CodecKind::standard;
    if (s == "tiny") return CodecKind::tiny;
    throw ParameterError("codec must be standard or tiny");
}

void apply_common(Scene& scene, const CommonOptions& o) {
    if (o.seed) scene.seed = *o.seed;
    if (o.steps) scene.steps = *o.steps;
    if (o.mode) scene.mode = parse_sampler_mode(*o.mode);
    if (o.tile) scene.tile = parse_size(*o.tile);
    if (o.stride) scene.stride = parse_size(*o.stride);
    if (o.bootstrap) scene.bootstrap = *o.bootstrap;
    validate_scene(scene);
}

std::string hex(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

void write_text(const std::string& path, const std::string& text) {
    write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

Algorithm algorithm(const CommonOptions& o) { return o.baseline ? Algorithm::baseline : Algorithm::stabilized; }

int cmd_panorama(const CommonOptions& o, int width, int height) {
    Scene scene;
    if (o.scene.empty()) {
        scene = default_panorama_scene({height, width});
    } else {
        scene = load_scene(o.scene);
        if (scene.canvas.height != height || scene.canvas.width != width) scene = resize_scene(scene, {height, width});
    }
    apply_common(scene, o);
    auto backend = make_backend(o.backend, scene_schedule(scene));
    auto codec = make_codec(codec_kind(o.codec), false);
    const PanoramaReport rep = render_panorama(scene, backend, codec, algorithm(o));
    const Size2 latent = scene.latent_size();
    std::cout << "canvas " << height << "x" << width << " (latent " << latent.height << "x" << latent.width << ")\n"
              << "tiles " << rep.result.tile_count << " (tile " << scene.tile.height << "x" << scene.tile.width
              << ", stride " << scene.stride.height << "x" << scene.stride.width << ")\n"
              << "aggregation weight min " << rep.result.min_weight << " max " << rep.result.max_weight << "\n"
              << "image hash " << hex(hash_image(rep.result.image)) << "\n"
              << "time " << std::fixed << std::setprecision(2) << rep.seconds << " s\n";
    if (!o.out.empty()) write_file(o.out, encode_png(rep.result.image));
    if (!o.report.empty()) {
        json j;
        j["canvas"] = {{"height", height}, {"width", width}};
        j["tiles"] = rep.result.tile_count;
        j["min_weight"] = rep.result.min_weight;
        j["max_weight"] = rep.result.max_weight;
        j["image_hash"] = hex(hash_image(rep.result.image));
        write_text(o.report, j.dump(2) + "\n");
    }
    return 0;
}

int cmd_regions(const CommonOptions& o, double sigma, const std::string& canvas, const std::string& stack_dir) {
    Scene scene = o.scene.empty() ? default_regions_scene(parse_size(canvas), sigma) : load_scene(o.scene);
    apply_common(scene, o);
    auto backend = make_backend(o.backend, scene_schedule(scene));
    auto codec = make_codec(codec_kind(o.codec), false);
    const RegionsReport rep = render_regions(scene, backend, codec, algorithm(o));
    std::cout << std::left << std::setw(6) << "id" << std::setw(16) << "brush" << std::right << std::setw(10) << "IoU"
              << "\n";
    json j;
    j["image_hash"] = hex(hash_image(rep.result.image));
    j["brushes"] = json::array();
    double worst = 1.0;
    for (const auto& b : rep.brushes) {
        std::cout << std::left << std::setw(6) << b.id << std::setw(16) << b.name << std::right << std::fixed
                  << std::setprecision(4) << std::setw(10) << b.iou << "\n";
        j["brushes"].push_back({{"id", b.id}, {"name", b.name}, {"iou", b.iou}, {"expected", b.expected},
                                {"predicted", b.predicted}});
        worst = std::min(worst, b.iou);
    }
    std::cout << "min IoU " << std::fixed << std::setprecision(4) << worst << "\n" << kRegionsNotice << "\n";
    if (!o.out.empty()) write_file(o.out, encode_png(rep.result.image));
    if (!o.report.empty()) write_text(o.report, j.dump(2) + "\n");
    if (!stack_dir.empty()) {
        std::filesystem::create_directories(stack_dir);
        Engine engine(scene_schedule(scene), job_config(scene, algorithm(o)), backend, codec);
        const auto prepared = engine.prepare(scene_palette(scene, *codec), scene.latent_size());
        for (const auto& b : prepared->brushes) {
            const auto path = std::filesystem::path(stack_dir) / ("mask_" + std::to_string(b.id) + ".png");
            write_file(path, encode_mask_stack(b.weights));
        }
    }
    return 0;
}

int cmd_bench(const CommonOptions& o, int latency_ms, int frames, const std::string& canvas) {
    Scene scene = o.scene.empty() ? default_regions_scene(parse_size(canvas), 1.0) : load_scene(o.scene);
    if (!o.steps) scene.steps = 5;
    apply_common(scene, o);
    BenchConfig cfg;
    cfg.steps = scene.steps;
    cfg.latency = std::chrono::milliseconds(latency_ms);
    cfg.frames = frames;
    const auto schedule = scene_schedule(scene);
    const BenchReport rep = run_bench(scene, cfg, [&] { return make_backend(o.backend, schedule); });
    std::cout << format_bench(rep) << kBenchNotice << "\n";
    bool same = true;
    for (const auto& row : rep.rows) same = same && row.hashes == rep.rows.front().hashes;
    std::cout << "frames identical across rows: " << (same ? "yes" : "no") << "\n";
    if (!o.out.empty()) {
        // Timings vary between runs; the file holds only the deterministic part.
        json j;
        j["steps"] = cfg.steps;
        j["frames"] = frames + 1;
        j["seed"] = scene.seed;
        j["rows"] = json::array();
        for (const auto& row : rep.rows) {
            json r;
            r["name"] = row.name;
            r["hashes"] = json::array();
            for (auto h : row.hashes) r["hashes"].push_back(hex(h));
            j["rows"].push_back(r);
        }
        write_text(o.out, j.dump(2) + "\n");
    }
    return same ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Region-based real-time image generation"};
    app.require_subcommand(1);

    CommonOptions pano_opts;
    int width = 4608;
    int height = 512;
    auto* pano = app.add_subcommand("panorama", "Render a wide canvas with overlapping tiles");
    add_common(pano, pano_opts);
    pano->add_option("--width", width, "Canvas width in pixels")->check(CLI::PositiveNumber);
    pano->add_option("--height", height, "Canvas height in pixels")->check(CLI::PositiveNumber);
    pano->add_option("--codec", pano_opts.codec, "standard or tiny");
    pano->add_option("--report", pano_opts.report, "Write a JSON coverage report");
    pano->add_flag("--baseline", pano_opts.baseline, "Use the unstabilized reference algorithm");

    CommonOptions reg_opts;
    double sigma = 0.0;
    std::string reg_canvas = "512x512";
    std::string stack_dir;
    auto* reg = app.add_subcommand("regions", "Render a scene and score each brush's region");
    add_common(reg, reg_opts);
    reg->add_option("--sigma", sigma, "Mask blur of the built-in scene, latent pixels")->check(CLI::NonNegativeNumber);
    reg->add_option("--canvas", reg_canvas, "Canvas of the built-in scene, HxW");
    reg->add_option("--codec", reg_opts.codec, "standard or tiny");
    reg->add_option("--report", reg_opts.report, "Write a JSON IoU report");
    reg->add_option("--mask-stack", stack_dir, "Write each brush's per-step masks as animated PNGs here");
    reg->add_flag("--baseline", reg_opts.baseline, "Use the unstabilized reference algorithm");

    CommonOptions bench_opts;
    int latency_ms = 50;
    int frames = 20;
    std::string bench_canvas = "512x512";
    auto* bench = app.add_subcommand("bench", "Compare sequential and pipelined throughput");
    add_common(bench, bench_opts);
    bench->add_option("--latency-ms", latency_ms, "Simulated denoiser latency per call")->check(CLI::NonNegativeNumber);
    bench->add_option("--frames", frames, "Timed frames per row")->check(CLI::PositiveNumber);
    bench->add_option("--canvas", bench_canvas, "Canvas of the built-in scene, HxW");

    std::string config_path;
    ServiceConfig svc;
    std::optional<std::string> svc_host, svc_scene, svc_mode, svc_canvas, svc_backend, svc_codec;
    std::optional<int> svc_port, svc_steps, svc_latency;
    std::optional<std::uint64_t> svc_seed;
    std::optional<double> svc_fps;
    bool svc_autoplay = false;
    auto* serve = app.add_subcommand("serve", "Run the HTTP/WebSocket streaming service");
    serve->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
    serve->add_option("--host", svc_host, "Listen address");
    serve->add_option("--port", svc_port, "Listen port");
    serve->add_option("--scene", svc_scene, "Initial scene file")->check(CLI::ExistingFile);
    serve->add_option("--canvas", svc_canvas, "Canvas HxW when no scene is given");
    serve->add_option("--seed", svc_seed, "Seed base");
    serve->add_option("--steps", svc_steps, "Sampling steps")->check(CLI::PositiveNumber);
    serve->add_option("--mode", svc_mode, "Sampler")->check(CLI::IsMember({"ddim", "lcm"}));
    serve->add_option("--backend", svc_backend, "analytic or external:HOST:PORT");
    serve->add_option("--latency-ms", svc_latency, "Simulated denoiser latency per call");
    serve->add_option("--codec", svc_codec, "standard or tiny");
    serve->add_option("--fps-cap", svc_fps, "Upper bound on ticks per second");
    serve->add_flag("--autoplay", svc_autoplay, "Start streaming immediately");

    std::string ws_host = "127.0.0.1";
    std::uint16_t ws_port = 9000;
    std::string ws_mode = "lcm";
    auto* wsrv = app.add_subcommand("wire-server", "Serve the analytic denoiser over the binary wire protocol");
    wsrv->add_option("--host", ws_host, "Listen address");
    wsrv->add_option("--port", ws_port, "Listen port");
    wsrv->add_option("--mode", ws_mode, "Schedule the analytic model assumes")->check(CLI::IsMember({"ddim", "lcm"}));

    CLI11_PARSE(app, argc, argv);

    try {
        if (*pano) return cmd_panorama(pano_opts, width, height);
        if (*reg) return cmd_regions(reg_opts, sigma, reg_canvas, stack_dir);
        if (*bench) return cmd_bench(bench_opts, latency_ms, frames, bench_canvas);
        if (*serve) {
            if (!config_path.empty()) svc = load_service_config(config_path);
            apply_env_overrides(svc, [](const char* k) { return std::getenv(k); });
            if (svc_host) svc.host = *svc_host;
            if (svc_port) svc.port = static_cast<std::uint16_t>(*svc_port);
            if (svc_scene) svc.scene = *svc_scene;
            if (svc_canvas) svc.canvas = parse_size(*svc_canvas);
            if (svc_seed) svc.seed = *svc_seed;
            if (svc_steps) svc.steps = *svc_steps;
            if (svc_mode) svc.mode = parse_sampler_mode(*svc_mode);
            if (svc_backend) svc.backend = *svc_backend;
            if (svc_latency) svc.latency = std::chrono::milliseconds(*svc_latency);
            if (svc_codec) svc.codec = codec_kind(*svc_codec);
            if (svc_fps && *svc_fps > 0) svc.min_tick_period = std::chrono::milliseconds(static_cast<long long>(1000.0 / *svc_fps));
            if (svc_autoplay) svc.autoplay = true;
            Service service(svc);
            std::cout << "listening on " << svc.host << ":" << service.port() << std::endl;
            service.run();
            return 0;
        }
        if (*wsrv) {
            sigset_t set;
            sigemptyset(&set);
            sigaddset(&set, SIGINT);
            sigaddset(&set, SIGTERM);
            pthread_sigmask(SIG_BLOCK, &set, nullptr);
            const auto schedule = NoiseSchedule().with_mode(parse_sampler_mode(ws_mode));
            wire::Server server(std::make_shared<AnalyticDenoiser>(schedule), ws_host, ws_port);
            std::cout << "listening on " << ws_host << ":" << server.port() << std::endl;
            int sig = 0;
            sigwait(&set, &sig);
            server.stop();
            return 0;
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
