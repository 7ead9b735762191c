#include "regiondiff/scene.hpp"

#include <boost/beast/core/detail/base64.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace regiondiff {

namespace {

using ordered_json = nlohmann::ordered_json;
using json = nlohmann::json;
namespace b64 = boost::beast::detail::base64;

json parse_json(std::string_view text, const char* what) {
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw SceneError(std::string(what) + " is not valid JSON: " + e.what());
    }
}

template <typename T>
T get_field(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) {
        throw SceneError(where + ": missing field '" + key + "'");
    }
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw SceneError(where + ": field '" + key + "' has the wrong type");
    }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
    return j.contains(key) ? get_field<T>(j, key, where) : fallback;
}

Size2 parse_size(const json& j, const std::string& where) {
    if (!j.is_object()) {
        throw SceneError(where + " must be an object {height, width}");
    }
    return {get_field<int>(j, "height", where), get_field<int>(j, "width", where)};
}

ordered_json size_json(Size2 s) {
    ordered_json j;
    j["height"] = s.height;
    j["width"] = s.width;
    return j;
}

Bytes read_image_source(const json& j, const std::filesystem::path& base_dir, const std::string& where) {
    if (j.contains("png")) {
        return base64_decode(get_field<std::string>(j, "png", where));
    }
    if (j.contains("path")) {
        std::filesystem::path p = get_field<std::string>(j, "path", where);
        if (p.is_relative()) p = base_dir / p;
        try {
            return read_file(p);
        } catch (const ImageError& e) {
            throw SceneError(where + ": " + e.what());
        }
    }
    throw SceneError(where + ": expected 'png' or 'path'");
}

Grid<std::uint8_t> parse_mask(const json& j, Size2 canvas, const std::filesystem::path& base_dir,
                              const std::string& where) {
    if (!j.is_object()) {
        throw SceneError(where + ": mask must be an object");
    }
    Grid<std::uint8_t> mask(canvas.height, canvas.width, 0);
    if (j.contains("full")) {
        if (get_field<bool>(j, "full", where)) std::fill(mask.data.begin(), mask.data.end(), 255);
        return mask;
    }
    if (j.contains("rect")) {
        const auto r = get_field<std::vector<int>>(j, "rect", where);
        if (r.size() != 4) {
            throw SceneError(where + ": rect is [top, left, bottom, right]");
        }
        const int top = std::clamp(r[0], 0, canvas.height), left = std::clamp(r[1], 0, canvas.width);
        const int bottom = std::clamp(r[2], 0, canvas.height), right = std::clamp(r[3], 0, canvas.width);
        for (int y = top; y < bottom; ++y)
            for (int x = left; x < right; ++x) mask.at(y, x) = 255;
        return mask;
    }
    try {
        mask = decode_png_gray(read_image_source(j, base_dir, where));
    } catch (const ImageError& e) {
        throw SceneError(where + ": " + e.what());
    }
    if (mask.height != canvas.height || mask.width != canvas.width) {
        throw SceneError(where + ": mask is " + std::to_string(mask.height) + "x" + std::to_string(mask.width) +
                         ", canvas is " + std::to_string(canvas.height) + "x" + std::to_string(canvas.width));
    }
    return mask;
}

SceneTarget parse_target_json(const json& j, const std::filesystem::path& base_dir, const std::string& where) {
    if (!j.is_object()) {
        throw SceneError(where + ": target must be an object");
    }
    SceneTarget t;
    const int kinds = int(j.contains("color")) + int(j.contains("image")) + int(j.contains("conditioning"));
    if (kinds != 1) {
        throw SceneError(where + ": target needs exactly one of 'color', 'image', 'conditioning'");
    }
    if (j.contains("color")) {
        const auto c = get_field<std::vector<double>>(j, "color", where);
        if (c.size() != 3 || std::any_of(c.begin(), c.end(), [](double v) { return !(v >= 0.0 && v <= 1.0); })) {
            throw SceneError(where + ": color is [r, g, b] in [0, 1]");
        }
        t.color = std::array<double, 3>{c[0], c[1], c[2]};
    } else if (j.contains("image")) {
        t.image_png = read_image_source(j.at("image"), base_dir, where + ".image");
        try {
            decode_png_rgb(*t.image_png);
        } catch (const ImageError& e) {
            throw SceneError(where + ": " + e.what());
        }
    } else {
        t.conditioning = get_field<ConditioningId>(j, "conditioning", where);
    }
    return t;
}

SceneBrush parse_brush_json(const json& j, Size2 canvas, const std::filesystem::path& base_dir,
                            const std::string& where) {
    if (!j.is_object()) {
        throw SceneError(where + " must be an object");
    }
    SceneBrush b;
    b.name = get_or<std::string>(j, "name", "", where);
    b.is_background = get_or<bool>(j, "background", false, where);
    if (!j.contains("target")) {
        throw SceneError(where + ": missing target");
    }
    b.target = parse_target_json(j.at("target"), base_dir, where + ".target");
    b.alpha = get_or<double>(j, "alpha", 1.0, where);
    b.sigma = get_or<double>(j, "sigma", 0.0, where);
    b.strength = get_or<double>(j, "strength", 1.0, where);
    if (!b.is_background) {
        if (!j.contains("mask")) {
            throw SceneError(where + ": missing mask");
        }
        b.mask = parse_mask(j.at("mask"), canvas, base_dir, where + ".mask");
    }
    return b;
}

ordered_json target_json(const SceneTarget& t) {
    ordered_json j = ordered_json::object();
    if (t.color) {
        j["color"] = {(*t.color)[0], (*t.color)[1], (*t.color)[2]};
    } else if (t.image_png) {
        j["image"] = {{"png", base64_encode(*t.image_png)}};
    } else if (t.conditioning) {
        j["conditioning"] = *t.conditioning;
    }
    return j;
}

RgbImage resize_nearest(const RgbImage& src, int h, int w) {
    RgbImage out(h, w);
    for (int r = 0; r < h; ++r) {
        const int sr = static_cast<int>(static_cast<long long>(r) * src.height / h);
        for (int c = 0; c < w; ++c) {
            const int sc = static_cast<int>(static_cast<long long>(c) * src.width / w);
            for (int ch = 0; ch < 3; ++ch) out.at(r, c, ch) = src.at(sr, sc, ch);
        }
    }
    return out;
}

}  // namespace

std::string base64_encode(std::span<const std::uint8_t> bytes) {
    std::string out(b64::encoded_size(bytes.size()), '\0');
    out.resize(b64::encode(out.data(), bytes.data(), bytes.size()));
    return out;
}

Bytes base64_decode(std::string_view text) {
    std::size_t body = text.size();
    while (body > 0 && text[body - 1] == '=') --body;
    if (text.size() % 4 != 0 || text.size() - body > 2) {
        throw SceneError("malformed base64 payload");
    }
    Bytes out(b64::decoded_size(text.size()));
    const auto [written, read] = b64::decode(out.data(), text.data(), text.size());
    if (read != body) {
        throw SceneError("malformed base64 payload");
    }
    out.resize(written);
    return out;
}

const SceneBrush* Scene::find(BrushId id) const {
    for (const auto& b : brushes)
        if (b.id == id) return &b;
    return nullptr;
}

SceneBrush* Scene::find(BrushId id) {
    for (auto& b : brushes)
        if (b.id == id) return &b;
    return nullptr;
}

BrushId Scene::next_id() const {
    BrushId id = kBackgroundBrushId;
    for (const auto& b : brushes) id = std::max(id, b.id);
    return id + 1;
}

Scene blank_scene(Size2 canvas, std::array<double, 3> background) {
    Scene s;
    s.canvas = canvas;
    SceneBrush bg;
    bg.id = kBackgroundBrushId;
    bg.name = "background";
    bg.is_background = true;
    bg.target.color = background;
    s.brushes.push_back(std::move(bg));
    return s;
}

void validate_scene(const Scene& scene) {
    const auto& c = scene.canvas;
    if (c.height <= 0 || c.width <= 0 || c.height % kLatentScale != 0 || c.width % kLatentScale != 0) {
        throw SceneError("canvas " + std::to_string(c.height) + "x" + std::to_string(c.width) +
                         " must be positive and divisible by 8");
    }
    if (scene.steps < 1 || scene.steps > 1000) {
        throw SceneError("steps must lie in [1, 1000]");
    }
    if (scene.tile.height < 1 || scene.tile.width < 1 || scene.stride.height < 1 || scene.stride.width < 1) {
        throw SceneError("tile and stride must be positive");
    }
    if (scene.bootstrap && (*scene.bootstrap < 0 || *scene.bootstrap > scene.steps)) {
        throw SceneError("bootstrap must lie in [0, steps]");
    }
    if (scene.brushes.empty()) {
        throw SceneError("scene has no brushes; a background brush is required");
    }
    std::set<BrushId> ids;
    int backgrounds = 0;
    for (const auto& b : scene.brushes) {
        const std::string where = "brush " + std::to_string(b.id) + " ('" + b.name + "')";
        if (!ids.insert(b.id).second) {
            throw SceneError(where + ": duplicate id");
        }
        if (b.is_background) {
            ++backgrounds;
            if (b.id != kBackgroundBrushId) {
                throw SceneError(where + ": the background brush must have id 0");
            }
        } else {
            if (b.id == kBackgroundBrushId) {
                throw SceneError(where + ": id 0 is reserved for the background");
            }
            if (b.mask.height != c.height || b.mask.width != c.width) {
                throw SceneError(where + ": mask does not match the canvas");
            }
        }
        const int kinds = int(b.target.color.has_value()) + int(b.target.image_png.has_value()) +
                          int(b.target.conditioning.has_value());
        if (kinds != 1) {
            throw SceneError(where + ": target needs exactly one of color, image, conditioning");
        }
        if (!(b.alpha >= 0.0 && b.alpha <= 1.0) || !(b.sigma >= 0.0 && b.sigma <= 64.0) ||
            !(b.strength >= 0.0 && b.strength <= 1.0)) {
            throw SceneError(where + ": alpha and strength must lie in [0,1], sigma in [0,64]");
        }
    }
    if (backgrounds != 1) {
        throw SceneError("scene needs exactly one background brush, found " + std::to_string(backgrounds));
    }
}

std::string dump_scene(const Scene& scene) {
    validate_scene(scene);
    ordered_json j;
    j["format"] = "regiondiff-scene";
    j["version"] = kSceneVersion;
    j["canvas"] = size_json(scene.canvas);
    j["seed"] = scene.seed;
    j["mode"] = std::string(to_string(scene.mode));
    j["steps"] = scene.steps;
    j["tile"] = size_json(scene.tile);
    j["stride"] = size_json(scene.stride);
    j["bootstrap"] = scene.bootstrap ? ordered_json(*scene.bootstrap) : ordered_json(nullptr);
    ordered_json brushes = ordered_json::array();
    for (const auto& b : scene.brushes) {
        ordered_json o;
        o["id"] = b.id;
        o["name"] = b.name;
        o["background"] = b.is_background;
        if (!b.is_background) {
            o["mask"] = {{"png", base64_encode(encode_png_gray(b.mask))}};
        }
        o["target"] = target_json(b.target);
        o["alpha"] = b.alpha;
        o["sigma"] = b.sigma;
        o["strength"] = b.strength;
        brushes.push_back(std::move(o));
    }
    j["brushes"] = std::move(brushes);
    return j.dump(2) + "\n";
}

Scene parse_scene(std::string_view text, const std::filesystem::path& base_dir) {
    const json j = parse_json(text, "scene");
    if (!j.is_object()) {
        throw SceneError("scene must be a JSON object");
    }
    const std::string where = "scene";
    const int version = get_field<int>(j, "version", where);
    if (version != kSceneVersion) {
        throw MigrationError("scene version " + std::to_string(version) + " is not supported (expected " +
                             std::to_string(kSceneVersion) + ")");
    }
    if (j.contains("format") && get_field<std::string>(j, "format", where) != "regiondiff-scene") {
        throw SceneError("unknown scene format");
    }
    Scene s;
    s.canvas = parse_size(j.at("canvas"), "scene.canvas");
    s.seed = get_or<std::uint64_t>(j, "seed", 0, where);
    try {
        s.mode = parse_sampler_mode(get_or<std::string>(j, "mode", "lcm", where));
    } catch (const ParameterError& e) {
        throw SceneError(e.what());
    }
    s.steps = get_or<int>(j, "steps", 4, where);
    if (j.contains("tile")) s.tile = parse_size(j.at("tile"), "scene.tile");
    if (j.contains("stride")) s.stride = parse_size(j.at("stride"), "scene.stride");
    if (j.contains("bootstrap") && !j.at("bootstrap").is_null()) s.bootstrap = get_field<int>(j, "bootstrap", where);
    if (s.canvas.height <= 0 || s.canvas.width <= 0 || s.canvas.height % 8 || s.canvas.width % 8) {
        throw SceneError("canvas must be positive and divisible by 8");
    }
    const json brushes = j.contains("brushes") ? j.at("brushes") : json::array();
    if (!brushes.is_array()) {
        throw SceneError("scene.brushes must be an array");
    }
    BrushId next = 1;
    for (std::size_t k = 0; k < brushes.size(); ++k) {
        const std::string bw = "scene.brushes[" + std::to_string(k) + "]";
        SceneBrush b = parse_brush_json(brushes[k], s.canvas, base_dir, bw);
        if (brushes[k].contains("id")) {
            b.id = get_field<BrushId>(brushes[k], "id", bw);
        } else {
            b.id = b.is_background ? kBackgroundBrushId : next;
        }
        if (!b.is_background) next = std::max(next, b.id + 1);
        s.brushes.push_back(std::move(b));
    }
    validate_scene(s);
    return s;
}

SceneBrush parse_brush(std::string_view text, Size2 canvas, const std::filesystem::path& base_dir) {
    return parse_brush_json(parse_json(text, "brush"), canvas, base_dir, "brush");
}

SceneTarget parse_target(std::string_view text, const std::filesystem::path& base_dir) {
    return parse_target_json(parse_json(text, "target"), base_dir, "target");
}

Scene load_scene(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw SceneError("cannot open scene " + path.string());
    }
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_scene(buf.str(), path.parent_path());
}

void save_scene(const Scene& scene, const std::filesystem::path& path) {
    const std::string text = dump_scene(scene);
    write_file(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

NoiseSchedule scene_schedule(const Scene& scene) { return NoiseSchedule().with_mode(scene.mode); }

GenerationConfig scene_config(const Scene& scene) {
    GenerationConfig cfg = default_config(make_timesteps(scene_schedule(scene), scene.steps));
    cfg.tile = scene.tile;
    cfg.stride = scene.stride;
    cfg.seed = scene.seed;
    if (scene.bootstrap) cfg.n_bootstrap = *scene.bootstrap;
    return cfg;
}

Conditioning target_conditioning(const SceneTarget& target, const Codec& codec, Size2 tile) {
    Conditioning c;
    if (target.conditioning) {
        c.id = *target.conditioning;
        return c;
    }
    LatentCanvas latent;
    if (target.color) {
        const auto& rgb = *target.color;
        latent = encode_constant_color(codec, tile.height, tile.width, static_cast<float>(rgb[0]),
                                       static_cast<float>(rgb[1]), static_cast<float>(rgb[2]));
    } else if (target.image_png) {
        const RgbImage img = decode_png_rgb(*target.image_png);
        latent = codec.encode(resize_nearest(img, tile.height * kLatentScale, tile.width * kLatentScale));
    } else {
        throw ConditioningError("brush target is empty");
    }
    c.vector.assign(static_cast<std::size_t>(latent.channels), 0.0f);
    std::vector<double> sum(static_cast<std::size_t>(latent.channels), 0.0);
    for (std::size_t k = 0; k < latent.data.size(); ++k) sum[k % static_cast<std::size_t>(latent.channels)] += latent.data[k];
    const double px = static_cast<double>(latent.height) * latent.width;
    for (std::size_t ch = 0; ch < sum.size(); ++ch) c.vector[ch] = static_cast<float>(sum[ch] / px);
    c.target = std::move(latent);
    return c;
}

std::vector<SemanticBrush> scene_palette(const Scene& scene, const Codec& codec) {
    validate_scene(scene);
    const Size2 latent = scene.latent_size();
    const Size2 tile = make_tiles(latent, scene.tile, scene.stride).tile;
    std::vector<SemanticBrush> out;
    for (const auto& b : scene.brushes) {
        SemanticBrush sb;
        sb.id = b.id;
        sb.name = b.name;
        sb.is_background = b.is_background;
        sb.conditioning = target_conditioning(b.target, codec, tile);
        sb.raw_mask = b.is_background ? Mask(latent.height, latent.width, 1.0f) : downsample_mask(b.mask);
        sb.alpha = b.alpha;
        sb.blur_sigma = b.sigma;
        sb.strength = b.strength;
        out.push_back(std::move(sb));
    }
    return out;
}

}  // namespace regiondiff
