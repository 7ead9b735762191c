#include "regiondiff/service.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include <cstdlib>
#include <cstring>
#include <deque>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"
#include "regiondiff/backend.hpp"

namespace regiondiff {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;
using json = nlohmann::json;

// ---- config ---------------------------------------------------------------

namespace {

Size2 parse_canvas_text(const std::string& s) {
    const auto x = s.find('x');
    if (x == std::string::npos) throw ParameterError("canvas must be HxW, got '" + s + "'");
    try {
        return {std::stoi(s.substr(0, x)), std::stoi(s.substr(x + 1))};
    } catch (const std::exception&) {
        throw ParameterError("canvas must be HxW, got '" + s + "'");
    }
}

CodecKind parse_codec(const std::string& s) {
    if (s == "standard") return CodecKind::standard;
    if (s == "tiny") return CodecKind::tiny;
    throw ParameterError("codec must be standard or tiny, got '" + s + "'");
}

std::chrono::milliseconds period_for_fps(double fps) {
    if (fps <= 0.0) return std::chrono::milliseconds(0);
    return std::chrono::milliseconds(static_cast<long long>(1000.0 / fps));
}

}  // namespace

ServiceConfig load_service_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParameterError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ParameterError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    ServiceConfig c;
    try {
        if (j.contains("host")) c.host = j.at("host").get<std::string>();
        if (j.contains("port")) c.port = j.at("port").get<std::uint16_t>();
        if (j.contains("scene")) {
            std::filesystem::path p = j.at("scene").get<std::string>();
            c.scene = p.is_relative() ? path.parent_path() / p : p;
        }
        if (j.contains("canvas")) c.canvas = Size2{j.at("canvas").at("height").get<int>(), j.at("canvas").at("width").get<int>()};
        if (j.contains("steps")) c.steps = j.at("steps").get<int>();
        if (j.contains("mode")) c.mode = parse_sampler_mode(j.at("mode").get<std::string>());
        if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("backend")) c.backend = j.at("backend").get<std::string>();
        if (j.contains("latency_ms")) c.latency = std::chrono::milliseconds(j.at("latency_ms").get<int>());
        if (j.contains("codec")) c.codec = parse_codec(j.at("codec").get<std::string>());
        if (j.contains("fps_cap")) c.min_tick_period = period_for_fps(j.at("fps_cap").get<double>());
        if (j.contains("autoplay")) c.autoplay = j.at("autoplay").get<bool>();
    } catch (const json::exception& e) {
        throw ParameterError("config " + path.string() + ": " + e.what());
    }
    return c;
}

void apply_env_overrides(ServiceConfig& c, const std::function<const char*(const char*)>& getenv) {
    auto get = [&](const char* key) -> std::optional<std::string> {
        const char* v = getenv(key);
        if (!v || !*v) return std::nullopt;
        return std::string(v);
    };
    auto number = [](const std::string& key, const std::string& v) {
        try {
            std::size_t used = 0;
            const long long n = std::stoll(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return n;
        } catch (const std::exception&) {
            throw ParameterError(key + " must be an integer, got '" + v + "'");
        }
    };
    if (auto v = get("REGIONDIFF_HOST")) c.host = *v;
    if (auto v = get("REGIONDIFF_PORT")) c.port = static_cast<std::uint16_t>(number("REGIONDIFF_PORT", *v));
    if (auto v = get("REGIONDIFF_SCENE")) c.scene = *v;
    if (auto v = get("REGIONDIFF_CANVAS")) c.canvas = parse_canvas_text(*v);
    if (auto v = get("REGIONDIFF_STEPS")) c.steps = static_cast<int>(number("REGIONDIFF_STEPS", *v));
    if (auto v = get("REGIONDIFF_MODE")) c.mode = parse_sampler_mode(*v);
    if (auto v = get("REGIONDIFF_SEED")) c.seed = static_cast<std::uint64_t>(number("REGIONDIFF_SEED", *v));
    if (auto v = get("REGIONDIFF_BACKEND")) c.backend = *v;
    if (auto v = get("REGIONDIFF_LATENCY_MS")) c.latency = std::chrono::milliseconds(number("REGIONDIFF_LATENCY_MS", *v));
    if (auto v = get("REGIONDIFF_CODEC")) c.codec = parse_codec(*v);
    if (auto v = get("REGIONDIFF_FPS_CAP")) c.min_tick_period = period_for_fps(std::stod(*v));
    if (auto v = get("REGIONDIFF_AUTOPLAY")) c.autoplay = *v == "1" || *v == "true";
}

Scene initial_scene(const ServiceConfig& cfg) {
    Scene s = cfg.scene ? load_scene(*cfg.scene) : blank_scene(cfg.canvas.value_or(Size2{512, 512}));
    if (cfg.canvas && cfg.scene && !(*cfg.canvas == s.canvas)) {
        throw ParameterError("configured canvas differs from the scene's canvas");
    }
    if (cfg.steps) s.steps = *cfg.steps;
    if (cfg.mode) s.mode = *cfg.mode;
    if (cfg.seed) s.seed = *cfg.seed;
    validate_scene(s);
    return s;
}

// ---- wire formats -----------------------------------------------------------

namespace {

template <typename T>
T field(const json& j, const char* key) {
    if (!j.contains(key)) throw CommandError(std::string("missing field '") + key + "'");
    const json& v = j.at(key);
    bool ok = true;
    if constexpr (std::is_unsigned_v<T>) {
        ok = v.is_number_unsigned() && v.get<std::uint64_t>() <= std::numeric_limits<T>::max();
    } else if constexpr (std::is_floating_point_v<T>) {
        ok = v.is_number();
    } else {
        ok = v.is_string();
    }
    if (!ok) throw CommandError(std::string("field '") + key + "' has the wrong type");
    return v.get<T>();
}

void put_u64(Bytes& out, std::uint64_t v) {
    for (int k = 0; k < 8; ++k) out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
}

void put_u32(Bytes& out, std::uint32_t v) {
    for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
}

std::uint64_t get_le(const std::uint8_t* p, int n) {
    std::uint64_t v = 0;
    for (int k = 0; k < n; ++k) v |= std::uint64_t{p[k]} << (8 * k);
    return v;
}

}  // namespace

Command parse_ws_command(std::string_view text, Size2 canvas) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw CommandError(std::string("message is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CommandError("command must be a JSON object");
    const auto cmd = field<std::string>(j, "cmd");
    try {
        if (cmd == "update_mask") {
            Grid<std::uint8_t> mask;
            try {
                mask = decode_png_gray(base64_decode(field<std::string>(j, "mask")));
            } catch (const Error& e) {
                throw CommandError(std::string("mask: ") + e.what());
            }
            return UpdateMask{field<BrushId>(j, "brush"), std::move(mask)};
        }
        if (cmd == "set_alpha") return SetAlpha{field<BrushId>(j, "brush"), field<double>(j, "value")};
        if (cmd == "set_sigma") return SetSigma{field<BrushId>(j, "brush"), field<double>(j, "value")};
        if (cmd == "set_strength") return SetStrength{field<BrushId>(j, "brush"), field<double>(j, "value")};
        if (cmd == "set_seed") return SetSeed{field<std::uint64_t>(j, "seed")};
        if (cmd == "play") return Play{};
        if (cmd == "pause") return Pause{};
        if (cmd == "step_once") return StepOnce{};
        if (cmd == "register_brush") {
            if (!j.contains("brush")) throw CommandError("missing field 'brush'");
            return RegisterBrush{parse_brush(j.at("brush").dump(), canvas)};
        }
        if (cmd == "remove_brush") return RemoveBrush{field<BrushId>(j, "brush")};
        if (cmd == "set_background") {
            if (!j.contains("target")) throw CommandError("missing field 'target'");
            return SetBackground{parse_target(j.at("target").dump())};
        }
    } catch (const SceneError& e) {
        throw CommandError(e.what());
    }
    throw CommandError("unknown command '" + cmd + "'");
}

Bytes encode_frame_message(const FramePacket& packet) {
    const Frame& f = packet.frame();
    const Bytes& png = packet.png();
    Bytes out = {'S', 'M', 'D', 'F'};
    out.reserve(kFrameHeaderSize + png.size());
    put_u64(out, f.tick);
    put_u64(out, f.index);
    put_u64(out, f.palette_version);
    put_u64(out, f.seed);
    put_u32(out, static_cast<std::uint32_t>(f.image.width));
    put_u32(out, static_cast<std::uint32_t>(f.image.height));
    out.insert(out.end(), png.begin(), png.end());
    return out;
}

FrameHeader decode_frame_header(std::span<const std::uint8_t> m) {
    if (m.size() < kFrameHeaderSize || std::memcmp(m.data(), "SMDF", 4) != 0) {
        throw ProtocolError("not a frame message");
    }
    FrameHeader h;
    h.tick = get_le(&m[4], 8);
    h.index = get_le(&m[12], 8);
    h.palette_version = get_le(&m[20], 8);
    h.seed = get_le(&m[28], 8);
    h.width = static_cast<std::uint32_t>(get_le(&m[36], 4));
    h.height = static_cast<std::uint32_t>(get_le(&m[40], 4));
    return h;
}

// ---- server -----------------------------------------------------------------

namespace {

using Request = http::request<http::string_body>;
using Response = http::response<http::string_body>;
using Respond = std::function<void(Response)>;

constexpr std::size_t kMaxBody = 64u << 20;
constexpr std::size_t kMaxPendingFrames = 2;

Response make_response(const Request& req, http::status status, std::string body,
                       const char* content_type = "application/json") {
    Response res{status, req.version()};
    res.set(http::field::server, "regiondiff");
    res.set(http::field::content_type, content_type);
    res.set(http::field::access_control_allow_origin, "*");
    res.keep_alive(req.keep_alive());
    res.body() = std::move(body);
    res.prepare_payload();
    return res;
}

Response json_response(const Request& req, http::status status, const json& body) {
    return make_response(req, status, body.dump() + "\n");
}

Response error_response(const Request& req, http::status status, const std::string& message) {
    return json_response(req, status, {{"error", message}});
}

json result_json(const CommandResult& r) {
    json j;
    j["palette_version"] = r.palette_version;
    j["applies_at_tick"] = r.applies_at_tick;
    if (r.brush) j["id"] = *r.brush;
    return j;
}

bool looks_like_png(const std::string& body) {
    static const char sig[8] = {'\x89', 'P', 'N', 'G', '\r', '\n', '\x1a', '\n'};
    return body.size() >= 8 && std::memcmp(body.data(), sig, 8) == 0;
}

}  // namespace

struct Service::Impl {
    ServiceConfig cfg;
    std::unique_ptr<StreamDriver> driver;
    asio::io_context ioc;
    tcp::acceptor acceptor{ioc};
    std::thread thread;
    std::uint16_t port = 0;

    void accept();
    void handle(const Request& req, Respond respond);
};

namespace {

class WsSession : public std::enable_shared_from_this<WsSession> {
public:
    WsSession(tcp::socket socket, Service::Impl& svc) : ws_(std::move(socket)), svc_(svc) {}

    ~WsSession() {
        if (token_) svc_.driver->events().unsubscribe(token_);
    }

    void run(Request req) {
        ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
        ws_.read_message_max(kMaxBody);
        auto self = shared_from_this();
        ws_.async_accept(req, [self](beast::error_code ec) {
            if (ec) return;
            std::weak_ptr<WsSession> weak = self;
            auto exec = self->ws_.get_executor();
            self->token_ = self->svc_.driver->events().subscribe([weak, exec](const StreamEvent& ev) {
                if (auto s = weak.lock()) {
                    asio::post(exec, [s, ev] { s->on_event(ev); });
                }
            });
            self->read();
        });
    }

private:
    struct Outgoing {
        std::shared_ptr<const std::string> text;
        std::shared_ptr<const Bytes> binary;
        bool droppable = false;
    };

    void read() {
        auto self = shared_from_this();
        ws_.async_read(buf_, [self](beast::error_code ec, std::size_t) {
            if (ec) {
                self->close();
                return;
            }
            if (!self->ws_.got_text()) {
                self->send_json({{"event", "error"}, {"message", "binary messages are not accepted"}});
            } else {
                self->on_command(beast::buffers_to_string(self->buf_.data()));
            }
            self->buf_.consume(self->buf_.size());
            self->read();
        });
    }

    void close() {
        if (token_) {
            svc_.driver->events().unsubscribe(token_);
            token_ = 0;
        }
    }

    void on_command(std::string text) {
        json req_id;
        std::string cmd_name;
        try {
            const json j = json::parse(text);
            if (j.is_object()) {
                if (j.contains("req")) req_id = j.at("req");
                if (j.contains("cmd") && j.at("cmd").is_string()) cmd_name = j.at("cmd").get<std::string>();
            }
        } catch (const json::exception&) {
        }
        std::weak_ptr<WsSession> weak = shared_from_this();
        auto exec = ws_.get_executor();
        svc_.driver->control([weak, exec, text = std::move(text), req_id, cmd_name](StreamPipeline& p) {
            json reply;
            try {
                const Command cmd = parse_ws_command(text, p.scene().canvas);
                const CommandResult r = p.apply(cmd);
                if (r.ok) {
                    reply = result_json(r);
                    reply["event"] = "ack";
                } else {
                    reply = {{"event", "error"}, {"message", r.error}};
                }
                reply["cmd"] = std::string(to_string(r.kind));
            } catch (const Error& e) {
                reply = {{"event", "error"}, {"message", e.what()}};
                if (!cmd_name.empty()) reply["cmd"] = cmd_name;
            }
            if (!req_id.is_null()) reply["req"] = req_id;
            if (auto s = weak.lock()) {
                asio::post(exec, [s, reply] { s->send_json(reply); });
            }
        });
    }

    void on_event(const StreamEvent& ev) {
        if (ev.frame) {
            auto msg = std::make_shared<const Bytes>(encode_frame_message(*ev.frame));
            // Keep at most kMaxPendingFrames queued frames; never touch the one being written.
            std::size_t pending = 0;
            for (std::size_t k = writing_ ? 1 : 0; k < out_.size(); ++k) pending += out_[k].droppable;
            if (pending >= kMaxPendingFrames) {
                for (std::size_t k = writing_ ? 1 : 0; k < out_.size(); ++k) {
                    if (out_[k].droppable) {
                        out_.erase(out_.begin() + static_cast<std::ptrdiff_t>(k));
                        break;
                    }
                }
            }
            push({nullptr, std::move(msg), true});
        } else {
            send_json({{"event", "error"}, {"source", "backend"}, {"tick", ev.tick}, {"message", ev.error}});
        }
    }

    void send_json(const json& j) { push({std::make_shared<const std::string>(j.dump()), nullptr, false}); }

    void push(Outgoing o) {
        out_.push_back(std::move(o));
        if (!writing_) write_next();
    }

    void write_next() {
        if (out_.empty()) return;
        writing_ = true;
        const Outgoing& o = out_.front();
        auto self = shared_from_this();
        auto done = [self](beast::error_code ec, std::size_t) {
            self->writing_ = false;
            if (ec) {
                self->out_.clear();
                return;
            }
            self->out_.pop_front();
            self->write_next();
        };
        if (o.binary) {
            ws_.binary(true);
            ws_.async_write(asio::buffer(*o.binary), std::move(done));
        } else {
            ws_.text(true);
            ws_.async_write(asio::buffer(*o.text), std::move(done));
        }
    }

    websocket::stream<beast::tcp_stream> ws_;
    Service::Impl& svc_;
    beast::flat_buffer buf_;
    std::deque<Outgoing> out_;
    bool writing_ = false;
    Broadcaster::Token token_ = 0;
};

class HttpSession : public std::enable_shared_from_this<HttpSession> {
public:
    HttpSession(tcp::socket socket, Service::Impl& svc) : stream_(std::move(socket)), svc_(svc) {}

    void run() { read(); }

private:
    void read() {
        parser_.emplace();
        parser_->body_limit(kMaxBody);
        stream_.expires_after(std::chrono::seconds(60));
        auto self = shared_from_this();
        http::async_read(stream_, buf_, *parser_, [self](beast::error_code ec, std::size_t) { self->on_read(ec); });
    }

    void on_read(beast::error_code ec) {
        if (ec == http::error::end_of_stream) {
            stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
            return;
        }
        if (ec == http::error::body_limit) {
            Request dummy;
            send(error_response(dummy, http::status::payload_too_large, "request body too large"), true);
            return;
        }
        if (ec) return;
        Request req = parser_->release();
        if (websocket::is_upgrade(req)) {
            if (req.target() != "/stream") {
                send(error_response(req, http::status::not_found, "websocket endpoint is /stream"), true);
                return;
            }
            stream_.expires_never();
            std::make_shared<WsSession>(stream_.release_socket(), svc_)->run(std::move(req));
            return;
        }
        auto self = shared_from_this();
        auto exec = stream_.get_executor();
        svc_.handle(req, [self, exec](Response res) {
            asio::post(exec, [self, res = std::move(res)]() mutable { self->send(std::move(res), false); });
        });
    }

    void send(Response res, bool close) {
        res_ = std::make_shared<Response>(std::move(res));
        const bool eof = close || res_->need_eof();
        auto self = shared_from_this();
        http::async_write(stream_, *res_, [self, eof](beast::error_code ec, std::size_t) {
            if (ec) return;
            if (eof) {
                self->stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
                return;
            }
            self->read();
        });
    }

    beast::tcp_stream stream_;
    Service::Impl& svc_;
    beast::flat_buffer buf_;
    std::optional<http::request_parser<http::string_body>> parser_;
    std::shared_ptr<Response> res_;
};

}  // namespace

void Service::Impl::accept() {
    acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
        if (ec) return;
        std::make_shared<HttpSession>(std::move(socket), *this)->run();
        accept();
    });
}

void Service::Impl::handle(const Request& req, Respond respond) {
    const std::string target(req.target());
    const auto method = req.method();
    // The shared pointer keeps the request alive until the driver runs the handler.
    auto r = std::make_shared<Request>(req);

    if (method == http::verb::options) {
        Response res = make_response(req, http::status::no_content, "");
        res.set(http::field::access_control_allow_methods, "GET, PUT, POST, DELETE, OPTIONS");
        res.set(http::field::access_control_allow_headers, "Content-Type");
        respond(std::move(res));
        return;
    }
    if (target == "/palette" && method == http::verb::post) {
        driver->control([r, respond](StreamPipeline& p) {
            try {
                SceneBrush b = parse_brush(r->body(), p.scene().canvas);
                const auto res = p.apply(RegisterBrush{std::move(b)});
                respond(res.ok ? json_response(*r, http::status::ok, result_json(res))
                               : error_response(*r, http::status::bad_request, res.error));
            } catch (const Error& e) {
                respond(error_response(*r, http::status::bad_request, e.what()));
            }
        });
        return;
    }
    if (target.rfind("/palette/", 0) == 0 && method == http::verb::delete_) {
        BrushId id = 0;
        try {
            std::size_t used = 0;
            const unsigned long v = std::stoul(target.substr(9), &used);
            if (used != target.size() - 9 || v > 0xffffffffu) throw std::invalid_argument("id");
            id = static_cast<BrushId>(v);
        } catch (const std::exception&) {
            respond(error_response(req, http::status::bad_request, "brush id must be an unsigned integer"));
            return;
        }
        driver->control([r, respond, id](StreamPipeline& p) {
            if (!p.scene().find(id)) {
                respond(error_response(*r, http::status::not_found, "no brush with id " + std::to_string(id)));
                return;
            }
            const auto res = p.apply(RemoveBrush{id});
            respond(res.ok ? json_response(*r, http::status::ok, result_json(res))
                           : error_response(*r, http::status::bad_request, res.error));
        });
        return;
    }
    if (target == "/background" && method == http::verb::post) {
        driver->control([r, respond](StreamPipeline& p) {
            try {
                SceneTarget t;
                if (looks_like_png(r->body())) {
                    t.image_png = Bytes(r->body().begin(), r->body().end());
                    decode_png_rgb(*t.image_png);
                } else {
                    t = parse_target(r->body());
                }
                const auto res = p.apply(SetBackground{std::move(t)});
                respond(res.ok ? json_response(*r, http::status::ok, result_json(res))
                               : error_response(*r, http::status::bad_request, res.error));
            } catch (const Error& e) {
                respond(error_response(*r, http::status::bad_request, e.what()));
            }
        });
        return;
    }
    if (target == "/scene" && method == http::verb::get) {
        driver->control([r, respond](StreamPipeline& p) {
            respond(make_response(*r, http::status::ok, dump_scene(p.scene())));
        });
        return;
    }
    if (target == "/scene" && method == http::verb::put) {
        driver->control([r, respond](StreamPipeline& p) {
            try {
                p.replace_scene(parse_scene(r->body()));
                respond(json_response(*r, http::status::ok, {{"palette_version", p.palette_version()}}));
            } catch (const MigrationError& e) {
                respond(error_response(*r, http::status::conflict, e.what()));
            } catch (const Error& e) {
                respond(error_response(*r, http::status::bad_request, e.what()));
            }
        });
        return;
    }
    const bool known = target == "/palette" || target == "/background" || target == "/scene" ||
                       target.rfind("/palette/", 0) == 0 || target == "/stream";
    respond(known ? error_response(req, http::status::method_not_allowed, "method not allowed")
                  : error_response(req, http::status::not_found, "no such endpoint"));
}

Service::Service(const ServiceConfig& cfg) : Service(cfg, nullptr) {}

Service::Service(const ServiceConfig& cfg, std::shared_ptr<Denoiser> backend) : impl_(std::make_unique<Impl>()) {
    impl_->cfg = cfg;
    Scene scene = initial_scene(cfg);
    if (!backend) backend = make_backend(cfg.backend, scene_schedule(scene), cfg.latency);
    auto pipeline = std::make_unique<StreamPipeline>(std::move(scene), std::move(backend), make_codec(cfg.codec));
    if (cfg.autoplay) pipeline->apply(Play{});
    impl_->driver = std::make_unique<StreamDriver>(std::move(pipeline), cfg.min_tick_period);
    try {
        const tcp::endpoint ep(asio::ip::make_address(cfg.host), cfg.port);
        impl_->acceptor.open(ep.protocol());
        impl_->acceptor.set_option(tcp::acceptor::reuse_address(true));
        impl_->acceptor.bind(ep);
        impl_->acceptor.listen();
    } catch (const boost::system::system_error& e) {
        impl_->driver->stop();
        throw ParameterError("cannot listen on " + cfg.host + ":" + std::to_string(cfg.port) + ": " + e.what());
    }
    impl_->port = impl_->acceptor.local_endpoint().port();
    impl_->accept();
}

Service::~Service() { stop(); }

std::uint16_t Service::port() const { return impl_->port; }

StreamDriver& Service::driver() { return *impl_->driver; }

void Service::start() {
    impl_->thread = std::thread([this] { impl_->ioc.run(); });
}

void Service::run() {
    asio::signal_set signals(impl_->ioc, SIGINT, SIGTERM);
    signals.async_wait([this](beast::error_code, int) {
        impl_->driver->stop();
        impl_->ioc.stop();
    });
    impl_->ioc.run();
}

void Service::stop() {
    impl_->driver->stop();
    impl_->ioc.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace regiondiff
