#include "regiondiff/wire.hpp"

#include <boost/asio.hpp>

#include <atomic>
#include <cstring>
#include <mutex>

namespace regiondiff::wire {

namespace asio = boost::asio;
using tcp = asio::ip::tcp;

namespace {

constexpr std::uint32_t kMaxDim = 1u << 16;

class Writer {
public:
    explicit Writer(const char* magic) { out_.insert(out_.end(), magic, magic + 4); }
    void u32(std::uint32_t v) {
        for (int k = 0; k < 4; ++k) out_.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
    }
    void f32(std::span<const float> v) {
        const std::size_t at = out_.size();
        out_.resize(at + 4 * v.size());
        for (std::size_t k = 0; k < v.size(); ++k) {
            std::uint32_t bits;
            std::memcpy(&bits, &v[k], 4);
            for (int b = 0; b < 4; ++b) out_[at + 4 * k + b] = static_cast<std::uint8_t>(bits >> (8 * b));
        }
    }
    void bytes(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }
    Bytes take() { return std::move(out_); }

private:
    Bytes out_;
};

class Reader {
public:
    Reader(std::span<const std::uint8_t> p, const char* magic) : p_(p) {
        if (p_.size() < 4 || std::memcmp(p_.data(), magic, 4) != 0) {
            throw ProtocolError(std::string("expected a ") + magic + " message");
        }
        pos_ = 4;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int k = 0; k < 4; ++k) v |= std::uint32_t{p_[pos_ + k]} << (8 * k);
        pos_ += 4;
        return v;
    }
    void f32(std::span<float> out) {
        need(4 * out.size());
        for (std::size_t k = 0; k < out.size(); ++k) {
            std::uint32_t bits = 0;
            for (int b = 0; b < 4; ++b) bits |= std::uint32_t{p_[pos_ + 4 * k + b]} << (8 * b);
            std::memcpy(&out[k], &bits, 4);
        }
        pos_ += 4 * out.size();
    }
    std::string text(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(p_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    void need(std::size_t n) const {
        if (p_.size() - pos_ < n) throw ProtocolError("message is truncated");
    }
    void finish() const {
        if (pos_ != p_.size()) throw ProtocolError("message has trailing bytes");
    }

private:
    std::span<const std::uint8_t> p_;
    std::size_t pos_ = 0;
};

void check_dims(std::uint32_t h, std::uint32_t w, std::uint32_t d) {
    if (h > kMaxDim || w > kMaxDim || d > 64) {
        throw ProtocolError("tensor dimensions out of range");
    }
}

// Reads the shared request/response layout.
DenoiseRequest read_batch(Reader& r, std::vector<LatentCanvas>* tensors) {
    const std::uint32_t batch = r.u32(), h = r.u32(), w = r.u32(), d = r.u32();
    check_dims(h, w, d);
    const std::uint64_t elems = std::uint64_t{h} * w * d;
    if (batch > 0 && elems == 0) {
        throw ProtocolError("non-empty batch with empty tensors");
    }
    const std::uint64_t per_item = 8 + 4 * elems;
    if (per_item > kMaxPayload || batch > kMaxPayload / per_item) {
        throw ProtocolError("message is truncated");
    }
    r.need(static_cast<std::size_t>(batch * per_item));
    DenoiseRequest req;
    for (std::uint32_t k = 0; k < batch; ++k) {
        DenoiseItem item;
        item.timestep = static_cast<int>(r.u32());
        item.conditioning = r.u32();
        item.latent = LatentCanvas(static_cast<int>(h), static_cast<int>(w), static_cast<int>(d));
        r.f32(item.latent.data);
        if (tensors) {
            tensors->push_back(std::move(item.latent));
            item.latent = {};
        }
        req.items.push_back(std::move(item));
    }
    r.finish();
    return req;
}

void write_batch_header(Writer& w, const DenoiseRequest& req) {
    const LatentCanvas* first = req.items.empty() ? nullptr : &req.items.front().latent;
    w.u32(static_cast<std::uint32_t>(req.items.size()));
    w.u32(first ? static_cast<std::uint32_t>(first->height) : 0);
    w.u32(first ? static_cast<std::uint32_t>(first->width) : 0);
    w.u32(first ? static_cast<std::uint32_t>(first->channels) : 0);
}

}  // namespace

MessageType message_type(std::span<const std::uint8_t> p) {
    if (p.size() < 4) throw ProtocolError("message shorter than its magic");
    const std::string_view m(reinterpret_cast<const char*>(p.data()), 4);
    if (m == "SMDR") return MessageType::request;
    if (m == "SMDE") return MessageType::response;
    if (m == "SMDC") return MessageType::registration;
    if (m == "SMDA") return MessageType::ack;
    if (m == "SMDX") return MessageType::error;
    throw ProtocolError("unknown message magic");
}

Bytes encode_request(const DenoiseRequest& req) {
    check_request_shapes(req);
    Writer w("SMDR");
    write_batch_header(w, req);
    for (const auto& item : req.items) {
        if (item.timestep < 0) throw ParameterError("negative timestep");
        w.u32(static_cast<std::uint32_t>(item.timestep));
        w.u32(item.conditioning);
        w.f32(item.latent.data);
    }
    return w.take();
}

DenoiseRequest decode_request(std::span<const std::uint8_t> payload) {
    Reader r(payload, "SMDR");
    return read_batch(r, nullptr);
}

Bytes encode_response(const DenoiseRequest& req, const std::vector<LatentCanvas>& eps) {
    if (eps.size() != req.items.size()) throw ShapeError("response size does not match the request");
    Writer w("SMDE");
    write_batch_header(w, req);
    for (std::size_t k = 0; k < eps.size(); ++k) {
        require_same_shape(eps[k], req.items[k].latent, "response");
        w.u32(static_cast<std::uint32_t>(req.items[k].timestep));
        w.u32(req.items[k].conditioning);
        w.f32(eps[k].data);
    }
    return w.take();
}

std::vector<LatentCanvas> decode_response(std::span<const std::uint8_t> payload, const DenoiseRequest& req) {
    Reader r(payload, "SMDE");
    std::vector<LatentCanvas> eps;
    const DenoiseRequest echo = read_batch(r, &eps);
    if (echo.items.size() != req.items.size()) throw ProtocolError("response batch size differs from the request");
    for (std::size_t k = 0; k < eps.size(); ++k) {
        if (!eps[k].same_shape(req.items[k].latent)) throw ProtocolError("response tensor shape differs");
        if (echo.items[k].timestep != req.items[k].timestep || echo.items[k].conditioning != req.items[k].conditioning)
            throw ProtocolError("response does not echo the request's timestep/conditioning");
    }
    return eps;
}

Bytes encode_registration(const Conditioning& cond) {
    Writer w("SMDC");
    w.u32(cond.id);
    w.u32(static_cast<std::uint32_t>(cond.vector.size()));
    w.f32(cond.vector);
    if (cond.target) {
        w.u32(static_cast<std::uint32_t>(cond.target->height));
        w.u32(static_cast<std::uint32_t>(cond.target->width));
        w.u32(static_cast<std::uint32_t>(cond.target->channels));
        w.f32(cond.target->data);
    } else {
        w.u32(0);
        w.u32(0);
        w.u32(0);
    }
    return w.take();
}

Conditioning decode_registration(std::span<const std::uint8_t> payload) {
    Reader r(payload, "SMDC");
    Conditioning c;
    c.id = r.u32();
    const std::uint32_t k = r.u32();
    r.need(4ull * k);
    c.vector.resize(k);
    r.f32(c.vector);
    const std::uint32_t h = r.u32(), w = r.u32(), d = r.u32();
    check_dims(h, w, d);
    if (std::uint64_t{h} * w * d > 0) {
        r.need(4ull * h * w * d);
        LatentCanvas t(static_cast<int>(h), static_cast<int>(w), static_cast<int>(d));
        r.f32(t.data);
        c.target = std::move(t);
    } else if (h || w || d) {
        throw ProtocolError("target has a zero dimension");
    }
    r.finish();
    return c;
}

Bytes encode_ack(ConditioningId id) {
    Writer w("SMDA");
    w.u32(id);
    return w.take();
}

ConditioningId decode_ack(std::span<const std::uint8_t> payload) {
    Reader r(payload, "SMDA");
    const auto id = r.u32();
    r.finish();
    return id;
}

Bytes encode_error(const std::string& message) {
    Writer w("SMDX");
    w.u32(static_cast<std::uint32_t>(message.size()));
    w.bytes(message);
    return w.take();
}

std::string decode_error(std::span<const std::uint8_t> payload) {
    Reader r(payload, "SMDX");
    const auto n = r.u32();
    auto s = r.text(n);
    r.finish();
    return s;
}

Bytes frame(std::span<const std::uint8_t> payload) {
    if (payload.size() > kMaxPayload) throw ProtocolError("payload too large");
    Bytes out(4 + payload.size());
    const auto n = static_cast<std::uint32_t>(payload.size());
    for (int k = 0; k < 4; ++k) out[static_cast<std::size_t>(k)] = static_cast<std::uint8_t>(n >> (8 * k));
    std::memcpy(out.data() + 4, payload.data(), payload.size());
    return out;
}

Address parse_address(const std::string& text) {
    const auto colon = text.rfind(':');
    if (colon == std::string::npos) throw ParameterError("address must be host:port, got '" + text + "'");
    Address a;
    a.host = text.substr(0, colon);
    if (a.host.empty()) a.host = "127.0.0.1";
    try {
        const int port = std::stoi(text.substr(colon + 1));
        if (port <= 0 || port > 65535) throw std::out_of_range("port");
        a.port = static_cast<std::uint16_t>(port);
    } catch (const std::exception&) {
        throw ParameterError("invalid port in '" + text + "'");
    }
    return a;
}

Bytes handle_payload(Denoiser& backend, std::span<const std::uint8_t> payload) {
    try {
        switch (message_type(payload)) {
            case MessageType::request: {
                const DenoiseRequest req = decode_request(payload);
                return encode_response(req, backend.predict_noise(req));
            }
            case MessageType::registration: {
                const Conditioning c = decode_registration(payload);
                backend.register_conditioning(c);
                return encode_ack(c.id);
            }
            default:
                throw ProtocolError("server accepts only SMDR and SMDC messages");
        }
    } catch (const std::exception& e) {
        return encode_error(e.what());
    }
}

// ---- client ---------------------------------------------------------------

struct ClientDenoiser::Impl {
    Address address;
    std::chrono::milliseconds timeout;
    asio::io_context ioc;
    tcp::socket socket{ioc};
    std::mutex mu;

    // Runs queued async work for at most `timeout`; closes the socket on expiry.
    void run(const char* what) {
        ioc.restart();
        ioc.run_for(timeout);
        if (!ioc.stopped()) {
            socket.close();
            ioc.run();
            throw BackendError(std::string("denoiser backend timed out during ") + what);
        }
    }

    void connect() {
        if (socket.is_open()) return;
        boost::system::error_code ec = asio::error::would_block;
        tcp::resolver resolver(ioc);
        tcp::resolver::results_type endpoints;
        try {
            endpoints = resolver.resolve(address.host, std::to_string(address.port));
        } catch (const boost::system::system_error& e) {
            throw BackendError("cannot resolve " + address.host + ": " + e.what());
        }
        asio::async_connect(socket, endpoints, [&](boost::system::error_code e, const tcp::endpoint&) { ec = e; });
        run("connect");
        if (ec) {
            socket.close();
            throw BackendError("cannot connect to denoiser at " + address.host + ":" + std::to_string(address.port) +
                               ": " + ec.message());
        }
        socket.set_option(tcp::no_delay(true));
    }

    Bytes transact(const Bytes& payload) {
        std::lock_guard lock(mu);
        connect();
        try {
            const Bytes out = frame(payload);
            boost::system::error_code ec = asio::error::would_block;
            asio::async_write(socket, asio::buffer(out), [&](boost::system::error_code e, std::size_t) { ec = e; });
            run("send");
            if (ec) throw BackendError("send to denoiser failed: " + ec.message());

            std::uint8_t header[4];
            ec = asio::error::would_block;
            asio::async_read(socket, asio::buffer(header), [&](boost::system::error_code e, std::size_t) { ec = e; });
            run("receive");
            if (ec) throw BackendError("receive from denoiser failed: " + ec.message());
            const std::uint32_t n = std::uint32_t{header[0]} | (std::uint32_t{header[1]} << 8) |
                                    (std::uint32_t{header[2]} << 16) | (std::uint32_t{header[3]} << 24);
            if (n > kMaxPayload) throw BackendError("denoiser reply exceeds the size limit");
            Bytes reply(n);
            ec = asio::error::would_block;
            asio::async_read(socket, asio::buffer(reply), [&](boost::system::error_code e, std::size_t) { ec = e; });
            run("receive");
            if (ec) throw BackendError("receive from denoiser failed: " + ec.message());
            return reply;
        } catch (...) {
            boost::system::error_code ignore;
            socket.close(ignore);
            throw;
        }
    }
};

ClientDenoiser::ClientDenoiser(Address address, std::chrono::milliseconds timeout) : impl_(std::make_unique<Impl>()) {
    impl_->address = std::move(address);
    impl_->timeout = timeout;
}

ClientDenoiser::~ClientDenoiser() = default;

void ClientDenoiser::register_conditioning(const Conditioning& cond) {
    const Bytes reply = impl_->transact(encode_registration(cond));
    try {
        if (message_type(reply) == MessageType::error) {
            throw ConditioningError("backend rejected conditioning " + std::to_string(cond.id) + ": " +
                                    decode_error(reply));
        }
        if (decode_ack(reply) != cond.id) throw ProtocolError("ack names a different conditioning");
    } catch (const ProtocolError& e) {
        throw BackendError(std::string("bad reply from denoiser: ") + e.what());
    }
}

std::vector<LatentCanvas> ClientDenoiser::predict_noise(const DenoiseRequest& req) {
    const Bytes reply = impl_->transact(encode_request(req));
    try {
        if (message_type(reply) == MessageType::error) {
            throw BackendError("denoiser failed: " + decode_error(reply));
        }
        return decode_response(reply, req);
    } catch (const ProtocolError& e) {
        throw BackendError(std::string("bad reply from denoiser: ") + e.what());
    }
}

// ---- server ---------------------------------------------------------------

namespace {

class Session : public std::enable_shared_from_this<Session> {
public:
    Session(tcp::socket socket, std::shared_ptr<Denoiser> backend, std::atomic<std::uint64_t>& served)
        : socket_(std::move(socket)), backend_(std::move(backend)), served_(served) {}

    void start() { read_header(); }

private:
    void read_header() {
        auto self = shared_from_this();
        asio::async_read(socket_, asio::buffer(header_), [self](boost::system::error_code ec, std::size_t) {
            if (ec) return;
            const std::uint32_t n = std::uint32_t{self->header_[0]} | (std::uint32_t{self->header_[1]} << 8) |
                                    (std::uint32_t{self->header_[2]} << 16) | (std::uint32_t{self->header_[3]} << 24);
            if (n > kMaxPayload) {
                // Framing is lost: report and drop the connection.
                self->reply(encode_error("payload exceeds the size limit"), false);
                return;
            }
            self->body_.resize(n);
            self->read_body();
        });
    }

    void read_body() {
        auto self = shared_from_this();
        asio::async_read(socket_, asio::buffer(body_), [self](boost::system::error_code ec, std::size_t) {
            if (ec) return;
            ++self->served_;
            self->reply(handle_payload(*self->backend_, self->body_), true);
        });
    }

    void reply(const Bytes& payload, bool keep) {
        out_ = frame(payload);
        auto self = shared_from_this();
        asio::async_write(socket_, asio::buffer(out_), [self, keep](boost::system::error_code ec, std::size_t) {
            if (!ec && keep) self->read_header();
        });
    }

    tcp::socket socket_;
    std::shared_ptr<Denoiser> backend_;
    std::atomic<std::uint64_t>& served_;
    std::uint8_t header_[4]{};
    Bytes body_;
    Bytes out_;
};

}  // namespace

struct Server::Impl {
    std::shared_ptr<Denoiser> backend;
    asio::io_context ioc;
    tcp::acceptor acceptor{ioc};
    std::thread thread;
    std::atomic<std::uint64_t> served{0};
    std::uint16_t port = 0;

    void accept() {
        acceptor.async_accept([this](boost::system::error_code ec, tcp::socket socket) {
            if (ec) return;
            socket.set_option(tcp::no_delay(true));
            std::make_shared<Session>(std::move(socket), backend, served)->start();
            accept();
        });
    }
};

Server::Server(std::shared_ptr<Denoiser> backend, const std::string& host, std::uint16_t port)
    : impl_(std::make_unique<Impl>()) {
    impl_->backend = std::move(backend);
    try {
        const tcp::endpoint ep(asio::ip::make_address(host), port);
        impl_->acceptor.open(ep.protocol());
        impl_->acceptor.set_option(tcp::acceptor::reuse_address(true));
        impl_->acceptor.bind(ep);
        impl_->acceptor.listen();
    } catch (const boost::system::system_error& e) {
        throw BackendError("cannot listen on " + host + ":" + std::to_string(port) + ": " + e.what());
    }
    impl_->port = impl_->acceptor.local_endpoint().port();
    impl_->accept();
    impl_->thread = std::thread([this] { impl_->ioc.run(); });
}

Server::~Server() { stop(); }

std::uint16_t Server::port() const { return impl_->port; }

std::uint64_t Server::requests_served() const { return impl_->served.load(); }

void Server::stop() {
    impl_->ioc.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace regiondiff::wire
