#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <thread>

#include "regiondiff/denoiser.hpp"
#include "regiondiff/image_io.hpp"

namespace regiondiff::wire {

// Every message travels as u32 payload length (little-endian) followed by the
// payload, which starts with a 4-byte magic. All integers are u32 LE, all
// tensors are f32 LE in HWC order.
//
//   SMDR request       batch, H, W, D, batch x (timestep, conditioning id, H*W*D f32)
//   SMDE response      same layout, f32 carry the predicted noise
//   SMDC registration  id, K, K f32, H, W, D, H*W*D f32 (H = W = D = 0: no target)
//   SMDA ack           id
//   SMDX error         byte length, UTF-8 message
inline constexpr std::uint32_t kMaxPayload = 1u << 30;

enum class MessageType { request, response, registration, ack, error };

MessageType message_type(std::span<const std::uint8_t> payload);

Bytes encode_request(const DenoiseRequest& req);
DenoiseRequest decode_request(std::span<const std::uint8_t> payload);

Bytes encode_response(const DenoiseRequest& req, const std::vector<LatentCanvas>& eps);
// Checks that the response answers `req` (batch size, dims, echoed ids).
std::vector<LatentCanvas> decode_response(std::span<const std::uint8_t> payload, const DenoiseRequest& req);

Bytes encode_registration(const Conditioning& cond);
Conditioning decode_registration(std::span<const std::uint8_t> payload);

Bytes encode_ack(ConditioningId id);
ConditioningId decode_ack(std::span<const std::uint8_t> payload);

Bytes encode_error(const std::string& message);
std::string decode_error(std::span<const std::uint8_t> payload);

// Length prefix + payload.
Bytes frame(std::span<const std::uint8_t> payload);

struct Address {
    std::string host;
    std::uint16_t port = 0;
};
// "host:port" (host may be empty for localhost).
Address parse_address(const std::string& text);

// Denoiser backed by a remote process speaking the protocol above. One
// connection, one request in flight; reconnects after a failure.
class ClientDenoiser final : public Denoiser {
public:
    ClientDenoiser(Address address, std::chrono::milliseconds timeout = std::chrono::seconds(30));
    ~ClientDenoiser() override;

    void register_conditioning(const Conditioning& cond) override;
    std::vector<LatentCanvas> predict_noise(const DenoiseRequest& req) override;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Serves any Denoiser over the protocol on a background thread.
class Server {
public:
    // port 0 picks a free port; see port().
    Server(std::shared_ptr<Denoiser> backend, const std::string& host = "127.0.0.1", std::uint16_t port = 0);
    ~Server();
    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    std::uint16_t port() const;
    void stop();
    std::uint64_t requests_served() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Handles one decoded payload the way the server does; returns the reply
// payload. Protocol and backend failures become SMDX replies.
Bytes handle_payload(Denoiser& backend, std::span<const std::uint8_t> payload);

}  // namespace regiondiff::wire
