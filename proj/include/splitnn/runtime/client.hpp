#pragma once

#include <map>
#include <string>
#include <vector>

#include "splitnn/codec/feature.hpp"
#include "splitnn/nn/graph.hpp"
#include "splitnn/pipeline.hpp"
#include "splitnn/runtime/frame.hpp"
#include "splitnn/runtime/transport.hpp"

namespace splitnn::runtime {

struct EncoderEntry {
    nn::LayerGraph<float> encoder;
    float q = 1.0f;
    std::string checkpoint_hash;
};

// Device side: the head plus one encoder per parameter set.
struct ClientModel {
    nn::LayerGraph<float> head;
    std::map<std::uint8_t, EncoderEntry> encoders;
    std::uint16_t image_height = 0;
    std::uint16_t image_width = 0;

    const EncoderEntry& entry(std::uint8_t id) const {
        auto it = encoders.find(id);
        if (it == encoders.end()) throw InputError("parameter set " + std::to_string(id) + " is not in the client registry");
        return it->second;
    }

    // Serialized INFER_REQ body for one image (C, H, W) or (1, C, H, W).
    std::vector<std::uint8_t> encode_request(const Tensor<float>& image, std::uint8_t id) const {
        const EncoderEntry& e = entry(id);
        Tensor<float> x = image.shape().rank() == 3 ? reshape(image, nn::detail::batched(1, image.shape())) : image;
        if (x.shape()[0] != 1) throw ShapeError("encode_request takes a single image");
        Tensor<float> feat = nn::forward(head, x, std::size_t{0}, head.size());
        Tensor<float> z = nn::forward(e.encoder, feat, std::size_t{0}, e.encoder.size());
        const codec::FeatureMeta meta{id, image_height, image_width};
        return codec::serialize(codec::encode(quantize(slice_batch(z, 0), QuantParams{e.q}), QuantParams{e.q}, meta));
    }
};

struct InferResult {
    std::uint16_t class_index = 0;
    std::vector<float> logits;
    std::uint64_t request_bits = 0;  // serialized feature sent
};

// One connection, one request in flight at a time.
class Client {
public:
    explicit Client(Stream s, int timeout_ms = 10000) : s_(std::move(s)), timeout_ms_(timeout_ms) {}

    static Client connect(const Endpoint& ep, int timeout_ms = 10000) {
        return Client(tcp_connect(ep, timeout_ms), timeout_ms);
    }

    bool is_open() const noexcept { return s_.is_open(); }
    void close() noexcept { s_.close(); }
    int timeout_ms() const noexcept { return timeout_ms_; }
    void set_timeout_ms(int t) noexcept { timeout_ms_ = t; }

    void ping() {
        Frame f = round_trip(MsgType::ping, {});
        if (f.type != MsgType::pong) throw ProtocolError(ErrorCode::malformed, "expected PONG");
        if (!f.body.empty()) throw ProtocolError(ErrorCode::malformed, "PONG with a body");
    }

    InferResult infer_body(std::span<const std::uint8_t> feature_bytes) {
        Frame f = round_trip(MsgType::infer_req, feature_bytes);
        if (f.type != MsgType::infer_resp) throw ProtocolError(ErrorCode::malformed, "expected INFER_RESP");
        InferResponse r;
        try {
            r = decode_infer_response(f.body);
        } catch (const DecodeError& e) {
            throw ProtocolError(ErrorCode::malformed, std::string("bad INFER_RESP: ") + e.what());
        }
        return {r.class_index, std::move(r.logits), std::uint64_t{feature_bytes.size()} * 8};
    }

    InferResult infer(const ClientModel& m, const Tensor<float>& image, std::uint8_t param_set_id) {
        return infer_body(m.encode_request(image, param_set_id));
    }

    Stream& stream() noexcept { return s_; }

private:
    // ERROR frames surface as ServerError; the connection stays usable
    // unless the server closes it.
    Frame round_trip(MsgType type, std::span<const std::uint8_t> body) {
        send_frame(s_, type, body, timeout_ms_);
        Frame f;
        if (!recv_frame(s_, f, timeout_ms_)) throw ConnectionError("server closed the connection");
        if (f.type == MsgType::error) {
            ErrorBody e;
            try {
                e = decode_error(f.body);
            } catch (const DecodeError& d) {
                throw ProtocolError(ErrorCode::malformed, std::string("bad ERROR frame: ") + d.what());
            }
            throw ServerError(e.code, e.message);
        }
        return f;
    }

    Stream s_;
    int timeout_ms_;
};

}  // namespace splitnn::runtime
