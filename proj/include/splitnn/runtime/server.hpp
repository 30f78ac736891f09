#pragma once

#include <atomic>
#include <chrono>
#include <cstdio>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <ostream>
#include <string>
#include <thread>

#include "splitnn/codec/feature.hpp"
#include "splitnn/nn/graph.hpp"
#include "splitnn/nn/loss.hpp"
#include "splitnn/pipeline.hpp"
#include "splitnn/runtime/frame.hpp"
#include "splitnn/runtime/transport.hpp"

namespace splitnn::runtime {

struct DecoderEntry {
    nn::LayerGraph<float> decoder;
    float q = 1.0f;
    std::string checkpoint_hash;
};

// Everything the server needs; shared read-only between handlers.
struct ServerModel {
    std::map<std::uint8_t, DecoderEntry> decoders;
    nn::LayerGraph<float> tail;
    std::uint16_t image_height = 0;
    std::uint16_t image_width = 0;

    void validate() const {
        if (decoders.empty()) throw ConfigError("server registry is empty");
        if (tail.size() == 0) throw ConfigError("server has no tail graph");
        for (const auto& [id, d] : decoders)
            if (d.decoder.output_shape_of() != tail.input_shape)
                throw ShapeError("decoder for parameter set " + std::to_string(id) + " does not feed the tail");
    }
};

struct RequestStats {
    std::uint8_t param_set_id = 0;
    std::uint64_t bits = 0;          // whole serialized feature
    std::uint32_t payload_bits = 0;  // Huffman payload only
    double bpp = 0.0;
};

// Body of one INFER_REQ to the response. Failures come out as ProtocolError
// with the code to send back.
inline InferResponse handle_infer(const ServerModel& m, std::span<const std::uint8_t> body,
                                  RequestStats* stats = nullptr) {
    // id sits after magic + version; look it up before a full parse
    constexpr std::size_t kIdOffset = 5;
    if (body.size() <= kIdOffset) throw ProtocolError(ErrorCode::bad_payload, "INFER_REQ body too short for a feature");
    auto it = m.decoders.find(body[kIdOffset]);
    if (it == m.decoders.end())
        throw ProtocolError(ErrorCode::unknown_param_set,
                            "unknown parameter set " + std::to_string(body[kIdOffset]));
    const DecoderEntry& d = it->second;

    codec::CompressedFeature c;
    Tensor<float> codes;
    try {
        c = codec::parse(body);
        codes = reconstruct<float>(c);
    } catch (const DecodeError& e) {
        throw ProtocolError(ErrorCode::bad_payload, std::string("bad feature payload: ") + e.what());
    }
    if (c.q != d.q)
        throw ProtocolError(ErrorCode::bad_payload, "feature Q does not match parameter set " + std::to_string(it->first));
    if (Shape{c.channels, c.height, c.width} != d.decoder.input_shape)
        throw ProtocolError(ErrorCode::bad_payload,
                            "feature dims do not match parameter set " + std::to_string(it->first));
    if ((m.image_height && c.image_height != m.image_height) || (m.image_width && c.image_width != m.image_width))
        throw ProtocolError(ErrorCode::bad_payload, "feature image dims do not match the served model");

    Tensor<float> x = reshape(std::move(codes), nn::detail::batched(1, d.decoder.input_shape));
    Tensor<float> h = nn::forward(d.decoder, x, std::size_t{0}, d.decoder.size());
    Tensor<float> y = nn::forward(m.tail, h, std::size_t{0}, m.tail.size());
    y = reshape(std::move(y), Shape{1, y.numel()});

    InferResponse r;
    r.logits.assign(y.data().begin(), y.data().end());
    r.class_index = static_cast<std::uint16_t>(nn::argmax_rows(y)[0]);
    if (stats) {
        stats->param_set_id = it->first;
        stats->bits = std::uint64_t{body.size()} * 8;
        stats->payload_bits = c.payload_bit_count;
        stats->bpp = codec::bits_to_bpp(stats->bits, c.image_height, c.image_width);
    }
    return r;
}

struct ServerOptions {
    Endpoint listen{"127.0.0.1", 0};  // port 0 picks a free one
    std::uint32_t max_body = kDefaultMaxBody;
    int io_timeout_ms = 30000;  // per frame, once its first byte arrived
    std::ostream* log = nullptr;
};

class Server {
public:
    Server(std::shared_ptr<const ServerModel> model, ServerOptions opt) : model_(std::move(model)), opt_(opt) {
        model_->validate();
    }
    ~Server() { stop(); }
    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    void start() {
        if (listener_) throw StateError("server already started");
        listener_ = std::make_unique<Listener>(opt_.listen);
        stopping_ = false;
        acceptor_ = std::thread([this] { accept_loop(); });
    }

    std::uint16_t port() const { return listener_ ? listener_->port() : 0; }

    void stop() {
        stopping_ = true;
        if (acceptor_.joinable()) acceptor_.join();
        std::list<std::unique_ptr<Conn>> conns;
        {
            std::lock_guard lock(conns_mu_);
            conns.swap(conns_);
        }
        for (auto& c : conns)
            if (c->thread.joinable()) c->thread.join();
        listener_.reset();
    }

    // Runs one connection to completion on the calling thread.
    void serve_connection(Stream s) {
        Frame f;
        for (;;) {
            if (!s.wait_readable(100)) {
                if (stopping_) return;
                continue;
            }
            try {
                if (!recv_frame(s, f, opt_.io_timeout_ms, opt_.max_body)) return;
            } catch (const ProtocolError& e) {
                send_error(s, e.code(), e.what());
                return;
            } catch (const TimeoutError&) {
                send_error(s, ErrorCode::malformed, "incomplete frame: timed out waiting for the rest");
                return;
            } catch (const IoError&) {
                return;
            }
            try {
                if (!dispatch(s, f)) return;
            } catch (const IoError&) {
                return;
            }
        }
    }

    std::uint64_t requests_served() const noexcept { return served_.load(); }

private:
    struct Conn {
        std::thread thread;
        std::atomic<bool> done{false};
    };

    void accept_loop() {
        while (!stopping_) {
            Stream s = listener_->accept(100);
            reap();
            if (!s.is_open()) continue;
            auto c = std::make_unique<Conn>();
            Conn* raw = c.get();
            raw->thread = std::thread([this, raw, st = std::move(s)]() mutable {
                serve_connection(std::move(st));
                raw->done = true;
            });
            std::lock_guard lock(conns_mu_);
            conns_.push_back(std::move(c));
        }
    }

    void reap() {
        std::lock_guard lock(conns_mu_);
        for (auto it = conns_.begin(); it != conns_.end();) {
            if ((*it)->done) {
                (*it)->thread.join();
                it = conns_.erase(it);
            } else {
                ++it;
            }
        }
    }

    void send_error(Stream& s, ErrorCode code, const std::string& msg) {
        try {
            send_frame(s, MsgType::error, encode_error(static_cast<std::uint8_t>(code), msg), opt_.io_timeout_ms);
        } catch (const IoError&) {
        }
    }

    // False closes the connection.
    bool dispatch(Stream& s, const Frame& f) {
        switch (f.type) {
            case MsgType::ping:
                send_frame(s, MsgType::pong, {}, opt_.io_timeout_ms);
                return true;
            case MsgType::infer_req: {
                const auto t0 = std::chrono::steady_clock::now();
                RequestStats st;
                std::vector<std::uint8_t> resp;
                try {
                    resp = encode_infer_response(handle_infer(*model_, f.body, &st));
                } catch (const ProtocolError& e) {
                    send_error(s, e.code(), e.what());
                    return e.code() != ErrorCode::malformed && e.code() != ErrorCode::oversized;
                } catch (const std::exception& e) {
                    send_error(s, ErrorCode::internal, e.what());
                    return true;
                }
                send_frame(s, MsgType::infer_resp, resp, opt_.io_timeout_ms);
                ++served_;
                const double us =
                    std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - t0).count();
                log_request(st, us);
                return true;
            }
            default:
                send_error(s, ErrorCode::malformed,
                           "unexpected message type " + std::to_string(static_cast<int>(f.type)) + " from client");
                return false;
        }
    }

    void log_request(const RequestStats& st, double latency_us) {
        if (!opt_.log) return;
        char line[200];
        std::snprintf(line, sizeof line, "infer param_set_id=%u bits=%llu payload_bits=%u bpp=%.17g latency_us=%.1f\n",
                      unsigned{st.param_set_id}, static_cast<unsigned long long>(st.bits), st.payload_bits, st.bpp,
                      latency_us);
        std::lock_guard lock(log_mu_);
        *opt_.log << line << std::flush;
    }

    std::shared_ptr<const ServerModel> model_;
    ServerOptions opt_;
    std::unique_ptr<Listener> listener_;
    std::thread acceptor_;
    std::atomic<bool> stopping_{false};
    std::atomic<std::uint64_t> served_{0};
    std::mutex conns_mu_;
    std::list<std::unique_ptr<Conn>> conns_;
    std::mutex log_mu_;
};

}  // namespace splitnn::runtime
