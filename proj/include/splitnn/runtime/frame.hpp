#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "splitnn/bytes.hpp"
#include "splitnn/error.hpp"

// Wire frame:  "SPLT"  u8 version  u8 msg_type  u32 body_length (BE)  body
namespace splitnn::runtime {

inline constexpr std::uint8_t kProtocolVersion = 1;
inline constexpr std::size_t kFrameHeaderSize = 10;
inline constexpr std::uint32_t kDefaultMaxBody = 16u << 20;

enum class MsgType : std::uint8_t { infer_req = 1, infer_resp = 2, error = 3, ping = 4, pong = 5 };

inline bool valid_msg_type(std::uint8_t t) { return t >= 1 && t <= 5; }

// ERROR frame codes.
enum class ErrorCode : std::uint8_t {
    malformed = 1,
    unknown_param_set = 2,
    oversized = 3,
    bad_payload = 4,  // body is not a decodable feature for that set
    internal = 5,
};

struct Frame {
    MsgType type = MsgType::ping;
    std::vector<std::uint8_t> body;

    friend bool operator==(const Frame&, const Frame&) = default;
};

struct FrameHeader {
    MsgType type = MsgType::ping;
    std::uint32_t body_length = 0;
};

// Framing failure, carrying the ERROR code the server answers with.
class ProtocolError : public Error {
public:
    ProtocolError(ErrorCode code, const std::string& what) : Error(what), code_(code) {}
    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

inline std::vector<std::uint8_t> encode_frame(MsgType type, std::span<const std::uint8_t> body) {
    if (body.size() > 0xFFFFFFFFu) throw CapacityError("frame body exceeds u32 length");
    ByteWriter w;
    w.str("SPLT");
    w.u8(kProtocolVersion);
    w.u8(static_cast<std::uint8_t>(type));
    w.u32be(static_cast<std::uint32_t>(body.size()));
    w.bytes(body);
    return w.take();
}

inline std::vector<std::uint8_t> encode_frame(const Frame& f) { return encode_frame(f.type, f.body); }

// Checks magic, version, type and length before any body byte is looked at.
inline FrameHeader parse_frame_header(std::span<const std::uint8_t> h, std::uint32_t max_body = kDefaultMaxBody) {
    if (h.size() < kFrameHeaderSize) throw ProtocolError(ErrorCode::malformed, "truncated frame header");
    if (h[0] != 'S' || h[1] != 'P' || h[2] != 'L' || h[3] != 'T')
        throw ProtocolError(ErrorCode::malformed, "bad frame magic");
    if (h[4] != kProtocolVersion)
        throw ProtocolError(ErrorCode::malformed, "unsupported protocol version " + std::to_string(h[4]));
    if (!valid_msg_type(h[5])) throw ProtocolError(ErrorCode::malformed, "unknown message type " + std::to_string(h[5]));
    FrameHeader out;
    out.type = static_cast<MsgType>(h[5]);
    out.body_length = (std::uint32_t{h[6]} << 24) | (std::uint32_t{h[7]} << 16) | (std::uint32_t{h[8]} << 8) | h[9];
    if (out.body_length > max_body)
        throw ProtocolError(ErrorCode::oversized, "frame body of " + std::to_string(out.body_length) +
                                                      " bytes exceeds the " + std::to_string(max_body) + " byte cap");
    return out;
}

// Whole frame from a buffer; the buffer must hold exactly one frame.
inline Frame parse_frame(std::span<const std::uint8_t> bytes, std::uint32_t max_body = kDefaultMaxBody) {
    const FrameHeader h = parse_frame_header(bytes, max_body);
    if (bytes.size() - kFrameHeaderSize < h.body_length) throw ProtocolError(ErrorCode::malformed, "truncated frame body");
    if (bytes.size() - kFrameHeaderSize > h.body_length)
        throw ProtocolError(ErrorCode::malformed, "trailing bytes after frame body");
    return {h.type, std::vector<std::uint8_t>(bytes.begin() + kFrameHeaderSize, bytes.end())};
}

// ---- bodies -----------------------------------------------------------------

struct InferResponse {
    std::uint16_t class_index = 0;
    std::vector<float> logits;

    friend bool operator==(const InferResponse&, const InferResponse&) = default;
};

inline std::vector<std::uint8_t> encode_infer_response(const InferResponse& r) {
    if (r.logits.size() > 0xFFFF) throw CapacityError("too many logits for one response");
    ByteWriter w;
    w.u16be(r.class_index);
    w.u16be(static_cast<std::uint16_t>(r.logits.size()));
    for (float v : r.logits) w.f32le(v);
    return w.take();
}

inline InferResponse decode_infer_response(std::span<const std::uint8_t> body) {
    ByteReader r(body);
    InferResponse out;
    out.class_index = r.u16be();
    const std::uint16_t n = r.u16be();
    out.logits.reserve(n);
    for (std::uint16_t i = 0; i < n; ++i) out.logits.push_back(r.f32le());
    if (!r.at_end()) throw DecodeError("trailing bytes in INFER_RESP body", r.offset());
    if (n > 0 && out.class_index >= n) throw DecodeError("class index outside logit range", 0);
    return out;
}

struct ErrorBody {
    std::uint8_t code = 0;
    std::string message;
};

inline std::vector<std::uint8_t> encode_error(std::uint8_t code, std::string message) {
    if (message.size() > 0xFFFF) message.resize(0xFFFF);
    ByteWriter w;
    w.u8(code);
    w.u16be(static_cast<std::uint16_t>(message.size()));
    w.str(message);
    return w.take();
}

inline ErrorBody decode_error(std::span<const std::uint8_t> body) {
    ByteReader r(body);
    ErrorBody e;
    e.code = r.u8();
    const std::uint16_t n = r.u16be();
    const auto msg = r.bytes(n);
    e.message.assign(msg.begin(), msg.end());
    if (!r.at_end()) throw DecodeError("trailing bytes in ERROR body", r.offset());
    return e;
}

}  // namespace splitnn::runtime
