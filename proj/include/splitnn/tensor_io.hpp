#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "splitnn/bytes.hpp"
#include "splitnn/error.hpp"
#include "splitnn/tensor.hpp"

// Stand-alone f32 tensor file:
//   "SSTN"  u8 version  u8 rank  rank x u32 dim  numel x f32   (all LE)
namespace splitnn {

inline constexpr std::uint8_t kTensorFileVersion = 1;

inline std::vector<std::uint8_t> serialize_tensor(const Tensor<float>& t) {
    if (t.shape().rank() == 0 || t.shape().rank() > 8) throw ShapeError("tensor file rank must be in [1, 8]");
    ByteWriter w;
    w.str("SSTN");
    w.u8(kTensorFileVersion);
    w.u8(static_cast<std::uint8_t>(t.shape().rank()));
    for (std::size_t d : t.shape().dims()) {
        if (d > 0xFFFFFFFFu) throw RangeError("tensor dimension does not fit in u32");
        w.u32le(static_cast<std::uint32_t>(d));
    }
    for (float v : t.data()) w.f32le(v);
    return w.take();
}

inline Tensor<float> parse_tensor(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    r.expect_magic("SSTN");
    const std::size_t vat = r.offset();
    if (r.u8() != kTensorFileVersion) throw DecodeError("unsupported tensor file version", vat);
    const std::size_t rat = r.offset();
    const std::uint8_t rank = r.u8();
    if (rank == 0 || rank > 8) throw DecodeError("tensor rank out of range", rat);
    std::vector<std::size_t> dims;
    std::size_t n = 1;
    for (std::uint8_t i = 0; i < rank; ++i) {
        const std::size_t at = r.offset();
        const std::uint32_t d = r.u32le();
        if (d == 0) throw DecodeError("zero tensor dimension", at);
        n *= d;
        if (n > bytes.size()) throw DecodeError("tensor larger than file", at);
        dims.push_back(d);
    }
    Shape s(dims);
    if (r.remaining() != s.numel() * 4)
        throw DecodeError("tensor data is " + std::to_string(r.remaining()) + " bytes, expected " +
                              std::to_string(s.numel() * 4),
                          r.offset());
    std::vector<float> data(s.numel());
    for (auto& v : data) v = r.f32le();
    return Tensor<float>(std::move(s), std::move(data));
}

}  // namespace splitnn
