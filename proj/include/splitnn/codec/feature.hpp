#pragma once

#include <cstdint>
#include <limits>
#include <unordered_map>
#include <vector>

#include "splitnn/bytes.hpp"
#include "splitnn/codec/huffman.hpp"
#include "splitnn/error.hpp"
#include "splitnn/quantizer.hpp"

// Self-describing bitstream for one quantized feature tensor:
//
//   "SSCF"  u8 version  u8 param_set_id  f32 Q
//   u16 C_r  u16 H_r  u16 W_r  u16 H_img  u16 W_img          (all LE)
//   u16 entry_count  i32 min_symbol
//   entry_count x { varint symbol delta, u8 code length }   ascending symbols
//   u32 payload_bit_count  payload bytes (MSB-first, zero-padded)
namespace splitnn::codec {

inline constexpr std::uint8_t kFeatureVersion = 1;
inline constexpr std::size_t kFeatureHeaderBytes = 4 + 1 + 1 + 4 + 6 + 4 + 4;  // incl. payload_bit_count

struct CompressedFeature {
    std::uint8_t param_set_id = 0;
    float q = 1.0f;
    std::uint16_t channels = 0, height = 0, width = 0;  // C_r, H_r, W_r
    std::uint16_t image_height = 0, image_width = 0;
    CodeTable table;
    std::uint32_t payload_bit_count = 0;
    std::vector<std::uint8_t> payload;

    std::size_t symbol_count() const {
        return static_cast<std::size_t>(channels) * height * width;
    }

    friend bool operator==(const CompressedFeature&, const CompressedFeature&) = default;
};

struct FeatureMeta {
    std::uint8_t param_set_id = 0;
    std::uint16_t image_height = 0;
    std::uint16_t image_width = 0;
};

inline CompressedFeature encode(const SymbolTensor& s, QuantParams q, const FeatureMeta& meta) {
    q.validate();
    if (s.symbols.empty()) throw InputError("cannot encode an empty symbol tensor");
    if (s.shape.rank() != 3) throw InputError("feature symbols must be shaped (C, H, W), got " + s.shape.str());
    for (std::size_t d : s.shape.dims())
        if (d > 0xFFFF) throw RangeError("feature dimension does not fit in u16");

    CompressedFeature c;
    c.param_set_id = meta.param_set_id;
    c.q = q.step;
    c.channels = static_cast<std::uint16_t>(s.shape[0]);
    c.height = static_cast<std::uint16_t>(s.shape[1]);
    c.width = static_cast<std::uint16_t>(s.shape[2]);
    c.image_height = meta.image_height;
    c.image_width = meta.image_width;
    const Histogram hist = histogram(s.symbols);
    if (hist.size() > 0xFFFF) throw CapacityError("more than 65535 distinct symbols in one feature");
    c.table = build_code(hist);

    std::unordered_map<std::int32_t, const CodeEntry*> lookup;
    for (const auto& e : c.table.entries) lookup[e.symbol] = &e;
    BitWriter bw;
    for (std::int32_t v : s.symbols) {
        const CodeEntry* e = lookup.at(v);
        bw.put(e->code, e->length);
    }
    if (bw.bit_count() > std::numeric_limits<std::uint32_t>::max()) throw CapacityError("payload exceeds 2^32 bits");
    c.payload_bit_count = static_cast<std::uint32_t>(bw.bit_count());
    c.payload = bw.take();
    return c;
}

inline SymbolTensor decode(const CompressedFeature& c) {
    if (c.channels == 0 || c.height == 0 || c.width == 0) throw DecodeError("zero feature dimension", 0);
    if (c.table.entries.empty()) throw DecodeError("empty code table", 0);
    if (c.payload.size() != (static_cast<std::size_t>(c.payload_bit_count) + 7) / 8)
        throw DecodeError("payload size does not match payload_bit_count", 0);
    Decoder dec(c.table);
    BitReader br(c.payload, c.payload_bit_count);
    SymbolTensor s{Shape{c.channels, c.height, c.width}, {}};
    const std::size_t n = c.symbol_count();
    s.symbols.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        if (!dec.next(br, s.symbols[i]))
            throw DecodeError("invalid or truncated payload at bit " + std::to_string(br.position()), 0);
    if (!br.exhausted()) throw DecodeError("payload has trailing bits", 0);
    return s;
}

inline void write_table(ByteWriter& w, const CodeTable& t) {
    std::vector<CodeEntry> by_symbol = t.entries;
    std::sort(by_symbol.begin(), by_symbol.end(),
              [](const CodeEntry& a, const CodeEntry& b) { return a.symbol < b.symbol; });
    w.u16le(static_cast<std::uint16_t>(by_symbol.size()));
    const std::int32_t min_symbol = by_symbol.empty() ? 0 : by_symbol.front().symbol;
    w.i32le(min_symbol);
    std::int64_t prev = min_symbol;
    for (const auto& e : by_symbol) {
        w.varint(static_cast<std::uint64_t>(static_cast<std::int64_t>(e.symbol) - prev));
        w.u8(e.length);
        prev = e.symbol;
    }
}

inline std::vector<std::uint8_t> serialize(const CompressedFeature& c) {
    ByteWriter w;
    w.str("SSCF");
    w.u8(kFeatureVersion);
    w.u8(c.param_set_id);
    w.f32le(c.q);
    for (std::uint16_t v : {c.channels, c.height, c.width, c.image_height, c.image_width}) w.u16le(v);
    write_table(w, c.table);
    w.u32le(c.payload_bit_count);
    w.bytes(c.payload);
    return w.take();
}

// Parses and validates a serialized feature; every error carries the byte
// offset where it was detected.
inline CompressedFeature parse(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    r.expect_magic("SSCF");
    const std::size_t ver_at = r.offset();
    if (const auto v = r.u8(); v != kFeatureVersion)
        throw DecodeError("unsupported feature version " + std::to_string(v), ver_at);
    CompressedFeature c;
    c.param_set_id = r.u8();
    const std::size_t q_at = r.offset();
    c.q = r.f32le();
    if (!(c.q > 0.0f) || !std::isfinite(c.q)) throw DecodeError("invalid quantization step", q_at);
    const std::size_t dims_at = r.offset();
    for (std::uint16_t* f : {&c.channels, &c.height, &c.width, &c.image_height, &c.image_width}) *f = r.u16le();
    if (c.channels == 0 || c.height == 0 || c.width == 0) throw DecodeError("zero feature dimension", dims_at);

    const std::size_t count_at = r.offset();
    const std::uint16_t count = r.u16le();
    if (count == 0) throw DecodeError("empty code table", count_at);
    std::int64_t sym = r.i32le();
    std::vector<CodeEntry> entries;
    entries.reserve(count);
    for (std::uint16_t i = 0; i < count; ++i) {
        const std::size_t at = r.offset();
        const std::uint64_t delta = r.varint();
        if ((i == 0 && delta != 0) || (i > 0 && delta == 0))
            throw DecodeError("code table symbols not strictly ascending", at);
        if (delta > static_cast<std::uint64_t>(std::numeric_limits<std::uint32_t>::max()))
            throw DecodeError("symbol delta out of range", at);
        sym += static_cast<std::int64_t>(delta);
        if (sym > std::numeric_limits<std::int32_t>::max()) throw DecodeError("symbol out of 32-bit range", at);
        const std::size_t len_at = r.offset();
        const std::uint8_t len = r.u8();
        if (len < 1 || len > kMaxCodeLength) throw DecodeError("code length outside [1, 32]", len_at);
        entries.push_back({static_cast<std::int32_t>(sym), len, 0});
    }
    const std::size_t table_end = r.offset();
    try {
        c.table = canonical_from_lengths(std::move(entries));
    } catch (const InputError& e) {
        throw DecodeError(e.what(), table_end);
    }
    const std::size_t bits_at = r.offset();
    c.payload_bit_count = r.u32le();
    const std::size_t payload_bytes = (static_cast<std::size_t>(c.payload_bit_count) + 7) / 8;
    if (r.remaining() < payload_bytes) throw DecodeError("truncated payload", bits_at);
    auto p = r.bytes(payload_bytes);
    c.payload.assign(p.begin(), p.end());
    if (!r.at_end()) throw DecodeError("trailing bytes after payload", r.offset());
    return c;
}

// Bits of each serialized section. `payload` counts whole bytes, as a file
// would.
struct BitBudget {
    std::uint64_t header = 0;
    std::uint64_t table = 0;
    std::uint64_t payload = 0;
    std::uint64_t total() const noexcept { return header + table + payload; }
};

inline BitBudget bit_budget(const CompressedFeature& c) {
    ByteWriter t;
    write_table(t, c.table);
    return {kFeatureHeaderBytes * 8, t.size() * 8, ((static_cast<std::uint64_t>(c.payload_bit_count) + 7) / 8) * 8};
}

// Serialized bits over input-image pixels.
inline double measure_bpp(const CompressedFeature& c) {
    if (c.image_height == 0 || c.image_width == 0) throw InputError("image dimensions must be non-zero");
    return static_cast<double>(bit_budget(c).total()) /
           (static_cast<double>(c.image_height) * static_cast<double>(c.image_width));
}

inline double bits_to_bpp(std::uint64_t bits, std::size_t image_height, std::size_t image_width) {
    if (image_height == 0 || image_width == 0) throw InputError("image dimensions must be non-zero");
    return static_cast<double>(bits) / (static_cast<double>(image_height) * static_cast<double>(image_width));
}

}  // namespace splitnn::codec
