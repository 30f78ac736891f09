#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <queue>
#include <set>
#include <span>
#include <unordered_map>
#include <vector>

#include "splitnn/error.hpp"

namespace splitnn::codec {

inline constexpr unsigned kMaxCodeLength = 32;

struct CodeEntry {
    std::int32_t symbol = 0;
    std::uint8_t length = 0;
    std::uint32_t code = 0;  // canonical code, right-aligned in `length` bits

    friend bool operator==(const CodeEntry&, const CodeEntry&) = default;
};

// Canonical Huffman table. Entries are kept sorted by (length, symbol),
// which is the order codes are assigned in.
struct CodeTable {
    std::vector<CodeEntry> entries;

    std::size_t size() const noexcept { return entries.size(); }
    friend bool operator==(const CodeTable&, const CodeTable&) = default;
};

using Histogram = std::map<std::int32_t, std::uint64_t>;

inline double kraft_sum(const CodeTable& t) {
    double s = 0.0;
    for (const auto& e : t.entries) s += std::ldexp(1.0, -static_cast<int>(e.length));
    return s;
}

// Assigns canonical codes given (symbol, length) pairs; validates lengths
// and the Kraft inequality.
inline CodeTable canonical_from_lengths(std::vector<CodeEntry> entries) {
    if (entries.empty()) throw InputError("code table needs at least one symbol");
    for (const auto& e : entries)
        if (e.length < 1 || e.length > kMaxCodeLength) throw InputError("code length outside [1, 32]");
    std::sort(entries.begin(), entries.end(), [](const CodeEntry& a, const CodeEntry& b) {
        return a.length != b.length ? a.length < b.length : a.symbol < b.symbol;
    });
    std::set<std::int32_t> seen;
    for (const auto& e : entries)
        if (!seen.insert(e.symbol).second) throw InputError("duplicate symbol in code table");
    std::uint64_t code = 0;
    unsigned len = entries.front().length;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (i > 0) {
            ++code;
            code <<= (entries[i].length - len);
            len = entries[i].length;
        }
        if (code >> len) throw InputError("code lengths violate the Kraft inequality");
        entries[i].code = static_cast<std::uint32_t>(code);
    }
    CodeTable t{std::move(entries)};
    if (kraft_sum(t) > 1.0) throw InputError("code lengths violate the Kraft inequality");
    return t;
}

namespace detail {

// Rebalances a length histogram (count of codes per length) so no code is
// longer than `limit`, keeping the Kraft sum at or below 1.
inline void limit_lengths(std::vector<std::uint64_t>& bl_count, unsigned limit) {
    for (std::size_t i = bl_count.size() - 1; i > limit; --i) {
        while (bl_count[i] > 0) {
            std::size_t j = i - 2;
            while (bl_count[j] == 0) --j;
            bl_count[i] -= 2;
            bl_count[i - 1] += 1;
            bl_count[j + 1] += 2;
            bl_count[j] -= 1;
        }
    }
}

}  // namespace detail

// Optimal (length-limited to 32 bits) prefix code for a histogram.
inline CodeTable build_code(const Histogram& hist) {
    std::vector<std::pair<std::int32_t, std::uint64_t>> syms;
    for (const auto& [s, f] : hist)
        if (f > 0) syms.emplace_back(s, f);
    if (syms.empty()) throw InputError("cannot build a code for an empty input");
    if (syms.size() == 1) return canonical_from_lengths({{syms[0].first, 1, 0}});

    // Node pool: leaves first, then internal nodes. Ties break on node id,
    // so the result depends only on the histogram.
    struct Node {
        std::uint64_t freq;
        std::size_t id;
    };
    auto cmp = [](const Node& a, const Node& b) { return a.freq != b.freq ? a.freq > b.freq : a.id > b.id; };
    std::priority_queue<Node, std::vector<Node>, decltype(cmp)> pq(cmp);
    std::vector<std::size_t> parent(2 * syms.size() - 1, 0);
    for (std::size_t i = 0; i < syms.size(); ++i) pq.push({syms[i].second, i});
    std::size_t next = syms.size();
    while (pq.size() > 1) {
        Node a = pq.top();
        pq.pop();
        Node b = pq.top();
        pq.pop();
        parent[a.id] = next;
        parent[b.id] = next;
        pq.push({a.freq + b.freq, next});
        ++next;
    }
    const std::size_t root = next - 1;
    std::vector<unsigned> depth(next, 0);
    for (std::size_t i = root; i-- > 0;) depth[i] = depth[parent[i]] + 1;

    unsigned max_len = 0;
    for (std::size_t i = 0; i < syms.size(); ++i) max_len = std::max(max_len, depth[i]);
    std::vector<CodeEntry> entries(syms.size());
    if (max_len <= kMaxCodeLength) {
        for (std::size_t i = 0; i < syms.size(); ++i)
            entries[i] = {syms[i].first, static_cast<std::uint8_t>(depth[i]), 0};
        return canonical_from_lengths(std::move(entries));
    }

    std::vector<std::uint64_t> bl_count(max_len + 1, 0);
    for (std::size_t i = 0; i < syms.size(); ++i) ++bl_count[depth[i]];
    detail::limit_lengths(bl_count, kMaxCodeLength);
    // Most frequent symbols take the shortest lengths.
    std::vector<std::size_t> order(syms.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return syms[a].second != syms[b].second ? syms[a].second > syms[b].second : syms[a].first < syms[b].first;
    });
    std::size_t k = 0;
    for (unsigned len = 1; len <= kMaxCodeLength; ++len)
        for (std::uint64_t c = 0; c < bl_count[len]; ++c, ++k)
            entries[k] = {syms[order[k]].first, static_cast<std::uint8_t>(len), 0};
    return canonical_from_lengths(std::move(entries));
}

inline Histogram histogram(std::span<const std::int32_t> symbols) {
    Histogram h;
    for (std::int32_t s : symbols) ++h[s];
    return h;
}

// Expected bits per symbol of `t` under `hist`.
inline double average_length(const CodeTable& t, const Histogram& hist) {
    std::unordered_map<std::int32_t, unsigned> len;
    for (const auto& e : t.entries) len[e.symbol] = e.length;
    std::uint64_t total = 0;
    double bits = 0.0;
    for (const auto& [s, f] : hist) {
        auto it = len.find(s);
        if (it == len.end()) throw InputError("symbol missing from code table");
        total += f;
        bits += static_cast<double>(f) * it->second;
    }
    return total ? bits / static_cast<double>(total) : 0.0;
}

inline double entropy_bits(const Histogram& hist) {
    std::uint64_t total = 0;
    for (const auto& [s, f] : hist) total += f;
    double h = 0.0;
    for (const auto& [s, f] : hist) {
        if (f == 0) continue;
        const double p = static_cast<double>(f) / static_cast<double>(total);
        h -= p * std::log2(p);
    }
    return h;
}

// MSB-first bit packing.
class BitWriter {
public:
    void put(std::uint32_t code, unsigned length) {
        for (unsigned i = length; i-- > 0;) {
            if (bits_ % 8 == 0) bytes_.push_back(0);
            if ((code >> i) & 1u) bytes_.back() |= static_cast<std::uint8_t>(0x80u >> (bits_ % 8));
            ++bits_;
        }
    }
    std::uint64_t bit_count() const noexcept { return bits_; }
    std::vector<std::uint8_t> take() { return std::move(bytes_); }

private:
    std::vector<std::uint8_t> bytes_;
    std::uint64_t bits_ = 0;
};

class BitReader {
public:
    BitReader(std::span<const std::uint8_t> bytes, std::uint64_t bit_count) : bytes_(bytes), limit_(bit_count) {}

    bool exhausted() const noexcept { return pos_ >= limit_; }
    std::uint64_t position() const noexcept { return pos_; }

    unsigned get() {
        const unsigned b = (bytes_[pos_ / 8] >> (7 - pos_ % 8)) & 1u;
        ++pos_;
        return b;
    }

private:
    std::span<const std::uint8_t> bytes_;
    std::uint64_t limit_;
    std::uint64_t pos_ = 0;
};

// Table-driven canonical decoder.
class Decoder {
public:
    explicit Decoder(const CodeTable& t) {
        for (const auto& e : t.entries) {
            if (count_[e.length] == 0) {
                first_code_[e.length] = e.code;
                first_index_[e.length] = symbols_.size();
            }
            ++count_[e.length];
            symbols_.push_back(e.symbol);
        }
    }

    // Returns false when the bits run out or form no valid code.
    bool next(BitReader& r, std::int32_t& out) const {
        std::uint64_t code = 0;
        for (unsigned len = 1; len <= kMaxCodeLength; ++len) {
            if (r.exhausted()) return false;
            code = (code << 1) | r.get();
            if (count_[len] && code >= first_code_[len] && code - first_code_[len] < count_[len]) {
                out = symbols_[first_index_[len] + (code - first_code_[len])];
                return true;
            }
        }
        return false;
    }

private:
    std::uint64_t first_code_[kMaxCodeLength + 1] = {};
    std::uint64_t count_[kMaxCodeLength + 1] = {};
    std::size_t first_index_[kMaxCodeLength + 1] = {};
    std::vector<std::int32_t> symbols_;
};

}  // namespace splitnn::codec
