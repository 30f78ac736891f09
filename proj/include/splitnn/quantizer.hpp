#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "splitnn/error.hpp"
#include "splitnn/tensor.hpp"

namespace splitnn {

// Uniform scalar quantizer step. Stored as f32 because that is what the
// bitstream header carries; client and server must agree bit-for-bit.
struct QuantParams {
    float step = 1.0f;

    QuantParams() = default;
    explicit QuantParams(float q) : step(q) { validate(); }

    void validate() const {
        if (!(step > 0.0f) || !std::isfinite(step)) throw RangeError("quantization step must be positive and finite");
    }
};

struct SymbolTensor {
    Shape shape;
    std::vector<std::int32_t> symbols;

    std::size_t numel() const noexcept { return symbols.size(); }
    friend bool operator==(const SymbolTensor&, const SymbolTensor&) = default;
};

// round(x / Q), ties away from zero. The division runs in double on the
// f32 operands so every caller gets the same symbols.
inline std::int32_t quantize_value(double x, float step) {
    double r = std::round(x / static_cast<double>(step));
    if (!(r >= static_cast<double>(std::numeric_limits<std::int32_t>::min()) &&
          r <= static_cast<double>(std::numeric_limits<std::int32_t>::max())))
        throw RangeError("quantized symbol outside signed 32-bit range; step too small for data scale");
    return static_cast<std::int32_t>(r);
}

template <typename T>
inline T dequantize_value(std::int32_t s, float step) {
    return static_cast<T>(static_cast<double>(s) * static_cast<double>(step));
}

template <typename T>
SymbolTensor quantize(const Tensor<T>& x, QuantParams q) {
    q.validate();
    SymbolTensor out{x.shape(), std::vector<std::int32_t>(x.numel())};
    for (std::size_t i = 0; i < x.numel(); ++i) {
        if (!std::isfinite(x[i])) throw RangeError("cannot quantize a non-finite value");
        out.symbols[i] = quantize_value(static_cast<double>(x[i]), q.step);
    }
    return out;
}

template <typename T = float>
Tensor<T> dequantize(const SymbolTensor& s, QuantParams q) {
    q.validate();
    Tensor<T> out(s.shape);
    for (std::size_t i = 0; i < s.numel(); ++i) out[i] = dequantize_value<T>(s.symbols[i], q.step);
    return out;
}

// dequantize(quantize(x)) without materializing the symbols.
template <typename T>
void quantize_dequantize_inplace(std::span<T> x, float step) {
    for (auto& v : x) v = dequantize_value<T>(quantize_value(static_cast<double>(v), step), step);
}

}  // namespace splitnn
