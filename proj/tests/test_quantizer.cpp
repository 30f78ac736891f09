#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "fixtures.hpp"
#include "splitnn/codec/feature.hpp"
#include "splitnn/pipeline.hpp"
#include "splitnn/quantizer.hpp"

using namespace splitnn;

TEST(Quantizer, RoundsHalfAwayFromZero) {
    Tensor<float> x(Shape{3}, std::vector<float>{0.4f, 1.6f, -2.5f});
    EXPECT_EQ(quantize(x, QuantParams{1.0f}).symbols, (std::vector<std::int32_t>{0, 2, -3}));
    auto d = dequantize<float>(SymbolTensor{Shape{3}, {0, 2, -3}}, QuantParams{1.0f});
    EXPECT_EQ(d.storage(), (std::vector<float>{0.0f, 2.0f, -3.0f}));
}

TEST(Quantizer, GridValuesAreFixedPoints) {
    for (float q : {0.25f, 0.5f, 1.0f, 4.0f}) {
        Tensor<float> x(Shape{9});
        for (std::size_t i = 0; i < 9; ++i) x[i] = (static_cast<float>(i) - 4.0f) * q;
        EXPECT_EQ(dequantize<float>(quantize(x, QuantParams{q}), QuantParams{q}), x);
    }
}

TEST(Quantizer, ZeroSymbolsGiveZeros) {
    SymbolTensor s{Shape{2, 2}, {0, 0, 0, 0}};
    for (float q : {0.1f, 3.0f}) EXPECT_EQ(dequantize<float>(s, QuantParams{q}), Tensor<float>(Shape{2, 2}));
}

TEST(Quantizer, RejectsBadStepAndValues) {
    EXPECT_THROW(QuantParams{0.0f}, RangeError);
    EXPECT_THROW(QuantParams{-1.0f}, RangeError);
    EXPECT_THROW(QuantParams{std::numeric_limits<float>::infinity()}, RangeError);
    Tensor<float> x(Shape{1}, std::numeric_limits<float>::quiet_NaN());
    EXPECT_THROW(quantize(x, QuantParams{1.0f}), RangeError);
    Tensor<float> big(Shape{1}, 1e30f);
    EXPECT_THROW(quantize(big, QuantParams{1.0f}), RangeError);
}

// |x - x_hat| <= Q/2 plus one ulp of the reconstruction.
TEST(Quantizer, ReconstructionErrorBoundedByHalfStep) {
    std::mt19937_64 rng(8);
    for (float q : {0.5f, 1.0f, 2.0f, 4.0f, 8.0f, 16.0f, 0.37f}) {
        std::normal_distribution<float> d(0.0f, 20.0f * q);
        Tensor<float> x(Shape{4000});
        for (auto& v : x.data()) v = d(rng);
        auto xh = dequantize<float>(quantize(x, QuantParams{q}), QuantParams{q});
        for (std::size_t i = 0; i < x.numel(); ++i) {
            const double ulp = std::nextafter(std::fabs(xh[i]), INFINITY) - std::fabs(xh[i]);
            ASSERT_LE(std::fabs(static_cast<double>(x[i]) - xh[i]), q / 2.0 + ulp) << q << " " << x[i];
        }
    }
}

TEST(Quantizer, RoundTripIsIdempotent) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<float> d(-50.0f, 50.0f);
    for (float q : {0.3f, 0.5f, 1.7f, 16.0f}) {
        Tensor<float> x(Shape{1000});
        for (auto& v : x.data()) v = d(rng);
        auto once = dequantize<float>(quantize(x, QuantParams{q}), QuantParams{q});
        auto twice = dequantize<float>(quantize(once, QuantParams{q}), QuantParams{q});
        EXPECT_EQ(once, twice);
        auto inplace = x;
        quantize_dequantize_inplace(inplace.data(), q);
        EXPECT_EQ(inplace, once);
    }
}

// Coarser steps never cost more payload on a fixed trained feature.
TEST(Quantizer, PayloadBitsNonIncreasingAlongLadder) {
    auto b = fixtures::tiny_bottleneck(8, 2, 0.5f);
    const auto& w = fixtures::tiny_world();
    auto enc = encoder_graph(b);
    std::uint64_t prev = std::numeric_limits<std::uint64_t>::max();
    const std::size_t n = 32;
    auto z = nn::forward(enc, w.data.eval.features.cast<float>(), std::size_t{0}, enc.size());
    for (float q : {0.5f, 1.0f, 2.0f, 4.0f, 8.0f, 16.0f}) {
        std::uint64_t bits = 0;
        for (std::size_t i = 0; i < n; ++i) {
            auto s = quantize(slice_batch(z, i), QuantParams{q});
            bits += codec::encode(s, QuantParams{q}, {}).payload_bit_count;
        }
        EXPECT_LE(bits, prev) << q;
        prev = bits;
    }
}
