#include <gtest/gtest.h>

#include <random>

#include "splitnn/bottleneck.hpp"
#include "splitnn/nn/checkpoint.hpp"
#include "splitnn/nn/toy.hpp"
#include "splitnn/pipeline.hpp"
#include "splitnn/trainer.hpp"

using namespace splitnn;

namespace {

BottleneckSpec make_spec(std::uint16_t c, std::uint16_t h, std::uint16_t w, std::uint16_t cr, std::uint16_t s) {
    BottleneckSpec b;
    b.split_point_id = "x";
    b.channels = c;
    b.height = h;
    b.width = w;
    b.reduced_channels = cr;
    b.stride = s;
    return b;
}

Shape run_shape(const nn::LayerGraph<float>& g, std::size_t n_batch = 1) {
    Tensor<float> x(nn::detail::batched(n_batch, g.input_shape), 0.25f);
    auto y = nn::forward(g, x, std::size_t{0}, g.size());
    return Shape(std::vector<std::size_t>(y.shape().dims().begin() + 1, y.shape().dims().end()));
}

}  // namespace

TEST(Bottleneck, EncoderShapesUseCeilDivision) {
    auto b = build_bottleneck<float>(make_spec(64, 32, 32, 16, 2), 1);
    EXPECT_EQ(run_shape(encoder_graph(b)), (Shape{16, 16, 16}));
    b = build_bottleneck<float>(make_spec(64, 32, 32, 16, 6), 1);
    EXPECT_EQ(run_shape(encoder_graph(b)), (Shape{16, 6, 6}));
    EXPECT_EQ(run_shape(decoder_graph(b)), (Shape{64, 32, 32}));
}

// Random H, W (often not divisible by S): decoder restores the input dims.
TEST(Bottleneck, MirrorRestoresDimsForRandomSizes) {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> hw(1, 23), cr(1, 6), st(1, 7);
    for (int i = 0; i < 200; ++i) {
        auto spec = make_spec(6, static_cast<std::uint16_t>(hw(rng)), static_cast<std::uint16_t>(hw(rng)),
                              static_cast<std::uint16_t>(cr(rng)), static_cast<std::uint16_t>(st(rng)));
        auto b = build_bottleneck<float>(spec, static_cast<std::uint64_t>(i));
        ASSERT_EQ(run_shape(encoder_graph(b)), spec.code_shape());
        ASSERT_EQ(run_shape(decoder_graph(b)), spec.input_shape()) << spec.height << "x" << spec.width << "/" << spec.stride;
    }
}

TEST(Bottleneck, CompressionRatio) {
    EXPECT_DOUBLE_EQ(compression_ratio(make_spec(64, 32, 32, 16, 2)), 16.0);
    EXPECT_DOUBLE_EQ(compression_ratio(make_spec(64, 32, 32, 64, 1)), 1.0);
    // toy grid at block3 (32, 8, 8), computed independently as C*H*W / (C_r*ceil(H/S)*ceil(W/S))
    for (std::uint16_t cr : {2, 4, 8, 16, 32})
        for (std::uint16_t s : {2, 4, 6}) {
            const double hr = (8 + s - 1) / s;
            EXPECT_DOUBLE_EQ(compression_ratio(make_spec(32, 8, 8, cr, s)), 2048.0 / (cr * hr * hr));
        }
}

TEST(Bottleneck, SpecValidation) {
    EXPECT_THROW(build_bottleneck<float>(make_spec(8, 4, 4, 0, 1), 1), SpecError);
    EXPECT_THROW(build_bottleneck<float>(make_spec(8, 4, 4, 9, 1), 1), SpecError);
    EXPECT_THROW(build_bottleneck<float>(make_spec(8, 4, 4, 2, 0), 1), SpecError);
    auto s = make_spec(8, 4, 4, 2, 1);
    s.kernel = 5;
    EXPECT_THROW(build_bottleneck<float>(s, 1), SpecError);
}

TEST(Bottleneck, InsertFreezesBaseAndKeepsOutputShape) {
    nn::ToyConfig c;
    auto base = nn::build_toy_base_model<float>(c, 1);
    auto b = build_bottleneck<float>(spec_at(base, "block3", 8, 2), 2);
    auto g = insert(base, b);
    EXPECT_EQ(g.output_shape_of(), base.output_shape_of());
    EXPECT_EQ(nn::count_parameters(g, true), b.parameter_count());
    const double frac = static_cast<double>(b.parameter_count()) / static_cast<double>(nn::count_parameters(g, false));
    EXPECT_LT(frac, 0.01);
    EXPECT_THROW(insert(g, b), SpecError);
    auto wrong = build_bottleneck<float>(spec_at(base, "block2", 8, 2), 2);
    wrong.spec.split_point_id = "block3";
    EXPECT_THROW(insert(base, wrong), SpecError);
}

TEST(Bottleneck, InsertsAtEveryConfiguredCut) {
    nn::ToyConfig c;
    c.image_size = 16;
    auto base = nn::build_toy_base_model<float>(c, 1);
    ASSERT_GE(base.cuts.size(), 4u);
    for (const auto& cut : base.cuts) {
        const Shape at = base.shape_at(cut.boundary);
        auto b = build_bottleneck<float>(spec_at(base, cut.name, static_cast<std::uint16_t>(std::max<std::size_t>(1, at[0] / 4)), 2), 3);
        auto g = insert(base, b);
        EXPECT_EQ(run_shape(g, 2), base.output_shape_of()) << cut.name;
    }
}

TEST(Bottleneck, CheckpointRoundTripAndParts) {
    auto b = build_bottleneck<float>(make_spec(16, 7, 9, 4, 3), 5);
    b.param_set_id = 4;
    b.hyperparams_used.q = 0.75f;
    b.hyperparams_used.alpha = 3.3e-3;
    auto bytes = serialize_bottleneck(b);
    auto back = deserialize_bottleneck<float>(bytes);
    EXPECT_EQ(back, b);
    auto enc = deserialize_bottleneck<float>(serialize_bottleneck(b, BottleneckPart::encoder));
    EXPECT_EQ(enc.encoder, b.encoder);
    EXPECT_TRUE(enc.decoder.empty());
    auto dec = deserialize_bottleneck<float>(serialize_bottleneck(b, BottleneckPart::decoder));
    EXPECT_EQ(dec.decoder, b.decoder);
    EXPECT_TRUE(dec.encoder.empty());
    EXPECT_EQ(dec.spec, b.spec);
    bytes.push_back(1);
    EXPECT_THROW(deserialize_bottleneck<float>(bytes), DecodeError);
}

TEST(Bottleneck, ParameterCountByHand) {
    auto b = build_bottleneck<float>(make_spec(64, 32, 32, 16, 2), 1);
    // encoder: dw 64*9 + 64, pw 64*16 + 16; decoder: pw 16*64 + 64, dw 64*9 + 64
    EXPECT_EQ(b.parameter_count(), 1680u + 1728u);
}
