#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "fixtures.hpp"
#include "splitnn/codec/feature.hpp"
#include "splitnn/nn/checkpoint.hpp"
#include "splitnn/nn/optimizer.hpp"
#include "splitnn/pipeline.hpp"
#include "splitnn/trainer.hpp"

using namespace splitnn;

TEST(Loss, CompositeArithmetic) {
    Tensor<double> z(Shape{2, 1, 1, 2}, std::vector<double>{0.5, -0.5, 1.0, 0.0});
    Tensor<double> logits(Shape{2, 3}, std::vector<double>{0.0, 1.0, 2.0, -1.0, 0.5, 0.0});
    std::vector<int> y{2, 0};
    auto t = compute_loss(z, logits, y, 0.01);
    EXPECT_DOUBLE_EQ(t.rate, 0.5);
    auto at_zero = compute_loss(z, logits, y, 0.0);
    EXPECT_DOUBLE_EQ(at_zero.total, at_zero.rate);
    EXPECT_NEAR(t.total, t.rate + 0.01 * t.task, 1e-15);
    // cross-entropy by hand
    auto ce = [](std::vector<double> l, int k) {
        double m = 0;
        for (double v : l) m += std::exp(v);
        return std::log(m) - l[static_cast<std::size_t>(k)];
    };
    EXPECT_NEAR(t.task, 0.5 * (ce({0, 1, 2}, 2) + ce({-1, 0.5, 0}, 0)), 1e-12);
    EXPECT_THROW(compute_loss(z, logits, y, -1.0), ConfigError);
    TrainConfig cfg;
    cfg.alpha = 0.0;
    EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Ste, ScalarModelReachesTheUnquantizedOptimum) {
    auto fit = [](bool with_ste) {
        std::mt19937_64 rng(1);
        nn::LayerHyper h;
        h.in_channels = 1;
        h.out_channels = 1;
        nn::LayerGraph<double> g;
        g.input_shape = Shape{1, 1, 1};
        g.layers.push_back(nn::make_layer<double>(nn::LayerKind::fully_connected, h, rng, true));
        if (with_ste) g.layers.push_back(nn::make_ste<double>(1e-3f));
        // y = 2x + 1 on x in {-1, 0, 1, 2}; least squares optimum w=2, b=1
        Tensor<double> x(Shape{4, 1, 1, 1}, std::vector<double>{-1, 0, 1, 2});
        nn::AdamState<double> st;
        st.cfg.lr = 0.01;
        for (int step = 0; step < 4000; ++step) {
            auto [y, tape] = nn::forward_train(g, x, 0, g.size());
            Tensor<double> up(y.shape());
            for (std::size_t i = 0; i < 4; ++i) up[i] = (y[i] - (2 * x[i] + 1)) / 4;
            tape = nn::backward(g, std::move(tape), up);
            nn::optimizer_step(g, tape, st);
            if (step > 3000) st.cfg.lr = 1e-3;
        }
        return std::pair{g.layers[0].params[0][0], g.layers[0].params[1][0]};
    };
    auto [w0, b0] = fit(false);
    auto [w1, b1] = fit(true);
    EXPECT_NEAR(w0, 2.0, 1e-3);
    EXPECT_NEAR(b0, 1.0, 1e-3);
    EXPECT_NEAR(w1, w0, 2e-3);
    EXPECT_NEAR(b1, b0, 2e-3);
}

TEST(Trainer, BaseStaysBitIdenticalAndRunsAreDeterministic) {
    const auto& w = fixtures::tiny_world();
    const auto before = nn::serialize_graph(w.base);
    auto a = fixtures::tiny_bottleneck(4, 2, 1.0f, 9, 1);
    auto b = fixtures::tiny_bottleneck(4, 2, 1.0f, 9, 1);
    EXPECT_EQ(nn::serialize_graph(w.base), before);
    EXPECT_EQ(serialize_bottleneck(a), serialize_bottleneck(b));
    auto c = fixtures::tiny_bottleneck(4, 2, 1.0f, 10, 1);
    EXPECT_NE(serialize_bottleneck(a), serialize_bottleneck(c));
}

TEST(Trainer, RejectsBadConfigAndEmptyData) {
    const auto& w = fixtures::tiny_world();
    auto spec = spec_at(w.base, "block3", 4, 2);
    TrainConfig cfg;
    cfg.epochs = 0;
    EXPECT_THROW(train_bottleneck(w.base, spec, cfg, w.data), ConfigError);
    cfg.epochs = 1;
    cfg.q = -1;
    EXPECT_THROW(train_bottleneck(w.base, spec, cfg, w.data), ConfigError);
    EXPECT_THROW(spec_at(w.base, "nowhere", 4, 2), SpecError);
    EXPECT_THROW(build_bottleneck<float>(spec_at(w.base, "block3", 64, 2), 1), SpecError);
}

TEST(Trainer, LogHasOneRecordPerEpoch) {
    const auto& w = fixtures::tiny_world();
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.q = 2.0f;
    std::ostringstream log;
    auto r = train_bottleneck(w.base, spec_at(w.base, "block3", 2, 4), cfg, w.data, 5, &log);
    ASSERT_EQ(r.log.size(), 2u);
    EXPECT_EQ(r.log[1].trial_id, 5);
    EXPECT_GT(r.log[1].mean_bpp, 0.0);
    std::istringstream in(log.str());
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        auto j = nlohmann::json::parse(line);
        EXPECT_TRUE(j.contains("L_r"));
        ++n;
    }
    EXPECT_EQ(n, 2);
}

// What the tail sees in evaluation is decode-then-dequantize of the
// emitted bitstream, and it matches the training graph's STE path.
TEST(Evaluate, MatchesTrainingGraphAndOfflineRecount) {
    const auto& w = fixtures::tiny_world();
    auto b = fixtures::tiny_bottleneck(8, 2, 0.5f);
    auto m = split_model(w.base, b);
    EvalDetail d;
    auto op = evaluate(m, w.data.eval, b.hyperparams_used, &d, true);
    auto g = insert(w.base, b);
    auto logits = nn::forward(g, w.ds.eval.images, std::size_t{0}, g.size());
    auto pred = nn::argmax_rows(reshape(logits, Shape{logits.shape()[0], logits.numel() / logits.shape()[0]}));
    EXPECT_EQ(pred, d.predictions);
    double sum = 0;
    for (const auto& bytes : d.bitstreams) sum += codec::measure_bpp(codec::parse(bytes));
    EXPECT_NEAR(op.bpp, sum / static_cast<double>(d.bitstreams.size()), 1e-12);
    // eval-path fidelity on a few samples
    for (std::size_t i = 0; i < 5; ++i) {
        const auto feat = slice_batch(w.data.eval.features, i);
        auto z = nn::forward(g, reshape(feat, nn::detail::batched(1, feat.shape())), g.boundary(kCutInput),
                             g.boundary(kCutQuantized));
        auto rec = reconstruct<float>(codec::parse(d.bitstreams[i]));
        ASSERT_EQ(std::memcmp(z.data().data(), rec.data().data(), z.numel() * 4), 0);
    }
}

TEST(Evaluate, CoarserQNeverRaisesMeanPayload) {
    const auto& w = fixtures::tiny_world();
    auto b = fixtures::tiny_bottleneck(8, 2, 0.5f);
    double prev = 1e300;
    for (float q : {0.5f, 1.0f, 2.0f, 4.0f, 8.0f, 16.0f}) {
        auto m = split_model(w.base, b);
        m.q = q;
        EvalDetail d;
        evaluate(m, w.data.eval, b.hyperparams_used, &d);
        double mean = 0;
        for (auto p : d.payload_bits) mean += static_cast<double>(p);
        mean /= static_cast<double>(d.payload_bits.size());
        EXPECT_LE(mean, prev) << q;
        prev = mean;
    }
}
