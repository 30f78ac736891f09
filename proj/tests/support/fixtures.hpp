#pragma once

// Small trained models shared by the unit suites. Built once per process.

#include <unistd.h>

#include <filesystem>
#include <random>
#include <string>
#include <tuple>

#include "splitnn/bottleneck.hpp"
#include "splitnn/runtime/bundle.hpp"
#include "splitnn/nn/toy.hpp"
#include "splitnn/trainer.hpp"

namespace fixtures {

struct TinyWorld {
    splitnn::nn::ToyConfig cfg;
    splitnn::nn::ToyDataset ds;
    splitnn::nn::LayerGraph<float> base;
    splitnn::SplitData data;  // at block3
};

inline splitnn::nn::ToyConfig tiny_config() {
    splitnn::nn::ToyConfig c;
    c.image_size = 16;
    c.train_samples = 400;
    c.eval_samples = 120;
    return c;
}

inline const TinyWorld& tiny_world() {
    // heap so the dataset pointers inside `data` stay valid
    static const TinyWorld* w = [] {
        auto* p = new TinyWorld;
        auto& t = *p;
        t.cfg = tiny_config();
        t.ds = splitnn::nn::generate_dataset(t.cfg, 11);
        t.base = splitnn::nn::build_toy_base_model<float>(t.cfg, 12);
        splitnn::nn::ClassifierTrainConfig tc;
        tc.epochs = 3;
        splitnn::nn::train_classifier(t.base, t.ds.train, tc);
        t.data = splitnn::prepare_split_data(t.base, "block3", t.ds);
        return p;
    }();
    return *w;
}

// A quickly trained bottleneck on the tiny world.
inline splitnn::TrainedBottleneck<float> tiny_bottleneck(std::uint16_t c_r, std::uint16_t stride, float q,
                                                         std::uint64_t seed = 3, std::size_t epochs = 2) {
    const auto& w = tiny_world();
    splitnn::TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.q = q;
    cfg.seed = seed;
    cfg.eval_each_epoch = false;
    auto spec = splitnn::spec_at(w.base, "block3", c_r, stride);
    return splitnn::train_bottleneck(w.base, spec, cfg, w.data).bottleneck;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("splitnn-test-" + name + "-" + std::to_string(::getpid()));
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

// Two-set bundle on the tiny world: (8, 2, Q=0.5) and (2, 4, Q=4).
inline const std::filesystem::path& tiny_bundle() {
    static const std::filesystem::path root = [] {
        const auto& w = tiny_world();
        splitnn::runtime::BundleInput in;
        in.base = w.base;
        in.split_point = "block3";
        in.image_height = static_cast<std::uint16_t>(w.cfg.image_size);
        in.image_width = static_cast<std::uint16_t>(w.cfg.image_size);
        in.dataset = {{"seed", 11}};
        for (auto [c, s, q] : {std::tuple{8, 2, 0.5f}, std::tuple{2, 4, 4.0f}}) {
            splitnn::runtime::BundleEntry e;
            e.bottleneck = tiny_bottleneck(static_cast<std::uint16_t>(c), static_cast<std::uint16_t>(s), q);
            e.point = splitnn::evaluate(splitnn::split_model(w.base, e.bottleneck), w.data.eval,
                                        e.bottleneck.hyperparams_used);
            in.entries.push_back(std::move(e));
        }
        auto dir = temp_dir("bundle") / "b";
        splitnn::runtime::publish_bundle(in, dir);
        return dir;
    }();
    return root;
}

}  // namespace fixtures
