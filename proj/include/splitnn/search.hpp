#pragma once

#include <algorithm>
#include <atomic>
#include <cinttypes>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <filesystem>
#include <mutex>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "splitnn/bottleneck.hpp"
#include "splitnn/bytes.hpp"
#include "splitnn/error.hpp"
#include "splitnn/hyperparams.hpp"
#include "splitnn/nn/checkpoint.hpp"
#include "splitnn/trainer.hpp"

namespace splitnn {

struct SearchSpace {
    std::vector<std::uint16_t> channel_choices{2, 4, 8, 16, 32};
    std::vector<std::uint16_t> stride_choices{2, 4, 6};
    double q_min = 0.5, q_max = 16.0;
    double l_min = -4.0, l_max = -1.0;  // alpha = 10^L
    std::size_t trials = 60;
    std::uint64_t seed = 7;

    void validate() const {
        if (channel_choices.empty()) throw ConfigError("channel choices must not be empty");
        if (stride_choices.empty()) throw ConfigError("stride choices must not be empty");
        for (auto c : channel_choices)
            if (c == 0) throw ConfigError("channel choices must be >= 1");
        for (auto s : stride_choices)
            if (s == 0) throw ConfigError("stride choices must be >= 1");
        if (!(q_min > 0.0) || !(q_max >= q_min) || !std::isfinite(q_max))
            throw ConfigError("Q range must satisfy 0 < min <= max");
        if (!std::isfinite(l_min) || !std::isfinite(l_max) || l_max < l_min)
            throw ConfigError("L range must satisfy min <= max");
        if (trials < 1) throw ConfigError("trials must be >= 1");
    }

    friend bool operator==(const SearchSpace&, const SearchSpace&) = default;
};

// Ranges used for the full-size models, kept for reference runs.
inline SearchSpace preset_space(const std::string& name) {
    SearchSpace s;
    if (name == "toy") return s;
    if (name == "classification") {
        s.channel_choices = {32, 64, 96, 128};
        s.q_min = 1.0;
        s.q_max = 16.0;
    } else if (name == "segmentation") {
        s.channel_choices = {2, 4, 8, 16, 32, 48, 64};
        s.q_min = 0.5;
        s.q_max = 24.0;
    } else {
        throw ConfigError("unknown search preset '" + name + "' (toy, classification, segmentation)");
    }
    return s;
}

struct SampledTuple {
    HyperParams hp;
    double exponent = 0.0;  // L
};

inline SampledTuple sample(const SearchSpace& space, std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> pick_c(0, space.channel_choices.size() - 1);
    std::uniform_int_distribution<std::size_t> pick_s(0, space.stride_choices.size() - 1);
    std::uniform_real_distribution<double> pick_q(space.q_min, space.q_max);
    std::uniform_real_distribution<double> pick_l(space.l_min, space.l_max);
    SampledTuple t;
    t.hp.channels = space.channel_choices[pick_c(rng)];
    t.hp.stride = space.stride_choices[pick_s(rng)];
    t.hp.q = static_cast<float>(pick_q(rng));
    t.exponent = pick_l(rng);
    t.hp.alpha = std::pow(10.0, t.exponent);
    return t;
}

inline std::vector<SampledTuple> sample_all(const SearchSpace& space) {
    space.validate();
    std::mt19937_64 rng(space.seed);
    std::vector<SampledTuple> out;
    out.reserve(space.trials);
    for (std::size_t i = 0; i < space.trials; ++i) out.push_back(sample(space, rng));
    return out;
}

// ---- pareto -----------------------------------------------------------------

// p dominates q: p.metric >= q.metric and p.bpp <= q.bpp, one strictly.
inline bool dominates(const OperatingPoint& p, const OperatingPoint& q) {
    return p.metric >= q.metric && p.bpp <= q.bpp && (p.metric > q.metric || p.bpp < q.bpp);
}

// Indices of the frontier, ascending in bpp. Exact duplicates keep the
// earliest index.
inline std::vector<std::size_t> pareto_indices(std::span<const OperatingPoint> pts) {
    for (const auto& p : pts)
        if (!std::isfinite(p.bpp) || !std::isfinite(p.metric)) throw InputError("non-finite operating point");
    std::vector<std::size_t> order(pts.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (pts[a].bpp != pts[b].bpp) return pts[a].bpp < pts[b].bpp;
        if (pts[a].metric != pts[b].metric) return pts[a].metric > pts[b].metric;
        return a < b;
    });
    std::vector<std::size_t> out;
    for (std::size_t i : order)
        if (out.empty() || pts[i].metric > pts[out.back()].metric) out.push_back(i);
    return out;
}

struct ParetoFrontier {
    std::vector<OperatingPoint> points;
};

inline ParetoFrontier pareto(std::span<const OperatingPoint> pts) {
    ParetoFrontier f;
    for (std::size_t i : pareto_indices(pts)) f.points.push_back(pts[i]);
    return f;
}

// ---- trials -----------------------------------------------------------------

enum class TrialStatus { pending, ok, failed };

inline const char* status_name(TrialStatus s) {
    switch (s) {
        case TrialStatus::pending: return "pending";
        case TrialStatus::ok: return "ok";
        case TrialStatus::failed: return "failed";
    }
    return "?";
}

inline TrialStatus parse_status(const std::string& s) {
    if (s == "pending") return TrialStatus::pending;
    if (s == "ok") return TrialStatus::ok;
    if (s == "failed") return TrialStatus::failed;
    throw ConfigError("unknown trial status '" + s + "'");
}

struct TrialRecord {
    std::size_t index = 0;
    SampledTuple tuple;
    std::uint64_t seed = 0;
    TrialStatus status = TrialStatus::pending;
    std::string error;
    std::int64_t param_set_id = -1;
    OperatingPoint point;      // valid when ok
    std::string checkpoint;    // relative to the run dir
    std::string checkpoint_hash;
    std::string log;           // relative to the run dir
};

inline std::uint64_t trial_seed(std::uint64_t search_seed, std::size_t index) {
    std::uint64_t z = search_seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::string trial_name(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "t%04zu", index);
    return buf;
}

struct SearchOptions {
    std::filesystem::path run_dir;
    std::string split_point = "block3";
    TrainConfig train;  // alpha and Q are replaced per trial
    std::size_t workers = 1;
    std::size_t max_new_trials = 0;  // stop after this many trials this call (0: no limit)
    std::string base_hash;           // recorded for resume checks
    std::ostream* progress = nullptr;
};

// ---- manifest ---------------------------------------------------------------

inline nlohmann::ordered_json space_json(const SearchSpace& s) {
    return {{"channel_choices", s.channel_choices},
            {"stride_choices", s.stride_choices},
            {"q_range", {s.q_min, s.q_max}},
            {"l_range", {s.l_min, s.l_max}},
            {"trials", s.trials},
            {"seed", s.seed}};
}

inline SearchSpace space_from_json(const nlohmann::json& j) {
    SearchSpace s;
    s.channel_choices = j.at("channel_choices").get<std::vector<std::uint16_t>>();
    s.stride_choices = j.at("stride_choices").get<std::vector<std::uint16_t>>();
    s.q_min = j.at("q_range").at(0).get<double>();
    s.q_max = j.at("q_range").at(1).get<double>();
    s.l_min = j.at("l_range").at(0).get<double>();
    s.l_max = j.at("l_range").at(1).get<double>();
    s.trials = j.at("trials").get<std::size_t>();
    s.seed = j.at("seed").get<std::uint64_t>();
    return s;
}

inline nlohmann::ordered_json train_json(const TrainConfig& c) {
    return {{"epochs", c.epochs},       {"batch_size", c.batch_size}, {"lr", c.adam.lr},
            {"beta1", c.adam.beta1},    {"beta2", c.adam.beta2},      {"eps", c.adam.eps},
            {"train_all", c.train_all}, {"eval_each_epoch", c.eval_each_epoch}};
}

inline nlohmann::ordered_json trial_json(const TrialRecord& t) {
    nlohmann::ordered_json j{{"index", t.index},
                             {"C_r", t.tuple.hp.channels},
                             {"S", t.tuple.hp.stride},
                             {"L", t.tuple.exponent},
                             {"alpha", t.tuple.hp.alpha},
                             {"Q", static_cast<double>(t.tuple.hp.q)},
                             {"seed", t.seed},
                             {"status", status_name(t.status)}};
    if (t.status == TrialStatus::failed) j["error"] = t.error;
    if (t.status == TrialStatus::ok) {
        j["param_set_id"] = t.param_set_id;
        j["bpp"] = t.point.bpp;
        j["metric"] = t.point.metric;
        j["checkpoint"] = t.checkpoint;
        j["checkpoint_hash"] = t.checkpoint_hash;
    }
    if (t.status != TrialStatus::pending) j["log"] = t.log;
    return j;
}

inline TrialRecord trial_from_json(const nlohmann::json& j) {
    TrialRecord t;
    t.index = j.at("index").get<std::size_t>();
    t.tuple.hp.channels = j.at("C_r").get<std::uint16_t>();
    t.tuple.hp.stride = j.at("S").get<std::uint16_t>();
    t.tuple.exponent = j.at("L").get<double>();
    t.tuple.hp.alpha = j.at("alpha").get<double>();
    t.tuple.hp.q = static_cast<float>(j.at("Q").get<double>());
    t.seed = j.at("seed").get<std::uint64_t>();
    t.status = parse_status(j.at("status").get<std::string>());
    if (t.status == TrialStatus::failed) t.error = j.value("error", "");
    if (t.status == TrialStatus::ok) {
        t.param_set_id = j.at("param_set_id").get<std::int64_t>();
        t.point.bpp = j.at("bpp").get<double>();
        t.point.metric = j.at("metric").get<double>();
        t.point.hyperparams = t.tuple.hp;
        t.checkpoint = j.at("checkpoint").get<std::string>();
        t.checkpoint_hash = j.at("checkpoint_hash").get<std::string>();
        t.point.checkpoint_ref = t.checkpoint;
    }
    if (t.status != TrialStatus::pending) t.log = j.value("log", "");
    return t;
}

struct SearchRun {
    SearchSpace space;
    std::string split_point;
    TrainConfig train;
    std::string base_hash;
    std::vector<TrialRecord> trials;

    std::vector<const TrialRecord*> successful() const {
        std::vector<const TrialRecord*> out;
        for (const auto& t : trials)
            if (t.status == TrialStatus::ok) out.push_back(&t);
        return out;
    }
};

inline nlohmann::ordered_json manifest_json(const SearchRun& r) {
    nlohmann::ordered_json trials = nlohmann::ordered_json::array();
    for (const auto& t : r.trials) trials.push_back(trial_json(t));
    return {{"kind", "search"},
            {"space", space_json(r.space)},
            {"split_point", r.split_point},
            {"train", train_json(r.train)},
            {"train_seed_mix", "splitmix64(seed, index)"},
            {"base_hash", r.base_hash},
            {"trials", trials}};
}

inline SearchRun load_search_manifest(const std::filesystem::path& path) {
    const auto bytes = read_file(path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("cannot parse search manifest " + path.string() + ": " + e.what());
    }
    if (j.value("kind", "") != "search") throw ConfigError(path.string() + " is not a search manifest");
    SearchRun r;
    r.space = space_from_json(j.at("space"));
    r.split_point = j.at("split_point").get<std::string>();
    const auto& t = j.at("train");
    r.train.epochs = t.at("epochs").get<std::size_t>();
    r.train.batch_size = t.at("batch_size").get<std::size_t>();
    r.train.adam.lr = t.at("lr").get<double>();
    r.train.adam.beta1 = t.at("beta1").get<double>();
    r.train.adam.beta2 = t.at("beta2").get<double>();
    r.train.adam.eps = t.at("eps").get<double>();
    r.train.train_all = t.at("train_all").get<bool>();
    r.train.eval_each_epoch = t.at("eval_each_epoch").get<bool>();
    r.base_hash = j.at("base_hash").get<std::string>();
    for (const auto& tj : j.at("trials")) r.trials.push_back(trial_from_json(tj));
    return r;
}

inline void write_atomically(const std::filesystem::path& path, const std::string& text) {
    const auto tmp = path.string() + ".tmp";
    write_text_file(tmp, text);
    std::filesystem::rename(tmp, path);
}

inline void save_search_manifest(const SearchRun& r, const std::filesystem::path& dir) {
    write_atomically(dir / "manifest.json", manifest_json(r).dump(2) + "\n");
}

// ---- frontier export --------------------------------------------------------

inline std::string frontier_csv(const SearchRun& r) {
    std::vector<const TrialRecord*> ok = r.successful();
    std::vector<OperatingPoint> pts;
    for (const auto* t : ok) pts.push_back(t->point);
    std::ostringstream out;
    out << "trial_id,param_set_id,C_r,S,alpha,Q,bpp,metric\n";
    char buf[256];
    for (std::size_t i : pareto_indices(pts)) {
        const auto* t = ok[i];
        std::snprintf(buf, sizeof buf, "%zu,%" PRId64 ",%u,%u,%.17g,%.17g,%.17g,%.17g\n", t->index, t->param_set_id,
                      static_cast<unsigned>(t->tuple.hp.channels), static_cast<unsigned>(t->tuple.hp.stride),
                      t->tuple.hp.alpha, static_cast<double>(t->tuple.hp.q), t->point.bpp, t->point.metric);
        out << buf;
    }
    return out.str();
}

inline std::vector<const TrialRecord*> frontier_trials(const SearchRun& r) {
    std::vector<const TrialRecord*> ok = r.successful();
    std::vector<OperatingPoint> pts;
    for (const auto* t : ok) pts.push_back(t->point);
    std::vector<const TrialRecord*> out;
    for (std::size_t i : pareto_indices(pts)) out.push_back(ok[i]);
    return out;
}

// ---- orchestration ----------------------------------------------------------

namespace detail {

struct TrialOutcome {
    bool ok = false;
    std::string error;
    TrainedBottleneck<float> bottleneck;
    OperatingPoint point;
    std::string log_text;
};

inline TrialOutcome run_trial(const nn::LayerGraph<float>& base, const SplitData& data, const SearchOptions& opt,
                              const TrialRecord& t) {
    TrialOutcome out;
    std::ostringstream log;
    try {
        const BottleneckSpec spec = spec_at(base, opt.split_point, t.tuple.hp.channels, t.tuple.hp.stride);
        TrainConfig cfg = opt.train;
        cfg.alpha = t.tuple.hp.alpha;
        cfg.q = t.tuple.hp.q;
        cfg.seed = t.seed;
        auto res = train_bottleneck(base, spec, cfg, data, static_cast<std::int64_t>(t.index), &log);
        // measured again through the deployed pieces, not the training graph
        out.point = evaluate(split_model(base, res.bottleneck), data.eval, res.bottleneck.hyperparams_used);
        out.bottleneck = std::move(res.bottleneck);
        out.ok = true;
    } catch (const std::exception& e) {
        out.error = e.what();
    }
    out.log_text = log.str();
    return out;
}

}  // namespace detail

// Random search. Tuples are sampled up front and persisted, so an
// interrupted run resumed from its manifest trains exactly the same
// tuples. Trials may run on several workers; results are committed in
// trial order, which is where param_set_ids are handed out.
inline SearchRun run_search(const SearchSpace& space, const nn::LayerGraph<float>& base, const SplitData& data,
                            const SearchOptions& opt) {
    space.validate();
    opt.train.validate();
    namespace fs = std::filesystem;
    fs::create_directories(opt.run_dir / "checkpoints");
    fs::create_directories(opt.run_dir / "logs");
    const fs::path manifest = opt.run_dir / "manifest.json";

    SearchRun run;
    if (fs::exists(manifest)) {
        run = load_search_manifest(manifest);
        if (!(run.space == space)) throw ConfigError("existing run has a different search space");
        if (run.split_point != opt.split_point) throw ConfigError("existing run used a different split point");
        if (train_json(run.train) != train_json(opt.train))
            throw ConfigError("existing run used a different training config");
        if (run.base_hash != opt.base_hash) throw ConfigError("existing run used a different base model");
        if (run.trials.size() != space.trials) throw ConfigError("existing manifest has the wrong trial count");
    } else {
        run.space = space;
        run.split_point = opt.split_point;
        run.train = opt.train;
        run.base_hash = opt.base_hash;
        const auto tuples = sample_all(space);
        for (std::size_t i = 0; i < tuples.size(); ++i) {
            TrialRecord t;
            t.index = i;
            t.tuple = tuples[i];
            t.seed = trial_seed(space.seed, i);
            run.trials.push_back(t);
        }
        save_search_manifest(run, opt.run_dir);
    }

    std::vector<std::size_t> todo;
    for (const auto& t : run.trials)
        if (t.status == TrialStatus::pending) todo.push_back(t.index);
    if (opt.max_new_trials && todo.size() > opt.max_new_trials) todo.resize(opt.max_new_trials);

    std::int64_t next_id = 0;
    for (const auto& t : run.trials)
        if (t.status == TrialStatus::ok) next_id = std::max(next_id, t.param_set_id + 1);

    std::vector<std::optional<detail::TrialOutcome>> results(todo.size());
    std::mutex mu;
    std::condition_variable cv;
    std::atomic<std::size_t> next_job{0};
    auto worker = [&] {
        for (;;) {
            const std::size_t k = next_job.fetch_add(1);
            if (k >= todo.size()) return;
            auto r = detail::run_trial(base, data, opt, run.trials[todo[k]]);
            std::lock_guard<std::mutex> lock(mu);
            results[k] = std::move(r);
            cv.notify_all();
        }
    };
    const std::size_t n_workers = std::max<std::size_t>(1, std::min(opt.workers, todo.size()));
    struct Pool {
        std::vector<std::thread> threads;
        std::atomic<std::size_t>& next;
        ~Pool() {
            next.store(static_cast<std::size_t>(-1) / 2);
            for (auto& th : threads) th.join();
        }
    } pool{{}, next_job};
    if (n_workers > 1)
        for (std::size_t w = 0; w < n_workers; ++w) pool.threads.emplace_back(worker);

    for (std::size_t k = 0; k < todo.size(); ++k) {
        detail::TrialOutcome r;
        if (n_workers > 1) {
            std::unique_lock<std::mutex> lock(mu);
            cv.wait(lock, [&] { return results[k].has_value(); });
            r = std::move(*results[k]);
            results[k].reset();
        } else {
            r = detail::run_trial(base, data, opt, run.trials[todo[k]]);
        }
        TrialRecord& t = run.trials[todo[k]];
        const std::string name = trial_name(t.index);
        t.log = "logs/" + name + ".jsonl";
        write_text_file((opt.run_dir / t.log).string(), r.log_text);
        if (r.ok) {
            t.status = TrialStatus::ok;
            t.param_set_id = next_id++;
            r.bottleneck.param_set_id = static_cast<std::uint8_t>(t.param_set_id <= 255 ? t.param_set_id : 255);
            const auto bytes = serialize_bottleneck(r.bottleneck);
            t.checkpoint = "checkpoints/" + name + ".sswt";
            write_file((opt.run_dir / t.checkpoint).string(), bytes);
            t.checkpoint_hash = hex64(fnv1a64(bytes));
            t.point = r.point;
            t.point.checkpoint_ref = t.checkpoint;
        } else {
            t.status = TrialStatus::failed;
            t.error = r.error;
        }
        save_search_manifest(run, opt.run_dir);
        if (opt.progress) {
            *opt.progress << "trial " << t.index << " C_r=" << t.tuple.hp.channels << " S=" << t.tuple.hp.stride
                          << " alpha=" << t.tuple.hp.alpha << " Q=" << t.tuple.hp.q << " -> ";
            if (t.status == TrialStatus::ok)
                *opt.progress << "bpp=" << t.point.bpp << " acc=" << t.point.metric << "\n";
            else
                *opt.progress << "failed: " << t.error << "\n";
            opt.progress->flush();
        }
    }
    write_atomically(opt.run_dir / "frontier.csv", frontier_csv(run));
    return run;
}

}  // namespace splitnn
