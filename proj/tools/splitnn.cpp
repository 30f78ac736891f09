// splitnn: dataset, training, search, bundles, serving and the codec
// from one binary. Results go to stdout, progress to stderr.

#include <pthread.h>
#include <signal.h>

#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <iostream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "splitnn/config.hpp"
#include "splitnn/nn/checkpoint.hpp"
#include "splitnn/nn/toy.hpp"
#include "splitnn/runtime/bundle.hpp"
#include "splitnn/runtime/client.hpp"
#include "splitnn/runtime/server.hpp"
#include "splitnn/search.hpp"
#include "splitnn/tensor_io.hpp"
#include "splitnn/trainer.hpp"

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;
using namespace splitnn;

namespace {

const std::vector<std::string> kDataKeys{"dataset"};
const std::vector<std::string> kBaseKeys{"dataset", "model"};
const std::vector<std::string> kBottleneckKeys{"dataset", "model", "split", "bottleneck", "train"};
const std::vector<std::string> kSearchKeys{"dataset",         "model",         "split",         "train",
                                           "search.channel_choices", "search.stride_choices", "search.q_min",
                                           "search.q_max",    "search.l_min",  "search.l_max",  "search.trials",
                                           "search.seed"};

struct Common {
    std::string config_file;
    std::vector<std::string> sets;
    std::string from_manifest;
    std::string run_dir;
    bool force = false;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config", c.config_file, "key=value config file with [section] headers");
    app->add_option("--set", c.sets, "override one key, e.g. --set train.epochs=5 (repeatable)");
    app->add_option("--from-manifest", c.from_manifest, "take the config recorded in a run's config.json or manifest");
    app->add_option("--run-dir", c.run_dir, "write here instead of the content-addressed run directory");
    app->add_flag("--force", c.force, "redo a run whose manifest already exists");
}

nlohmann::json read_json_file(const std::string& path) {
    auto bytes = read_file(path);
    try {
        return nlohmann::json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::exception& e) {
        throw InputError("cannot parse " + path + ": " + e.what());
    }
}

RunConfig load_config(const Common& c) {
    RunConfig cfg;
    if (!c.from_manifest.empty()) {
        const auto j = read_json_file(c.from_manifest);
        cfg = RunConfig::from_json(j.contains("config") ? j.at("config") : j);
    }
    if (!c.config_file.empty()) cfg.load_file(c.config_file);
    for (const auto& s : c.sets) cfg.set_assignment(s);
    return cfg;
}

fs::path run_dir_for(const RunConfig& cfg, const Common& c, const std::string& kind,
                     const std::vector<std::string>& keys) {
    if (!c.run_dir.empty()) return c.run_dir;
    return fs::path(cfg.get_text("paths.work_dir")) / (kind + "-" + cfg.hash(keys));
}

// Creates the run dir and records the config. Refuses a dir that holds a
// run of another config. Returns false when the run is already complete.
bool open_run(const fs::path& dir, const RunConfig& cfg, const std::string& kind, const std::vector<std::string>& keys,
              bool force, bool resumable = false) {
    const std::string h = cfg.hash(keys);
    const fs::path cj = dir / "config.json";
    if (fs::exists(cj)) {
        const auto j = read_json_file(cj.string());
        if (j.value("kind", "") != kind || j.value("config_hash", "") != h)
            throw ConfigError("run directory " + dir.string() + " holds a " + j.value("kind", "?") +
                              " run with a different configuration");
        if (!force && !resumable && fs::exists(dir / "manifest.json")) return false;
    }
    fs::create_directories(dir);
    ojson j{{"kind", kind}, {"config_hash", h}, {"config", cfg.to_json()}};
    write_atomically(dir / "config.json", j.dump(2) + "\n");
    return true;
}

ojson config_block(const RunConfig& cfg, const std::vector<std::string>& keys) {
    return {{"config_hash", cfg.hash(keys)}, {"config", cfg.to_json()}};
}

nn::ToyDataset make_dataset(const RunConfig& cfg) { return nn::generate_dataset(cfg.toy(), cfg.get_uint("dataset.seed")); }

struct LoadedBase {
    nn::LayerGraph<float> graph;
    std::string hash;
    fs::path path;
};

LoadedBase load_base(const RunConfig& cfg, const std::string& override_path) {
    fs::path p = override_path.empty()
                     ? fs::path(cfg.get_text("paths.work_dir")) / ("base-" + cfg.hash(kBaseKeys)) / "base_model.sswt"
                     : fs::path(override_path);
    if (!fs::exists(p))
        throw IoError("no base model at " + p.string() + " (run train-base with the same dataset/model config first)");
    auto bytes = read_file(p.string());
    return {nn::deserialize_graph<float>(bytes), hex64(fnv1a64(bytes)), p};
}

std::string hash_floats(std::span<const float> v) {
    return hex64(fnv1a64({reinterpret_cast<const std::uint8_t*>(v.data()), v.size() * sizeof(float)}));
}

std::string hash_labels(const std::vector<int>& v) {
    return hex64(fnv1a64({reinterpret_cast<const std::uint8_t*>(v.data()), v.size() * sizeof(int)}));
}

bool same_bits(const nn::Layer<float>& a, const nn::Layer<float>& b) {
    if (a.params.size() != b.params.size()) return false;
    for (std::size_t i = 0; i < a.params.size(); ++i) {
        const auto& x = a.params[i];
        const auto& y = b.params[i];
        if (x.shape() != y.shape() || std::memcmp(x.data().data(), y.data().data(), x.numel() * sizeof(float)) != 0)
            return false;
    }
    return true;
}

std::vector<std::uint8_t> read_input(const std::string& path) {
    if (path != "-") return read_file(path);
    std::vector<std::uint8_t> out;
    char buf[1 << 16];
    while (std::cin.read(buf, sizeof buf) || std::cin.gcount() > 0)
        out.insert(out.end(), buf, buf + std::cin.gcount());
    return out;
}

void write_output(const std::string& path, std::span<const std::uint8_t> bytes) {
    if (path != "-") {
        write_file(path, bytes);
        return;
    }
    std::cout.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    std::cout.flush();
    if (!std::cout) throw IoError("short write to stdout");
}

// ---- subcommands ------------------------------------------------------------

struct GenDataOpts {
    Common c;
    bool write_tensors = false;
};

int cmd_gen_data(const GenDataOpts& o) {
    const RunConfig cfg = load_config(o.c);
    const fs::path dir = run_dir_for(cfg, o.c, "data", kDataKeys);
    if (!open_run(dir, cfg, "data", kDataKeys, o.c.force)) {
        std::cout << dir.string() << " (up to date)\n";
        return 0;
    }
    const auto ds = make_dataset(cfg);
    auto split_json = [&](const nn::LabelledImages& s, const char* name) {
        std::vector<std::size_t> counts(cfg.get_uint("dataset.classes"), 0);
        for (int l : s.labels) ++counts[static_cast<std::size_t>(l)];
        ojson j{{"samples", s.size()},
                {"shape", s.images.shape().dims()},
                {"class_counts", counts},
                {"images_hash", hash_floats(s.images.data())},
                {"labels_hash", hash_labels(s.labels)}};
        if (o.write_tensors) {
            const std::string f = std::string(name) + "_images.sstn";
            write_file((dir / f).string(), serialize_tensor(s.images));
            write_atomically(dir / (std::string(name) + "_labels.json"), ojson(s.labels).dump() + "\n");
            j["images_file"] = f;
        }
        return j;
    };
    ojson m{{"kind", "data"}};
    m.update(config_block(cfg, kDataKeys));
    m["train"] = split_json(ds.train, "train");
    m["eval"] = split_json(ds.eval, "eval");
    write_atomically(dir / "manifest.json", m.dump(2) + "\n");
    std::cout << dir.string() << "\n";
    return 0;
}

int cmd_train_base(const Common& c) {
    const RunConfig cfg = load_config(c);
    const fs::path dir = run_dir_for(cfg, c, "base", kBaseKeys);
    if (!open_run(dir, cfg, "base", kBaseKeys, c.force)) {
        std::cout << dir.string() << " (up to date)\n";
        return 0;
    }
    const auto toy = cfg.toy();
    const auto ds = make_dataset(cfg);
    auto g = nn::build_toy_base_model<float>(toy, cfg.get_uint("model.seed"));
    std::ostringstream log;
    nn::train_classifier(g, ds.train, cfg.base_training(), [&](std::size_t epoch, double loss) {
        const ojson rec{{"epoch", epoch + 1}, {"loss", loss}};
        log << rec.dump() << "\n";
        std::cerr << "epoch " << epoch + 1 << " loss " << loss << "\n";
    });
    const double eval_acc = nn::accuracy(g, ds.eval);
    const double train_acc = nn::accuracy(g, ds.train);
    const auto bytes = nn::serialize_graph(g);
    write_file((dir / "base_model.sswt").string(), bytes);
    write_text_file((dir / "log.jsonl").string(), log.str());
    ojson cuts = ojson::array();
    for (const auto& cp : g.cuts) cuts.push_back({{"name", cp.name}, {"shape", g.shape_at(cp.boundary).dims()}});
    ojson m{{"kind", "base"}};
    m.update(config_block(cfg, kBaseKeys));
    m["model_file"] = "base_model.sswt";
    m["model_hash"] = hex64(fnv1a64(bytes));
    m["parameters"] = nn::count_parameters(g, false);
    m["split_points"] = cuts;
    m["train_accuracy"] = train_acc;
    m["eval_accuracy"] = eval_acc;
    m["log"] = "log.jsonl";
    write_atomically(dir / "manifest.json", m.dump(2) + "\n");
    std::printf("eval_accuracy %.17g\n", eval_acc);
    std::cout << dir.string() << "\n";
    return 0;
}

struct WithBase {
    Common c;
    std::string base;
};

int cmd_train_bottleneck(const WithBase& o) {
    const RunConfig cfg = load_config(o.c);
    const fs::path dir = run_dir_for(cfg, o.c, "bottleneck", kBottleneckKeys);
    if (!open_run(dir, cfg, "bottleneck", kBottleneckKeys, o.c.force)) {
        std::cout << dir.string() << " (up to date)\n";
        return 0;
    }
    const auto base = load_base(cfg, o.base);
    const std::string split = cfg.get_text("split.point");
    const auto ds = make_dataset(cfg);
    const auto data = prepare_split_data(base.graph, split, ds);
    BottleneckSpec spec = spec_at(base.graph, split, static_cast<std::uint16_t>(cfg.get_uint("bottleneck.channels")),
                                  static_cast<std::uint16_t>(cfg.get_uint("bottleneck.stride")));
    spec.encoder_relu = cfg.get_bool("bottleneck.encoder_relu");
    spec.decoder_relu = cfg.get_bool("bottleneck.decoder_relu");
    spec.validate();

    std::ostringstream log;
    auto res = train_bottleneck(base.graph, spec, cfg.train(), data, -1, &log);
    const std::size_t s = res.pipeline.boundary(kCutInput), d = res.pipeline.boundary(kCutDecoded);
    bool base_unchanged = true;
    for (std::size_t i = 0; i < s; ++i) base_unchanged &= same_bits(res.pipeline.layers[i], base.graph.layers[i]);
    for (std::size_t i = d; i < res.pipeline.size(); ++i)
        base_unchanged &= same_bits(res.pipeline.layers[i], base.graph.layers[i - d + s]);
    const OperatingPoint p = evaluate(split_model(base.graph, res.bottleneck), data.eval, res.bottleneck.hyperparams_used);
    const double base_acc = nn::accuracy(base.graph, ds.eval);

    const auto bytes = serialize_bottleneck(res.bottleneck);
    write_file((dir / "bottleneck.sswt").string(), bytes);
    write_text_file((dir / "log.jsonl").string(), log.str());
    const std::size_t trainable = res.bottleneck.parameter_count();
    const std::size_t total = nn::count_parameters(base.graph, false) + trainable;
    const auto& hp = res.bottleneck.hyperparams_used;
    ojson m{{"kind", "bottleneck"}};
    m.update(config_block(cfg, kBottleneckKeys));
    m["base_hash"] = base.hash;
    m["checkpoint"] = "bottleneck.sswt";
    m["checkpoint_hash"] = hex64(fnv1a64(bytes));
    m["C_r"] = hp.channels;
    m["S"] = hp.stride;
    m["alpha"] = hp.alpha;
    m["Q"] = hp.q;
    m["bpp"] = p.bpp;
    m["metric"] = p.metric;
    m["base_metric"] = base_acc;
    m["trainable_parameters"] = trainable;
    m["total_parameters"] = total;
    m["trainable_fraction"] = static_cast<double>(trainable) / static_cast<double>(total);
    m["base_unchanged"] = !cfg.get_bool("train.train_all") ? base_unchanged : false;
    m["log"] = "log.jsonl";
    write_atomically(dir / "manifest.json", m.dump(2) + "\n");
    std::printf("metric %.17g bpp %.17g base_metric %.17g trainable %zu/%zu\n", p.metric, p.bpp, base_acc, trainable,
                total);
    std::cout << dir.string() << "\n";
    return 0;
}

struct SearchOpts {
    WithBase b;
    std::size_t trials = 0;
    std::int64_t seed = -1;
    std::size_t workers = 0;
    std::size_t max_new = 0;
};

int cmd_search(SearchOpts o) {
    RunConfig cfg = load_config(o.b.c);
    if (o.trials) cfg.set("search.trials", std::to_string(o.trials));
    if (o.seed >= 0) cfg.set("search.seed", std::to_string(o.seed));
    if (o.workers) cfg.set("search.workers", std::to_string(o.workers));
    const SearchSpace space = cfg.search_space();
    const fs::path dir = run_dir_for(cfg, o.b.c, "search", kSearchKeys);
    open_run(dir, cfg, "search", kSearchKeys, o.b.c.force, true);
    const auto base = load_base(cfg, o.b.base);
    const auto ds = make_dataset(cfg);
    SearchOptions opt;
    opt.run_dir = dir;
    opt.split_point = cfg.get_text("split.point");
    opt.train = cfg.train();
    opt.workers = cfg.get_uint("search.workers");
    opt.max_new_trials = o.max_new;
    opt.base_hash = base.hash;
    opt.progress = &std::cerr;
    const auto data = prepare_split_data(base.graph, opt.split_point, ds);
    const SearchRun run = run_search(space, base.graph, data, opt);
    std::size_t pending = 0;
    for (const auto& t : run.trials) pending += t.status == TrialStatus::pending;
    std::cerr << run.successful().size() << " ok, " << pending << " pending, frontier of "
              << frontier_trials(run).size() << "\n";
    std::cout << (dir / "frontier.csv").string() << "\n";
    return 0;
}

struct ParetoOpts {
    std::string run;
    std::string out = "-";
    bool json = false;
};

int cmd_pareto(const ParetoOpts& o) {
    const fs::path m = fs::path(o.run) / "manifest.json";
    if (!fs::exists(m)) throw IoError("no search manifest at " + m.string());
    const SearchRun run = load_search_manifest(m);
    std::string text;
    if (o.json) {
        ojson pts = ojson::array();
        for (const auto* t : frontier_trials(run)) pts.push_back(trial_json(*t));
        text = pts.dump(2) + "\n";
    } else {
        text = frontier_csv(run);
    }
    write_output(o.out, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
    return 0;
}

struct PublishOpts {
    std::string run;
    std::string out;
    std::string base;
};

int cmd_publish(const PublishOpts& o) {
    const fs::path run_dir = o.run;
    const fs::path m = run_dir / "manifest.json";
    if (!fs::exists(m)) throw IoError("no search manifest at " + m.string());
    const RunConfig cfg = RunConfig::from_json(read_json_file((run_dir / "config.json").string()).at("config"));
    const SearchRun run = load_search_manifest(m);
    const auto base = load_base(cfg, o.base);
    if (base.hash != run.base_hash) throw InputError("base model " + base.path.string() + " is not the one searched with");

    runtime::BundleInput in;
    in.base = base.graph;
    in.split_point = run.split_point;
    in.image_height = in.image_width = static_cast<std::uint16_t>(cfg.get_uint("dataset.image_size"));
    in.dataset = cfg.to_json(kDataKeys);
    in.entries = runtime::frontier_entries(run, run_dir);
    std::uint64_t h = fnv1a64(base.hash);
    for (const auto& e : in.entries) h = fnv1a64(e.source.at("checkpoint_hash").get<std::string>(), h);
    const fs::path out = o.out.empty() ? fs::path(cfg.get_text("paths.work_dir")) / ("bundle-" + hex64(h)) : fs::path(o.out);
    if (fs::exists(out / "manifest.json")) {
        std::cout << out.string() << " (up to date)\n";
        return 0;
    }
    const auto rep = runtime::publish_bundle(in, out, &std::cout);
    std::cout << out.string() << "\n";
    (void)rep;
    return 0;
}

struct EvalOpts {
    std::string bundle;
    unsigned param_set = 0;
};

int cmd_eval(const EvalOpts& o) {
    const auto bm = runtime::load_bundle_manifest(o.bundle);
    const auto& rec = bm.param_set(o.param_set);
    const RunConfig cfg = RunConfig::from_json(bm.json.at("dataset"));
    const auto base = runtime::load_bundle_base(bm);
    const auto ds = make_dataset(cfg);
    const auto feats = compute_head_features(base, bm.split_point(), ds.eval);
    const auto m = runtime::load_split_model(o.bundle, static_cast<std::uint8_t>(o.param_set));
    HyperParams hp{rec.at("C_r").get<std::uint16_t>(), rec.at("S").get<std::uint16_t>(), rec.at("alpha").get<double>(),
                   rec.at("Q").get<float>()};
    const OperatingPoint p = evaluate(m, feats, hp);
    const double rm = rec.at("metric").get<double>(), rb = rec.at("bpp").get<double>();
    const double dm = std::abs(p.metric - rm), db = std::abs(p.bpp - rb);
    std::printf("param_set %u metric %.17g mean_bpp %.17g\n", o.param_set, p.metric, p.bpp);
    std::printf("recorded metric %.17g mean_bpp %.17g |diff| %.3g %.3g\n", rm, rb, dm, db);
    if (dm > 1e-9 || db > 1e-9) {
        std::cerr << "evaluation does not reproduce the bundle manifest\n";
        return 1;
    }
    return 0;
}

struct ServeOpts {
    std::string listen = "127.0.0.1:7878";
    std::string bundle;
    std::uint32_t max_body = runtime::kDefaultMaxBody;
    std::string log;
};

int cmd_serve(const ServeOpts& o) {
    auto model = std::make_shared<const runtime::ServerModel>(runtime::load_server_model(o.bundle));
    std::ofstream logf;
    if (!o.log.empty()) {
        logf.open(o.log, std::ios::app);
        if (!logf) throw IoError("cannot open log file " + o.log);
    }
    runtime::ServerOptions opt;
    opt.listen = runtime::parse_endpoint(o.listen);
    opt.max_body = o.max_body;
    opt.log = o.log.empty() ? &std::cerr : &logf;

    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);
    runtime::Server server(model, opt);
    server.start();
    std::printf("listening on %s:%u with %zu parameter sets\n", opt.listen.host.c_str(), unsigned{server.port()},
                model->decoders.size());
    std::fflush(stdout);
    int sig = 0;
    sigwait(&set, &sig);
    server.stop();
    std::cerr << "stopped after " << server.requests_served() << " requests\n";
    return 0;
}

struct InferOpts {
    std::string connect = "127.0.0.1:7878";
    std::string bundle;
    std::vector<unsigned> param_sets{0};
    std::string image;
    std::size_t eval_index = 0;
    std::size_t count = 1;
    int timeout_ms = 10000;
    bool ping = false;
};

int cmd_infer(const InferOpts& o) {
    auto client = runtime::Client::connect(runtime::parse_endpoint(o.connect), o.timeout_ms);
    if (o.ping) {
        client.ping();
        std::cout << "pong\n";
        return 0;
    }
    if (o.bundle.empty()) throw ConfigError("--bundle is required for inference");
    const auto cm = runtime::load_client_model(o.bundle);
    auto report = [&](const runtime::InferResult& r, unsigned id, std::int64_t index, int label) {
        ojson j{{"param_set_id", id}, {"class", r.class_index}};
        if (index >= 0) j["index"] = index, j["label"] = label;
        j["bits"] = r.request_bits;
        j["bpp"] = codec::bits_to_bpp(r.request_bits, cm.image_height, cm.image_width);
        j["logits"] = r.logits;
        std::cout << j.dump() << "\n";
    };
    if (!o.image.empty()) {
        const auto img = parse_tensor(read_file(o.image));
        for (unsigned id : o.param_sets) report(client.infer(cm, img, static_cast<std::uint8_t>(id)), id, -1, -1);
        return 0;
    }
    const auto bm = runtime::load_bundle_manifest(o.bundle);
    const auto ds = make_dataset(RunConfig::from_json(bm.json.at("dataset")));
    if (o.eval_index + o.count > ds.eval.size()) throw ConfigError("eval index range beyond the evaluation set");
    // ids rotate per request on the one connection
    for (std::size_t k = 0; k < o.count; ++k) {
        const std::size_t i = o.eval_index + k;
        const unsigned id = o.param_sets[k % o.param_sets.size()];
        auto r = client.infer(cm, ds.eval.batch(i, 1), static_cast<std::uint8_t>(id));
        report(r, id, static_cast<std::int64_t>(i), ds.eval.labels[i]);
    }
    return 0;
}

struct CodecOpts {
    std::string in = "-";
    std::string out = "-";
    float q = 1.0f;
    unsigned param_set = 0;
    unsigned image_height = 0, image_width = 0;
};

int cmd_codec_encode(const CodecOpts& o) {
    Tensor<float> t = parse_tensor(read_input(o.in));
    if (t.shape().rank() == 4 && t.shape()[0] == 1) t = slice_batch(t, 0);
    if (t.shape().rank() != 3) throw InputError("codec encode takes a (C, H, W) tensor, got " + t.shape().str());
    if (o.param_set > 255) throw ConfigError("--param-set must fit in one byte");
    const QuantParams q{o.q};
    const auto sym = quantize(t, q);
    const Tensor<float> back = dequantize<float>(sym, q);
    if (std::memcmp(back.data().data(), t.data().data(), t.numel() * sizeof(float)) != 0)
        std::cerr << "note: tensor is not on the Q grid; decoding returns the quantized values\n";
    const codec::FeatureMeta meta{static_cast<std::uint8_t>(o.param_set),
                                  static_cast<std::uint16_t>(o.image_height ? o.image_height : t.shape()[1]),
                                  static_cast<std::uint16_t>(o.image_width ? o.image_width : t.shape()[2])};
    const auto c = codec::encode(sym, q, meta);
    const auto bytes = codec::serialize(c);
    const auto b = codec::bit_budget(c);
    std::fprintf(stderr, "%zu symbols, %" PRIu64 " bits (header %" PRIu64 ", table %" PRIu64 ", payload %" PRIu64
                         "), %.6g bpp\n",
                 c.symbol_count(), b.total(), b.header, b.table, b.payload, codec::measure_bpp(c));
    write_output(o.out, bytes);
    return 0;
}

int cmd_codec_decode(const CodecOpts& o) {
    const auto c = codec::parse(read_input(o.in));
    write_output(o.out, serialize_tensor(reconstruct<float>(c)));
    return 0;
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const SpecError*>(&e)) return 2;
    if (dynamic_cast<const TimeoutError*>(&e) || dynamic_cast<const ConnectionError*>(&e)) return 1;
    if (dynamic_cast<const IoError*>(&e)) return 3;
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"splitnn: split inference with learned feature compression"};
    app.require_subcommand(1);
    app.footer(config_help());

    GenDataOpts gen;
    auto* c_gen = app.add_subcommand("gen-data", "generate the toy dataset and record its manifest");
    add_common(c_gen, gen.c);
    c_gen->add_flag("--write-tensors", gen.write_tensors, "also write the images as SSTN tensor files");

    Common base;
    auto* c_base = app.add_subcommand("train-base", "train the frozen base classifier");
    add_common(c_base, base);

    WithBase bn;
    auto* c_bn = app.add_subcommand("train-bottleneck", "train one bottleneck at the configured split point");
    add_common(c_bn, bn.c);
    c_bn->add_option("--base", bn.base, "base checkpoint (default: the train-base run of this config)");

    SearchOpts so;
    auto* c_search = app.add_subcommand("search", "random search over (C_r, S, alpha, Q); resumable");
    add_common(c_search, so.b.c);
    c_search->add_option("--base", so.b.base, "base checkpoint (default: the train-base run of this config)");
    c_search->add_option("--trials", so.trials, "shorthand for --set search.trials=N");
    c_search->add_option("--seed", so.seed, "shorthand for --set search.seed=N");
    c_search->add_option("--workers", so.workers, "shorthand for --set search.workers=N");
    c_search->add_option("--max-new-trials", so.max_new, "stop after this many new trials (resume later)");

    ParetoOpts po;
    auto* c_pareto = app.add_subcommand("pareto", "export the frontier of a search run");
    c_pareto->add_option("--run", po.run, "search run directory")->required();
    c_pareto->add_option("--out", po.out, "output file, - for stdout");
    c_pareto->add_flag("--json", po.json, "JSON instead of CSV");

    PublishOpts pub;
    auto* c_pub = app.add_subcommand("publish", "publish a search frontier as a client/server bundle");
    c_pub->add_option("--run", pub.run, "search run directory")->required();
    c_pub->add_option("--out", pub.out, "bundle directory (default: content-addressed under the work dir)");
    c_pub->add_option("--base", pub.base, "base checkpoint (default: the train-base run of the search config)");

    EvalOpts ev;
    auto* c_eval = app.add_subcommand("eval", "re-evaluate one parameter set of a bundle");
    c_eval->add_option("--bundle", ev.bundle, "bundle directory")->required();
    c_eval->add_option("--param-set", ev.param_set, "parameter set id")->required();

    ServeOpts sv;
    auto* c_serve = app.add_subcommand("serve", "serve the decoder side of a bundle");
    c_serve->add_option("--listen", sv.listen, "host:port, port 0 picks a free one");
    c_serve->add_option("--bundle", sv.bundle, "bundle directory")->required();
    c_serve->add_option("--max-body", sv.max_body, "largest accepted frame body in bytes");
    c_serve->add_option("--log", sv.log, "append per-request lines here instead of stderr");

    InferOpts io;
    auto* c_infer = app.add_subcommand("infer", "run the device side against a server");
    c_infer->add_option("--connect", io.connect, "server host:port");
    c_infer->add_option("--bundle", io.bundle, "bundle directory");
    c_infer->add_option("--param-set", io.param_sets, "parameter set id; several rotate per request");
    c_infer->add_option("--image", io.image, "SSTN image tensor (C, H, W)");
    c_infer->add_option("--eval-index", io.eval_index, "first evaluation image to send");
    c_infer->add_option("--count", io.count, "number of evaluation images");
    c_infer->add_option("--timeout-ms", io.timeout_ms, "per-request timeout");
    c_infer->add_flag("--ping", io.ping, "only check liveness");

    CodecOpts enc, dec;
    auto* c_codec = app.add_subcommand("codec", "stand-alone quantize + Huffman round trip of a tensor file");
    c_codec->require_subcommand(1);
    auto* c_enc = c_codec->add_subcommand("encode", "SSTN tensor to SSCF bitstream");
    c_enc->add_option("input", enc.in, "input tensor, - for stdin");
    c_enc->add_option("output", enc.out, "output bitstream, - for stdout");
    c_enc->add_option("--q", enc.q, "quantization step");
    c_enc->add_option("--param-set", enc.param_set, "param_set_id written to the header");
    c_enc->add_option("--image-height", enc.image_height, "image height for bpp (default: tensor H)");
    c_enc->add_option("--image-width", enc.image_width, "image width for bpp (default: tensor W)");
    auto* c_dec = c_codec->add_subcommand("decode", "SSCF bitstream to SSTN tensor");
    c_dec->add_option("input", dec.in, "input bitstream, - for stdin");
    c_dec->add_option("output", dec.out, "output tensor, - for stdout");

    Common show;
    auto* c_cfg = app.add_subcommand("config", "print the effective configuration");
    add_common(c_cfg, show);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*c_gen) return cmd_gen_data(gen);
        if (*c_base) return cmd_train_base(base);
        if (*c_bn) return cmd_train_bottleneck(bn);
        if (*c_search) return cmd_search(so);
        if (*c_pareto) return cmd_pareto(po);
        if (*c_pub) return cmd_publish(pub);
        if (*c_eval) return cmd_eval(ev);
        if (*c_serve) return cmd_serve(sv);
        if (*c_infer) return cmd_infer(io);
        if (*c_enc) return cmd_codec_encode(enc);
        if (*c_dec) return cmd_codec_decode(dec);
        if (*c_cfg) {
            std::cout << load_config(show).render();
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
    return 1;
}
