#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "splitnn/bottleneck.hpp"
#include "splitnn/bytes.hpp"
#include "splitnn/error.hpp"
#include "splitnn/nn/toy.hpp"
#include "splitnn/search.hpp"
#include "splitnn/trainer.hpp"

// Flat key=value run configuration. In files, keys live under [section]
// headers and are addressed as section.key everywhere else:
//
//   [dataset]
//   seed = 1
//   noise = 0.15          # trailing comments allowed
namespace splitnn {

enum class KeyType { integer, real, boolean, text, list };

struct KeyDef {
    std::string key;
    KeyType type;
    std::string default_value;
    std::string help;
    double min = -1e300, max = 1e300;  // numeric bounds, inclusive
};

inline const char* type_name(KeyType t) {
    switch (t) {
        case KeyType::integer: return "int";
        case KeyType::real: return "float";
        case KeyType::boolean: return "bool";
        case KeyType::text: return "string";
        case KeyType::list: return "int list";
    }
    return "?";
}

inline const std::vector<KeyDef>& config_schema() {
    static const std::vector<KeyDef> schema = [] {
        const nn::ToyConfig toy;
        const TrainConfig tr;
        const SearchSpace sp;
        auto num = [](double v) {
            std::ostringstream o;
            o << v;
            return o.str();
        };
        auto list = [](const std::vector<std::uint16_t>& v) {
            std::string s;
            for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
            return s;
        };
        using K = KeyType;
        return std::vector<KeyDef>{
            {"dataset.seed", K::integer, "1", "dataset generator seed", 0, 1e18},
            {"dataset.image_size", K::integer, std::to_string(toy.image_size), "square image side in pixels", 8, 512},
            {"dataset.channels", K::integer, std::to_string(toy.channels), "image channels", 1, 16},
            {"dataset.classes", K::integer, std::to_string(toy.classes), "number of classes", 2, 8},
            {"dataset.train_samples", K::integer, std::to_string(toy.train_samples), "training images", 2, 1e7},
            {"dataset.eval_samples", K::integer, std::to_string(toy.eval_samples), "evaluation images", 2, 1e7},
            {"dataset.noise", K::real, num(toy.noise), "additive pixel noise std", 0, 10},

            {"model.topology", K::text, toy.topology, "base network layers, space separated; @name marks a split point"},
            {"model.seed", K::integer, "2", "base weight init and shuffle seed", 0, 1e18},
            {"model.epochs", K::integer, "15", "base training epochs", 1, 1000},
            {"model.batch_size", K::integer, "64", "base training batch size", 1, 65536},
            {"model.lr", K::real, "0.001", "base training Adam learning rate", 1e-12, 10},

            {"split.point", K::text, "block3", "split point (an @name of the topology)"},

            {"bottleneck.channels", K::integer, "8", "reduced channels C_r", 1, 65535},
            {"bottleneck.stride", K::integer, "2", "spatial stride S", 1, 64},
            {"bottleneck.alpha", K::real, num(tr.alpha), "task loss weight alpha", 0, 1e12},
            {"bottleneck.q", K::real, "0.5", "quantization step Q", 1e-12, 1e12},
            {"bottleneck.encoder_relu", K::boolean, "false", "ReLU after the encoder (ablation)"},
            {"bottleneck.decoder_relu", K::boolean, "false", "ReLU after the decoder (ablation)"},

            {"train.epochs", K::integer, std::to_string(tr.epochs), "bottleneck training epochs", 1,
             static_cast<double>(tr.epoch_cap)},
            {"train.batch_size", K::integer, std::to_string(tr.batch_size), "bottleneck batch size", 1, 65536},
            {"train.lr", K::real, num(tr.adam.lr), "bottleneck Adam learning rate", 1e-12, 10},
            {"train.cosine_lr", K::boolean, tr.cosine_lr ? "true" : "false", "cosine decay of the learning rate"},
            {"train.seed", K::integer, std::to_string(tr.seed), "bottleneck init and shuffle seed", 0, 1e18},
            {"train.train_all", K::boolean, "false", "also update head and tail weights"},
            {"train.eval_each_epoch", K::boolean, "true", "evaluate after every epoch"},

            {"search.channel_choices", K::list, list(sp.channel_choices), "C_r choices"},
            {"search.stride_choices", K::list, list(sp.stride_choices), "S choices"},
            {"search.q_min", K::real, num(sp.q_min), "lower end of the Q range", 1e-12, 1e12},
            {"search.q_max", K::real, num(sp.q_max), "upper end of the Q range", 1e-12, 1e12},
            {"search.l_min", K::real, num(sp.l_min), "lower end of L, alpha = 10^L", -30, 30},
            {"search.l_max", K::real, num(sp.l_max), "upper end of L", -30, 30},
            {"search.trials", K::integer, std::to_string(sp.trials), "number of trials", 1, 100000},
            {"search.seed", K::integer, std::to_string(sp.seed), "sampling seed", 0, 1e18},
            {"search.workers", K::integer, "1", "parallel trial workers", 1, 256},

            {"paths.work_dir", K::text, "runs", "root of the content-addressed run directories"},
        };
    }();
    return schema;
}

inline const KeyDef* find_key(const std::string& key) {
    for (const auto& d : config_schema())
        if (d.key == key) return &d;
    return nullptr;
}

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

inline nlohmann::json parse_value(const KeyDef& d, const std::string& raw) {
    const std::string v = trim(raw);
    auto bad = [&](const std::string& why) {
        return ConfigError("bad value '" + v + "' for " + d.key + " (" + type_name(d.type) + "): " + why);
    };
    auto check_range = [&](double x) {
        if (x < d.min || x > d.max) {
            std::ostringstream o;
            o << "must be in [" << d.min << ", " << d.max << "]";
            throw bad(o.str());
        }
    };
    switch (d.type) {
        case KeyType::integer: {
            if (v.empty() || v[0] == '-') throw bad("expected a non-negative integer");
            std::size_t used = 0;
            unsigned long long x;
            try {
                x = std::stoull(v, &used);
            } catch (const std::exception&) {
                throw bad("expected an integer");
            }
            if (used != v.size()) throw bad("expected an integer");
            check_range(static_cast<double>(x));
            return x;
        }
        case KeyType::real: {
            std::size_t used = 0;
            double x;
            try {
                x = std::stod(v, &used);
            } catch (const std::exception&) {
                throw bad("expected a number");
            }
            if (used != v.size() || !std::isfinite(x)) throw bad("expected a finite number");
            check_range(x);
            return x;
        }
        case KeyType::boolean:
            if (v == "true" || v == "1" || v == "yes") return true;
            if (v == "false" || v == "0" || v == "no") return false;
            throw bad("expected true or false");
        case KeyType::text:
            if (v.empty()) throw bad("must not be empty");
            return v;
        case KeyType::list: {
            std::vector<std::uint64_t> out;
            std::stringstream ss(v);
            std::string tok;
            while (std::getline(ss, tok, ',')) {
                tok = trim(tok);
                std::size_t used = 0;
                unsigned long x;
                try {
                    x = std::stoul(tok, &used);
                } catch (const std::exception&) {
                    throw bad("expected comma separated integers");
                }
                if (used != tok.size() || x == 0 || x > 65535) throw bad("entries must be integers in [1, 65535]");
                out.push_back(x);
            }
            if (out.empty()) throw bad("must not be empty");
            return out;
        }
    }
    throw bad("unknown type");
}

}  // namespace detail

class RunConfig {
public:
    RunConfig() {
        for (const auto& d : config_schema()) values_[d.key] = detail::parse_value(d, d.default_value);
    }

    void set(const std::string& key, const std::string& value) {
        const KeyDef* d = find_key(key);
        if (!d) throw ConfigError("unknown config key '" + key + "'");
        values_[key] = detail::parse_value(*d, value);
    }

    // "key=value"
    void set_assignment(const std::string& kv) {
        auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + kv + "'");
        set(detail::trim(kv.substr(0, eq)), kv.substr(eq + 1));
    }

    void load_text(const std::string& text, const std::string& origin = "config") {
        std::istringstream in(text);
        std::string line, section;
        for (std::size_t no = 1; std::getline(in, line); ++no) {
            if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
            line = detail::trim(line);
            if (line.empty()) continue;
            const std::string where = origin + ":" + std::to_string(no) + ": ";
            if (line.front() == '[') {
                if (line.back() != ']') throw ConfigError(where + "unterminated section header");
                section = detail::trim(line.substr(1, line.size() - 2));
                continue;
            }
            auto eq = line.find('=');
            if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
            std::string key = detail::trim(line.substr(0, eq));
            if (!section.empty()) key = section + "." + key;
            try {
                set(key, line.substr(eq + 1));
            } catch (const ConfigError& e) {
                throw ConfigError(where + e.what());
            }
        }
    }

    void load_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open config file " + path);
        std::stringstream ss;
        ss << in.rdbuf();
        load_text(ss.str(), path);
    }

    std::uint64_t get_uint(const std::string& key) const { return at(key, KeyType::integer).get<std::uint64_t>(); }
    double get_real(const std::string& key) const { return at(key, KeyType::real).get<double>(); }
    bool get_bool(const std::string& key) const { return at(key, KeyType::boolean).get<bool>(); }
    std::string get_text(const std::string& key) const { return at(key, KeyType::text).get<std::string>(); }
    std::vector<std::uint16_t> get_list(const std::string& key) const {
        return at(key, KeyType::list).get<std::vector<std::uint16_t>>();
    }

    // Values of the given sections (all when empty), in schema order.
    nlohmann::ordered_json to_json(const std::vector<std::string>& sections = {}) const {
        nlohmann::ordered_json j = nlohmann::ordered_json::object();
        for (const auto& d : config_schema())
            if (in_sections(d.key, sections)) j[d.key] = values_.at(d.key);
        return j;
    }

    static RunConfig from_json(const nlohmann::json& j) {
        RunConfig c;
        for (auto it = j.begin(); it != j.end(); ++it) {
            const KeyDef* d = find_key(it.key());
            if (!d) throw ConfigError("unknown config key '" + it.key() + "' in manifest");
            const auto& v = it.value();
            std::string raw;
            if (v.is_string()) {
                raw = v.get<std::string>();
            } else if (v.is_array()) {
                for (std::size_t i = 0; i < v.size(); ++i) raw += (i ? "," : "") + v[i].dump();
            } else {
                raw = v.dump();
            }
            c.values_[d->key] = detail::parse_value(*d, raw);
        }
        return c;
    }

    // Key = value text that load_text reads back to the same config.
    std::string render() const {
        std::string out, section;
        for (const auto& d : config_schema()) {
            const auto dot = d.key.find('.');
            const std::string sec = d.key.substr(0, dot);
            if (sec != section) {
                out += (section.empty() ? "[" : "\n[") + sec + "]\n";
                section = sec;
            }
            const auto& v = values_.at(d.key);
            std::string text;
            if (v.is_string()) {
                text = v.get<std::string>();
            } else if (v.is_array()) {
                for (std::size_t i = 0; i < v.size(); ++i) text += (i ? "," : "") + v[i].dump();
            } else {
                text = v.dump();
            }
            out += d.key.substr(dot + 1) + " = " + text + "\n";
        }
        return out;
    }

    std::string hash(const std::vector<std::string>& sections = {}) const {
        return hex64(fnv1a64(to_json(sections).dump()));
    }

    // ---- typed views ----

    nn::ToyConfig toy() const {
        nn::ToyConfig t;
        t.image_size = get_uint("dataset.image_size");
        t.channels = get_uint("dataset.channels");
        t.classes = get_uint("dataset.classes");
        t.train_samples = get_uint("dataset.train_samples");
        t.eval_samples = get_uint("dataset.eval_samples");
        t.noise = get_real("dataset.noise");
        t.topology = get_text("model.topology");
        t.validate();
        return t;
    }

    nn::ClassifierTrainConfig base_training() const {
        nn::ClassifierTrainConfig c;
        c.epochs = get_uint("model.epochs");
        c.batch_size = get_uint("model.batch_size");
        c.adam.lr = get_real("model.lr");
        c.seed = get_uint("model.seed");
        return c;
    }

    TrainConfig train() const {
        TrainConfig t;
        t.alpha = get_real("bottleneck.alpha");
        t.q = static_cast<float>(get_real("bottleneck.q"));
        t.epochs = get_uint("train.epochs");
        t.batch_size = get_uint("train.batch_size");
        t.adam.lr = get_real("train.lr");
        t.cosine_lr = get_bool("train.cosine_lr");
        t.seed = get_uint("train.seed");
        t.train_all = get_bool("train.train_all");
        t.eval_each_epoch = get_bool("train.eval_each_epoch");
        return t;
    }

    SearchSpace search_space() const {
        SearchSpace s;
        s.channel_choices = get_list("search.channel_choices");
        s.stride_choices = get_list("search.stride_choices");
        s.q_min = get_real("search.q_min");
        s.q_max = get_real("search.q_max");
        s.l_min = get_real("search.l_min");
        s.l_max = get_real("search.l_max");
        s.trials = get_uint("search.trials");
        s.seed = get_uint("search.seed");
        s.validate();
        return s;
    }

private:
    static bool in_sections(const std::string& key, const std::vector<std::string>& sections) {
        if (sections.empty()) return true;
        const std::string sec = key.substr(0, key.find('.'));
        for (const auto& s : sections)
            if (s == sec || s == key) return true;
        return false;
    }

    const nlohmann::json& at(const std::string& key, KeyType t) const {
        const KeyDef* d = find_key(key);
        if (!d) throw ConfigError("unknown config key '" + key + "'");
        if (d->type != t) throw ConfigError("config key " + key + " is a " + type_name(d->type));
        return values_.at(key);
    }

    std::map<std::string, nlohmann::json> values_;
};

// One line per key for --help.
inline std::string config_help() {
    std::string out = "Config keys (file sections [a] hold keys a.*; override with --set key=value):\n";
    for (const auto& d : config_schema()) {
        out += "  " + d.key + " (" + type_name(d.type) + ", default " + d.default_value + ")\n      " + d.help + "\n";
    }
    return out;
}

}  // namespace splitnn
