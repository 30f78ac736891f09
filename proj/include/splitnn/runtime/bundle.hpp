#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "splitnn/bottleneck.hpp"
#include "splitnn/bytes.hpp"
#include "splitnn/nn/checkpoint.hpp"
#include "splitnn/pipeline.hpp"
#include "splitnn/runtime/client.hpp"
#include "splitnn/runtime/server.hpp"
#include "splitnn/search.hpp"
#include "splitnn/trainer.hpp"

// Bundle layout under one directory:
//   manifest.json                    id -> {C_r, S, alpha, Q, bpp, metric, checkpoint_hash}
//   base_model.sswt
//   client/manifest.json, client/head.sswt, client/encoders/psNNN.sswt
//   server/manifest.json, server/tail.sswt, server/decoders/psNNN.sswt
// checkpoint_hash is the FNV-1a of the full (encoder + decoder) bottleneck
// serialization and appears unchanged in all three manifests. Each file
// also carries its own hash, checked on load.
namespace splitnn::runtime {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

inline constexpr std::size_t kMaxParamSets = 256;

struct BundleEntry {
    TrainedBottleneck<float> bottleneck;
    OperatingPoint point;
    ojson source;  // free-form provenance (trial index, run dir)
};

struct BundleInput {
    nn::LayerGraph<float> base;
    std::string split_point;
    std::uint16_t image_height = 0;
    std::uint16_t image_width = 0;
    ojson dataset;  // enough to regenerate the eval set
    std::vector<BundleEntry> entries;
};

// Minimal id width and the bpp it would cost at a given resolution.
inline unsigned id_bits(std::size_t sets) {
    unsigned b = 0;
    while ((std::size_t{1} << b) < sets) ++b;
    return b;
}

inline double id_overhead_bpp(std::size_t sets, std::size_t height = 224, std::size_t width = 224) {
    return static_cast<double>(id_bits(sets)) / static_cast<double>(height * width);
}

struct PublishReport {
    std::string bundle_id;
    std::size_t sets = 0;
    unsigned id_bits = 0;
    double delta_bpp_224 = 0.0;
    double delta_bpp_native = 0.0;
};

namespace detail {

inline std::string file_hash(std::span<const std::uint8_t> bytes) { return hex64(fnv1a64(bytes)); }

inline ojson write_part(const fs::path& root, const std::string& rel, std::span<const std::uint8_t> bytes) {
    const fs::path p = root / rel;
    fs::create_directories(p.parent_path());
    write_file(p.string(), bytes);
    return {{"file", rel}, {"hash", file_hash(bytes)}};
}

inline std::vector<std::uint8_t> read_part(const fs::path& root, const nlohmann::json& part) {
    const std::string rel = part.at("file").get<std::string>();
    const fs::path p = root / rel;
    if (!fs::exists(p)) throw IoError("bundle file missing: " + p.string());
    auto bytes = read_file(p.string());
    const std::string want = part.at("hash").get<std::string>();
    if (file_hash(bytes) != want)
        throw InputError("hash mismatch for " + p.string() + " (expected " + want + ", got " + file_hash(bytes) + ")");
    return bytes;
}

inline nlohmann::json read_json(const fs::path& p) {
    if (!fs::exists(p)) throw IoError("missing manifest " + p.string());
    auto bytes = read_file(p.string());
    try {
        return nlohmann::json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::exception& e) {
        throw InputError("cannot parse " + p.string() + ": " + e.what());
    }
}

inline std::string part_name(std::size_t id) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "ps%03zu.sswt", id);
    return buf;
}

}  // namespace detail

// Ids follow input order (bpp ascending for a frontier). The output
// directory must be empty or absent.
inline PublishReport publish_bundle(const BundleInput& in, const fs::path& out, std::ostream* log = nullptr) {
    if (in.entries.empty()) throw CapacityError("cannot publish an empty frontier");
    if (in.entries.size() > kMaxParamSets - 1)
        throw CapacityError("frontier has " + std::to_string(in.entries.size()) +
                            " points; a bundle holds at most 255 parameter sets");
    if (fs::exists(out) && !fs::is_empty(out)) throw ConfigError("bundle directory " + out.string() + " is not empty");
    const std::size_t split = in.base.boundary(in.split_point);

    fs::create_directories(out);
    const auto base_bytes = nn::serialize_graph(in.base);
    const auto head_bytes = nn::serialize_graph(subgraph(in.base, 0, split));
    const auto tail_bytes = nn::serialize_graph(subgraph(in.base, split, in.base.size()));

    ojson sets = ojson::array(), client_sets = ojson::array(), server_sets = ojson::array();
    std::uint64_t bid = fnv1a64(base_bytes);
    bid = fnv1a64(head_bytes, bid);
    bid = fnv1a64(tail_bytes, bid);
    for (std::size_t id = 0; id < in.entries.size(); ++id) {
        TrainedBottleneck<float> b = in.entries[id].bottleneck;
        if (b.spec.split_point_id != in.split_point)
            throw InputError("parameter set " + std::to_string(id) + " was trained for split point '" +
                             b.spec.split_point_id + "'");
        b.param_set_id = static_cast<std::uint8_t>(id);
        const auto full = serialize_bottleneck(b);
        const std::string ck = detail::file_hash(full);
        bid = fnv1a64(full, bid);
        const auto& p = in.entries[id].point;
        const auto& hp = b.hyperparams_used;
        sets.push_back({{"id", id},
                        {"C_r", hp.channels},
                        {"S", hp.stride},
                        {"alpha", hp.alpha},
                        {"Q", hp.q},
                        {"bpp", p.bpp},
                        {"metric", p.metric},
                        {"checkpoint_hash", ck},
                        {"source", in.entries[id].source}});
        client_sets.push_back({{"id", id},
                               {"Q", hp.q},
                               {"checkpoint_hash", ck},
                               {"encoder", detail::write_part(out / "client", "encoders/" + detail::part_name(id),
                                                              serialize_bottleneck(b, BottleneckPart::encoder))}});
        server_sets.push_back({{"id", id},
                               {"Q", hp.q},
                               {"checkpoint_hash", ck},
                               {"decoder", detail::write_part(out / "server", "decoders/" + detail::part_name(id),
                                                              serialize_bottleneck(b, BottleneckPart::decoder))}});
    }

    PublishReport rep;
    rep.bundle_id = hex64(bid);
    rep.sets = in.entries.size();
    rep.id_bits = id_bits(rep.sets);
    rep.delta_bpp_224 = id_overhead_bpp(rep.sets);
    rep.delta_bpp_native = id_overhead_bpp(rep.sets, in.image_height, in.image_width);

    const ojson common{{"bundle_id", rep.bundle_id},
                       {"split_point", in.split_point},
                       {"image_height", in.image_height},
                       {"image_width", in.image_width}};
    ojson top{{"kind", "bundle"}, {"version", 1}};
    top.update(common);
    top["dataset"] = in.dataset;
    top["base_model"] = detail::write_part(out, "base_model.sswt", base_bytes);
    top["id_overhead"] = {{"sets", rep.sets},
                          {"id_bits", rep.id_bits},
                          {"wire_bits", 8},
                          {"delta_bpp_224x224", rep.delta_bpp_224},
                          {"delta_bpp_native", rep.delta_bpp_native}};
    top["param_sets"] = sets;

    ojson client{{"kind", "client-bundle"}, {"version", 1}};
    client.update(common);
    client["head"] = detail::write_part(out / "client", "head.sswt", head_bytes);
    client["param_sets"] = client_sets;
    ojson server{{"kind", "server-bundle"}, {"version", 1}};
    server.update(common);
    server["tail"] = detail::write_part(out / "server", "tail.sswt", tail_bytes);
    server["param_sets"] = server_sets;

    write_atomically(out / "client" / "manifest.json", client.dump(2) + "\n");
    write_atomically(out / "server" / "manifest.json", server.dump(2) + "\n");
    write_atomically(out / "manifest.json", top.dump(2) + "\n");

    if (log) {
        char line[256];
        std::snprintf(line, sizeof line,
                      "published %zu parameter sets: id width %u bits (carried in 1 byte), "
                      "overhead %.6g bpp at 224x224, %.6g bpp at %ux%u\n",
                      rep.sets, rep.id_bits, rep.delta_bpp_224, rep.delta_bpp_native, unsigned{in.image_height},
                      unsigned{in.image_width});
        *log << line;
    }
    return rep;
}

// Frontier trials of a finished search, loaded and checked against the
// hashes the search recorded.
inline std::vector<BundleEntry> frontier_entries(const SearchRun& run, const fs::path& run_dir) {
    std::vector<BundleEntry> out;
    for (const TrialRecord* t : frontier_trials(run)) {
        const fs::path p = run_dir / t->checkpoint;
        if (!fs::exists(p)) throw IoError("missing trial checkpoint " + p.string());
        auto bytes = read_file(p.string());
        if (hex64(fnv1a64(bytes)) != t->checkpoint_hash) throw InputError("checkpoint hash mismatch for " + p.string());
        BundleEntry e;
        e.bottleneck = deserialize_bottleneck<float>(bytes);
        e.point = t->point;
        e.source = {{"trial", t->index}, {"checkpoint_hash", t->checkpoint_hash}};
        out.push_back(std::move(e));
    }
    return out;
}

// ---- loading ----------------------------------------------------------------

struct BundleManifest {
    nlohmann::json json;
    fs::path root;

    std::string bundle_id() const { return json.at("bundle_id").get<std::string>(); }
    std::string split_point() const { return json.at("split_point").get<std::string>(); }
    const nlohmann::json& param_set(std::size_t id) const {
        for (const auto& p : json.at("param_sets"))
            if (p.at("id").get<std::size_t>() == id) return p;
        throw InputError("bundle has no parameter set " + std::to_string(id));
    }
};

inline BundleManifest load_bundle_manifest(const fs::path& root) {
    BundleManifest m{detail::read_json(root / "manifest.json"), root};
    if (m.json.value("kind", "") != "bundle") throw InputError(root.string() + " is not a bundle");
    return m;
}

namespace detail {

// Side manifest, cross-checked against the top-level one when present.
inline nlohmann::json side_manifest(const fs::path& root, const char* side, const char* kind) {
    nlohmann::json j = read_json(root / side / "manifest.json");
    if (j.value("kind", "") != kind) throw InputError((root / side).string() + " is not a " + kind);
    if (fs::exists(root / "manifest.json")) {
        const BundleManifest top = load_bundle_manifest(root);
        if (top.bundle_id() != j.at("bundle_id").get<std::string>())
            throw InputError(std::string(side) + " manifest belongs to a different bundle");
        for (const auto& p : j.at("param_sets")) {
            const auto& tp = top.param_set(p.at("id").get<std::size_t>());
            if (tp.at("checkpoint_hash") != p.at("checkpoint_hash"))
                throw InputError(std::string(side) + " checkpoint hash differs from the bundle manifest for id " +
                                 p.at("id").dump());
        }
    }
    return j;
}

}  // namespace detail

inline ClientModel load_client_model(const fs::path& root) {
    const auto j = detail::side_manifest(root, "client", "client-bundle");
    const fs::path dir = root / "client";
    ClientModel m;
    m.head = nn::deserialize_graph<float>(detail::read_part(dir, j.at("head")));
    m.image_height = j.at("image_height").get<std::uint16_t>();
    m.image_width = j.at("image_width").get<std::uint16_t>();
    for (const auto& p : j.at("param_sets")) {
        const auto id = p.at("id").get<std::uint8_t>();
        auto b = deserialize_bottleneck<float>(detail::read_part(dir, p.at("encoder")));
        if (b.param_set_id != id) throw InputError("encoder file does not match its id " + std::to_string(id));
        EncoderEntry e{encoder_graph(b), b.hyperparams_used.q, p.at("checkpoint_hash").get<std::string>()};
        if (e.encoder.input_shape != m.head.output_shape_of())
            throw ShapeError("encoder " + std::to_string(id) + " does not fit the head output");
        m.encoders.emplace(id, std::move(e));
    }
    return m;
}

inline ServerModel load_server_model(const fs::path& root) {
    const auto j = detail::side_manifest(root, "server", "server-bundle");
    const fs::path dir = root / "server";
    ServerModel m;
    m.tail = nn::deserialize_graph<float>(detail::read_part(dir, j.at("tail")));
    m.image_height = j.at("image_height").get<std::uint16_t>();
    m.image_width = j.at("image_width").get<std::uint16_t>();
    for (const auto& p : j.at("param_sets")) {
        const auto id = p.at("id").get<std::uint8_t>();
        auto b = deserialize_bottleneck<float>(detail::read_part(dir, p.at("decoder")));
        if (b.param_set_id != id) throw InputError("decoder file does not match its id " + std::to_string(id));
        m.decoders.emplace(id, DecoderEntry{decoder_graph(b), b.hyperparams_used.q,
                                            p.at("checkpoint_hash").get<std::string>()});
    }
    m.validate();
    return m;
}

inline nn::LayerGraph<float> load_bundle_base(const BundleManifest& m) {
    return nn::deserialize_graph<float>(detail::read_part(m.root, m.json.at("base_model")));
}

// Full split model for one published id, assembled from both sides.
inline SplitModel<float> load_split_model(const fs::path& root, std::uint8_t id) {
    const ClientModel c = load_client_model(root);
    const ServerModel s = load_server_model(root);
    auto ce = c.encoders.find(id);
    auto se = s.decoders.find(id);
    if (ce == c.encoders.end() || se == s.decoders.end())
        throw InputError("bundle has no parameter set " + std::to_string(id));
    SplitModel<float> m;
    m.head = c.head;
    m.encoder = ce->second.encoder;
    m.decoder = se->second.decoder;
    m.tail = s.tail;
    m.q = ce->second.q;
    m.param_set_id = id;
    return m;
}

}  // namespace splitnn::runtime
