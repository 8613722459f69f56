#pragma once

#include <fstream>
#include <string>

#include "ma2rl/config.hpp"
#include "ma2rl/training/update.hpp"

namespace ma2rl::training {

inline constexpr int kCheckpointVersion = 1;

/// JSON container: version, resolved config and its hash, value-norm moments,
/// and every store entry with its shape.
inline json checkpoint_json(const ParameterStore& store, const ExperimentConfig& config, const ValueNorm& vn) {
    json j;
    j["version"] = kCheckpointVersion;
    j["config"] = to_json(config);
    j["config_hash"] = config_hash(j["config"]);
    j["store_seed"] = store.seed();
    j["value_norm"] = {vn.mean_, vn.mean_sq_, vn.debias_};
    json params = json::array();
    for (const auto& e : store.entries()) {
        std::vector<double> data(e.value.data(), e.value.data() + e.value.size());
        params.push_back({{"name", e.name}, {"rows", e.value.rows()}, {"cols", e.value.cols()}, {"data", data}});
    }
    j["params"] = std::move(params);
    return j;
}

inline void save_checkpoint(const std::string& path, const ParameterStore& store, const ExperimentConfig& config,
                            const ValueNorm& vn) {
    std::ofstream out(path);
    if (!out) throw LoadError(path + ": cannot write checkpoint");
    out << checkpoint_json(store, config, vn).dump();
}

struct Checkpoint {
    ExperimentConfig config;
    json doc;
};

inline Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw LoadError(path + ": cannot open checkpoint");
    Checkpoint c;
    c.doc = json::parse(in, nullptr, false);
    if (c.doc.is_discarded() || !c.doc.is_object()) throw LoadError(path + ": not a checkpoint");
    if (c.doc.value("version", -1) != kCheckpointVersion) throw LoadError(path + ": unsupported checkpoint version");
    try {
        c.config = parse_config(c.doc.at("config"));
    } catch (const std::exception& e) {
        throw LoadError(path + ": embedded config is invalid: " + e.what());
    }
    if (c.doc.value("config_hash", std::uint64_t{0}) != config_hash(c.doc.at("config")))
        throw LoadError(path + ": config hash does not match its config");
    return c;
}

/// Fixed dimensions (F, D, K) must agree; widths of the rest are checked entry by entry.
inline void check_compatible(const ModelConfig& saved, const ModelConfig& wanted) {
    auto same = [](Index a, Index b, const char* what) {
        if (a != b)
            throw LoadError(std::string("checkpoint ") + what + " is " + std::to_string(a) + " but " + std::to_string(b) +
                            " was requested");
    };
    same(saved.features, wanted.features, "entity width F");
    same(saved.latent, wanted.latent, "latent width D");
    same(saved.skills, wanted.skills, "skill count K");
}

/// Copies checkpoint values into a store with identical names and shapes.
inline void load_parameters(ParameterStore& store, const json& doc) {
    const json& params = doc.at("params");
    if (params.size() != store.size()) throw LoadError("checkpoint has " + std::to_string(params.size()) + " entries, model has " + std::to_string(store.size()));
    for (const auto& p : params) {
        const std::string name = p.at("name");
        if (!store.contains(name)) throw LoadError("checkpoint entry '" + name + "' does not exist in the model");
        Tensor& v = store.entry(name).value;
        if (p.at("rows").get<Index>() != v.rows() || p.at("cols").get<Index>() != v.cols())
            throw LoadError("checkpoint entry '" + name + "' has a different shape");
        const auto data = p.at("data").get<std::vector<double>>();
        if (static_cast<Index>(data.size()) != v.size()) throw LoadError("checkpoint entry '" + name + "' is truncated");
        std::copy(data.begin(), data.end(), v.data());
    }
}

inline void load_value_norm(ValueNorm& vn, const json& doc) {
    const auto m = doc.at("value_norm").get<std::vector<double>>();
    if (m.size() != 3) throw LoadError("checkpoint value_norm must hold three moments");
    vn.mean_ = m[0], vn.mean_sq_ = m[1], vn.debias_ = m[2];
}

/// Store for `model` holding the checkpoint's parameters.
inline ParameterStore restore_store(const Checkpoint& c, const ModelConfig& model) {
    check_compatible(c.config.model, model);
    ParameterStore store(c.doc.value("store_seed", std::uint64_t{0}));
    try {
        policy::declare_model(store, model);
    } catch (const ConfigError& e) {
        throw LoadError(e.what());
    }
    load_parameters(store, c.doc);
    return store;
}

}  // namespace ma2rl::training
