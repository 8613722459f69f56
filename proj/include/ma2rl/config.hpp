#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ma2rl/arena.hpp"
#include "ma2rl/model_config.hpp"
#include "ma2rl/training/train_config.hpp"

namespace ma2rl {

using nlohmann::json;

/// Everything one experiment needs: arena, trainer, network, and the arenas
/// to evaluate on afterwards.
struct ExperimentConfig {
    arena::ArenaConfig arena;
    training::TrainConfig train;
    ModelConfig model;
    std::vector<arena::ArenaConfig> eval;

    void validate() const {
        arena.validate();
        train.validate();
        model.validate();
        for (const auto& e : eval) e.validate();
    }
};

namespace config_detail {

/// Reads the keys of one JSON object, rejecting unknown ones and wrong types.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
    }

    template <class T>
    void get(const char* key, T& out, bool required = false) {
        seen_.insert(key);
        const std::string field = path_.empty() ? key : path_ + "." + key;
        if (!j_.contains(key)) {
            if (required) throw ConfigError(field + ": required field is missing");
            return;
        }
        const json& v = j_.at(key);
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ConfigError(field + ": expected true or false");
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) throw ConfigError(field + ": expected an integer");
            if constexpr (std::is_unsigned_v<T>)
                if (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)
                    throw ConfigError(field + ": expected a nonnegative integer");
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) throw ConfigError(field + ": expected a number");
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) throw ConfigError(field + ": expected a string");
        }
        out = v.get<T>();
    }

    void finish() const {
        for (const auto& [k, _] : j_.items())
            if (!seen_.contains(k)) throw ConfigError((path_.empty() ? k : path_ + "." + k) + ": unknown key");
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

inline arena::ArenaConfig parse_arena(const json& j, const std::string& path, arena::ArenaConfig c, bool strict_required) {
    Section s(j, path);
    s.get("n_agents", c.n_agents, strict_required);
    s.get("n_targets", c.n_targets, strict_required);
    s.get("grid_size", c.grid_size);
    s.get("sight_radius", c.sight_radius);
    s.get("episode_limit", c.episode_limit);
    s.get("tag_reward", c.tag_reward);
    s.get("step_penalty", c.step_penalty);
    s.get("target_move_prob", c.target_move_prob);
    s.get("seed", c.seed);
    s.get("relativize", c.relativize);
    s.finish();
    return c;
}

}  // namespace config_detail

/// Strict parse: unknown keys and ill-typed values are errors naming the field.
/// Required: arena.n_agents, arena.n_targets, train.total_env_steps, train.seed.
inline ExperimentConfig parse_config(const json& j) {
    using config_detail::Section;
    ExperimentConfig c;
    Section top(j, "");
    json empty = json::object();
    if (!j.contains("arena")) throw ConfigError("arena: required section is missing");
    if (!j.contains("train")) throw ConfigError("train: required section is missing");
    top.get("arena", empty);
    top.get("train", empty);
    top.get("model", empty);
    top.get("eval", empty);
    top.finish();

    c.arena = config_detail::parse_arena(j.at("arena"), "arena", c.arena, true);

    {
        Section s(j.at("train"), "train");
        auto& t = c.train;
        s.get("lr", t.lr);
        s.get("gamma", t.gamma);
        s.get("gae_lambda", t.gae_lambda);
        s.get("clip", t.clip);
        s.get("value_loss_coef", t.value_loss_coef);
        s.get("recon_loss_coef", t.recon_loss_coef);
        s.get("entropy_coef", t.entropy_coef);
        s.get("huber_delta", t.huber_delta);
        s.get("max_grad_norm", t.max_grad_norm);
        s.get("minibatches", t.minibatches);
        s.get("rollout_workers", t.rollout_workers);
        s.get("epochs_per_update", t.epochs_per_update);
        s.get("chunk_length", t.chunk_length);
        s.get("use_valuenorm", t.use_valuenorm);
        s.get("total_env_steps", t.total_env_steps, true);
        s.get("seed", t.seed, true);
        s.get("checkpoint_every", t.checkpoint_every);
        s.finish();
    }

    if (j.contains("model")) {
        Section s(j.at("model"), "model");
        auto& m = c.model;
        std::string ablation(ablation_key(m.ablation));
        s.get("features", m.features);
        s.get("latent", m.latent);
        s.get("mlp_hidden", m.mlp_hidden);
        s.get("rnn_hidden", m.rnn_hidden);
        s.get("attn_dim", m.attn_dim);
        s.get("heads", m.heads);
        s.get("head_dim", m.head_dim);
        s.get("skills", m.skills);
        s.get("skill_temperature", m.skill_temperature);
        s.get("kl_weight", m.kl_weight);
        s.get("action_head_gain", m.action_head_gain);
        s.get("entity_embed", m.entity_embed);
        s.get("head_hidden", m.head_hidden);
        s.get("ablation", ablation);
        s.finish();
        m.ablation = parse_ablation(ablation);
    }

    if (j.contains("eval")) {
        const json& e = j.at("eval");
        if (!e.is_array()) throw ConfigError("eval: expected a list of arena overrides");
        for (std::size_t k = 0; k < e.size(); ++k)
            c.eval.push_back(config_detail::parse_arena(e[k], "eval[" + std::to_string(k) + "]", c.arena, false));
    }
    c.validate();
    return c;
}

inline json to_json(const ExperimentConfig& c) {
    json j;
    j["arena"] = c.arena;
    const auto& t = c.train;
    j["train"] = {{"lr", t.lr},
                  {"gamma", t.gamma},
                  {"gae_lambda", t.gae_lambda},
                  {"clip", t.clip},
                  {"value_loss_coef", t.value_loss_coef},
                  {"recon_loss_coef", t.recon_loss_coef},
                  {"entropy_coef", t.entropy_coef},
                  {"huber_delta", t.huber_delta},
                  {"max_grad_norm", t.max_grad_norm},
                  {"minibatches", t.minibatches},
                  {"rollout_workers", t.rollout_workers},
                  {"epochs_per_update", t.epochs_per_update},
                  {"chunk_length", t.chunk_length},
                  {"use_valuenorm", t.use_valuenorm},
                  {"total_env_steps", t.total_env_steps},
                  {"seed", t.seed},
                  {"checkpoint_every", t.checkpoint_every}};
    const auto& m = c.model;
    j["model"] = {{"features", m.features},
                  {"latent", m.latent},
                  {"mlp_hidden", m.mlp_hidden},
                  {"rnn_hidden", m.rnn_hidden},
                  {"attn_dim", m.attn_dim},
                  {"heads", m.heads},
                  {"head_dim", m.head_dim},
                  {"skills", m.skills},
                  {"skill_temperature", m.skill_temperature},
                  {"kl_weight", m.kl_weight},
                  {"action_head_gain", m.action_head_gain},
                  {"entity_embed", m.entity_embed},
                  {"head_hidden", m.head_hidden},
                  {"ablation", std::string(ablation_key(m.ablation))}};
    j["eval"] = json::array();
    for (const auto& e : c.eval) j["eval"].push_back(e);
    return j;
}

/// Applies "a.b.c=value" to a JSON document. The value is read as JSON when it
/// parses (numbers, booleans, lists), otherwise as a plain string.
inline void apply_override(json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not of the form key=value");
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    json* node = &doc;
    std::stringstream ss(key);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    for (std::size_t k = 0; k + 1 < parts.size(); ++k) {
        if (!node->is_object()) throw ConfigError("override '" + key + "': '" + parts[k] + "' is not a section");
        node = &(*node)[parts[k]];
        if (node->is_null()) *node = json::object();
    }
    if (!node->is_object()) throw ConfigError("override '" + key + "': parent of '" + parts.back() + "' is not a section");
    (*node)[parts.back()] = value;
}

inline json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path + ": cannot open");
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError(path + ": not valid JSON");
    return j;
}

/// FNV-1a over the canonical dump of a document.
inline std::uint64_t config_hash(const json& j) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : j.dump()) h = (h ^ c) * 1099511628211ULL;
    return h;
}

}  // namespace ma2rl
