#pragma once

#include <string>
#include <string_view>

#include "ma2rl/arena.hpp"
#include "ma2rl/errors.hpp"
#include "ma2rl/numerics/tensor.hpp"

namespace ma2rl {

enum class Ablation {
    full,                 // MA2RL
    no_decoder_reuse,     // MA2RL_w/o_Re: the action decoder gets its own decoder instead of the VAE one
    no_masked_inference,  // MA2RL_w/o_De: the action decoder never sees the masked belief
};

inline std::string_view ablation_key(Ablation a) {
    switch (a) {
        case Ablation::full: return "full";
        case Ablation::no_decoder_reuse: return "no_decoder_reuse";
        case Ablation::no_masked_inference: return "no_masked_inference";
    }
    return "full";
}

inline std::string_view ablation_label(Ablation a) {
    switch (a) {
        case Ablation::full: return "MA2RL";
        case Ablation::no_decoder_reuse: return "MA2RL_w/o_Re";
        case Ablation::no_masked_inference: return "MA2RL_w/o_De";
    }
    return "MA2RL";
}

inline Ablation parse_ablation(std::string_view s) {
    if (s == "full") return Ablation::full;
    if (s == "no_decoder_reuse") return Ablation::no_decoder_reuse;
    if (s == "no_masked_inference") return Ablation::no_masked_inference;
    throw ConfigError("model.ablation must be one of full, no_decoder_reuse, no_masked_inference (got '" +
                      std::string(s) + "')");
}

/// Network widths. Entity features (F) come from the arena and are fixed.
struct ModelConfig {
    Index features = arena::kFeatures;
    Index latent = 8;        // D
    Index mlp_hidden = 64;   // encoder/decoder and skill-MLP hidden width
    Index rnn_hidden = 64;   // H
    Index attn_dim = 64;     // d, width of attention outputs
    Index heads = 3;
    Index head_dim = 64;     // per-head query/key/value width
    Index skills = 4;        // K
    double skill_temperature = 1.0;
    double kl_weight = 0.0;
    double action_head_gain = 0.01;
    Index entity_embed = 0;  // width of a tanh embedding of entity rows before attention, 0 = none
    Index head_hidden = 0;   // hidden width of the action heads, 0 = linear heads
    Ablation ablation = Ablation::full;
    bool hard_skills = true;  // false: soft relaxation, for finite-difference checks only

    [[nodiscard]] Index head_width() const noexcept { return heads * head_dim; }

    void validate() const {
        if (features != arena::kFeatures) throw ConfigError("model.features must equal the arena's entity width (6)");
        for (auto [v, name] : {std::pair{latent, "model.latent"}, {mlp_hidden, "model.mlp_hidden"},
                               {rnn_hidden, "model.rnn_hidden"}, {attn_dim, "model.attn_dim"}, {heads, "model.heads"},
                               {head_dim, "model.head_dim"}, {skills, "model.skills"}})
            if (v <= 0) throw ConfigError(std::string(name) + " must be positive");
        if (entity_embed < 0) throw ConfigError("model.entity_embed must be nonnegative");
        if (head_hidden < 0) throw ConfigError("model.head_hidden must be nonnegative");
        if (!(skill_temperature > 0.0)) throw ConfigError("model.skill_temperature must be positive");
        if (kl_weight < 0.0) throw ConfigError("model.kl_weight must be nonnegative");
    }
};

}  // namespace ma2rl
