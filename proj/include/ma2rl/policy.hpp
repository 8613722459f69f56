#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ma2rl/maskinfer.hpp"
#include "ma2rl/numerics/attention.hpp"

namespace ma2rl::policy {

using latent::DiagonalGaussian;

inline const std::string kSkillHead = "policy.skill";
inline const std::string kSkillMlp = "policy.skill_mlp";
inline const std::string kAttn = "policy.attn";
inline const std::string kSkillAttn = "policy.skill_attn";
inline const std::string kActSelf = "policy.act_self";
inline const std::string kActOut = "policy.act_out";
inline const std::string kAltDecoder = "policy.alt_dec";
inline const std::string kEmbed = "policy.embed";
inline const std::string kCriticAttn = "critic.attn";
inline const std::string kCriticHead = "critic.head";

inline void declare_attention(ParameterStore& store, const std::string& prefix, Index in, const ModelConfig& m) {
    store.declare(prefix + ".wq", m.head_width(), in, Init::orthogonal());
    store.declare(prefix + ".wk", m.head_width(), in, Init::orthogonal());
    store.declare(prefix + ".wv", m.head_width(), in, Init::orthogonal());
    declare_dense(store, prefix + ".out", m.head_width(), m.attn_dim);
}

/// Skill head, skill MLP, both attentions, and the entity-wise action heads.
inline void declare_actor(ParameterStore& store, const ModelConfig& m) {
    declare_dense(store, kSkillHead, m.latent, m.skills);
    declare_dense(store, kSkillMlp, m.skills, m.mlp_hidden);
    if (m.entity_embed > 0) declare_dense(store, kEmbed, m.features, m.entity_embed);
    declare_attention(store, kAttn, m.entity_embed > 0 ? m.entity_embed : m.features, m);
    store.declare(kSkillAttn + ".wq", m.head_width(), m.mlp_hidden, Init::orthogonal());
    declare_dense(store, kSkillAttn + ".out", m.head_width(), m.attn_dim);
    const Index head_in = m.head_hidden > 0 ? m.head_hidden : 2 * m.attn_dim;
    if (m.head_hidden > 0) {
        declare_dense(store, kActSelf + "_hidden", 2 * m.attn_dim, m.head_hidden);
        declare_dense(store, kActOut + "_hidden", 2 * m.attn_dim, m.head_hidden);
    }
    declare_dense(store, kActSelf, head_in, arena::kSelfActions, m.action_head_gain);
    declare_dense(store, kActOut, head_in, 1, m.action_head_gain);
    if (m.ablation == Ablation::no_decoder_reuse) latent::declare_decoder(store, kAltDecoder, m);
}

inline void declare_critic(ParameterStore& store, const ModelConfig& m) {
    declare_attention(store, kCriticAttn, m.latent, m);
    declare_dense(store, kCriticHead, m.attn_dim, 1);
}

/// Every trainable tensor of the architecture, in a fixed declaration order.
inline void declare_model(ParameterStore& store, const ModelConfig& m) {
    m.validate();
    latent::declare_vae_pair(store, m);
    maskinfer::declare(store, m);
    declare_actor(store, m);
    declare_critic(store, m);
}

/// Actor inputs for B samples; per-sample row indices are within the sample's set.
struct ActorBatch : maskinfer::MaeInputs {
    std::vector<Index> self_row;
    std::vector<std::vector<Index>> target_rows;  // Out(k) of sample b refers to row target_rows[b][k]
    Tensor availability;                          // B x (5 + n_targets)

    [[nodiscard]] Index batch() const { return availability.rows(); }
};

/// Every random quantity one actor step consumes, so a step can be replayed exactly.
struct ActorNoise : maskinfer::MaeNoise {
    Tensor skill;   // B x D, sample of the integration fed to the skill head
    Tensor gumbel;  // B x K
    Tensor masked;  // (B*m) x D, one masked-belief sample per entity row
    std::vector<double> action_uniform;
};

inline ActorNoise allocate_noise(Index batch, Index set_size, const ModelConfig& m) {
    ActorNoise n;
    n.observed = Tensor(batch, m.latent);
    n.integration = Tensor(batch, m.latent);
    n.state = Tensor(batch, m.latent);
    n.skill = Tensor(batch, m.latent);
    n.gumbel = Tensor(batch, m.skills);
    n.masked = Tensor(batch * set_size, m.latent);
    n.action_uniform.assign(static_cast<std::size_t>(batch), 0.0);
    return n;
}

/// Fills sample b of a batch noise block from a generator, in a fixed order.
inline void fill_noise(ActorNoise& n, Index b, Index set_size, Rng rng) {
    auto normals = [&](Tensor& t, Index row) {
        for (Index c = 0; c < t.cols(); ++c) t(row, c) = rng.normal();
    };
    normals(n.observed, b);
    normals(n.integration, b);
    normals(n.state, b);
    normals(n.skill, b);
    for (Index c = 0; c < n.gumbel.cols(); ++c) n.gumbel(b, c) = rng.gumbel();
    for (Index j = 0; j < set_size; ++j) normals(n.masked, b * set_size + j);
    n.action_uniform[static_cast<std::size_t>(b)] = rng.uniform();
}

inline ActorNoise draw_noise(Index set_size, const ModelConfig& m, Rng& rng) {
    ActorNoise n = allocate_noise(1, set_size, m);
    fill_noise(n, 0, set_size, rng);
    return n;
}

struct Attention {
    Var q, k, v;
    Var out;  // projected to attn_dim
};

/// Self-attention over the rows of each set: softmax(Q K^T / sqrt(d_k)) V per head,
/// heads concatenated and mixed back to width d.
inline Attention self_attention(Tape& tape, ParameterStore& store, const std::string& prefix, const ModelConfig& m,
                                const Var& rows, Index set_size) {
    Attention a;
    a.q = linear(rows, tape.parameter(store, prefix + ".wq"));
    a.k = linear(rows, tape.parameter(store, prefix + ".wk"));
    a.v = linear(rows, tape.parameter(store, prefix + ".wv"));
    a.out = dense(tape, store, prefix + ".out", ad::multihead_self_attention(a.q, a.k, a.v, set_size, m.heads));
    return a;
}

/// Skill attention: query from MLP(z), keys/values shared with the self-attention.
inline Var skill_attention(Tape& tape, ParameterStore& store, const ModelConfig& m, const Var& skill, const Attention& self,
                           Index set_size) {
    Var u = ad::tanh(dense(tape, store, kSkillMlp, skill));
    Var q = linear(u, tape.parameter(store, kSkillAttn + ".wq"));
    return dense(tape, store, kSkillAttn + ".out", ad::multihead_query_attention(q, self.k, self.v, set_size, m.heads));
}

struct ActorOutput {
    maskinfer::MaeOutput mae;
    Var skill;      // B x K one-hot (straight-through)
    Var enhanced;   // (B*m) x F
    Var tau_self;   // (B*m) x d
    Var tau_skill;  // B x d
    Var log_probs;  // B x A, unavailable actions at about -1e10
    Var entropy;    // B x 1
    Tensor probs;   // B x A
};

/// Rows of the enhanced observation: observed rows pass through, masked rows
/// are decoded from independent samples of the masked belief.
inline Var enhance(Tape& tape, ParameterStore& store, const ModelConfig& m, const Tensor& obs, const Tensor& mask,
                   const GaussianVar& masked_belief, const Tensor& row_noise, Index set_size) {
    Var o = tape.constant(obs);
    if (m.ablation == Ablation::no_masked_inference) return o;
    GaussianVar per_row{ad::repeat_rows(masked_belief.mu, set_size), ad::repeat_rows(masked_belief.sigma, set_size)};
    Var z = reparameterized_sample(per_row, row_noise);
    const std::string& decoder = m.ablation == Ablation::no_decoder_reuse ? kAltDecoder : latent::kObsDecoder;
    Var decoded = latent::decode(tape, store, decoder, z);
    const Tensor keep = mask.replicate(1, obs.cols());
    const Tensor fill = (1.0 - keep.array()).matrix();
    return ad::add(ad::mul(o, tape.constant(keep)), ad::mul(decoded, tape.constant(fill)));
}

/// Categorical over A^self (5 logits from the agent's own row) and A^out (one
/// logit per target row from a shared entity-wise head). Unavailable -> p = 0.
inline Var action_head(Tape& tape, ParameterStore& store, const std::string& prefix, const Var& x) {
    if (!store.contains(prefix + "_hidden.w")) return dense(tape, store, prefix, x);
    return dense(tape, store, prefix, ad::tanh(dense(tape, store, prefix + "_hidden", x)));
}

inline Var action_logits(Tape& tape, ParameterStore& store, const ActorBatch& in, const Var& tau_self, const Var& tau_skill) {
    const Index B = in.batch();
    const Index m = in.set_size;
    if (static_cast<Index>(in.self_row.size()) != B || static_cast<Index>(in.target_rows.size()) != B)
        throw DimensionError("action_logits: per-sample indices do not match the batch");
    const Index n_targets = in.availability.cols() - arena::kSelfActions;
    std::vector<Index> own(static_cast<std::size_t>(B));
    std::vector<Index> targets;
    targets.reserve(static_cast<std::size_t>(B * n_targets));
    for (Index b = 0; b < B; ++b) {
        own[static_cast<std::size_t>(b)] = b * m + in.self_row[static_cast<std::size_t>(b)];
        const auto& tr = in.target_rows[static_cast<std::size_t>(b)];
        if (static_cast<Index>(tr.size()) != n_targets) throw DimensionError("action_logits: target rows do not match availability width");
        for (Index r : tr) targets.push_back(b * m + r);
    }
    Var own_rows = ad::gather_rows(tau_self, own);
    Var self_logits = action_head(tape, store, kActSelf, ad::concat_cols({own_rows, tau_skill}));
    Var entity_logits = action_head(tape, store, kActOut, ad::concat_cols({tau_self, ad::repeat_rows(tau_skill, m)}));
    Var out_logits = ad::reshape(ad::gather_rows(entity_logits, std::move(targets)), B, n_targets);
    return ad::concat_cols({self_logits, out_logits});
}

inline ActorOutput actor_forward(Tape& tape, ParameterStore& store, const ModelConfig& m, const ActorBatch& in,
                                 const Var& h_prev, const ActorNoise& noise) {
    const Index B = in.batch();
    const Index set = in.set_size;
    if (in.obs.rows() != B * set) throw DimensionError("actor_forward: observation rows do not match batch x set size");
    for (Index b = 0; b < B; ++b)
        if (in.availability.row(b).sum() <= 0.0) throw ContractError("actor_forward: every action is unavailable");
    ActorOutput out;
    out.mae = maskinfer::mae_forward(tape, store, in, h_prev, noise);

    Var x = reparameterized_sample(out.mae.integration, noise.skill);
    Var skill_logits = dense(tape, store, kSkillHead, x);
    out.skill = gumbel_softmax(skill_logits, m.skill_temperature, noise.gumbel, m.hard_skills);

    out.enhanced = enhance(tape, store, m, in.obs, in.mask, out.mae.masked, noise.masked, set);
    Var rows = m.entity_embed > 0 ? ad::tanh(dense(tape, store, kEmbed, out.enhanced)) : out.enhanced;
    Attention att = self_attention(tape, store, kAttn, m, rows, set);
    out.tau_self = att.out;
    out.tau_skill = skill_attention(tape, store, m, out.skill, att, set);

    Var logits = ad::mask_logits(action_logits(tape, store, in, out.tau_self, out.tau_skill), in.availability);
    out.log_probs = ad::log_softmax(logits);
    Var p = ad::exp(out.log_probs);
    out.probs = p.value();
    out.entropy = ad::scale(ad::row_sum(ad::mul(p, out.log_probs)), -1.0);
    return out;
}

/// Inverse-CDF draw from one row of probabilities.
inline int sample_action(const Tensor& probs, Index row, double u) {
    double acc = 0.0;
    int last = -1;
    for (Index a = 0; a < probs.cols(); ++a) {
        if (probs(row, a) <= 0.0) continue;
        acc += probs(row, a);
        last = static_cast<int>(a);
        if (u < acc) return last;
    }
    if (last < 0) throw ContractError("sample_action: no action has positive probability");
    return last;
}

inline int greedy_action(const Tensor& probs, Index row) {
    Index arg = 0;
    probs.row(row).maxCoeff(&arg);
    return static_cast<int>(arg);
}

/// Centralised value of global entity-states: state-encoder means (not
/// differentiated), self-attention, mean pooling, linear head. (B*m) x F -> B x 1.
inline Var critic_forward(Tape& tape, ParameterStore& store, const ModelConfig& m, const Tensor& state_rows, Index set_size) {
    if (set_size <= 0 || state_rows.rows() % set_size != 0) throw DimensionError("critic_forward: rows not a multiple of the set size");
    GaussianVar enc = latent::encode(tape, store, latent::kStateEncoder, tape.constant(state_rows));
    Var means = ad::stop_gradient(enc.mu);
    Attention att = self_attention(tape, store, kCriticAttn, m, means, set_size);
    Var pooled = ad::scale(ad::segment_sum(att.out, set_size), 1.0 / static_cast<double>(set_size));
    return dense(tape, store, kCriticHead, pooled);
}

// ---------------------------------------------------------------------------
// Single-agent conveniences over immutable parameters.

/// Row indices of the arena's standard layout for one agent.
inline ActorBatch single_batch(const arena::EntityObservation& obs, const Tensor& agent_state, int agent, int n_agents,
                               const Tensor& availability) {
    ActorBatch in;
    in.set_size = obs.rows.rows();
    in.obs = obs.rows;
    in.mask = obs.mask;
    in.state = agent_state;
    in.self_row = {agent};
    std::vector<Index> targets;
    for (Index j = n_agents; j < in.set_size; ++j) targets.push_back(j);
    in.target_rows = {targets};
    in.availability = availability;
    return in;
}

/// One-hot skill from one sample of the integration.
inline Tensor assign_skill(ParameterStore& store, const ModelConfig& m, const DiagonalGaussian& integration, Rng& rng) {
    Tape tape(false);
    GaussianVar g{tape.constant(integration.mu), tape.constant(integration.sigma)};
    Var x = reparameterized_sample(g, rng);
    return gumbel_softmax(dense(tape, store, kSkillHead, x), m.skill_temperature, rng, m.hard_skills).value();
}

inline Tensor enhance_observation(ParameterStore& store, const ModelConfig& m, const arena::EntityObservation& obs,
                                  const DiagonalGaussian& masked, Rng& rng) {
    Tape tape(false);
    GaussianVar g{tape.constant(masked.mu), tape.constant(masked.sigma)};
    const Tensor noise = standard_normal(obs.rows.rows(), masked.dim(), rng);
    return enhance(tape, store, m, obs.rows, obs.mask, g, noise, obs.rows.rows()).value();
}

inline Tensor self_attention(ParameterStore& store, const ModelConfig& m, const Tensor& enhanced) {
    Tape tape(false);
    return self_attention(tape, store, kAttn, m, tape.constant(enhanced), enhanced.rows()).out.value();
}

struct SkillAttentionResult {
    Tensor summary;  // 1 x d
    Tensor weights;  // heads x m, each row sums to 1
};

inline SkillAttentionResult skill_attention(ParameterStore& store, const ModelConfig& m, const Tensor& enhanced,
                                            const Tensor& skill) {
    Tape tape(false);
    Attention att = self_attention(tape, store, kAttn, m, tape.constant(enhanced), enhanced.rows());
    Var z = tape.constant(skill);
    SkillAttentionResult r;
    r.summary = skill_attention(tape, store, m, z, att, enhanced.rows()).value();
    Var u = ad::tanh(dense(tape, store, kSkillMlp, z));
    const Tensor q = linear(u, tape.parameter(store, kSkillAttn + ".wq")).value();
    r.weights = Tensor(m.heads, enhanced.rows());
    for (Index h = 0; h < m.heads; ++h)
        r.weights.row(h) = ad::attention_weights(q.middleCols(h * m.head_dim, m.head_dim),
                                                 att.k.value().middleCols(h * m.head_dim, m.head_dim));
    return r;
}

inline Tensor action_distribution(ParameterStore& store, const ActorBatch& in, const Tensor& tau_self, const Tensor& tau_skill) {
    Tape tape(false);
    Var logits = ad::mask_logits(action_logits(tape, store, in, tape.constant(tau_self), tape.constant(tau_skill)), in.availability);
    return ad::softmax(logits).value();
}

struct ActResult {
    int action = 0;
    double log_prob = 0.0;
    Tensor skill;   // 1 x K
    Tensor hidden;  // 1 x H
    double recon = 0.0;
    Tensor probs;   // 1 x A
};

inline ActResult act(ParameterStore& store, const ModelConfig& m, const ActorBatch& in, const Tensor& h_prev,
                     const ActorNoise& noise, bool greedy) {
    Tape tape(false);
    ActorOutput out = actor_forward(tape, store, m, in, tape.constant(h_prev), noise);
    ActResult r;
    r.action = greedy ? greedy_action(out.probs, 0) : sample_action(out.probs, 0, noise.action_uniform[0]);
    r.log_prob = out.log_probs.value()(0, r.action);
    r.skill = out.skill.value();
    r.hidden = out.mae.hidden.value();
    r.recon = out.mae.recon.value()(0, 0);
    r.probs = out.probs;
    return r;
}

inline ActResult act(ParameterStore& store, const ModelConfig& m, const ActorBatch& in, const Tensor& h_prev, Rng& rng,
                     bool greedy) {
    return act(store, m, in, h_prev, draw_noise(in.set_size, m, rng), greedy);
}

inline double critic_value(ParameterStore& store, const ModelConfig& m, const arena::EntityState& state) {
    Tape tape(false);
    return critic_forward(tape, store, m, state.rows, state.rows.rows()).item();
}

}  // namespace ma2rl::policy
