#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "ma2rl/numerics/adam.hpp"
#include "ma2rl/training/advantages.hpp"
#include "ma2rl/training/rollout.hpp"
#include "ma2rl/training/train_config.hpp"

namespace ma2rl::training {

/// Parameter groups, each with its own optimizer, stepped in this order per minibatch.
inline std::vector<std::string> actor_group(const ParameterStore& store) {
    auto names = store.names_with_prefix("mae.");
    for (auto& n : store.names_with_prefix("policy.")) names.push_back(n);
    return names;
}

inline std::vector<std::string> critic_group(const ParameterStore& store) { return store.names_with_prefix("critic."); }

inline std::vector<std::string> vae_group(const ParameterStore& store) {
    std::vector<std::string> names;
    for (const char* p : {"obs_enc.", "obs_dec.", "state_enc.", "state_dec.", "mae."})
        for (auto& n : store.names_with_prefix(p)) names.push_back(n);
    return names;
}

/// Everything that persists across updates.
struct Learner {
    ParameterStore store;
    ModelConfig model;
    TrainConfig train;
    Adam actor;
    Adam critic;
    Adam vae;
    ValueNorm value_norm;

    Learner(ModelConfig m, TrainConfig t, std::uint64_t seed) : store(seed), model(m), train(t) {
        policy::declare_model(store, model);
        reset_optimizers();
    }

    void reset_optimizers() {
        AdamConfig c;
        c.lr = train.lr;
        c.max_grad_norm = train.max_grad_norm;
        actor = Adam(store, actor_group(store), c);
        critic = Adam(store, critic_group(store), c);
        vae = Adam(store, vae_group(store), c);
    }
};

struct UpdateMetrics {
    double actor_loss = 0.0;
    double critic_loss = 0.0;
    double vae_loss = 0.0;
    double recon_loss = 0.0;
    double entropy = 0.0;
    double actor_grad_norm = 0.0;
    double critic_grad_norm = 0.0;
    double vae_grad_norm = 0.0;
    double clip_fraction = 0.0;
};

/// Per-step learning targets of a buffer, flattened in (trajectory, step) order.
struct Targets {
    std::vector<std::vector<double>> advantages;  // normalized over the whole buffer
    std::vector<std::vector<double>> returns;     // on the critic's (normalized) scale
};

/// GAE on denormalized values, value-norm update, batch advantage standardization.
inline Targets compute_targets(const std::vector<Trajectory>& buffer, const TrainConfig& cfg, ValueNorm& vn) {
    Targets out;
    std::vector<double> all_adv, all_ret;
    auto denorm = [&](double v) { return cfg.use_valuenorm ? vn.denormalize(v) : v; };
    for (const auto& tr : buffer) {
        std::vector<double> rewards, values;
        for (const auto& s : tr.steps) {
            rewards.push_back(s.reward);
            values.push_back(denorm(s.value));
        }
        const double boot = tr.truncated ? denorm(tr.bootstrap_value) : 0.0;
        Advantages a = generalized_advantages(rewards, values, boot, cfg.gamma, cfg.gae_lambda);
        all_adv.insert(all_adv.end(), a.advantages.begin(), a.advantages.end());
        all_ret.insert(all_ret.end(), a.returns.begin(), a.returns.end());
        out.advantages.push_back(std::move(a.advantages));
        out.returns.push_back(std::move(a.returns));
    }
    if (cfg.use_valuenorm) {
        vn.update(all_ret);
        for (auto& r : out.returns)
            for (double& x : r) x = vn.normalize(x);
    }
    standardize(all_adv);
    std::size_t k = 0;
    for (auto& a : out.advantages)
        for (double& x : a) x = all_adv[k++];
    return out;
}

/// A run of up to chunk_length consecutive steps of one agent in one episode.
struct Chunk {
    std::size_t traj;
    int agent;
    int start;
    int length;
};

inline std::vector<Chunk> make_chunks(const std::vector<Trajectory>& buffer, int n_agents, int chunk_length) {
    std::vector<Chunk> chunks;
    for (std::size_t w = 0; w < buffer.size(); ++w) {
        const int T = static_cast<int>(buffer[w].steps.size());
        for (int i = 0; i < n_agents; ++i)
            for (int s = 0; s < T; s += chunk_length) chunks.push_back({w, i, s, std::min(chunk_length, T - s)});
    }
    return chunks;
}

template <class T>
void shuffle_in_place(std::vector<T>& xs, Rng& rng) {
    for (std::size_t i = xs.size(); i > 1; --i) std::swap(xs[i - 1], xs[static_cast<std::size_t>(rng.below(i))]);
}

/// Splits [0, n) into `parts` contiguous ranges of near-equal size.
inline std::vector<std::pair<std::size_t, std::size_t>> split_ranges(std::size_t n, int parts) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    const auto p = static_cast<std::size_t>(std::max(1, parts));
    for (std::size_t k = 0; k < p; ++k) {
        const std::size_t lo = n * k / p, hi = n * (k + 1) / p;
        if (hi > lo) out.emplace_back(lo, hi);
    }
    return out;
}

struct ActorLosses {
    Var actor;  // clipped surrogate plus entropy bonus, as a loss
    Var recon;  // mean reconstruction loss
    Var entropy;
    Tensor obs_rows, obs_mask, state_rows;  // every row the minibatch touched, for the VAE loss
    double clip_fraction = 0.0;
};

/// Replays a minibatch of chunks through the recurrent actor. Chunks are sorted
/// by length so the ones still running at step t form a prefix of the batch.
inline ActorLosses actor_losses(Tape& tape, Learner& L, const std::vector<Trajectory>& buffer, const Targets& targets,
                                std::vector<Chunk> chunks, double clip) {
    std::stable_sort(chunks.begin(), chunks.end(), [](const Chunk& a, const Chunk& b) { return a.length > b.length; });
    const Index C = static_cast<Index>(chunks.size());
    const int max_len = chunks.front().length;
    const Index H = L.model.rnn_hidden;

    std::vector<Var> surr_terms, ent_terms, recon_terms;
    std::vector<Tensor> obs_blocks, mask_blocks, state_blocks;
    Index total = 0, clipped = 0;
    Var h;
    for (int t = 0; t < max_len; ++t) {
        Index active = 0;
        while (active < C && chunks[static_cast<std::size_t>(active)].length > t) ++active;
        std::vector<SampleRef> samples;
        std::vector<Tensor> avail_rows;
        avail_rows.reserve(static_cast<std::size_t>(active));
        for (Index c = 0; c < active; ++c) {
            const Chunk& ch = chunks[static_cast<std::size_t>(c)];
            const StepRecord& s = buffer[ch.traj].steps[static_cast<std::size_t>(ch.start + t)];
            avail_rows.push_back(s.availability.row(ch.agent));
        }
        for (Index c = 0; c < active; ++c) {
            const Chunk& ch = chunks[static_cast<std::size_t>(c)];
            const StepRecord& s = buffer[ch.traj].steps[static_cast<std::size_t>(ch.start + t)];
            samples.push_back({&s.state, &s.observations[static_cast<std::size_t>(ch.agent)],
                               &avail_rows[static_cast<std::size_t>(c)], ch.agent});
        }
        policy::ActorBatch in = stack_samples(samples, buffer[chunks.front().traj].relativize);
        policy::ActorNoise noise = policy::allocate_noise(active, in.set_size, L.model);
        std::vector<Index> actions(static_cast<std::size_t>(active));
        Tensor old_lp(active, 1), adv(active, 1);
        for (Index c = 0; c < active; ++c) {
            const Chunk& ch = chunks[static_cast<std::size_t>(c)];
            const int step = ch.start + t;
            const StepRecord& s = buffer[ch.traj].steps[static_cast<std::size_t>(step)];
            policy::fill_noise(noise, c, in.set_size, step_noise(buffer[ch.traj].noise, step, ch.agent));
            actions[static_cast<std::size_t>(c)] = s.actions[static_cast<std::size_t>(ch.agent)];
            old_lp(c, 0) = s.log_probs[static_cast<std::size_t>(ch.agent)];
            adv(c, 0) = targets.advantages[ch.traj][static_cast<std::size_t>(step)];
        }
        if (t == 0) {
            Tensor h0(active, H);
            for (Index c = 0; c < active; ++c) {
                const Chunk& ch = chunks[static_cast<std::size_t>(c)];
                h0.row(c) = buffer[ch.traj].steps[static_cast<std::size_t>(ch.start)].hidden.row(ch.agent);
            }
            h = tape.constant(std::move(h0));
        } else if (active < h.rows()) {
            h = ad::slice_rows(h, 0, active);
        }
        policy::ActorOutput out = policy::actor_forward(tape, L.store, L.model, in, h, noise);
        h = out.mae.hidden;

        Var lp = ad::pick(out.log_probs, actions);
        Var ratio = ad::exp(ad::sub(lp, tape.constant(old_lp)));
        Var a = tape.constant(adv);
        Var surr = ad::minimum(ad::mul(ratio, a), ad::mul(ad::clamp(ratio, 1.0 - clip, 1.0 + clip), a));
        for (Index c = 0; c < active; ++c)
            if (std::abs(ratio.value()(c, 0) - 1.0) > clip) ++clipped;
        surr_terms.push_back(ad::sum(surr));
        ent_terms.push_back(ad::sum(out.entropy));
        recon_terms.push_back(ad::sum(out.mae.recon));
        obs_blocks.push_back(in.obs);
        mask_blocks.push_back(in.mask);
        state_blocks.push_back(in.state);
        total += active;
    }

    auto stack = [](const std::vector<Tensor>& blocks) {
        Index rows = 0;
        for (const auto& b : blocks) rows += b.rows();
        Tensor out(rows, blocks.front().cols());
        Index r = 0;
        for (const auto& b : blocks) out.middleRows(r, b.rows()) = b, r += b.rows();
        return out;
    };
    auto total_of = [](const std::vector<Var>& terms) {
        Var s = terms.front();
        for (std::size_t k = 1; k < terms.size(); ++k) s = ad::add(s, terms[k]);
        return s;
    };
    const double inv = 1.0 / static_cast<double>(total);
    ActorLosses r;
    r.entropy = ad::scale(total_of(ent_terms), inv);
    Var surrogate = ad::scale(total_of(surr_terms), inv);
    r.actor = ad::sub(ad::scale(surrogate, -1.0), ad::scale(r.entropy, L.train.entropy_coef));
    r.recon = ad::scale(total_of(recon_terms), inv);
    r.obs_rows = stack(obs_blocks);
    r.obs_mask = stack(mask_blocks);
    r.state_rows = stack(state_blocks);
    r.clip_fraction = static_cast<double>(clipped) * inv;
    return r;
}

/// Clipped Huber value regression on a set of (trajectory, step) samples.
inline Var critic_loss(Tape& tape, Learner& L, const std::vector<Trajectory>& buffer, const Targets& targets,
                       const std::vector<std::pair<std::size_t, int>>& samples) {
    const Index B = static_cast<Index>(samples.size());
    const Index m = buffer[samples[0].first].steps[0].state.entities();
    Tensor rows(B * m, arena::kFeatures), old_v(B, 1), ret(B, 1);
    for (Index b = 0; b < B; ++b) {
        const auto [w, t] = samples[static_cast<std::size_t>(b)];
        const StepRecord& s = buffer[w].steps[static_cast<std::size_t>(t)];
        rows.middleRows(b * m, m) = s.state.rows;
        old_v(b, 0) = s.value;
        ret(b, 0) = targets.returns[w][static_cast<std::size_t>(t)];
    }
    const double clip = L.train.clip;
    Var v = policy::critic_forward(tape, L.store, L.model, rows, m);
    Var old = tape.constant(old_v);
    Var v_clipped = ad::add(old, ad::clamp(ad::sub(v, old), -clip, clip));
    Var target = tape.constant(ret);
    Var err = ad::huber(ad::sub(target, v), L.train.huber_delta);
    Var err_clipped = ad::huber(ad::sub(target, v_clipped), L.train.huber_delta);
    return ad::scale(ad::mean(ad::maximum(err, err_clipped)), L.train.value_loss_coef);
}

/// PPO epochs over the buffer. Per minibatch: actor step, VAE/MAE step, critic step.
inline UpdateMetrics update(Learner& L, const std::vector<Trajectory>& buffer, Rng& rng) {
    std::size_t steps = 0;
    for (const auto& tr : buffer) steps += tr.steps.size();
    if (buffer.empty() || steps == 0) throw ContractError("update: empty buffer");
    const int n_agents = buffer.front().steps.front().state.n_agents;
    const Targets targets = compute_targets(buffer, L.train, L.value_norm);

    std::vector<Chunk> chunks = make_chunks(buffer, n_agents, L.train.chunk_length);
    std::vector<std::pair<std::size_t, int>> step_ids;
    for (std::size_t w = 0; w < buffer.size(); ++w)
        for (int t = 0; t < static_cast<int>(buffer[w].steps.size()); ++t) step_ids.emplace_back(w, t);

    UpdateMetrics m;
    int count = 0;
    for (int epoch = 0; epoch < L.train.epochs_per_update; ++epoch) {
        shuffle_in_place(chunks, rng);
        shuffle_in_place(step_ids, rng);
        const auto chunk_ranges = split_ranges(chunks.size(), L.train.minibatches);
        const auto step_ranges = split_ranges(step_ids.size(), L.train.minibatches);
        for (std::size_t k = 0; k < chunk_ranges.size(); ++k) {
            const auto [lo, hi] = chunk_ranges[k];
            std::vector<Chunk> mb(chunks.begin() + static_cast<std::ptrdiff_t>(lo), chunks.begin() + static_cast<std::ptrdiff_t>(hi));
            Tape tape(true);
            ActorLosses al = actor_losses(tape, L, buffer, targets, std::move(mb), L.train.clip);
            const Tensor on = standard_normal(al.obs_rows.rows(), L.model.latent, rng);
            const Tensor sn = standard_normal(al.state_rows.rows(), L.model.latent, rng);
            latent::VaeLossTerms vl = latent::vae_loss(tape, L.store, al.obs_rows, al.obs_mask, al.state_rows, on, sn,
                                                       L.model.kl_weight);
            Var vae_total = ad::add(vl.total, ad::scale(al.recon, L.train.recon_loss_coef));

            L.store.zero_grad();
            tape.backward(al.actor);
            m.actor_grad_norm += L.actor.step(L.store);
            L.store.zero_grad();
            tape.backward(vae_total);
            m.vae_grad_norm += L.vae.step(L.store);
            L.store.zero_grad();

            m.actor_loss += al.actor.item();
            m.entropy += al.entropy.item();
            m.recon_loss += al.recon.item();
            m.vae_loss += vl.total.item();
            m.clip_fraction += al.clip_fraction;

            if (k < step_ranges.size()) {
                const auto [slo, shi] = step_ranges[k];
                std::vector<std::pair<std::size_t, int>> ss(step_ids.begin() + static_cast<std::ptrdiff_t>(slo),
                                                            step_ids.begin() + static_cast<std::ptrdiff_t>(shi));
                Tape ctape(true);
                Var cl = critic_loss(ctape, L, buffer, targets, ss);
                ctape.backward(cl);
                m.critic_grad_norm += L.critic.step(L.store);
                L.store.zero_grad();
                m.critic_loss += cl.item();
            }
            ++count;
        }
    }
    const double inv = 1.0 / std::max(1, count);
    for (double* x : {&m.actor_loss, &m.critic_loss, &m.vae_loss, &m.recon_loss, &m.entropy, &m.actor_grad_norm,
                      &m.critic_grad_norm, &m.vae_grad_norm, &m.clip_fraction})
        *x *= inv;
    return m;
}

}  // namespace ma2rl::training
