#pragma once

#include <functional>
#include <vector>

#include "ma2rl/training/checkpoint.hpp"
#include "ma2rl/training/stats.hpp"

namespace ma2rl::training {

struct MetricsRecord {
    int update = 0;
    std::int64_t env_steps = 0;
    double mean_return = 0.0;  // of the episodes collected for this update
    UpdateMetrics losses;
};

inline json to_json(const MetricsRecord& r) {
    return {{"update", r.update},
            {"env_steps", r.env_steps},
            {"mean_return", r.mean_return},
            {"actor_loss", r.losses.actor_loss},
            {"critic_loss", r.losses.critic_loss},
            {"vae_loss", r.losses.vae_loss},
            {"recon_loss", r.losses.recon_loss},
            {"entropy", r.losses.entropy},
            {"actor_grad_norm", r.losses.actor_grad_norm},
            {"critic_grad_norm", r.losses.critic_grad_norm},
            {"vae_grad_norm", r.losses.vae_grad_norm},
            {"clip_fraction", r.losses.clip_fraction}};
}

struct TrainHooks {
    std::function<void(const MetricsRecord&)> on_metrics;
    std::function<void(const Learner&, int update)> on_checkpoint;
};

/// Alternates collect_rollouts and update until total_env_steps. Round u uses
/// rollout noise Rng(seed).fork(1).fork(u) and update noise Rng(seed).fork(2).fork(u).
inline std::vector<MetricsRecord> train(Learner& L, const arena::ArenaConfig& arena, const TrainHooks& hooks = {}) {
    L.train.validate();
    const Rng root(L.train.seed);
    std::vector<MetricsRecord> log;
    std::int64_t env_steps = 0;
    for (int u = 0; env_steps < L.train.total_env_steps; ++u) {
        auto buffer = collect_rollouts(L.store, L.model, arena, L.train.rollout_workers, root.fork(1).fork(static_cast<std::uint64_t>(u)));
        MetricsRecord rec;
        rec.update = u;
        double ret = 0.0;
        for (const auto& tr : buffer) {
            env_steps += static_cast<std::int64_t>(tr.steps.size());
            ret += tr.total_return();
        }
        rec.env_steps = env_steps;
        rec.mean_return = ret / static_cast<double>(buffer.size());
        Rng urng = root.fork(2).fork(static_cast<std::uint64_t>(u));
        rec.losses = update(L, buffer, urng);
        log.push_back(rec);
        if (hooks.on_metrics) hooks.on_metrics(rec);
        const bool last = env_steps >= L.train.total_env_steps;
        if (hooks.on_checkpoint && (last || (L.train.checkpoint_every > 0 && (u + 1) % L.train.checkpoint_every == 0)))
            hooks.on_checkpoint(L, u);
    }
    return log;
}

struct EvalResult {
    stats::Summary summary;
    std::vector<double> returns;
    std::vector<double> recon_by_step;  // mean reconstruction loss at each t over agents and episodes
    std::vector<int> recon_count;
};

/// Greedy (or stochastic) episodes on any arena config, batched 16 at a time.
inline EvalResult evaluate(ParameterStore& store, const ModelConfig& model, const arena::ArenaConfig& arena, int episodes,
                           std::uint64_t seed, bool greedy = true) {
    if (episodes < 0) throw ContractError("evaluate: negative episode count");
    EvalResult r;
    const Rng root(seed);
    RolloutOptions opt;
    opt.greedy = greedy;
    opt.compute_values = false;
    for (int done = 0, batch = 0; done < episodes; ++batch) {
        const int w = std::min(16, episodes - done);
        for (const auto& tr : collect_rollouts(store, model, arena, w, root.fork(static_cast<std::uint64_t>(batch)), opt)) {
            r.returns.push_back(tr.total_return());
            for (std::size_t t = 0; t < tr.steps.size(); ++t) {
                if (r.recon_by_step.size() <= t) r.recon_by_step.resize(t + 1, 0.0), r.recon_count.resize(t + 1, 0);
                for (double x : tr.steps[t].recon) r.recon_by_step[t] += x, ++r.recon_count[t];
            }
        }
        done += w;
    }
    for (std::size_t t = 0; t < r.recon_by_step.size(); ++t) r.recon_by_step[t] /= std::max(1, r.recon_count[t]);
    r.summary = stats::summarize(r.returns);
    return r;
}

/// Same statistics for the uniform-random and greedy-chase reference policies.
inline EvalResult evaluate_reference(const arena::ArenaConfig& arena, int episodes, std::uint64_t seed, bool chase) {
    EvalResult r;
    ModelConfig dummy;
    ParameterStore empty(0);
    RolloutOptions opt;
    opt.compute_values = false;
    const double sight = arena.sight_radius;
    if (chase)
        opt.override_action = [sight](const arena::EntityState& s, int i, const Tensor&, Rng&) {
            return arena::greedy_chase_action(s, i, sight).encode();
        };
    else
        opt.override_action = uniform_available_action;
    const Rng root(seed);
    for (int done = 0, batch = 0; done < episodes; ++batch) {
        const int w = std::min(64, episodes - done);
        for (const auto& tr : collect_rollouts(empty, dummy, arena, w, root.fork(static_cast<std::uint64_t>(batch)), opt))
            r.returns.push_back(tr.total_return());
        done += w;
    }
    r.summary = stats::summarize(r.returns);
    return r;
}

}  // namespace ma2rl::training
