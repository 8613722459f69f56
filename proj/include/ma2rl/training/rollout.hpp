#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "ma2rl/policy.hpp"

namespace ma2rl::training {

/// One environment step as seen by the learner.
struct StepRecord {
    arena::EntityState state;                           // s^t (absolute), critic input
    std::vector<arena::EntityObservation> observations;  // o_i^t
    Tensor hidden;        // n_agents x H, recurrent state entering step t
    Tensor availability;  // n_agents x A
    Tensor skills;        // n_agents x K
    std::vector<int> actions;
    std::vector<double> log_probs;
    std::vector<double> recon;  // per-agent reconstruction loss
    double reward = 0.0;
    bool done = false;
    double value = 0.0;  // critic output (normalized scale)
};

struct Trajectory {
    std::vector<StepRecord> steps;
    bool truncated = false;        // ended by the time limit with targets left
    double bootstrap_value = 0.0;  // critic at the final state when truncated
    Rng noise;                     // root of this episode's per-(step, agent) noise streams
    bool relativize = true;        // observation convention of the arena that produced it

    [[nodiscard]] double total_return() const {
        double r = 0.0;
        for (const auto& s : steps) r += s.reward;
        return r;
    }
};

/// Noise generator of agent `agent` at step t; the update replays the same draws.
inline Rng step_noise(const Rng& root, int t, int agent) {
    return root.fork(static_cast<std::uint64_t>(t)).fork(static_cast<std::uint64_t>(agent));
}

/// Replaces the learned policy, e.g. with a uniform-random stub: (state, agent, availability row, rng) -> action code.
using ActionOverride = std::function<int(const arena::EntityState&, int, const Tensor&, Rng&)>;

struct RolloutOptions {
    bool greedy = false;
    bool compute_values = true;
    ActionOverride override_action;
};

inline int uniform_available_action(const arena::EntityState&, int, const Tensor& avail, Rng& rng) {
    std::vector<int> ok;
    for (Index a = 0; a < avail.cols(); ++a)
        if (avail(0, a) != 0.0) ok.push_back(static_cast<int>(a));
    return ok[static_cast<std::size_t>(rng.below(ok.size()))];
}

/// Stacks per-agent samples of several arenas into one actor batch.
struct SampleRef {
    const arena::EntityState* state;
    const arena::EntityObservation* obs;
    const Tensor* availability;  // 1 x A
    int agent;
};

inline policy::ActorBatch stack_samples(const std::vector<SampleRef>& samples, bool relativize) {
    policy::ActorBatch in;
    const auto B = static_cast<Index>(samples.size());
    if (B == 0) throw ContractError("stack_samples: empty batch");
    const Index m = samples[0].state->entities();
    const Index A = samples[0].availability->cols();
    in.set_size = m;
    in.obs.resize(B * m, arena::kFeatures);
    in.mask.resize(B * m, 1);
    in.state.resize(B * m, arena::kFeatures);
    in.availability.resize(B, A);
    in.self_row.resize(static_cast<std::size_t>(B));
    in.target_rows.resize(static_cast<std::size_t>(B));
    for (Index b = 0; b < B; ++b) {
        const SampleRef& s = samples[static_cast<std::size_t>(b)];
        if (s.state->entities() != m) throw DimensionError("stack_samples: mixed set sizes in one batch");
        in.obs.middleRows(b * m, m) = s.obs->rows;
        in.mask.middleRows(b * m, m) = s.obs->mask;
        in.state.middleRows(b * m, m) = arena::relativized_rows(*s.state, s.agent, relativize);
        in.availability.row(b) = *s.availability;
        in.self_row[static_cast<std::size_t>(b)] = s.agent;
        auto& tr = in.target_rows[static_cast<std::size_t>(b)];
        for (Index j = s.state->n_agents; j < m; ++j) tr.push_back(j);
    }
    return in;
}

/// Critic values (normalized scale) for a list of global states with equal set size.
inline std::vector<double> critic_values(ParameterStore& store, const ModelConfig& model,
                                         const std::vector<const arena::EntityState*>& states) {
    if (states.empty()) return {};
    const Index m = states[0]->entities();
    Tensor rows(static_cast<Index>(states.size()) * m, arena::kFeatures);
    for (std::size_t k = 0; k < states.size(); ++k) rows.middleRows(static_cast<Index>(k) * m, m) = states[k]->rows;
    Tape tape(false);
    const Tensor v = policy::critic_forward(tape, store, model, rows, m).value();
    return {v.data(), v.data() + v.size()};
}

/// Runs `workers` arenas for one episode each, stepping them in lockstep so all
/// live agents share one batched forward pass. Recurrent states start at zero.
/// Worker w draws arena randomness from rng.fork(w) and policy noise from
/// rng.fork(w).fork(1 << 32), keyed further by (step, agent).
inline std::vector<Trajectory> collect_rollouts(ParameterStore& store, const ModelConfig& model,
                                                const arena::ArenaConfig& config, int workers, const Rng& rng,
                                                const RolloutOptions& options = {}) {
    config.validate();
    if (workers < 1) throw ContractError("collect_rollouts: need at least one worker");
    const int n = config.n_agents;
    const Index H = model.rnn_hidden;
    std::vector<Trajectory> trajs(static_cast<std::size_t>(workers));
    std::vector<Rng> env_rng;
    std::vector<arena::EntityState> states;
    std::vector<std::vector<arena::EntityObservation>> observations;
    std::vector<Tensor> hidden;
    std::vector<bool> live(static_cast<std::size_t>(workers), true);
    for (int w = 0; w < workers; ++w) {
        Rng worker = rng.fork(static_cast<std::uint64_t>(w));
        env_rng.push_back(worker);
        trajs[static_cast<std::size_t>(w)].noise = worker.fork(std::uint64_t{1} << 32);
        trajs[static_cast<std::size_t>(w)].relativize = config.relativize;
        auto r = arena::reset(config, env_rng.back());
        states.push_back(std::move(r.state));
        observations.push_back(std::move(r.observations));
        hidden.push_back(Tensor::Zero(n, H));
    }

    for (int t = 0;; ++t) {
        std::vector<int> alive;
        for (int w = 0; w < workers; ++w)
            if (live[static_cast<std::size_t>(w)]) alive.push_back(w);
        if (alive.empty()) break;

        std::vector<StepRecord> recs(alive.size());
        std::vector<SampleRef> samples;
        for (std::size_t k = 0; k < alive.size(); ++k) {
            const auto w = static_cast<std::size_t>(alive[k]);
            StepRecord& rec = recs[k];
            rec.state = states[w];
            rec.observations = observations[w];
            rec.hidden = hidden[w];
            rec.availability.resize(n, config.actions());
            for (int i = 0; i < n; ++i) rec.availability.row(i) = arena::action_availability(states[w], i, config.sight_radius);
            rec.skills = Tensor::Zero(n, model.skills);
            rec.actions.assign(static_cast<std::size_t>(n), 0);
            rec.log_probs.assign(static_cast<std::size_t>(n), 0.0);
            rec.recon.assign(static_cast<std::size_t>(n), 0.0);
        }

        if (options.override_action) {
            for (std::size_t k = 0; k < alive.size(); ++k) {
                StepRecord& rec = recs[k];
                for (int i = 0; i < n; ++i) {
                    Rng r = step_noise(trajs[static_cast<std::size_t>(alive[k])].noise, t, i);
                    const Tensor avail = rec.availability.row(i);
                    rec.actions[static_cast<std::size_t>(i)] = options.override_action(rec.state, i, avail, r);
                    rec.log_probs[static_cast<std::size_t>(i)] = -std::log(avail.sum());
                }
            }
        } else {
            // rows of the availability matrices must outlive the batch build
            std::vector<Tensor> avail_rows;
            avail_rows.reserve(alive.size() * static_cast<std::size_t>(n));
            for (std::size_t k = 0; k < alive.size(); ++k)
                for (int i = 0; i < n; ++i) avail_rows.push_back(recs[k].availability.row(i));
            for (std::size_t k = 0; k < alive.size(); ++k)
                for (int i = 0; i < n; ++i)
                    samples.push_back({&recs[k].state, &recs[k].observations[static_cast<std::size_t>(i)],
                                       &avail_rows[k * static_cast<std::size_t>(n) + static_cast<std::size_t>(i)], i});
            policy::ActorBatch in = stack_samples(samples, config.relativize);
            const auto B = static_cast<Index>(samples.size());
            policy::ActorNoise noise = policy::allocate_noise(B, in.set_size, model);
            Tensor h_prev(B, H);
            for (std::size_t k = 0; k < alive.size(); ++k)
                for (int i = 0; i < n; ++i) {
                    const auto b = static_cast<Index>(k) * n + i;
                    policy::fill_noise(noise, b, in.set_size, step_noise(trajs[static_cast<std::size_t>(alive[k])].noise, t, i));
                    h_prev.row(b) = recs[k].hidden.row(i);
                }
            Tape tape(false);
            policy::ActorOutput out = policy::actor_forward(tape, store, model, in, tape.constant(h_prev), noise);
            const Tensor& h_next = out.mae.hidden.value();
            const Tensor& skills = out.skill.value();
            const Tensor& recon = out.mae.recon.value();
            for (std::size_t k = 0; k < alive.size(); ++k) {
                StepRecord& rec = recs[k];
                Tensor& h = hidden[static_cast<std::size_t>(alive[k])];
                for (int i = 0; i < n; ++i) {
                    const auto b = static_cast<Index>(k) * n + i;
                    const int a = options.greedy ? policy::greedy_action(out.probs, b)
                                                 : policy::sample_action(out.probs, b, noise.action_uniform[static_cast<std::size_t>(b)]);
                    rec.actions[static_cast<std::size_t>(i)] = a;
                    rec.log_probs[static_cast<std::size_t>(i)] = out.log_probs.value()(b, a);
                    rec.recon[static_cast<std::size_t>(i)] = recon(b, 0);
                    rec.skills.row(i) = skills.row(b);
                    h.row(i) = h_next.row(b);
                }
            }
        }

        if (options.compute_values && !options.override_action) {
            std::vector<const arena::EntityState*> ss;
            for (const auto& rec : recs) ss.push_back(&rec.state);
            const auto v = critic_values(store, model, ss);
            for (std::size_t k = 0; k < recs.size(); ++k) recs[k].value = v[k];
        }

        std::vector<const arena::EntityState*> finals;
        std::vector<std::size_t> final_workers;
        for (std::size_t k = 0; k < alive.size(); ++k) {
            const auto w = static_cast<std::size_t>(alive[k]);
            StepRecord& rec = recs[k];
            arena::JointAction joint;
            for (int i = 0; i < n; ++i) joint.push_back(arena::Action::decode(rec.actions[static_cast<std::size_t>(i)]));
            auto r = arena::step(config, states[w], joint, env_rng[w]);
            rec.reward = r.reward;
            rec.done = r.done;
            states[w] = std::move(r.state);
            observations[w] = std::move(r.observations);
            trajs[w].steps.push_back(std::move(rec));
            if (r.done) {
                live[w] = false;
                trajs[w].truncated = states[w].active_targets() > 0;
                if (trajs[w].truncated) {
                    finals.push_back(&states[w]);
                    final_workers.push_back(w);
                }
            }
        }
        if (options.compute_values && !options.override_action && !finals.empty()) {
            const auto v = critic_values(store, model, finals);
            for (std::size_t k = 0; k < finals.size(); ++k) trajs[final_workers[k]].bootstrap_value = v[k];
        }
    }
    return trajs;
}

}  // namespace ma2rl::training
