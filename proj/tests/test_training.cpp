#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

#include "ma2rl/training/trainer.hpp"
#include "test_support.hpp"

using namespace ma2rl;
using namespace ma2rl::training;

namespace {

ModelConfig narrow() {
    ModelConfig m;
    m.latent = 3;
    m.mlp_hidden = 5;
    m.rnn_hidden = 4;
    m.attn_dim = 4;
    m.heads = 2;
    m.head_dim = 3;
    m.skills = 3;
    m.action_head_gain = 1.0;
    return m;
}

arena::ArenaConfig tiny_arena(int limit = 6) {
    arena::ArenaConfig c;
    c.n_agents = 2;
    c.n_targets = 2;
    c.grid_size = 5;
    c.sight_radius = 2.0;
    c.episode_limit = limit;
    return c;
}

// Direct recursive definition A_t = delta_t + gamma lambda A_{t+1}, written independently.
double gae_oracle(const std::vector<double>& r, const std::vector<double>& v, double boot, double g, double l, std::size_t t) {
    const double next = t + 1 < r.size() ? v[t + 1] : boot;
    const double delta = r[t] + g * next - v[t];
    return t + 1 < r.size() ? delta + g * l * gae_oracle(r, v, boot, g, l, t + 1) : delta;
}

Eigen::VectorXd grads_of(ParameterStore& store, const std::function<Var(Tape&)>& loss) {
    store.zero_grad();
    Tape tape(true);
    tape.backward(loss(tape));
    Eigen::VectorXd g = store.flat_grads();
    store.zero_grad();
    return g;
}

std::vector<Chunk> all_chunks(const std::vector<Trajectory>& buffer, int n_agents, int chunk) {
    return make_chunks(buffer, n_agents, chunk);
}

}  // namespace

TEST(Gae, TelescopesToReturnsWithUnitDiscountAndZeroValues) {
    Rng rng(1);
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<double> r(1 + rng.below(20));
        for (double& x : r) x = rng.uniform(-1, 1);
        const auto a = generalized_advantages(r, std::vector<double>(r.size(), 0.0), 0.0, 1.0, 1.0);
        for (std::size_t t = 0; t < r.size(); ++t) {
            double tail = 0.0;
            for (std::size_t k = t; k < r.size(); ++k) tail += r[k];
            EXPECT_NEAR(a.advantages[t], tail, 1e-12);
        }
    }
}

TEST(Gae, ZeroRewardsAndValuesGiveZeroAdvantages) {
    const auto a = generalized_advantages(std::vector<double>(10, 0.0), std::vector<double>(10, 0.0), 0.0, 0.99, 0.95);
    for (double x : a.advantages) EXPECT_EQ(x, 0.0);
}

TEST(Gae, MatchesRecursiveOracle) {
    Rng rng(2);
    for (int rep = 0; rep < 200; ++rep) {
        std::vector<double> r(10), v(10);
        for (double& x : r) x = rng.uniform(-1, 1);
        for (double& x : v) x = rng.uniform(-2, 2);
        const double boot = rep % 2 ? rng.uniform(-2, 2) : 0.0;
        const double g = rng.uniform(0.5, 1.0), l = rng.uniform(0.0, 1.0);
        const auto a = generalized_advantages(r, v, boot, g, l);
        for (std::size_t t = 0; t < r.size(); ++t) {
            EXPECT_NEAR(a.advantages[t], gae_oracle(r, v, boot, g, l, t), 1e-10);
            EXPECT_NEAR(a.returns[t], a.advantages[t] + v[t], 1e-12);
        }
    }
    EXPECT_THROW(generalized_advantages({1.0}, {}, 0.0, 0.9, 0.9), DimensionError);
}

TEST(Gae, StandardizeGivesZeroMeanUnitVariance) {
    Rng rng(3);
    std::vector<double> xs(1000);
    for (double& x : xs) x = rng.uniform(-3, 7);
    standardize(xs);
    double mean = 0.0, var = 0.0;
    for (double x : xs) mean += x;
    mean /= xs.size();
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= xs.size();
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(var, 1.0, 1e-4);
}

TEST(ValueNormTest, TracksMomentsAndInverts) {
    ValueNorm vn;
    Rng rng(4);
    std::vector<double> xs(5000);
    for (double& x : xs) x = 3.0 + 2.0 * rng.normal();
    vn.update(xs);
    EXPECT_NEAR(vn.mean(), 3.0, 0.1);
    EXPECT_NEAR(vn.var(), 4.0, 0.3);
    for (double x : {-5.0, 0.0, 2.5, 11.0}) EXPECT_NEAR(vn.denormalize(vn.normalize(x)), x, 1e-12);
}

TEST(Rollouts, UniformStubMatchesIndependentRandomBaseline) {
    const arena::ArenaConfig c;
    const auto ours = evaluate_reference(c, 2000, 11, false);
    // independent Monte-Carlo loop straight on the arena
    std::vector<double> returns;
    for (std::uint64_t ep = 0; ep < 2000; ++ep) {
        Rng rng(ep * 7919 + 5);
        auto r = arena::reset(c, rng);
        double ret = 0.0;
        for (bool done = false; !done;) {
            arena::JointAction joint;
            for (int i = 0; i < c.n_agents; ++i) {
                const Tensor av = arena::action_availability(r.state, i, c.sight_radius);
                std::vector<int> ok;
                for (int k = 0; k < av.cols(); ++k)
                    if (av(0, k) == 1.0) ok.push_back(k);
                joint.push_back(arena::Action::decode(ok[rng.below(ok.size())]));
            }
            auto next = arena::step(c, r.state, joint, rng);
            ret += next.reward;
            done = next.done;
            r.state = next.state;
        }
        returns.push_back(ret);
    }
    const auto theirs = stats::summarize(returns);
    const double se = std::hypot(ours.summary.ci95, theirs.ci95) / 1.96;
    EXPECT_LT(std::abs(ours.summary.mean - theirs.mean), 3.0 * se) << ours.summary.mean << " vs " << theirs.mean;
}

TEST(Rollouts, DeterministicAndEveryEpisodeEnds) {
    const ModelConfig m;
    ParameterStore store(5);
    policy::declare_model(store, m);
    const auto c = tiny_arena(8);
    const auto a = collect_rollouts(store, m, c, 4, Rng(6));
    const auto b = collect_rollouts(store, m, c, 4, Rng(6));
    ASSERT_EQ(a.size(), 4u);
    for (std::size_t w = 0; w < a.size(); ++w) {
        ASSERT_EQ(a[w].steps.size(), b[w].steps.size());
        EXPECT_LE(a[w].steps.size(), static_cast<std::size_t>(c.episode_limit));
        EXPECT_TRUE(a[w].steps.back().done);
        for (std::size_t t = 0; t + 1 < a[w].steps.size(); ++t) EXPECT_FALSE(a[w].steps[t].done);
        if (a[w].truncated) { EXPECT_EQ(a[w].steps.size(), static_cast<std::size_t>(c.episode_limit)); }
        for (std::size_t t = 0; t < a[w].steps.size(); ++t) {
            EXPECT_EQ(a[w].steps[t].actions, b[w].steps[t].actions);
            EXPECT_EQ(a[w].steps[t].log_probs, b[w].steps[t].log_probs);
            EXPECT_EQ(a[w].steps[t].reward, b[w].steps[t].reward);
            EXPECT_EQ(a[w].steps[t].value, b[w].steps[t].value);
            EXPECT_TRUE(std::isfinite(a[w].steps[t].reward));
        }
    }
    EXPECT_TRUE(a[0].steps.front().hidden.isZero());
}

// The update replays rollout noise and hidden states, so every ratio starts at exactly 1.
TEST(Update, ReplayReproducesRolloutLogProbabilities) {
    Learner L(ModelConfig{}, TrainConfig{}, 7);
    const auto c = tiny_arena(12);
    const auto buffer = collect_rollouts(L.store, L.model, c, 3, Rng(8));
    const Targets targets = compute_targets(buffer, L.train, L.value_norm);
    Tape tape(true);
    const ActorLosses al = actor_losses(tape, L, buffer, targets, all_chunks(buffer, c.n_agents, 5), 1e-9);
    EXPECT_EQ(al.clip_fraction, 0.0);
}

TEST(Update, EmptyBufferIsAContractError) {
    Learner L(ModelConfig{}, TrainConfig{}, 9);
    Rng rng(1);
    EXPECT_THROW(update(L, {}, rng), ContractError);
}

// With clipping disabled and ratio 1, the surrogate gradient is the plain
// policy-gradient estimator -(1/N) sum A grad log pi; rebuilt here one sample
// at a time with its own recurrent chain.
TEST(Update, UnclippedGradientEqualsVanillaPolicyGradient) {
    TrainConfig t;
    t.chunk_length = 4;
    Learner L(ModelConfig{}, t, 10);
    const auto c = tiny_arena(9);
    const auto buffer = collect_rollouts(L.store, L.model, c, 3, Rng(11));
    ValueNorm vn;
    const Targets targets = compute_targets(buffer, L.train, vn);

    const Eigen::VectorXd ours = grads_of(L.store, [&](Tape& tape) {
        return actor_losses(tape, L, buffer, targets, all_chunks(buffer, c.n_agents, t.chunk_length), 1e12).actor;
    });
    const Eigen::VectorXd oracle = grads_of(L.store, [&](Tape& tape) {
        std::vector<Var> terms;
        double n = 0.0;
        for (std::size_t w = 0; w < buffer.size(); ++w)
            for (int i = 0; i < c.n_agents; ++i) {
                Var h;
                for (std::size_t s = 0; s < buffer[w].steps.size(); ++s) {
                    const StepRecord& rec = buffer[w].steps[s];
                    if (s % static_cast<std::size_t>(t.chunk_length) == 0) h = tape.constant(rec.hidden.row(i));
                    const auto in = policy::single_batch(rec.observations[static_cast<std::size_t>(i)],
                                                         arena::relativized_rows(rec.state, i), i, c.n_agents,
                                                         rec.availability.row(i));
                    policy::ActorNoise noise = policy::allocate_noise(1, in.set_size, L.model);
                    policy::fill_noise(noise, 0, in.set_size, step_noise(buffer[w].noise, static_cast<int>(s), i));
                    auto out = policy::actor_forward(tape, L.store, L.model, in, h, noise);
                    h = out.mae.hidden;
                    const double adv = targets.advantages[w][s];
                    Var logp = ad::pick(out.log_probs, {static_cast<Index>(rec.actions[static_cast<std::size_t>(i)])});
                    terms.push_back(ad::add(ad::scale(logp, -adv), ad::scale(out.entropy, -t.entropy_coef)));
                    n += 1.0;
                }
            }
        Var total = terms.front();
        for (std::size_t k = 1; k < terms.size(); ++k) total = ad::add(total, terms[k]);
        return ad::scale(total, 1.0 / n);
    });
    EXPECT_LT(relative_error(ours, oracle, 1e-8), 1e-6);
    EXPECT_GT(oracle.norm(), 0.0);
}

TEST(Update, ZeroAdvantagesLeaveOnlyTheEntropyGradient) {
    Learner L(ModelConfig{}, TrainConfig{}, 12);
    const auto c = tiny_arena(7);
    const auto buffer = collect_rollouts(L.store, L.model, c, 2, Rng(13));
    Targets targets = compute_targets(buffer, L.train, L.value_norm);
    for (auto& a : targets.advantages) std::fill(a.begin(), a.end(), 0.0);
    const auto chunks = all_chunks(buffer, c.n_agents, 10);
    const Eigen::VectorXd full = grads_of(L.store, [&](Tape& tape) { return actor_losses(tape, L, buffer, targets, chunks, 0.2).actor; });
    const Eigen::VectorXd ent = grads_of(L.store, [&](Tape& tape) {
        return ad::scale(actor_losses(tape, L, buffer, targets, chunks, 0.2).entropy, -L.train.entropy_coef);
    });
    EXPECT_LT((full - ent).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_GT(ent.norm(), 0.0);
}

// 2-step, 2-agent toy batch, soft skills so the loss is smooth.
TEST(Update, ActorAndCriticLossesMatchFiniteDifferences) {
    double worst_actor = 0.0, worst_critic = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        ModelConfig m = narrow();
        m.hard_skills = false;
        Learner L(m, TrainConfig{}, seed);
        arena::ArenaConfig c = tiny_arena(2);
        c.n_targets = 1;
        auto buffer = collect_rollouts(L.store, L.model, c, 1, Rng(seed + 20));
        // put the old values off the current critic so the clipped branch is exercised too
        for (auto& s : buffer[0].steps) s.value += 0.05;
        ValueNorm vn;
        const Targets targets = compute_targets(buffer, L.train, vn);
        std::vector<std::pair<std::size_t, int>> ids;
        for (int t = 0; t < static_cast<int>(buffer[0].steps.size()); ++t) ids.emplace_back(0, t);
        worst_actor = std::max(worst_actor, check::parameter_gradient_error(L.store, [&](Tape& tape) {
                                   ActorLosses al = actor_losses(tape, L, buffer, targets, all_chunks(buffer, 2, 10), 0.2);
                                   return ad::add(al.actor, al.recon);
                               }));
        // state encoder sits behind a stop-gradient in the critic
        worst_critic = std::max(worst_critic, check::subset_gradient_error(L.store, L.store.names_with_prefix("critic."), [&](Tape& tape) {
                                    return critic_loss(tape, L, buffer, targets, ids);
                                }));
    }
    EXPECT_LT(worst_actor, 1e-3);
    EXPECT_LT(worst_critic, 1e-3);
}

TEST(Update, ChangesParametersAndReportsFiniteMetrics) {
    TrainConfig t;
    t.epochs_per_update = 2;
    t.minibatches = 2;
    Learner L(ModelConfig{}, t, 14);
    const auto c = tiny_arena(10);
    const auto buffer = collect_rollouts(L.store, L.model, c, 4, Rng(15));
    const Eigen::VectorXd before = L.store.flat_values();
    Rng rng(16);
    const UpdateMetrics um = update(L, buffer, rng);
    EXPECT_GT((L.store.flat_values() - before).norm(), 0.0);
    for (double x : {um.actor_loss, um.critic_loss, um.vae_loss, um.recon_loss, um.entropy, um.actor_grad_norm})
        EXPECT_TRUE(std::isfinite(x));
    EXPECT_GT(um.entropy, 0.0);
    for (const auto& name : actor_group(L.store)) EXPECT_EQ(name.rfind("critic.", 0), std::string::npos);
}

TEST(Trainer, IdenticalSeedsGiveIdenticalMetricLogs) {
    ExperimentConfig cfg;
    cfg.arena = tiny_arena(8);
    cfg.train.total_env_steps = 60;
    cfg.train.rollout_workers = 2;
    cfg.train.minibatches = 2;
    cfg.train.epochs_per_update = 1;
    auto run = [&] {
        Learner L(cfg.model, cfg.train, cfg.train.seed);
        std::string log;
        for (const auto& r : train(L, cfg.arena)) log += to_json(r).dump() + "\n";
        return log;
    };
    const std::string a = run(), b = run();
    EXPECT_FALSE(a.empty());
    EXPECT_EQ(a, b);
}

TEST(Evaluate, UntrainedStochasticPolicyIsNearRandom) {
    const ModelConfig m;
    ParameterStore store(17);
    policy::declare_model(store, m);
    const arena::ArenaConfig c;
    const auto ours = evaluate(store, m, c, 400, 18, false);
    const auto random = evaluate_reference(c, 2000, 19, false);
    const double se = std::hypot(ours.summary.ci95, random.summary.ci95) / 1.96;
    EXPECT_LT(std::abs(ours.summary.mean - random.summary.mean), 3.0 * se)
        << ours.summary.mean << " vs " << random.summary.mean;
}

TEST(Evaluate, RunsOnOtherTargetCountsAndZeroEpisodes) {
    const ModelConfig m;
    ParameterStore store(20);
    policy::declare_model(store, m);
    arena::ArenaConfig c;
    for (int targets : {2, 4}) {
        c.n_targets = targets;
        const auto r = evaluate(store, m, c, 5, 21);
        EXPECT_EQ(r.returns.size(), 5u);
    }
    const auto none = evaluate(store, m, c, 0, 22);
    EXPECT_EQ(none.summary.n, 0u);
    EXPECT_THROW(evaluate(store, m, c, -1, 22), ContractError);
}

TEST(Checkpoint, RoundTripsExactly) {
    ExperimentConfig cfg;
    cfg.train.total_env_steps = 1;
    Learner L(cfg.model, cfg.train, 23);
    L.value_norm.update({1.0, 2.0, 3.5});
    const auto path = (std::filesystem::temp_directory_path() / "ma2rl_ckpt_roundtrip.json").string();
    save_checkpoint(path, L.store, cfg, L.value_norm);
    const Checkpoint ck = read_checkpoint(path);
    ParameterStore back = restore_store(ck, cfg.model);
    EXPECT_EQ(back.flat_values(), L.store.flat_values());
    ValueNorm vn;
    load_value_norm(vn, ck.doc);
    EXPECT_EQ(vn.mean(), L.value_norm.mean());
    EXPECT_EQ(vn.var(), L.value_norm.var());
    std::filesystem::remove(path);
}

TEST(Checkpoint, IncompatibleOrCorruptFilesAreLoadErrors) {
    ExperimentConfig cfg;
    cfg.train.total_env_steps = 1;
    Learner L(cfg.model, cfg.train, 24);
    const auto path = (std::filesystem::temp_directory_path() / "ma2rl_ckpt_bad.json").string();
    save_checkpoint(path, L.store, cfg, L.value_norm);
    const Checkpoint ck = read_checkpoint(path);
    for (auto tweak : {+[](ModelConfig& m) { m.latent = 4; }, +[](ModelConfig& m) { m.skills = 5; },
                       +[](ModelConfig& m) { m.mlp_hidden = 32; }}) {
        ModelConfig other = cfg.model;
        tweak(other);
        EXPECT_THROW(restore_store(ck, other), LoadError);
    }
    json doc = ck.doc;
    doc["config"]["train"]["seed"] = 99;  // hash no longer matches
    { std::ofstream(path) << doc.dump(); }
    EXPECT_THROW(read_checkpoint(path), LoadError);
    { std::ofstream(path) << "{not json"; }
    EXPECT_THROW(read_checkpoint(path), LoadError);
    std::filesystem::remove(path);
    EXPECT_THROW(read_checkpoint(path), LoadError);
}

TEST(Stats, SummarizeKnownValues) {
    const auto s = stats::summarize({1.0, 2.0, 3.0, 4.0});
    EXPECT_DOUBLE_EQ(s.mean, 2.5);
    EXPECT_NEAR(s.std, std::sqrt(5.0 / 3.0), 1e-12);
    EXPECT_NEAR(s.ci95, 1.96 * std::sqrt(5.0 / 3.0) / 2.0, 1e-12);
    EXPECT_TRUE(std::isnan(stats::summarize({}).mean));
}

// Exact null probabilities counted by hand from the 2^n sign patterns.
TEST(Stats, WilcoxonExactSmallSamples) {
    EXPECT_DOUBLE_EQ(stats::wilcoxon_greater({2, 3, 4, 5, 6}, {1, 1, 1, 1, 1}), 1.0 / 32);
    EXPECT_DOUBLE_EQ(stats::wilcoxon_greater({0, 0, 0, 0, 0}, {1, 2, 3, 4, 5}), 1.0);
    // ranks 1..5 with the largest negative: W+ = 10, ten subsets reach 10
    EXPECT_DOUBLE_EQ(stats::wilcoxon_greater({1, 2, 3, 4, -5}, {0, 0, 0, 0, 0}), 10.0 / 32);
    // ties share rank 1.5
    EXPECT_DOUBLE_EQ(stats::wilcoxon_greater({1, 1, 2}, {0, 0, 0}), 1.0 / 8);
    EXPECT_DOUBLE_EQ(stats::wilcoxon_greater({1, 1}, {1, 1}), 1.0);
    EXPECT_THROW(stats::wilcoxon_greater({1}, {1, 2}), DimensionError);
}

TEST(Config, TrainConfigValidation) {
    TrainConfig t;
    EXPECT_NO_THROW(t.validate());
    t.gamma = 1.5;
    EXPECT_THROW(t.validate(), ConfigError);
    t = TrainConfig{};
    t.clip = 0.0;
    EXPECT_THROW(t.validate(), ConfigError);
    // reference hyperparameters
    t = TrainConfig{};
    EXPECT_EQ(t.gamma, 0.99);
    EXPECT_EQ(t.gae_lambda, 0.95);
    EXPECT_EQ(t.clip, 0.2);
    EXPECT_EQ(t.value_loss_coef, 1.0);
    EXPECT_EQ(t.huber_delta, 10.0);
    EXPECT_EQ(t.minibatches, 8);
}
