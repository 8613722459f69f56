#include <gtest/gtest.h>

#include <sstream>

#include "ma2rl/arena.hpp"

using namespace ma2rl;
using namespace ma2rl::arena;

namespace {

ArenaConfig small(int agents = 3, int targets = 3) {
    ArenaConfig c;
    c.n_agents = agents;
    c.n_targets = targets;
    return c;
}

// Places entity j at (x, y) on an otherwise default state.
EntityState layout(const ArenaConfig& c, const std::vector<std::pair<int, int>>& cells) {
    Rng rng(0);
    EntityState s = reset(c, rng).state;
    for (int j = 0; j < static_cast<int>(cells.size()); ++j) write_cell(s, j, cells[j].first, cells[j].second);
    return s;
}

JointAction all_stay(int n) { return JointAction(static_cast<std::size_t>(n), Action::self(Move::stay)); }

}  // namespace

TEST(Arena, ResetPlacesEntitiesOnDistinctCells) {
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        Rng rng(seed);
        const ArenaConfig c = small(4, 5);
        const EntityState s = reset(c, rng).state;
        std::set<std::pair<int, int>> cells;
        for (int j = 0; j < s.entities(); ++j) {
            EXPECT_GE(s.cell_x(j), 0);
            EXPECT_LT(s.cell_x(j), c.grid_size);
            cells.insert({s.cell_x(j), s.cell_y(j)});
        }
        EXPECT_EQ(static_cast<int>(cells.size()), c.entities());
        EXPECT_EQ(s.active_targets(), c.n_targets);
        EXPECT_EQ(s.t, 0);
    }
}

TEST(Arena, ResetIsDeterministic) {
    Rng a(42), b(42);
    EXPECT_EQ(reset(small(), a).state.rows, reset(small(), b).state.rows);
}

TEST(Arena, TooManyEntitiesIsAConfigError) {
    ArenaConfig c = small(3, 3);
    c.grid_size = 2;
    Rng rng(0);
    EXPECT_THROW(reset(c, rng), ConfigError);
}

TEST(Arena, ConfigValidation) {
    ArenaConfig c = small();
    c.sight_radius = c.full_sight() + 0.1;
    EXPECT_THROW(c.validate(), ConfigError);
    c = small();
    c.target_move_prob = 1.5;
    EXPECT_THROW(c.validate(), ConfigError);
    c = small(0, 3);
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Arena, FullSightSeesEverything) {
    ArenaConfig c = small(3, 4);
    c.sight_radius = c.full_sight();
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        for (const auto& o : reset(c, rng).observations) EXPECT_EQ(o.mask.sum(), c.entities());
    }
}

TEST(Arena, ZeroSightSeesOnlySelf) {
    ArenaConfig c = small(3, 4);
    c.sight_radius = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        const auto r = reset(c, rng);
        for (int i = 0; i < c.n_agents; ++i) {
            const auto& o = r.observations[static_cast<std::size_t>(i)];
            EXPECT_EQ(o.mask.sum(), 1.0);
            EXPECT_EQ(o.mask(i, 0), 1.0);
            EXPECT_EQ(o.rows(i, kX), 0.0);
            EXPECT_EQ(o.rows(i, kY), 0.0);
            EXPECT_EQ(action_availability(r.state, i, c.sight_radius).sum(), kSelfActions);
        }
    }
}

TEST(Arena, SelfRowAlwaysVisibleAtOrigin) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        const auto r = reset(small(), rng);
        for (int i = 0; i < 3; ++i) {
            const auto& o = r.observations[static_cast<std::size_t>(i)];
            EXPECT_EQ(o.mask(i, 0), 1.0);
            EXPECT_EQ(o.rows(i, kX), 0.0);
            EXPECT_EQ(o.rows(i, kY), 0.0);
        }
    }
}

// o = M (.) relativized s, exactly, and the mask against a brute-force distance check.
TEST(Arena, MaskIdentityAndBruteForceMasks) {
    ArenaConfig c = small(3, 3);
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        Rng rng(seed);
        auto r = reset(c, rng);
        // a few steps in so targets can be inactive and last-action features set
        for (int t = 0; t < static_cast<int>(seed % 7); ++t) {
            JointAction a;
            for (int i = 0; i < c.n_agents; ++i) a.push_back(Action::self(static_cast<Move>(rng.below(5))));
            auto next = step(c, r.state, a, rng);
            r.state = next.state;
            r.observations = next.observations;
        }
        const EntityState& s = r.state;
        for (int i = 0; i < c.n_agents; ++i) {
            const auto& o = r.observations[static_cast<std::size_t>(i)];
            Tensor expected = s.rows;
            for (int j = 0; j < s.entities(); ++j) {
                const int dx = s.cell_x(j) - s.cell_x(i), dy = s.cell_y(j) - s.cell_y(i);
                const bool seen = j == i || dx * dx + dy * dy <= c.sight_radius * c.sight_radius;
                ASSERT_EQ(o.mask(j, 0), seen ? 1.0 : 0.0);
                expected(j, kX) = static_cast<double>(dx) / c.grid_size;
                expected(j, kY) = static_cast<double>(dy) / c.grid_size;
            }
            const Tensor masked = expected.array().colwise() * o.mask.col(0).array();
            ASSERT_TRUE((masked.array() == o.rows.array()).all()) << "seed " << seed << " agent " << i;
            EXPECT_EQ(o.mask.sum() + (o.mask.array() == 0.0).count(), s.entities());
        }
    }
}

TEST(Arena, RelativizeOffKeepsAbsoluteRows) {
    ArenaConfig c = small();
    c.sight_radius = c.full_sight();
    c.relativize = false;
    Rng rng(3);
    const auto r = reset(c, rng);
    for (const auto& o : r.observations) EXPECT_EQ(o.rows, r.state.rows);
}

TEST(Arena, AvailabilityImpliesVisibility) {
    ArenaConfig c = small(3, 4);
    for (std::uint64_t seed = 0; seed < 500; ++seed) {
        Rng rng(seed);
        auto r = reset(c, rng);
        for (int t = 0; t < 5; ++t) {
            for (int i = 0; i < c.n_agents; ++i) {
                const Tensor av = action_availability(r.state, i, c.sight_radius);
                const Tensor mask = visibility_mask(r.state, i, c.sight_radius);
                EXPECT_TRUE((av.leftCols(kSelfActions).array() == 1.0).all());
                for (int k = 0; k < c.n_targets; ++k)
                    if (av(0, kSelfActions + k) == 1.0) {
                        EXPECT_EQ(mask(c.n_agents + k, 0), 1.0);
                        EXPECT_TRUE(r.state.target_active(k));
                    }
            }
            JointAction a;
            for (int i = 0; i < c.n_agents; ++i) a.push_back(Action::self(static_cast<Move>(rng.below(5))));
            r.state = step(c, r.state, a, rng).state;
        }
    }
}

TEST(Arena, NoVisibleTargetsMeansOnlySelfActions) {
    const ArenaConfig c = small(1, 2);
    const EntityState s = layout(c, {{0, 0}, {9, 9}, {9, 0}});
    const Tensor av = action_availability(s, 0, c.sight_radius);
    EXPECT_EQ(av.sum(), kSelfActions);
}

TEST(Arena, AllTargetsInactiveAvailability) {
    const ArenaConfig c = small(1, 2);
    EntityState s = layout(c, {{0, 0}, {1, 0}, {0, 1}});
    s.rows(1, kActive) = 0.0;
    s.rows(2, kActive) = 0.0;
    Tensor expected(1, 7);
    expected << 1, 1, 1, 1, 1, 0, 0;
    EXPECT_EQ(action_availability(s, 0, c.sight_radius), expected);
}

TEST(Arena, StayWithoutTagIsStepPenalty) {
    ArenaConfig c = small(2, 1);
    c.target_move_prob = 0.0;
    const EntityState s = layout(c, {{0, 0}, {1, 0}, {8, 8}});
    Rng rng(1);
    const auto r = step(c, s, all_stay(2), rng);
    EXPECT_DOUBLE_EQ(r.reward, c.step_penalty);
    EXPECT_EQ(r.tags, 0);
    EXPECT_FALSE(r.done);
}

// Single-step simulation oracle for a tag, by hand.
TEST(Arena, AdjacentOutTagsTarget) {
    ArenaConfig c = small(2, 2);
    c.target_move_prob = 0.0;
    const EntityState s = layout(c, {{4, 4}, {0, 0}, {5, 5}, {9, 9}});
    EXPECT_NEAR(distance(s, 0, 2), std::sqrt(2.0), 1e-12);
    Rng rng(1);
    JointAction a{Action::out(0), Action::self(Move::right)};
    const auto r = step(c, s, a, rng);
    EXPECT_FALSE(r.state.target_active(0));
    EXPECT_TRUE(r.state.target_active(1));
    EXPECT_DOUBLE_EQ(r.reward, 1.0 * c.tag_reward + c.step_penalty);
    EXPECT_EQ(r.state.cell_x(1), 1);
    EXPECT_EQ(r.state.cell_x(0), 4);  // Out does not move
}

TEST(Arena, OutBeyondTagDistanceDoesNothing) {
    ArenaConfig c = small(1, 1);
    c.target_move_prob = 0.0;
    const EntityState s = layout(c, {{4, 4}, {6, 4}});
    ASSERT_EQ(action_availability(s, 0, c.sight_radius)(0, kSelfActions), 1.0);
    Rng rng(1);
    const auto r = step(c, s, {Action::out(0)}, rng);
    EXPECT_TRUE(r.state.target_active(0));
    EXPECT_DOUBLE_EQ(r.reward, c.step_penalty);
}

TEST(Arena, TwoAgentsTaggingSameTargetCountOnce) {
    ArenaConfig c = small(2, 1);
    c.target_move_prob = 0.0;
    const EntityState s = layout(c, {{4, 4}, {5, 5}, {4, 5}});
    Rng rng(1);
    const auto r = step(c, s, {Action::out(0), Action::out(0)}, rng);
    EXPECT_EQ(r.tags, 1);
    EXPECT_TRUE(r.done);  // last target gone
}

TEST(Arena, MovementClipsAtBorder) {
    ArenaConfig c = small(1, 1);
    c.target_move_prob = 0.0;
    const EntityState s = layout(c, {{0, 0}, {9, 9}});
    Rng rng(1);
    auto r = step(c, s, {Action::self(Move::left)}, rng);
    EXPECT_EQ(r.state.cell_x(0), 0);
    r = step(c, r.state, {Action::self(Move::down)}, rng);
    EXPECT_EQ(r.state.cell_y(0), 0);
    r = step(c, r.state, {Action::self(Move::up)}, rng);
    EXPECT_EQ(r.state.cell_y(0), 1);
}

TEST(Arena, TargetsMoveToAdjacentCells) {
    ArenaConfig c = small(1, 3);
    c.target_move_prob = 1.0;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        Rng rng(seed);
        const auto r0 = reset(c, rng);
        const auto r1 = step(c, r0.state, all_stay(1), rng);
        for (int j = 1; j < 4; ++j) {
            const int d = std::abs(r1.state.cell_x(j) - r0.state.cell_x(j)) + std::abs(r1.state.cell_y(j) - r0.state.cell_y(j));
            EXPECT_EQ(d, 1);
        }
    }
}

TEST(Arena, EpisodeEndsAtLimit) {
    ArenaConfig c = small(1, 1);
    c.episode_limit = 4;
    c.target_move_prob = 0.0;
    const EntityState s = layout(c, {{0, 0}, {9, 9}});
    Rng rng(1);
    EntityState cur = s;
    for (int t = 1; t <= 4; ++t) {
        auto r = step(c, cur, all_stay(1), rng);
        EXPECT_EQ(r.done, t == 4);
        EXPECT_EQ(r.state.active_targets(), 1);
        cur = r.state;
    }
}

TEST(Arena, InvalidActionsAreContractErrors) {
    ArenaConfig c = small(1, 1);
    const EntityState s = layout(c, {{0, 0}, {9, 9}});
    Rng rng(1);
    EXPECT_THROW(step(c, s, {Action::out(0)}, rng), ContractError);  // not visible
    EXPECT_THROW(step(c, s, {Action::out(3)}, rng), ContractError);
    EXPECT_THROW(step(c, s, {}, rng), ContractError);
    EXPECT_THROW(observe(s, 5, 3.0), ContractError);
}

TEST(Arena, ActionCodeRoundTrip) {
    for (int code = 0; code < 12; ++code) EXPECT_EQ(Action::decode(code).encode(), code);
    EXPECT_EQ(Action::out(2).encode(), kSelfActions + 2);
}

// Random play: shared reward, constant m, bounded returns.
TEST(Arena, RandomEpisodesRespectReturnBoundsAndShapes) {
    ArenaConfig c = small(3, 3);
    for (std::uint64_t seed = 0; seed < 300; ++seed) {
        Rng rng(seed);
        auto r = reset(c, rng);
        double ret = 0.0;
        bool done = false;
        while (!done) {
            JointAction a;
            for (int i = 0; i < c.n_agents; ++i) {
                const Tensor av = action_availability(r.state, i, c.sight_radius);
                std::vector<int> ok;
                for (int k = 0; k < av.cols(); ++k)
                    if (av(0, k) == 1.0) ok.push_back(k);
                a.push_back(Action::decode(ok[rng.below(ok.size())]));
            }
            auto next = step(c, r.state, a, rng);
            ASSERT_EQ(next.state.entities(), c.entities());
            for (const auto& o : next.observations) ASSERT_EQ(o.rows.rows(), c.entities());
            ret += next.reward;
            done = next.done;
            r.state = next.state;
        }
        EXPECT_GE(ret, c.step_penalty * c.episode_limit - 1e-12);
        EXPECT_LE(ret, c.n_targets * c.tag_reward);
    }
}

TEST(Arena, StepIsDeterministic) {
    const ArenaConfig c = small();
    Rng a(9), b(9);
    const auto ra = reset(c, a), rb = reset(c, b);
    const auto sa = step(c, ra.state, all_stay(3), a), sb = step(c, rb.state, all_stay(3), b);
    EXPECT_EQ(sa.state.rows, sb.state.rows);
}

TEST(Arena, GreedyChaseTagsAdjacentTarget) {
    const ArenaConfig c = small(1, 1);
    const EntityState s = layout(c, {{4, 4}, {5, 4}});
    EXPECT_EQ(greedy_chase_action(s, 0, c.sight_radius), Action::out(0));
    const EntityState far = layout(c, {{0, 4}, {5, 4}});
    EXPECT_EQ(greedy_chase_action(far, 0, c.sight_radius), Action::self(Move::right));
}

TEST(Arena, TraceWriterEmitsOneJsonLinePerStep) {
    std::ostringstream out;
    TraceWriter w(out);
    const ArenaConfig c = small(2, 2);
    Rng rng(1);
    auto r = reset(c, rng);
    for (int t = 0; t < 3; ++t) {
        auto next = step(c, r.state, all_stay(2), rng);
        w.write(next.state, next.observations, all_stay(2), next.reward, next.done);
        r.state = next.state;
    }
    std::istringstream in(out.str());
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        const auto j = nlohmann::json::parse(line);
        EXPECT_EQ(j["state"].size(), 4u);
        EXPECT_EQ(j["masks"].size(), 2u);
        ++n;
    }
    EXPECT_EQ(n, 3);
}
