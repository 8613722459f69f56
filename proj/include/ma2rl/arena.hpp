#pragma once

#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ma2rl/errors.hpp"
#include "ma2rl/numerics/rng.hpp"
#include "ma2rl/numerics/tensor.hpp"

namespace ma2rl::arena {

/// Entity row layout: x, y, is_agent, is_target, active, last_action_norm.
inline constexpr Index kFeatures = 6;
inline constexpr int kSelfActions = 5;

enum Feature : Index { kX = 0, kY = 1, kIsAgent = 2, kIsTarget = 3, kActive = 4, kLastAction = 5 };

enum class Move : int { stay = 0, up = 1, down = 2, left = 3, right = 4 };

struct ArenaConfig {
    int n_agents = 3;
    int n_targets = 3;
    int grid_size = 10;
    double sight_radius = 3.0;
    int episode_limit = 50;
    double tag_reward = 1.0;
    double step_penalty = -0.01;
    double target_move_prob = 0.5;
    std::uint64_t seed = 0;
    /// Express visible positions relative to the observer (off only for diagnostics).
    bool relativize = true;

    [[nodiscard]] int entities() const noexcept { return n_agents + n_targets; }
    [[nodiscard]] int actions() const noexcept { return kSelfActions + n_targets; }
    [[nodiscard]] double full_sight() const noexcept { return grid_size * std::sqrt(2.0); }

    void validate() const {
        if (n_agents < 1) throw ConfigError("arena.n_agents must be positive");
        if (n_targets < 1) throw ConfigError("arena.n_targets must be positive");
        if (grid_size < 1) throw ConfigError("arena.grid_size must be positive");
        if (episode_limit < 1) throw ConfigError("arena.episode_limit must be positive");
        if (sight_radius < 0.0 || sight_radius > full_sight() + 1e-12)
            throw ConfigError("arena.sight_radius must lie in [0, grid_size*sqrt(2)]");
        if (target_move_prob < 0.0 || target_move_prob > 1.0) throw ConfigError("arena.target_move_prob must be a probability");
        if (entities() > grid_size * grid_size)
            throw ConfigError("arena: " + std::to_string(entities()) + " entities do not fit on a " +
                              std::to_string(grid_size) + "x" + std::to_string(grid_size) + " grid");
    }
};

inline void to_json(nlohmann::json& j, const ArenaConfig& c) {
    j = nlohmann::json{{"n_agents", c.n_agents},       {"n_targets", c.n_targets},
                       {"grid_size", c.grid_size},     {"sight_radius", c.sight_radius},
                       {"episode_limit", c.episode_limit}, {"tag_reward", c.tag_reward},
                       {"step_penalty", c.step_penalty}, {"target_move_prob", c.target_move_prob},
                       {"seed", c.seed},               {"relativize", c.relativize}};
}

/// Global entity-states (m x F, absolute positions) plus the step counter.
/// Agents occupy rows [0, n_agents), targets the rest.
struct EntityState {
    Tensor rows;
    int n_agents = 0;
    int grid_size = 1;
    int t = 0;

    [[nodiscard]] int entities() const { return static_cast<int>(rows.rows()); }
    [[nodiscard]] int n_targets() const { return entities() - n_agents; }
    [[nodiscard]] int cell_x(int j) const { return static_cast<int>(std::lround(rows(j, kX) * grid_size)); }
    [[nodiscard]] int cell_y(int j) const { return static_cast<int>(std::lround(rows(j, kY) * grid_size)); }
    [[nodiscard]] bool target_active(int target) const { return rows(n_agents + target, kActive) == 1.0; }
    [[nodiscard]] int active_targets() const {
        int n = 0;
        for (int k = 0; k < n_targets(); ++k) n += target_active(k) ? 1 : 0;
        return n;
    }
};

struct EntityObservation {
    Tensor rows;  // m x F, zero where mask is 0
    Tensor mask;  // m x 1 of {0, 1}
};

struct Action {
    enum class Kind { self, out };
    Kind kind = Kind::self;
    int index = 0;  // Move for self actions, target index for out actions

    static Action self(Move m) { return {Kind::self, static_cast<int>(m)}; }
    static Action out(int target) { return {Kind::out, target}; }

    [[nodiscard]] int encode() const { return kind == Kind::self ? index : kSelfActions + index; }
    static Action decode(int code) { return code < kSelfActions ? Action{Kind::self, code} : Action{Kind::out, code - kSelfActions}; }
    bool operator==(const Action&) const = default;
};

using JointAction = std::vector<Action>;

inline double distance(const EntityState& s, int a, int b) {
    const double dx = s.cell_x(a) - s.cell_x(b);
    const double dy = s.cell_y(a) - s.cell_y(b);
    return std::sqrt(dx * dx + dy * dy);
}

/// All rows with positions re-expressed relative to `agent` (agent-centred entity-states).
inline Tensor relativized_rows(const EntityState& state, int agent, bool relativize = true) {
    Tensor out = state.rows;
    if (!relativize) return out;
    for (Index j = 0; j < out.rows(); ++j) {
        out(j, kX) = static_cast<double>(state.cell_x(static_cast<int>(j)) - state.cell_x(agent)) / state.grid_size;
        out(j, kY) = static_cast<double>(state.cell_y(static_cast<int>(j)) - state.cell_y(agent)) / state.grid_size;
    }
    return out;
}

inline Tensor visibility_mask(const EntityState& state, int agent, double sight_radius) {
    Tensor mask(state.entities(), 1);
    for (int j = 0; j < state.entities(); ++j)
        mask(j, 0) = (j == agent || distance(state, agent, j) <= sight_radius) ? 1.0 : 0.0;
    return mask;
}

/// o = M . s for one agent: the agent-relative state with invisible rows zeroed.
inline EntityObservation observe(const EntityState& state, int agent, double sight_radius, bool relativize = true) {
    if (agent < 0 || agent >= state.n_agents) throw ContractError("observe: agent index out of range");
    EntityObservation obs;
    obs.mask = visibility_mask(state, agent, sight_radius);
    obs.rows = relativized_rows(state, agent, relativize);
    for (Index j = 0; j < obs.rows.rows(); ++j)
        if (obs.mask(j, 0) == 0.0) obs.rows.row(j).setZero();
    return obs;
}

inline std::vector<EntityObservation> observe_all(const EntityState& state, const ArenaConfig& config) {
    std::vector<EntityObservation> out;
    out.reserve(static_cast<std::size_t>(config.n_agents));
    for (int i = 0; i < config.n_agents; ++i) out.push_back(observe(state, i, config.sight_radius, config.relativize));
    return out;
}

/// 1 x (5 + n_targets) row of {0,1}: self actions always, Out(j) iff target j is active and visible.
inline Tensor action_availability(const EntityState& state, int agent, double sight_radius) {
    if (agent < 0 || agent >= state.n_agents) throw ContractError("action_availability: agent index out of range");
    Tensor avail = Tensor::Zero(1, kSelfActions + state.n_targets());
    avail.leftCols(kSelfActions).setOnes();
    for (int k = 0; k < state.n_targets(); ++k) {
        const int j = state.n_agents + k;
        if (state.target_active(k) && distance(state, agent, j) <= sight_radius) avail(0, kSelfActions + k) = 1.0;
    }
    return avail;
}

inline double last_action_feature(const Action& a) {
    return a.kind == Action::Kind::out ? 1.0 : static_cast<double>(a.index + 1) / (kSelfActions + 1);
}

struct ResetResult {
    EntityState state;
    std::vector<EntityObservation> observations;
};

inline void write_cell(EntityState& s, int j, int x, int y) {
    s.rows(j, kX) = static_cast<double>(x) / s.grid_size;
    s.rows(j, kY) = static_cast<double>(y) / s.grid_size;
}

/// Agents and targets on distinct uniformly random cells; every target active.
inline ResetResult reset(const ArenaConfig& config, Rng& rng) {
    config.validate();
    const int m = config.entities();
    const int cells = config.grid_size * config.grid_size;
    // partial Fisher-Yates over cell indices
    std::vector<int> pool(static_cast<std::size_t>(cells));
    for (int c = 0; c < cells; ++c) pool[static_cast<std::size_t>(c)] = c;
    EntityState s;
    s.rows = Tensor::Zero(m, kFeatures);
    s.n_agents = config.n_agents;
    s.grid_size = config.grid_size;
    s.t = 0;
    for (int j = 0; j < m; ++j) {
        const auto pick = static_cast<std::size_t>(j) + static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(cells - j)));
        std::swap(pool[static_cast<std::size_t>(j)], pool[pick]);
        const int cell = pool[static_cast<std::size_t>(j)];
        write_cell(s, j, cell % config.grid_size, cell / config.grid_size);
        const bool agent = j < config.n_agents;
        s.rows(j, kIsAgent) = agent ? 1.0 : 0.0;
        s.rows(j, kIsTarget) = agent ? 0.0 : 1.0;
        s.rows(j, kActive) = 1.0;
        s.rows(j, kLastAction) = 0.0;
    }
    return {s, observe_all(s, config)};
}

struct StepResult {
    EntityState state;
    std::vector<EntityObservation> observations;
    double reward = 0.0;
    bool done = false;
    int tags = 0;
};

inline void apply_move(int& x, int& y, Move m, int grid) {
    switch (m) {
        case Move::stay: break;
        case Move::up: y = std::min(grid - 1, y + 1); break;
        case Move::down: y = std::max(0, y - 1); break;
        case Move::left: x = std::max(0, x - 1); break;
        case Move::right: x = std::min(grid - 1, x + 1); break;
    }
}

inline constexpr double kTagDistance = 1.5;

/// Tags resolve on start-of-step positions, then agents move (clipped at the
/// border), then each active target moves to a random in-bounds 4-neighbour
/// with probability target_move_prob.
inline StepResult step(const ArenaConfig& config, const EntityState& state, const JointAction& actions, Rng& rng) {
    if (static_cast<int>(actions.size()) != config.n_agents)
        throw ContractError("step: expected " + std::to_string(config.n_agents) + " actions, got " +
                            std::to_string(actions.size()));
    if (state.entities() != config.entities()) throw ContractError("step: state does not match the arena config");
    for (int i = 0; i < config.n_agents; ++i) {
        const int code = actions[static_cast<std::size_t>(i)].encode();
        if (code < 0 || code >= config.actions())
            throw ContractError("step: action index " + std::to_string(code) + " out of range for agent " + std::to_string(i));
        if (action_availability(state, i, config.sight_radius)(0, code) == 0.0)
            throw ContractError("step: action " + std::to_string(code) + " is unavailable to agent " + std::to_string(i));
    }
    StepResult r;
    r.state = state;
    EntityState& s = r.state;
    int tags = 0;
    for (int i = 0; i < config.n_agents; ++i) {
        const Action& a = actions[static_cast<std::size_t>(i)];
        if (a.kind != Action::Kind::out) continue;
        const int j = config.n_agents + a.index;
        if (s.rows(j, kActive) == 1.0 && distance(state, i, j) <= kTagDistance) {
            s.rows(j, kActive) = 0.0;
            ++tags;
        }
    }
    for (int i = 0; i < config.n_agents; ++i) {
        const Action& a = actions[static_cast<std::size_t>(i)];
        if (a.kind == Action::Kind::self) {
            int x = s.cell_x(i), y = s.cell_y(i);
            apply_move(x, y, static_cast<Move>(a.index), config.grid_size);
            write_cell(s, i, x, y);
        }
        s.rows(i, kLastAction) = last_action_feature(a);
    }
    for (int k = 0; k < config.n_targets; ++k) {
        const int j = config.n_agents + k;
        if (s.rows(j, kActive) != 1.0) continue;
        if (rng.uniform() >= config.target_move_prob) continue;
        int x = s.cell_x(j), y = s.cell_y(j);
        int options[4][2];
        int n = 0;
        if (y + 1 < config.grid_size) options[n][0] = x, options[n++][1] = y + 1;
        if (y - 1 >= 0) options[n][0] = x, options[n++][1] = y - 1;
        if (x - 1 >= 0) options[n][0] = x - 1, options[n++][1] = y;
        if (x + 1 < config.grid_size) options[n][0] = x + 1, options[n++][1] = y;
        if (n == 0) continue;
        const auto c = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
        write_cell(s, j, options[c][0], options[c][1]);
    }
    s.t = state.t + 1;
    r.tags = tags;
    r.reward = tags * config.tag_reward + config.step_penalty;
    r.done = s.active_targets() == 0 || s.t >= config.episode_limit;
    r.observations = observe_all(s, config);
    return r;
}

/// JSON-lines episode trace: one object per step.
class TraceWriter {
public:
    explicit TraceWriter(std::ostream& out) : out_(&out) {}

    void write(const EntityState& state, const std::vector<EntityObservation>& observations, const JointAction& actions,
               double reward, bool done) {
        nlohmann::json j;
        j["t"] = state.t;
        std::vector<std::vector<double>> rows;
        for (Index r = 0; r < state.rows.rows(); ++r) {
            std::vector<double> row(state.rows.row(r).data(), state.rows.row(r).data() + state.rows.cols());
            rows.push_back(std::move(row));
        }
        j["state"] = rows;
        std::vector<std::vector<int>> masks;
        for (const auto& o : observations) {
            std::vector<int> m;
            for (Index r = 0; r < o.mask.rows(); ++r) m.push_back(static_cast<int>(o.mask(r, 0)));
            masks.push_back(std::move(m));
        }
        j["masks"] = masks;
        std::vector<int> codes;
        for (const auto& a : actions) codes.push_back(a.encode());
        j["actions"] = codes;
        j["reward"] = reward;
        j["done"] = done;
        *out_ << j.dump() << '\n';
    }

private:
    std::ostream* out_;
};

/// Scripted reference policy with global knowledge: tag any adjacent active
/// target, otherwise step toward the nearest active target.
inline Action greedy_chase_action(const EntityState& state, int agent, double sight_radius) {
    const Tensor avail = action_availability(state, agent, sight_radius);
    int best = -1;
    double best_d = 1e300;
    for (int k = 0; k < state.n_targets(); ++k) {
        if (!state.target_active(k)) continue;
        const double d = distance(state, agent, state.n_agents + k);
        if (d <= kTagDistance && avail(0, kSelfActions + k) == 1.0) return Action::out(k);
        if (d < best_d) best_d = d, best = k;
    }
    if (best < 0) return Action::self(Move::stay);
    const int j = state.n_agents + best;
    const int dx = state.cell_x(j) - state.cell_x(agent);
    const int dy = state.cell_y(j) - state.cell_y(agent);
    if (std::abs(dx) >= std::abs(dy) && dx != 0) return Action::self(dx > 0 ? Move::right : Move::left);
    if (dy != 0) return Action::self(dy > 0 ? Move::up : Move::down);
    return Action::self(Move::stay);
}

}  // namespace ma2rl::arena
