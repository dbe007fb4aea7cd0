#pragma once

// Comparison agents: UCT search with progressive widening and IDM/MOBIL
// rollouts, and the rule-based IDM/MOBIL drivers for both cases.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <random>
#include <vector>

#include "params.hpp"
#include "pomdp.hpp"
#include "rng.hpp"
#include "search.hpp"
#include "traffic.hpp"

namespace tacdec {

// ---------------------------------------------------------------------------
// Rule-based drivers

namespace detail {

// ACC action that steers the setpoint toward the normal driver's targets.
inline Action acc_toward_normal(const WorldState& s, const ActionMask& m, const SimParams& sim) {
    const EgoControlState c = control_of(s);
    const double T_goal = sim.drivers.normal.T_set;
    const double half_step = sim.dT_set / 2.0;
    if ((c.v_set < sim.v_des || c.T_set > T_goal + half_step) && m[index(Action::AccUp)]) return Action::AccUp;
    if (c.T_set < T_goal - half_step && m[index(Action::AccDown)]) return Action::AccDown;
    return Action::Idle;
}

inline Action continue_change(const WorldState& s, const ActionMask& m) {
    const Action dir = s.ego.phys.v_y < 0.0 ? Action::Right : Action::Left;
    if (m[index(dir)]) return dir;
    return dir == Action::Right ? Action::Left : Action::Right;
}

}  // namespace detail

// IDM/MOBIL driver with normal parameters, acting through the tactical
// action interface.
inline Action idm_mobil_action(const WorldState& s, const SimParams& sim = {}) {
    const ActionMask m = available_actions(s, sim);
    if (is_mid_change(s.ego.phys)) return detail::continue_change(s, m);
    Scene sc = detail::sensed_scene(s, sim);
    const LaneChange lc = mobil_decide(sc, 0, sim, &sim.drivers.normal);
    if (lc == LaneChange::Left && m[index(Action::Left)]) return Action::Left;
    if (lc == LaneChange::Right && m[index(Action::Right)]) return Action::Right;
    return detail::acc_toward_normal(s, m, sim);
}

// Exit-case driver: follows the IDM and moves right whenever the MOBIL safety
// criterion holds for the right lane.
inline Action exit_baseline_action(const WorldState& s, const SimParams& sim = {}) {
    const ActionMask m = available_actions(s, sim);
    if (is_mid_change(s.ego.phys)) return detail::continue_change(s, m);
    const int lane = current_lane(s.ego.phys);
    if (lane > 0 && m[index(Action::Right)]) {
        Scene sc = detail::sensed_scene(s, sim);
        const MobilEvaluation ev = mobil_evaluate(sc, 0, lane - 1, sim.drivers.normal, sim);
        if (ev.safe) return Action::Right;
    }
    return detail::acc_toward_normal(s, m, sim);
}

// ---------------------------------------------------------------------------
// Standard MCTS

// Discounted return of a fixed-depth rollout where the ego drives as a raw
// IDM/MOBIL vehicle with normal parameters.
inline double rollout_return(WorldState s, int depth, Rng& rng, const SimParams& sim, double gamma) {
    s.ego.driver = sim.drivers.normal;
    double ret = 0.0, disc = 1.0;
    for (int d = 0; d < depth && !s.s_term; ++d) {
        Action a = Action::Idle;
        if (is_mid_change(s.ego.phys)) {
            a = s.ego.phys.v_y < 0.0 ? Action::Right : Action::Left;
        } else {
            Scene sc = detail::sensed_scene(s, sim);
            const LaneChange lc = mobil_decide(sc, 0, sim, &sim.drivers.normal);
            if (lc != LaneChange::Stay) {
                const Action want = lc == LaneChange::Left ? Action::Left : Action::Right;
                if (available_actions(s, sim)[static_cast<std::size_t>(index(want))]) a = want;
            }
        }
        const WorldState prev = s;
        if (a == Action::Idle) {
            s.ego.phys.v_y = 0.0;
        } else {
            s.ego.phys.v_y = a == Action::Left ? sim.v_y_lc : -sim.v_y_lc;
        }
        s.ego.driver = sim.drivers.normal;
        step_world(s, rng, sim);
        if (exit_reached(s, sim)) s.s_term = true;
        ret += disc * reward(prev, a, s, sim);
        disc *= gamma;
    }
    return ret;
}

struct UctNode {
    WorldState state;
    bool terminal = false;
    ActionMask available{};
    VisitCounts n{};
    std::array<double, kNumActions> q{};
    std::array<std::vector<std::pair<std::unique_ptr<UctNode>, double>>, kNumActions> children;
};

class StandardTreeSearch {
public:
    StandardTreeSearch(const SearchConfig& cfg, const SimParams& sim) : cfg_(cfg), sim_(sim) {}

    SearchResult run(const WorldState& root_state, int iterations, Rng& rng) {
        if (root_state.s_term) throw PreconditionError("standard_mcts_action: root is terminal");
        root_ = make_node(root_state);
        for (int i = 0; i < iterations; ++i) simulate(*root_, rng, 0);
        SearchResult r;
        r.visits = root_->n;
        r.q = root_->q;
        r.pi = visit_policy(r.visits, cfg_.tau);
        r.action = action_from_index(greedy_action(r.visits));
        return r;
    }

    const UctNode* root() const { return root_.get(); }

private:
    std::unique_ptr<UctNode> make_node(const WorldState& s) const {
        auto n = std::make_unique<UctNode>();
        n->state = s;
        n->terminal = s.s_term;
        if (!n->terminal) n->available = available_actions(s, sim_);
        return n;
    }

    // Q normalized by Q_max; untried actions first.
    int select(const UctNode& node) const {
        int n_s = 0;
        for (int v : node.n) n_s += v;
        int best = -1;
        double best_score = -std::numeric_limits<double>::infinity();
        for (int a = 0; a < kNumActions; ++a) {
            const auto ua = static_cast<std::size_t>(a);
            if (!node.available[ua]) continue;
            if (node.n[ua] == 0) return a;
            const double s = node.q[ua] / cfg_.q_max() +
                             cfg_.c_puct * std::sqrt(std::log(static_cast<double>(n_s)) / node.n[ua]);
            if (s > best_score) {
                best_score = s;
                best = a;
            }
        }
        return best;
    }

    // Tree steps and rollout steps share one horizon of rollout_depth steps
    // from the root, so every path is scored over the same number of rewards.
    double simulate(UctNode& node, Rng& rng, int depth) {
        if (node.terminal) return 0.0;
        if (depth >= std::min(cfg_.max_depth, cfg_.rollout_depth)) return 0.0;
        const int a = select(node);
        const auto ua = static_cast<std::size_t>(a);
        auto& kids = node.children[ua];
        double q;
        if (static_cast<double>(kids.size()) <= widening_limit(node.n[ua], cfg_)) {
            Transition t = transition(node.state, action_from_index(a), rng, sim_);
            auto child = make_node(t.next);
            const int remaining = cfg_.rollout_depth - depth - 1;
            const double v = child->terminal || remaining <= 0 ? 0.0 : rollout_return(t.next, remaining, rng, sim_, cfg_.gamma);
            q = t.reward + cfg_.gamma * v;
            kids.emplace_back(std::move(child), t.reward);
        } else {
            std::uniform_int_distribution<std::size_t> pick(0, kids.size() - 1);
            auto& e = kids[pick(rng)];
            q = e.second + cfg_.gamma * simulate(*e.first, rng, depth + 1);
        }
        node.n[ua] += 1;
        node.q[ua] += (q - node.q[ua]) / node.n[ua];
        return q;
    }

    SearchConfig cfg_;
    SimParams sim_;
    std::unique_ptr<UctNode> root_;
};

inline SearchResult standard_mcts_search(const WorldState& s0, int n, const SearchConfig& cfg, Rng& rng,
                                         const SimParams& sim = {}) {
    StandardTreeSearch search(cfg, sim);
    return search.run(s0, n, rng);
}

inline Action standard_mcts_action(const WorldState& s0, int n, const SearchConfig& cfg, Rng& rng, const SimParams& sim = {}) {
    return standard_mcts_search(s0, n, cfg, rng, sim).action;
}

}  // namespace tacdec
