#pragma once

// Neural-network guided Monte Carlo tree search with progressive widening over
// the generative model.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <ostream>
#include <random>
#include <vector>

#include "network.hpp"
#include "params.hpp"
#include "pomdp.hpp"
#include "rng.hpp"

namespace tacdec {

using VisitCounts = std::array<int, kNumActions>;

// Prior-weighted upper confidence bound with normalized Q.
inline double ucb_score(double q, int n_sa, int n_s, double prior, const SearchConfig& cfg) {
    return q / cfg.q_max() + cfg.c_puct * prior * std::sqrt(static_cast<double>(n_s) + 1.0) / (n_sa + 1.0);
}

inline double widening_limit(int n_sa, const SearchConfig& cfg) {
    return cfg.k * std::pow(static_cast<double>(n_sa), cfg.alpha);
}

// pi(a) proportional to N(a)^(1/tau).
inline Policy visit_policy(const VisitCounts& counts, double tau) {
    Policy pi{};
    double total = 0.0;
    for (int a = 0; a < kNumActions; ++a) {
        const auto ua = static_cast<std::size_t>(a);
        pi[ua] = counts[ua] > 0 ? std::pow(static_cast<double>(counts[ua]), 1.0 / tau) : 0.0;
        total += pi[ua];
    }
    if (!(total > 0.0)) throw std::invalid_argument("visit_policy: no visits");
    for (auto& p : pi) p /= total;
    return pi;
}

// Most visited action, lowest index on ties.
inline int greedy_action(const VisitCounts& counts) {
    return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

inline int sample_action(const Policy& pi, Rng& rng) {
    std::discrete_distribution<int> d(pi.begin(), pi.end());
    return d(rng);
}

// Restricts priors to available actions and renormalizes. Falls back to
// uniform over available actions if the network puts no mass there.
inline Policy mask_priors(const Policy& p, const ActionMask& m) {
    Policy out{};
    double tot = 0.0;
    for (int a = 0; a < kNumActions; ++a) {
        const auto ua = static_cast<std::size_t>(a);
        out[ua] = m[ua] ? p[ua] : 0.0;
        tot += out[ua];
    }
    if (tot > 0.0) {
        for (auto& v : out) v /= tot;
    } else {
        const double u = 1.0 / count(m);
        for (int a = 0; a < kNumActions; ++a) out[static_cast<std::size_t>(a)] = m[static_cast<std::size_t>(a)] ? u : 0.0;
    }
    return out;
}

// (1 - eps) P + eps eta, eta ~ Dir(beta) over the available actions.
inline Policy add_root_noise(const Policy& p, const ActionMask& m, Rng& rng, const SearchConfig& cfg) {
    std::gamma_distribution<double> g(cfg.beta, 1.0);
    Policy eta{};
    double tot = 0.0;
    for (int a = 0; a < kNumActions; ++a) {
        const auto ua = static_cast<std::size_t>(a);
        if (!m[ua]) continue;
        eta[ua] = g(rng);
        tot += eta[ua];
    }
    Policy out{};
    for (int a = 0; a < kNumActions; ++a) {
        const auto ua = static_cast<std::size_t>(a);
        const double e = tot > 0.0 ? eta[ua] / tot : 0.0;
        out[ua] = m[ua] ? (1.0 - cfg.epsilon) * p[ua] + cfg.epsilon * e : 0.0;
    }
    return out;
}

struct StateNode;

struct ChildEdge {
    std::unique_ptr<StateNode> node;
    double reward = 0.0;
};

struct StateNode {
    WorldState state;
    bool terminal = false;
    ActionMask available{};
    Policy prior{};
    double value = 0.0;
    VisitCounts n{};
    std::array<double, kNumActions> q{};
    std::array<std::vector<ChildEdge>, kNumActions> children;

    int total_visits() const {
        int s = 0;
        for (int v : n) s += v;
        return s;
    }
};

struct SearchResult {
    Action action = Action::Idle;
    Policy pi{};
    VisitCounts visits{};
    double root_value = 0.0;
    std::array<double, kNumActions> q{};
};

class NeuralTreeSearch {
public:
    NeuralTreeSearch(const PolicyValueNet& net, const SearchConfig& cfg, const SimParams& sim)
        : net_(net), cfg_(cfg), sim_(sim) {}

    // Optional per-simulation trace: "<iteration> <action path> <q>".
    void set_trace(std::ostream* os) { trace_ = os; }

    std::unique_ptr<StateNode> make_node(const WorldState& s) const {
        auto node = std::make_unique<StateNode>();
        node->state = s;
        node->terminal = s.s_term;
        if (node->terminal) return node;
        node->available = available_actions(s, sim_);
        const NetworkOutput out = net_.forward(encode_state(s, sim_));
        node->prior = mask_priors(out.p, node->available);
        node->value = out.value;
        node->q.fill(out.value);
        return node;
    }

    double simulate(StateNode& node, Rng& rng, int depth = 0) {
        if (node.terminal) return 0.0;
        if (depth >= cfg_.max_depth) return node.value;
        const int a = select(node);
        const auto ua = static_cast<std::size_t>(a);
        if (trace_) path_.push_back(a);
        auto& kids = node.children[ua];
        double q;
        if (static_cast<double>(kids.size()) <= widening_limit(node.n[ua], cfg_)) {
            Transition t = transition(node.state, action_from_index(a), rng, sim_);
            ChildEdge edge{make_node(t.next), t.reward};
            q = t.reward + cfg_.gamma * (edge.node->terminal ? 0.0 : edge.node->value);
            kids.push_back(std::move(edge));
        } else {
            std::uniform_int_distribution<std::size_t> pick(0, kids.size() - 1);
            ChildEdge& e = kids[pick(rng)];
            q = e.reward + cfg_.gamma * simulate(*e.node, rng, depth + 1);
        }
        node.n[ua] += 1;
        node.q[ua] += (q - node.q[ua]) / node.n[ua];
        return q;
    }

    SearchResult run(const WorldState& root_state, int iterations, Rng& rng) {
        if (root_state.s_term) throw PreconditionError("select_action: root is terminal");
        root_ = make_node(root_state);
        if (cfg_.mode == SearchMode::Train) root_->prior = add_root_noise(root_->prior, root_->available, rng, cfg_);
        for (int i = 0; i < iterations; ++i) {
            path_.clear();
            const double q = simulate(*root_, rng);
            if (trace_) {
                *trace_ << i << ' ';
                for (std::size_t k = 0; k < path_.size(); ++k) *trace_ << (k ? "," : "") << path_[k] + 1;
                *trace_ << ' ' << q << '\n';
            }
        }
        SearchResult r;
        r.visits = root_->n;
        r.q = root_->q;
        r.root_value = root_->value;
        r.pi = visit_policy(r.visits, cfg_.tau);
        const int a = cfg_.mode == SearchMode::Train ? sample_action(r.pi, rng) : greedy_action(r.visits);
        r.action = action_from_index(a);
        return r;
    }

    const StateNode* root() const { return root_.get(); }

private:
    int select(const StateNode& node) const {
        const int n_s = node.total_visits();
        int best = -1;
        double best_score = -std::numeric_limits<double>::infinity();
        for (int a = 0; a < kNumActions; ++a) {
            const auto ua = static_cast<std::size_t>(a);
            if (!node.available[ua]) continue;
            const double s = ucb_score(node.q[ua], node.n[ua], n_s, node.prior[ua], cfg_);
            if (s > best_score) {
                best_score = s;
                best = a;
            }
        }
        return best;
    }

    const PolicyValueNet& net_;
    SearchConfig cfg_;
    SimParams sim_;
    std::ostream* trace_ = nullptr;
    std::vector<int> path_;
    std::unique_ptr<StateNode> root_;
};

inline SearchResult select_action(const WorldState& s0, int n, const PolicyValueNet& net, const SearchConfig& cfg, Rng& rng,
                                  const SimParams& sim = {}) {
    NeuralTreeSearch search(net, cfg, sim);
    return search.run(s0, n, rng);
}

}  // namespace tacdec
