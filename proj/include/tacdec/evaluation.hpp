#pragma once

// Evaluation campaigns over frozen scenario sets, metric aggregation and the
// value-map and iteration sweeps.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "baselines.hpp"
#include "belief.hpp"
#include "network.hpp"
#include "params.hpp"
#include "pomdp.hpp"
#include "rng.hpp"
#include "scenario_io.hpp"
#include "search.hpp"
#include "training.hpp"

namespace tacdec {

enum class AgentKind { MctsNN, Mcts, IdmMobil };

inline std::string agent_name(AgentKind k) {
    switch (k) {
    case AgentKind::MctsNN: return "mctsnn";
    case AgentKind::Mcts: return "mcts";
    case AgentKind::IdmMobil: return "idm-mobil";
    }
    return "?";
}

inline AgentKind parse_agent(const std::string& s) {
    if (s == "mctsnn") return AgentKind::MctsNN;
    if (s == "mcts") return AgentKind::Mcts;
    if (s == "idm-mobil") return AgentKind::IdmMobil;
    throw std::invalid_argument("unknown agent '" + s + "'");
}

struct AgentSpec {
    AgentKind kind = AgentKind::IdmMobil;
    const PolicyValueNet* net = nullptr;  // required for MctsNN
    SearchConfig cfg{};
    int iterations = 2000;
    std::optional<Case> road_case;        // rejects scenarios of the other case when set
};

struct EpisodeRow {
    int episode = 0;
    std::string agent;
    double avg_reward = 0.0;     // per step
    double mean_speed = 0.0;     // m/s
    int lane_changes = 0;
    bool success = false;        // exit reached in the rightmost lane
    double time_to_exit = std::numeric_limits<double>::quiet_NaN();
    int steps = 0;
};

struct EvalReport {
    std::string agent;
    std::vector<EpisodeRow> rows;

    double mean_reward = 0.0;
    double sem_reward = 0.0;
    double mean_speed = 0.0;
    double sem_speed = 0.0;
    double success_rate = 0.0;
};

inline double mean_of(const std::vector<double>& v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

// Sample standard deviation over sqrt(n).
inline double sem_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
}

inline void aggregate(EvalReport& r) {
    std::vector<double> rew, spd;
    int ok = 0;
    for (const auto& row : r.rows) {
        rew.push_back(row.avg_reward);
        spd.push_back(row.mean_speed);
        ok += row.success ? 1 : 0;
    }
    r.mean_reward = mean_of(rew);
    r.sem_reward = sem_of(rew);
    r.mean_speed = mean_of(spd);
    r.sem_speed = sem_of(spd);
    r.success_rate = r.rows.empty() ? 0.0 : static_cast<double>(ok) / static_cast<double>(r.rows.size());
}

// ---------------------------------------------------------------------------
// Agents

// Chooses an action for the true state `s`. Search agents plan from the
// belief's most likely state; the rule-based agents see the observation with
// normal parameters for everyone.
class AgentRunner {
public:
    AgentRunner(const AgentSpec& spec, const SimParams& sim) : spec_(spec), sim_(sim) {
        spec_.cfg.mode = SearchMode::Eval;
        if (spec_.kind == AgentKind::MctsNN && !spec_.net) throw std::invalid_argument("mctsnn agent needs a network");
    }

    void reset(const Observation& o, Rng& rng) {
        if (spec_.kind != AgentKind::IdmMobil) belief_ = init_belief(o, rng, sim_);
    }

    Action act(const Observation& o, Rng& rng) {
        if (spec_.kind == AgentKind::IdmMobil) {
            const WorldState w = assemble_state(o, std::vector<DriverParams>(o.vehicles.size(), sim_.drivers.normal));
            return o.road_case == Case::Exit ? exit_baseline_action(w, sim_) : idm_mobil_action(w, sim_);
        }
        const WorldState root = most_likely_state(belief_, o, sim_);
        if (spec_.kind == AgentKind::Mcts) return standard_mcts_search(root, spec_.iterations, spec_.cfg, rng, sim_).action;
        return select_action(root, spec_.iterations, *spec_.net, spec_.cfg, rng, sim_).action;
    }

    void observe_step(Action a, const Observation& o_prev, const Observation& o_next, Rng& rng) {
        if (spec_.kind != AgentKind::IdmMobil && !o_next.s_term) belief_ = update_belief(belief_, a, o_prev, o_next, rng, sim_);
    }

private:
    AgentSpec spec_;
    SimParams sim_;
    Belief belief_;
};

inline constexpr const char* kTraceHeader = "step,x,y,v_x,v_y,lane,v_set,T_set,action,reward";

// Plays one episode, or at most `max_steps` steps when positive. `trace`
// receives one CSV row per step when given.
inline EpisodeRow run_episode(const WorldState& s0, const AgentSpec& spec, Rng& env_rng, Rng& agent_rng,
                              const SimParams& sim = {}, std::ostream* trace = nullptr, WorldState* final_state = nullptr,
                              int max_steps = 0) {
    if (spec.road_case && *spec.road_case != s0.road_case)
        throw ScenarioError("agent configured for " + case_name(*spec.road_case) + " case but scenario is " + case_name(s0.road_case));
    AgentRunner agent(spec, sim);
    WorldState s = s0;
    Observation o = observe(s, sim);
    agent.reset(o, agent_rng);
    EpisodeRow row;
    row.agent = agent_name(spec.kind);
    double rsum = 0.0, vsum = 0.0;
    if (trace) *trace << kTraceHeader << '\n';
    while (!episode_over(s, sim) && (max_steps <= 0 || row.steps < max_steps)) {
        const Action a = agent.act(o, agent_rng);
        const Transition t = generative_step(s, a, env_rng, sim);
        if (has_collision(t.next)) throw InvariantViolation("collision at step " + std::to_string(s.step_count));
        if ((a == Action::Left || a == Action::Right) && !is_mid_change(s.ego.phys)) ++row.lane_changes;
        rsum += t.reward;
        vsum += t.next.ego.phys.v_x;
        if (trace) {
            const auto& e = t.next.ego;
            *trace << t.next.step_count << ',' << format_double(e.phys.x) << ',' << format_double(e.phys.y) << ','
                   << format_double(e.phys.v_x) << ',' << format_double(e.phys.v_y) << ',' << current_lane(e.phys) << ','
                   << format_double(e.driver.v_set) << ',' << format_double(e.driver.T_set) << ',' << action_name(a) << ','
                   << format_double(t.reward) << '\n';
        }
        const Observation o_next = observe(t.next, sim);
        agent.observe_step(a, o, o_next, agent_rng);
        o = o_next;
        s = t.next;
        ++row.steps;
    }
    if (row.steps > 0) {
        row.avg_reward = rsum / row.steps;
        row.mean_speed = vsum / row.steps;
    }
    row.success = exit_success(s, sim);
    if (row.success) row.time_to_exit = row.steps * sim.dt;
    if (final_state) *final_state = s;
    return row;
}

// Frozen evaluation set: initial states drawn from a fixed seed.
inline std::vector<WorldState> make_scenario_set(Case c, int count, std::uint64_t seed, const SimParams& sim = {}) {
    std::vector<WorldState> out;
    for (int i = 0; i < count; ++i) {
        Rng rng = make_rng(seed, {static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(i)});
        out.push_back(generate_initial_state(rng, c, sim));
    }
    return out;
}

// Runs every scenario; episode i uses streams derived from (seed, i), so the
// report does not depend on the worker count.
inline EvalReport run_evaluation(const AgentSpec& spec, const std::vector<WorldState>& scenarios, std::uint64_t seed,
                                 const SimParams& sim = {}, int workers = 1) {
    EvalReport rep;
    rep.agent = agent_name(spec.kind);
    rep.rows.resize(scenarios.size());
    std::vector<std::exception_ptr> errors(scenarios.size());
    std::atomic<std::size_t> next{0};
    auto job = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < scenarios.size();) {
            try {
                Rng env = make_rng(seed, {0xe7, i});
                Rng agent = make_rng(seed, {0xa7, i});
                rep.rows[i] = run_episode(scenarios[i], spec, env, agent, sim);
                rep.rows[i].episode = static_cast<int>(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const int w = std::max(1, std::min<int>(workers, static_cast<int>(scenarios.size())));
    if (w == 1) {
        job();
    } else {
        std::vector<std::thread> pool;
        for (int k = 0; k < w; ++k) pool.emplace_back(job);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    aggregate(rep);
    return rep;
}

// Mean speed normalized by the reference agent's mean speed.
inline double speed_ratio(const EvalReport& r, const EvalReport& ref) { return r.mean_speed / ref.mean_speed; }

// Episode ids solved by every report.
inline std::set<int> jointly_solved(const std::vector<const EvalReport*>& reports) {
    std::set<int> ids;
    if (reports.empty()) return ids;
    for (const auto& row : reports.front()->rows)
        if (row.success) ids.insert(row.episode);
    for (const EvalReport* r : reports) {
        std::set<int> keep;
        for (const auto& row : r->rows)
            if (row.success && ids.count(row.episode)) keep.insert(row.episode);
        ids = std::move(keep);
    }
    return ids;
}

// Mean time to exit over `ids`, normalized by the reference agent's.
inline double time_ratio(const EvalReport& r, const EvalReport& ref, const std::set<int>& ids) {
    auto mean_time = [&](const EvalReport& e) {
        std::vector<double> t;
        for (const auto& row : e.rows)
            if (ids.count(row.episode)) t.push_back(row.time_to_exit);
        return mean_of(t);
    };
    return mean_time(r) / mean_time(ref);
}

inline constexpr const char* kEvalHeader = "episode,agent,avg_reward,mean_speed,lane_changes,success,time_to_exit,steps";

inline void write_eval_csv(std::ostream& os, const EvalReport& r) {
    os << kEvalHeader << '\n';
    for (const auto& row : r.rows)
        os << row.episode << ',' << row.agent << ',' << format_metric(row.avg_reward) << ',' << format_metric(row.mean_speed)
           << ',' << row.lane_changes << ',' << (row.success ? 1 : 0) << ',' << format_metric(row.time_to_exit) << ','
           << row.steps << '\n';
}

inline void write_eval_summary(std::ostream& os, const EvalReport& r) {
    os << "agent " << r.agent << " episodes " << r.rows.size() << " reward " << format_metric(r.mean_reward) << " +- "
       << format_metric(r.sem_reward) << " speed " << format_metric(r.mean_speed) << " +- " << format_metric(r.sem_speed)
       << " success " << format_metric(r.success_rate) << '\n';
}

// ---------------------------------------------------------------------------
// Sweeps

struct ValueMapCell {
    double x = 0.0;
    int lane = 0;
    double value = 0.0;
    Action net_action = Action::Idle;
    Action search_action = Action::Idle;
};

// Ego alone on the road at v = 25 with the ACC at (25, T_max).
inline WorldState value_map_state(double x, int lane, const SimParams& sim = {}) {
    WorldState w;
    w.road_case = Case::Exit;
    w.ego.id = 0;
    w.ego.length = kEgoLength;
    w.ego.phys = {x, static_cast<double>(lane), 25.0, 0.0};
    w.ego.driver = sim.drivers.normal;
    w.ego.driver.v_set = 25.0;
    w.ego.driver.T_set = sim.T_max;
    return w;
}

inline std::vector<ValueMapCell> value_map_sweep(const PolicyValueNet& net, const std::vector<double>& xs, const std::vector<int>& lanes,
                                                 SearchConfig cfg, int iterations, std::uint64_t seed, const SimParams& sim = {}) {
    cfg.mode = SearchMode::Eval;
    std::vector<ValueMapCell> out;
    for (int lane : lanes) {
        for (double x : xs) {
            const WorldState w = value_map_state(x, lane, sim);
            ValueMapCell c{x, lane};
            const NetworkOutput o = net.forward(encode_state(w, sim));
            c.value = o.value;
            const Policy p = mask_priors(o.p, available_actions(w, sim));
            c.net_action = action_from_index(static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin()));
            Rng rng = make_rng(seed, {static_cast<std::uint64_t>(lane), static_cast<std::uint64_t>(std::llround(x * 1000))});
            c.search_action = select_action(w, iterations, net, cfg, rng, sim).action;
            out.push_back(c);
        }
    }
    return out;
}

inline constexpr const char* kValueMapHeader = "x,lane,value,net_action,search_action";

inline void write_value_map_csv(std::ostream& os, const std::vector<ValueMapCell>& cells) {
    os << kValueMapHeader << '\n';
    for (const auto& c : cells)
        os << format_metric(c.x) << ',' << c.lane << ',' << format_metric(c.value) << ',' << index(c.net_action) + 1 << ','
           << index(c.search_action) + 1 << '\n';
}

struct SweepPoint {
    int iterations = 0;
    EvalReport report;
};

inline std::vector<SweepPoint> iteration_sweep(AgentSpec spec, const std::vector<int>& ns, const std::vector<WorldState>& scenarios,
                                               std::uint64_t seed, const SimParams& sim = {}, int workers = 1) {
    std::vector<SweepPoint> out;
    for (int n : ns) {
        spec.iterations = n;
        out.push_back({n, run_evaluation(spec, scenarios, seed, sim, workers)});
    }
    return out;
}

inline constexpr const char* kSweepHeader = "iterations,agent,avg_reward,sem_reward,mean_speed,sem_speed,success_rate";

inline void write_sweep_csv(std::ostream& os, const std::vector<SweepPoint>& pts) {
    os << kSweepHeader << '\n';
    for (const auto& p : pts)
        os << p.iterations << ',' << p.report.agent << ',' << format_metric(p.report.mean_reward) << ','
           << format_metric(p.report.sem_reward) << ',' << format_metric(p.report.mean_speed) << ','
           << format_metric(p.report.sem_speed) << ',' << format_metric(p.report.success_rate) << '\n';
}

}  // namespace tacdec
