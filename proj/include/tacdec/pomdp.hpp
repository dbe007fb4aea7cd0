#pragma once

// Decision layer on top of the traffic model: the five tactical actions and
// the ACC setpoint machine, action pruning, rewards, the generative model used
// both as environment and inside tree search, and the sensor model.

#include <array>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "params.hpp"
#include "rng.hpp"
#include "traffic.hpp"

namespace tacdec {

enum class Action : int { Idle = 0, AccDown = 1, AccUp = 2, Right = 3, Left = 4 };

inline constexpr std::array<Action, kNumActions> kAllActions{Action::Idle, Action::AccDown, Action::AccUp,
                                                            Action::Right, Action::Left};

inline int index(Action a) { return static_cast<int>(a); }
inline Action action_from_index(int i) {
    if (i < 0 || i >= kNumActions) throw std::out_of_range("action index");
    return static_cast<Action>(i);
}

inline std::string_view action_name(Action a) {
    switch (a) {
    case Action::Idle: return "idle";
    case Action::AccDown: return "acc_down";
    case Action::AccUp: return "acc_up";
    case Action::Right: return "right";
    case Action::Left: return "left";
    }
    return "?";
}

using ActionMask = std::array<bool, kNumActions>;

inline int count(const ActionMask& m) {
    int c = 0;
    for (bool b : m) c += b ? 1 : 0;
    return c;
}

struct EgoControlState {
    double v_set = 25.0;
    double T_set = 1.5;
    bool operator==(const EgoControlState&) const = default;
};

inline EgoControlState control_of(const WorldState& s) { return {s.ego.driver.v_set, s.ego.driver.T_set}; }

class PreconditionError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// ---------------------------------------------------------------------------
// Pruning

namespace detail {

// Scene restricted to what the ego can sense; vehicles beyond the sensor
// range are made invisible.
inline Scene sensed_scene(const WorldState& s, const SimParams& sim) {
    Scene sc(s);
    for (int i = 1; i < s.vehicle_count(); ++i)
        if (std::abs(s.at(i).phys.x - s.ego.phys.x) > sim.x_sensor) sc.set_mask(i, 0);
    return sc;
}

inline double time_gap_to(const Scene& sc, int leader, const SimParams& sim) {
    if (leader < 0) return sim.T_max;
    const double v = sc.world().ego.phys.v_x;
    const double gap = sc.gap(0, leader);
    if (v <= 0.0) return sim.T_max;
    return std::clamp(gap / v, sim.T_min, sim.T_max);
}

// Time gap the ego holds while spanning its lane and `target`: the nearer
// leader in either lane counts.
inline double change_time_gap(const WorldState& s, int target, const SimParams& sim) {
    Scene sc = sensed_scene(s, sim);
    const std::uint8_t both = lane_bit(current_lane(s.ego.phys)) | lane_bit(target);
    sc.set_mask(0, both);
    return time_gap_to(sc, sc.leader(0, both), sim);
}

// Smallest of the ego's and the new follower's IDM accelerations after moving
// into `target`; -inf if a gap is non-positive.
inline double lane_change_margin(const WorldState& s, int target, bool initiating, const SimParams& sim) {
    constexpr double kNeg = -std::numeric_limits<double>::infinity();
    if (target < 0 || target >= kNumLanes) return kNeg;
    Scene sc = sensed_scene(s, sim);
    sc.set_mask(0, lane_bit(target));
    const int lead = sc.leader(0, lane_bit(target));
    const int foll = sc.follower(0, lane_bit(target));
    if (lead >= 0 && sc.gap(0, lead) <= 0.0) return kNeg;
    if (foll >= 0 && sc.gap(foll, 0) <= 0.0) return kNeg;

    DriverParams ego = s.ego.driver;
    if (initiating) {
        ego.v_set = sim.v_des;
        ego.T_set = change_time_gap(s, target, sim);
    }
    double margin = accel_behind(sc, 0, lead, ego, sim);
    if (foll >= 0) margin = std::min(margin, accel_behind(sc, foll, 0, sim.drivers.normal, sim));
    return margin;
}

inline int right_target(const PhysicalState& p) { return static_cast<int>(std::ceil(p.y - kLaneEps)) - 1; }
inline int left_target(const PhysicalState& p) { return static_cast<int>(std::floor(p.y + kLaneEps)) + 1; }

}  // namespace detail

inline ActionMask available_actions(const WorldState& s, const SimParams& sim = {}) {
    ActionMask m{};
    const PhysicalState& e = s.ego.phys;
    if (is_mid_change(e)) {
        const double r = detail::lane_change_margin(s, detail::right_target(e), false, sim);
        const double l = detail::lane_change_margin(s, detail::left_target(e), false, sim);
        m[index(Action::Right)] = r >= sim.a_min;
        m[index(Action::Left)] = l >= sim.a_min;
        if (!m[index(Action::Right)] && !m[index(Action::Left)]) {
            // Never strand the ego between lanes: keep the less severe option.
            if (r >= l && std::isfinite(r))
                m[index(Action::Right)] = true;
            else if (std::isfinite(l))
                m[index(Action::Left)] = true;
            else
                m[index(Action::Right)] = true;
        }
        return m;
    }
    const EgoControlState c = control_of(s);
    m[index(Action::Idle)] = true;
    m[index(Action::AccDown)] = c.T_set < sim.T_max || c.v_set - sim.dv_set > 0.0;
    m[index(Action::AccUp)] = c.T_set > sim.T_min;
    const int lane = current_lane(e);
    m[index(Action::Right)] = lane > 0 && detail::lane_change_margin(s, lane - 1, true, sim) >= sim.a_min;
    m[index(Action::Left)] = lane < kNumLanes - 1 && detail::lane_change_margin(s, lane + 1, true, sim) >= sim.a_min;
    return m;
}

// ACC setpoint update for A2/A3; lane changes and idle leave it unchanged
// (the reset on lane-change initiation is applied by generative_step).
inline EgoControlState apply_ego_action(EgoControlState c, Action a, const SimParams& sim = {}) {
    switch (a) {
    case Action::AccUp:
        if (c.v_set < sim.v_des)
            c.v_set = std::min(sim.v_des, c.v_set + sim.dv_set);
        else
            c.T_set = std::max(sim.T_min, c.T_set - sim.dT_set);
        break;
    case Action::AccDown:
        if (c.T_set < sim.T_max)
            c.T_set = std::min(sim.T_max, c.T_set + sim.dT_set);
        else
            c.v_set -= sim.dv_set;
        break;
    default: break;
    }
    return c;
}

// ---------------------------------------------------------------------------
// Terminal conditions and reward

inline bool in_rightmost_lane(const WorldState& s) { return s.ego.phys.y == 0.0 && s.ego.phys.v_y == 0.0; }

inline bool exit_reached(const WorldState& s, const SimParams& sim) {
    return s.road_case == Case::Exit && s.ego.phys.x >= sim.x_exit;
}

// The state can no longer be stepped: either terminal, or the horizon ran out.
inline bool episode_over(const WorldState& s, const SimParams& sim = {}) {
    if (s.s_term) return true;
    const int horizon = s.road_case == Case::Continuous ? sim.episode_steps : sim.exit_step_limit;
    return s.step_count >= horizon;
}

inline bool is_terminal(const WorldState& s) { return s.s_term; }

inline bool exit_success(const WorldState& s, const SimParams& sim = {}) {
    return s.s_term && exit_reached(s, sim) && in_rightmost_lane(s);
}

inline double reward(const WorldState& s, Action a, const WorldState& next, const SimParams& sim = {}) {
    const double v = next.ego.phys.v_x;
    double r = 1.0 - std::abs(v - sim.v_des) / sim.v_des;
    if ((a == Action::Left || a == Action::Right) && !is_mid_change(s.ego.phys)) r += sim.c_lc;
    if (s.road_case == Case::Exit && next.s_term && !s.s_term && in_rightmost_lane(next))
        r += sim.gamma / (1.0 - sim.gamma);
    return r;
}

// ---------------------------------------------------------------------------
// Generative model

struct Transition {
    WorldState next;
    double reward = 0.0;
};

// Applies the action to the ego without advancing time.
inline void apply_action_to_ego(WorldState& s, Action a, const SimParams& sim) {
    Vehicle& ego = s.ego;
    const bool mid = is_mid_change(ego.phys);
    if (a == Action::Left || a == Action::Right) {
        if (!mid) {
            const int target = a == Action::Left ? current_lane(ego.phys) + 1 : current_lane(ego.phys) - 1;
            ego.driver.v_set = sim.v_des;
            ego.driver.T_set = detail::change_time_gap(s, target, sim);
        }
        ego.phys.v_y = a == Action::Left ? sim.v_y_lc : -sim.v_y_lc;
    } else {
        const EgoControlState c = apply_ego_action(control_of(s), a, sim);
        ego.driver.v_set = c.v_set;
        ego.driver.T_set = c.T_set;
        ego.phys.v_y = 0.0;
    }
}

// Transition without the availability check; callers guarantee the action
// came from available_actions(s).
inline Transition transition(const WorldState& s, Action a, Rng& rng, const SimParams& sim = {},
                             const StepOptions& opt = {}) {
    Transition t{s, 0.0};
    apply_action_to_ego(t.next, a, sim);
    step_world(t.next, rng, sim, opt);
    if (exit_reached(t.next, sim)) t.next.s_term = true;
    t.reward = reward(s, a, t.next, sim);
    return t;
}

inline Transition generative_step(const WorldState& s, Action a, Rng& rng, const SimParams& sim = {},
                                  const StepOptions& opt = {}) {
    if (s.s_term) throw PreconditionError("generative_step: state is terminal");
    if (!available_actions(s, sim)[static_cast<std::size_t>(index(a))])
        throw PreconditionError("generative_step: action " + std::string(action_name(a)) + " not available");
    return transition(s, a, rng, sim, opt);
}

// ---------------------------------------------------------------------------
// Sensor model

struct ObservedVehicle {
    int id = 0;
    PhysicalState phys;
    double length = kCarLength;
    bool operator==(const ObservedVehicle&) const = default;
};

struct Observation {
    bool s_term = false;
    int step_count = 0;
    Case road_case = Case::Continuous;
    Vehicle ego;  // physical and driver state of the ego
    std::vector<ObservedVehicle> vehicles;
    bool operator==(const Observation&) const = default;
};

inline Observation observe(const WorldState& s, const SimParams& sim = {}) {
    Observation o;
    o.s_term = s.s_term;
    o.step_count = s.step_count;
    o.road_case = s.road_case;
    o.ego = s.ego;
    for (const Vehicle& v : s.others)
        if (std::abs(v.phys.x - s.ego.phys.x) <= sim.x_sensor) o.vehicles.push_back({v.id, v.phys, v.length});
    return o;
}

// Planner state assembled from an observation plus hypothesised driver
// parameters for each observed vehicle (same order as o.vehicles).
inline WorldState assemble_state(const Observation& o, const std::vector<DriverParams>& params) {
    if (params.size() != o.vehicles.size()) throw std::invalid_argument("assemble_state: parameter count mismatch");
    WorldState w;
    w.s_term = o.s_term;
    w.step_count = o.step_count;
    w.road_case = o.road_case;
    w.ego = o.ego;
    w.others.reserve(o.vehicles.size());
    for (std::size_t i = 0; i < o.vehicles.size(); ++i)
        w.others.push_back({o.vehicles[i].id, o.vehicles[i].phys, params[i], o.vehicles[i].length});
    return w;
}

}  // namespace tacdec
