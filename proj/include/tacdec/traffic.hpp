#pragma once

// Highway traffic model: IDM car following, MOBIL lane changes, point-mass
// kinematics and randomized episode generation.
//
// Positions are front-bumper positions; the gap between a follower f and its
// leader l is x_l - length_l - x_f. Lanes are 0..3 with lane 0 rightmost and
// lane centers at integer y.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <vector>

#include "params.hpp"
#include "rng.hpp"

namespace tacdec {

struct PhysicalState {
    double x = 0.0;
    double y = 0.0;
    double v_x = 0.0;
    double v_y = 0.0;

    bool operator==(const PhysicalState&) const = default;
};

struct Vehicle {
    int id = 0;
    PhysicalState phys;
    DriverParams driver;
    double length = kCarLength;

    bool operator==(const Vehicle&) const = default;
};

struct WorldState {
    bool s_term = false;
    Vehicle ego;
    std::vector<Vehicle> others;
    int step_count = 0;
    Case road_case = Case::Continuous;

    int vehicle_count() const { return 1 + static_cast<int>(others.size()); }
    // Index 0 is the ego, i > 0 is others[i - 1].
    const Vehicle& at(int i) const { return i == 0 ? ego : others[static_cast<std::size_t>(i - 1)]; }
    Vehicle& at(int i) { return i == 0 ? ego : others[static_cast<std::size_t>(i - 1)]; }

    bool operator==(const WorldState&) const = default;
};

enum class LaneChange { Stay, Left, Right };

// ---------------------------------------------------------------------------
// Lane geometry

inline constexpr double kLaneEps = 1e-9;

inline bool is_mid_change(const PhysicalState& s) {
    return s.v_y != 0.0 || std::abs(s.y - std::round(s.y)) > kLaneEps;
}

inline int current_lane(const PhysicalState& s) { return static_cast<int>(std::lround(s.y)); }

// Lane the vehicle is moving towards; its current lane when not moving laterally.
inline int target_lane(const PhysicalState& s) {
    if (s.v_y > 0.0) return static_cast<int>(std::floor(s.y + kLaneEps)) + 1;
    if (s.v_y < 0.0) return static_cast<int>(std::ceil(s.y - kLaneEps)) - 1;
    return current_lane(s);
}

inline std::uint8_t lane_bit(int lane) {
    return (lane >= 0 && lane < kNumLanes) ? static_cast<std::uint8_t>(1u << lane) : 0;
}

// Lanes a vehicle blocks for gap computations: both lanes it straddles, plus
// the lane it is moving into.
inline std::uint8_t occupied_lanes(const PhysicalState& s) {
    std::uint8_t m = lane_bit(static_cast<int>(std::floor(s.y + kLaneEps)));
    m |= lane_bit(static_cast<int>(std::ceil(s.y - kLaneEps)));
    if (s.v_y != 0.0) m |= lane_bit(target_lane(s));
    return m;
}

// Lanes physically covered (used for collision detection).
inline std::uint8_t physical_lanes(const PhysicalState& s) {
    return lane_bit(static_cast<int>(std::floor(s.y + kLaneEps))) |
           lane_bit(static_cast<int>(std::ceil(s.y - kLaneEps)));
}

// ---------------------------------------------------------------------------
// IDM

inline double idm_desired_gap(double v_x, double dv, const DriverParams& p) {
    return p.d0 + v_x * p.T_set + v_x * dv / (2.0 * std::sqrt(p.a * p.b));
}

inline double idm_acceleration(double v_x, double d, double dv, const DriverParams& p, double b_max = 8.0) {
    if (!std::isfinite(v_x) || !std::isfinite(d) || !std::isfinite(dv))
        throw std::invalid_argument("idm_acceleration: non-finite input");
    if (d <= 0.0) throw std::invalid_argument("idm_acceleration: gap must be positive");
    const double d_star = idm_desired_gap(v_x, dv, p);
    const double r = v_x / p.v_set;
    const double acc = p.a * (1.0 - r * r * r * r - (d_star / d) * (d_star / d));
    return std::max(acc, -b_max);
}

inline double add_acceleration_noise(double accel, Rng& rng, const SimParams& sim) {
    return accel + (sim.sigma_vel / sim.dt) * standard_normal(rng);
}

// ---------------------------------------------------------------------------
// Kinematics

inline PhysicalState step_physics(const PhysicalState& s, double accel, const SimParams& sim) {
    if (!std::isfinite(accel) || !std::isfinite(s.x) || !std::isfinite(s.v_x) || !std::isfinite(s.y))
        throw std::invalid_argument("step_physics: non-finite input");
    const double dt = sim.dt;
    PhysicalState n = s;
    const double v_next = s.v_x + accel * dt;
    if (v_next >= 0.0) {
        n.x = s.x + s.v_x * dt + 0.5 * accel * dt * dt;
        n.v_x = v_next;
    } else {
        // Comes to rest within the step; no reversing.
        n.x = s.x - s.v_x * s.v_x / (2.0 * accel);
        n.v_x = 0.0;
    }

    if (s.v_y != 0.0) {
        const int target = target_lane(s);
        n.y = s.y + s.v_y * dt;
        const double hi = static_cast<double>(kNumLanes - 1);
        if (std::abs(n.y - target) <= sim.v_y_lc * dt / 2.0 || n.y <= 0.0 || n.y >= hi) {
            n.y = std::clamp(static_cast<double>(target), 0.0, hi);
            n.v_y = 0.0;
        }
    }
    return n;
}

// ---------------------------------------------------------------------------
// Neighbour queries over a frozen snapshot

class Scene {
public:
    explicit Scene(const WorldState& w) : w_(&w), masks_(static_cast<std::size_t>(w.vehicle_count())) {
        for (int i = 0; i < w.vehicle_count(); ++i) masks_[static_cast<std::size_t>(i)] = occupied_lanes(w.at(i).phys);
    }

    const WorldState& world() const { return *w_; }
    int size() const { return static_cast<int>(masks_.size()); }
    std::uint8_t mask(int i) const { return masks_[static_cast<std::size_t>(i)]; }
    void set_mask(int i, std::uint8_t m) { masks_[static_cast<std::size_t>(i)] = m; }

    // Nearest vehicle ahead of `subject` among those occupying any lane in
    // `lanes`; -1 if none. `exclude` is skipped.
    int leader(int subject, std::uint8_t lanes, int exclude = -1) const {
        const double xs = w_->at(subject).phys.x;
        int best = -1;
        double best_x = std::numeric_limits<double>::infinity();
        for (int j = 0; j < size(); ++j) {
            if (j == subject || j == exclude || !(mask(j) & lanes)) continue;
            const double xj = w_->at(j).phys.x;
            if ((xj > xs || (xj == xs && j > subject)) && xj < best_x) {
                best = j;
                best_x = xj;
            }
        }
        return best;
    }

    int follower(int subject, std::uint8_t lanes, int exclude = -1) const {
        const double xs = w_->at(subject).phys.x;
        int best = -1;
        double best_x = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < size(); ++j) {
            if (j == subject || j == exclude || !(mask(j) & lanes)) continue;
            const double xj = w_->at(j).phys.x;
            if ((xj < xs || (xj == xs && j < subject)) && xj > best_x) {
                best = j;
                best_x = xj;
            }
        }
        return best;
    }

    double gap(int follower_idx, int leader_idx) const {
        const Vehicle& l = w_->at(leader_idx);
        return l.phys.x - l.length - w_->at(follower_idx).phys.x;
    }

private:
    const WorldState* w_;
    std::vector<std::uint8_t> masks_;
};

// IDM acceleration of vehicle `f` (with parameters `p`) behind `leader_idx`
// (-1 = free road). A non-positive gap yields the braking limit.
inline double accel_behind(const Scene& sc, int f, int leader_idx, const DriverParams& p, const SimParams& sim) {
    const PhysicalState& fs = sc.world().at(f).phys;
    if (leader_idx < 0) return idm_acceleration(fs.v_x, sim.no_leader_gap, 0.0, p, sim.b_max);
    const double d = sc.gap(f, leader_idx);
    if (d <= 0.0) return -sim.b_max;
    const double dv = fs.v_x - sc.world().at(leader_idx).phys.v_x;
    return idm_acceleration(fs.v_x, d, dv, p, sim.b_max);
}

inline double accel_behind(const Scene& sc, int f, int leader_idx, const SimParams& sim) {
    return accel_behind(sc, f, leader_idx, sc.world().at(f).driver, sim);
}

// ---------------------------------------------------------------------------
// MOBIL

struct MobilEvaluation {
    bool safe = false;
    double incentive = -std::numeric_limits<double>::infinity();
};

inline MobilEvaluation mobil_evaluate(const Scene& sc, int s, int target, const DriverParams& sp, const SimParams& sim) {
    MobilEvaluation ev;
    if (target < 0 || target >= kNumLanes) return ev;
    const int lane = current_lane(sc.world().at(s).phys);
    const std::uint8_t cur = lane_bit(lane), tgt = lane_bit(target);

    const int old_leader = sc.leader(s, cur);
    const int old_follower = sc.follower(s, cur);
    const int new_leader = sc.leader(s, tgt);
    const int new_follower = sc.follower(s, tgt);

    if (new_leader >= 0 && sc.gap(s, new_leader) <= 0.0) return ev;
    if (new_follower >= 0 && sc.gap(new_follower, s) <= 0.0) return ev;

    double a_n = 0.0, at_n = 0.0;
    if (new_follower >= 0) {
        at_n = accel_behind(sc, new_follower, s, sim);
        if (!(at_n > -sp.b_safe)) return ev;
        a_n = accel_behind(sc, new_follower, sc.leader(new_follower, sc.mask(new_follower), s), sim);
    }
    ev.safe = true;

    const double a_e = accel_behind(sc, s, old_leader, sp, sim);
    const double at_e = accel_behind(sc, s, new_leader, sp, sim);
    double a_o = 0.0, at_o = 0.0;
    if (old_follower >= 0) {
        a_o = accel_behind(sc, old_follower, s, sim);
        at_o = accel_behind(sc, old_follower, sc.leader(old_follower, sc.mask(old_follower), s), sim);
    }
    ev.incentive = at_e - a_e + sp.p * ((at_n - a_n) + (at_o - a_o));
    return ev;
}

// Lane-change decision for vehicle `s` (not mid-change). `params` overrides
// the vehicle's own driver parameters when given.
inline LaneChange mobil_decide(const Scene& sc, int s, const SimParams& sim, const DriverParams* params = nullptr) {
    const Vehicle& v = sc.world().at(s);
    const DriverParams& sp = params ? *params : v.driver;
    const int lane = current_lane(v.phys);
    const MobilEvaluation left = mobil_evaluate(sc, s, lane + 1, sp, sim);
    const MobilEvaluation right = mobil_evaluate(sc, s, lane - 1, sp, sim);
    const bool ok_left = left.safe && left.incentive > sp.a_th;
    const bool ok_right = right.safe && right.incentive > sp.a_th;
    if (ok_left && ok_right) return left.incentive > right.incentive ? LaneChange::Left : LaneChange::Right;
    if (ok_left) return LaneChange::Left;
    if (ok_right) return LaneChange::Right;
    return LaneChange::Stay;
}

inline LaneChange mobil_decide(const WorldState& w, int s, const SimParams& sim, const DriverParams* params = nullptr) {
    return mobil_decide(Scene(w), s, sim, params);
}

// ---------------------------------------------------------------------------
// World stepping

struct StepOptions {
    bool noise = true;            // acceleration noise on surrounding vehicles
    bool surrounding_lane_changes = true;
};

// IDM accelerations for every vehicle in the scene (index 0 = ego).
inline std::vector<double> idm_accelerations(const Scene& sc, const SimParams& sim) {
    std::vector<double> acc(static_cast<std::size_t>(sc.size()));
    for (int i = 0; i < sc.size(); ++i) acc[static_cast<std::size_t>(i)] = accel_behind(sc, i, sc.leader(i, sc.mask(i)), sim);
    return acc;
}

// Advances every vehicle by one time step. The ego's lateral speed and ACC
// setpoint must already be set by the caller. Surrounding vehicles take MOBIL
// decisions from the same frozen snapshot; conflicting simultaneous merges into
// the same lane are cancelled for both vehicles.
inline void step_world(WorldState& w, Rng& rng, const SimParams& sim, const StepOptions& opt = {}) {
    const int n = w.vehicle_count();
    if (opt.surrounding_lane_changes) {
        std::vector<double> new_vy(static_cast<std::size_t>(n), 0.0);
        std::vector<int> started;
        {
            const Scene frozen(w);
            for (int i = 1; i < n; ++i) {
                const PhysicalState& ps = w.at(i).phys;
                new_vy[static_cast<std::size_t>(i)] = ps.v_y;
                if (is_mid_change(ps)) continue;
                const LaneChange lc = mobil_decide(frozen, i, sim);
                if (lc == LaneChange::Stay) continue;
                new_vy[static_cast<std::size_t>(i)] = lc == LaneChange::Left ? sim.v_y_lc : -sim.v_y_lc;
                started.push_back(i);
            }
        }
        std::vector<bool> cancel(static_cast<std::size_t>(n), false);
        for (std::size_t a = 0; a < started.size(); ++a) {
            for (std::size_t b = a + 1; b < started.size(); ++b) {
                const int i = started[a], j = started[b];
                PhysicalState pi = w.at(i).phys, pj = w.at(j).phys;
                pi.v_y = new_vy[static_cast<std::size_t>(i)];
                pj.v_y = new_vy[static_cast<std::size_t>(j)];
                if (target_lane(pi) != target_lane(pj)) continue;
                const int lead = pi.x >= pj.x ? i : j;
                const int foll = lead == i ? j : i;
                const Vehicle& L = w.at(lead);
                const Vehicle& F = w.at(foll);
                const double gap = L.phys.x - L.length - F.phys.x;
                bool conflict = gap <= 0.0;
                if (!conflict) {
                    const double acc = idm_acceleration(F.phys.v_x, gap, F.phys.v_x - L.phys.v_x, F.driver, sim.b_max);
                    conflict = !(acc > -F.driver.b_safe);
                }
                if (conflict) cancel[static_cast<std::size_t>(i)] = cancel[static_cast<std::size_t>(j)] = true;
            }
        }
        for (int i = 1; i < n; ++i) {
            if (!is_mid_change(w.at(i).phys) && cancel[static_cast<std::size_t>(i)]) continue;
            w.at(i).phys.v_y = new_vy[static_cast<std::size_t>(i)];
        }
    }

    std::vector<double> acc;
    {
        const Scene sc(w);
        acc = idm_accelerations(sc, sim);
    }
    for (int i = 1; i < n; ++i) {
        double& a = acc[static_cast<std::size_t>(i)];
        if (opt.noise) a = add_acceleration_noise(a, rng, sim);
        a = std::max(a, -sim.b_max);
    }
    for (int i = 0; i < n; ++i) w.at(i).phys = step_physics(w.at(i).phys, acc[static_cast<std::size_t>(i)], sim);
    ++w.step_count;
}

// True if any two vehicles sharing a lane overlap longitudinally.
inline bool has_collision(const WorldState& w) {
    const int n = w.vehicle_count();
    for (int i = 0; i < n; ++i) {
        const Vehicle& a = w.at(i);
        const std::uint8_t ma = physical_lanes(a.phys);
        for (int j = i + 1; j < n; ++j) {
            const Vehicle& b = w.at(j);
            if (!(ma & physical_lanes(b.phys))) continue;
            const Vehicle& lead = a.phys.x >= b.phys.x ? a : b;
            const Vehicle& foll = a.phys.x >= b.phys.x ? b : a;
            if (lead.phys.x - lead.length - foll.phys.x <= 0.0) return true;
        }
    }
    return false;
}

// ---------------------------------------------------------------------------
// Driver population

inline double standard_normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

// Maps a correlated standard-normal vector onto driver parameters: each
// marginal goes through the normal CDF and then linearly from the timid
// value (u = 0) to the aggressive value (u = 1).
inline DriverParams params_from_copula(const std::array<double, DriverParams::kSize>& z, const DriverPopulation& pop = {}) {
    DriverParams out;
    for (std::size_t i = 0; i < DriverParams::kSize; ++i) {
        const double u = standard_normal_cdf(z[i]);
        out[i] = pop.timid[i] + u * (pop.aggressive[i] - pop.timid[i]);
    }
    return out;
}

inline DriverParams sample_driver_params(Rng& rng, double rho = 0.75, const DriverPopulation& pop = {}) {
    // Equicorrelated Gaussian: z_i = sqrt(rho) g + sqrt(1 - rho) e_i.
    const double common = standard_normal(rng);
    std::array<double, DriverParams::kSize> z{};
    for (auto& zi : z) zi = std::sqrt(rho) * common + std::sqrt(1.0 - rho) * standard_normal(rng);
    return params_from_copula(z, pop);
}

inline DriverParams clamp_to_population(DriverParams p, const DriverPopulation& pop = {}) {
    for (std::size_t i = 0; i < DriverParams::kSize; ++i) p[i] = std::clamp(p[i], pop.lower(i), pop.upper(i));
    return p;
}

// ---------------------------------------------------------------------------
// Episode generation

namespace detail {

// Smallest longitudinal distance from x to any vehicle occupying `lane`.
inline double lane_clearance(const WorldState& w, int lane, double x) {
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < w.vehicle_count(); ++i) {
        const Vehicle& v = w.at(i);
        if (!(occupied_lanes(v.phys) & lane_bit(lane))) continue;
        best = std::min(best, std::abs(v.phys.x - x));
    }
    return best;
}

// Inserts `cand` if neither it nor its new follower would start inside its
// IDM desired gap. Returns false when skipped.
inline bool try_insert(WorldState& w, const Vehicle& cand) {
    WorldState trial = w;
    trial.others.push_back(cand);
    const Scene sc(trial);
    const int idx = trial.vehicle_count() - 1;
    const std::uint8_t lanes = sc.mask(idx);
    const int lead = sc.leader(idx, lanes);
    if (lead >= 0) {
        const double gap = sc.gap(idx, lead);
        const double dv = cand.phys.v_x - trial.at(lead).phys.v_x;
        if (gap <= 0.0 || idm_desired_gap(cand.phys.v_x, dv, cand.driver) > gap) return false;
    }
    const int foll = sc.follower(idx, lanes);
    if (foll >= 0) {
        const Vehicle& f = trial.at(foll);
        const double gap = sc.gap(foll, idx);
        if (gap <= 0.0 || idm_desired_gap(f.phys.v_x, f.phys.v_x - cand.phys.v_x, f.driver) > gap) return false;
    }
    w = std::move(trial);
    return true;
}

}  // namespace detail

inline WorldState generate_initial_state(Rng& rng, Case road_case, const SimParams& sim = {}) {
    WorldState w;
    w.road_case = road_case;
    w.ego.id = 0;
    w.ego.length = kEgoLength;
    w.ego.driver = sim.drivers.normal;
    w.ego.phys.v_x = sim.v_init;
    if (road_case == Case::Exit) {
        w.ego.phys.y = kNumLanes - 1;
    } else {
        std::uniform_int_distribution<int> lane(0, kNumLanes - 1);
        w.ego.phys.y = lane(rng);
    }

    int next_id = 1;
    const StepOptions opt{};
    for (int step = 0; step < sim.n_init; ++step) {
        const DriverParams cand_params = sample_driver_params(rng, sim.copula_rho, sim.drivers);
        if (static_cast<int>(w.others.size()) < sim.n_max) {
            const bool faster = cand_params.v_set > w.ego.phys.v_x;
            const double x = w.ego.phys.x + (faster ? -sim.insert_offset : sim.insert_offset);
            std::array<double, kNumLanes> clearance{};
            double best = -1.0;
            for (int l = 0; l < kNumLanes; ++l) {
                clearance[static_cast<std::size_t>(l)] = detail::lane_clearance(w, l, x);
                best = std::max(best, clearance[static_cast<std::size_t>(l)]);
            }
            std::vector<int> ties;
            for (int l = 0; l < kNumLanes; ++l)
                if (clearance[static_cast<std::size_t>(l)] == best) ties.push_back(l);
            std::uniform_int_distribution<std::size_t> pick(0, ties.size() - 1);
            Vehicle cand;
            cand.id = next_id;
            cand.driver = cand_params;
            cand.length = kCarLength;
            cand.phys = {x, static_cast<double>(ties[pick(rng)]), cand_params.v_set, 0.0};
            if (detail::try_insert(w, cand)) ++next_id;
        }
        step_world(w, rng, sim, opt);
    }

    // Re-centre on the ego so that the exit lies x_exit ahead.
    const double shift = w.ego.phys.x;
    w.ego.phys.x = 0.0;
    for (auto& v : w.others) v.phys.x -= shift;
    w.ego.driver = sim.drivers.normal;
    w.step_count = 0;
    w.s_term = false;
    return w;
}

}  // namespace tacdec
