#pragma once

#include <algorithm>
#include <array>
#include <cstddef>

namespace tacdec {

enum class Case { Continuous, Exit };

inline constexpr int kNumLanes = 4;
inline constexpr int kNumActions = 5;
inline constexpr int kMaxVehicles = 20;
inline constexpr double kEgoLength = 12.0;
inline constexpr double kCarLength = 4.8;

// Vehicle driver model parameters (IDM longitudinal, MOBIL lateral).
struct DriverParams {
    double v_set = 25.0;   // desired speed, m/s
    double T_set = 1.5;    // desired time gap, s
    double d0 = 2.0;       // minimum gap, m
    double a = 1.4;        // max acceleration, m/s^2
    double b = 2.0;        // desired deceleration, m/s^2
    double p = 0.05;       // politeness
    double a_th = 0.1;     // changing threshold, m/s^2
    double b_safe = 2.0;   // safe braking limit, m/s^2

    static constexpr std::size_t kSize = 8;

    std::array<double, kSize> as_array() const { return {v_set, T_set, d0, a, b, p, a_th, b_safe}; }

    static DriverParams from_array(const std::array<double, kSize>& v) {
        return {v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7]};
    }

    constexpr double& operator[](std::size_t i) {
        switch (i) {
        case 0: return v_set;
        case 1: return T_set;
        case 2: return d0;
        case 3: return a;
        case 4: return b;
        case 5: return p;
        case 6: return a_th;
        default: return b_safe;
        }
    }
    constexpr double operator[](std::size_t i) const {
        switch (i) {
        case 0: return v_set;
        case 1: return T_set;
        case 2: return d0;
        case 3: return a;
        case 4: return b;
        case 5: return p;
        case 6: return a_th;
        default: return b_safe;
        }
    }

    bool operator==(const DriverParams&) const = default;
};

namespace drivers {
inline constexpr DriverParams kNormal{25.0, 1.5, 2.0, 1.4, 2.0, 0.05, 0.1, 2.0};
inline constexpr DriverParams kTimid{19.4, 2.0, 4.0, 0.8, 1.0, 0.1, 0.2, 1.0};
inline constexpr DriverParams kAggressive{30.6, 1.0, 0.0, 2.0, 3.0, 0.0, 0.0, 3.0};

inline constexpr double lower(std::size_t i) {
    const double t = kTimid[i], g = kAggressive[i];
    return t < g ? t : g;
}
inline constexpr double upper(std::size_t i) {
    const double t = kTimid[i], g = kAggressive[i];
    return t < g ? g : t;
}
}  // namespace drivers

// The three reference driver types; surrounding vehicles are drawn between
// timid and aggressive.
struct DriverPopulation {
    DriverParams normal = drivers::kNormal;
    DriverParams timid = drivers::kTimid;
    DriverParams aggressive = drivers::kAggressive;

    double lower(std::size_t i) const { return std::min(timid[i], aggressive[i]); }
    double upper(std::size_t i) const { return std::max(timid[i], aggressive[i]); }
};

// Simulation and POMDP constants. Defaults are the published values.
struct SimParams {
    double sigma_vel = 0.5;      // velocity noise std, m/s
    double b_max = 8.0;          // physical braking limit, m/s^2
    double dt = 0.75;            // s
    double v_y_lc = 0.67;        // lanes/s
    double T_min = 0.5;
    double T_max = 2.5;
    double dT_set = 1.0;
    double dv_set = 2.0;
    double v_des = 25.0;
    double c_lc = -0.03;
    double gamma = 0.95;
    double x_sensor = 100.0;
    int n_max = kMaxVehicles;
    double x_exit = 1000.0;
    double v_init = 20.0;
    int particles = 500;
    double gamma_lane = 0.2;
    double y_max = 4.0;
    double v_x_max = 25.0;
    double v_set_min = 19.4;
    double v_set_max = 30.6;

    int episode_steps = 200;     // continuous case horizon
    int exit_step_limit = 200;   // exit case safety horizon
    int n_init = 200;            // warm-up steps
    double insert_offset = 300.0;
    double copula_rho = 0.75;
    double a_min = -2.0;         // lane-change pruning brake threshold
    double no_leader_gap = 1e6;

    double jitter_fraction = 0.1;
    double jitter_scale = 0.1;

    DriverPopulation drivers;
};

enum class SearchMode { Train, Eval };

struct SearchConfig {
    int iterations = 2000;
    double c_puct = 0.1;
    double k = 1.0;
    double alpha = 0.3;
    double tau = 1.1;
    double beta = 1.0;
    double epsilon = 0.25;
    double gamma = 0.95;
    int max_depth = 200;
    int rollout_depth = 20;
    SearchMode mode = SearchMode::Eval;

    double q_max() const { return 1.0 / (1.0 - gamma); }
};

struct TrainConfig {
    int n_start = 20000;
    int replay_size = 100000;
    int mini_batch = 32;
    double c1 = 100.0;
    double c2 = 1.0;
    double c3 = 0.0001;
    double learning_rate = 0.01;
    double momentum = 0.9;
    double grad_clip = 1.0;  // global gradient norm bound, 0 disables
    int workers = 4;
    int total_samples = 250000;
    int eval_interval = 20000;
    int checkpoint_interval = 20000;
    int eval_episodes = 100;
    unsigned long long eval_seed = 777;
};

}  // namespace tacdec
