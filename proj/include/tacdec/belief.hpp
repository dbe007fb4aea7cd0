#pragma once

// Particle filter over the hidden driver parameters of the observed
// surrounding vehicles. Each particle is a joint hypothesis for all tracked
// vehicles; weights are kept normalized.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <unordered_map>
#include <vector>

#include "params.hpp"
#include "pomdp.hpp"
#include "rng.hpp"
#include "traffic.hpp"

namespace tacdec {

struct Belief {
    std::vector<int> ids;                               // tracked vehicle ids
    std::vector<std::vector<DriverParams>> particles;   // [particle][vehicle]
    std::vector<double> weights;

    int size() const { return static_cast<int>(weights.size()); }
    int tracked() const { return static_cast<int>(ids.size()); }
};

// Un-normalized observation likelihood of one vehicle.
inline double particle_likelihood(double v_obs, double y_obs, double v_pred, double y_pred, const SimParams& sim) {
    const double dv = v_obs - v_pred;
    double w = std::exp(-(dv * dv) / (2.0 * sim.sigma_vel * sim.sigma_vel));
    if (std::abs(y_obs - y_pred) > 1e-6) w *= sim.gamma_lane;
    return w;
}

inline Belief init_belief(const Observation& o, Rng& rng, const SimParams& sim = {}) {
    Belief b;
    const int m = sim.particles;
    for (const auto& v : o.vehicles) b.ids.push_back(v.id);
    b.particles.assign(static_cast<std::size_t>(m), std::vector<DriverParams>(o.vehicles.size()));
    for (auto& p : b.particles)
        for (auto& d : p) d = sample_driver_params(rng, sim.copula_rho, sim.drivers);
    b.weights.assign(static_cast<std::size_t>(m), 1.0 / m);
    return b;
}

inline int most_likely_index(const Belief& b) {
    if (b.weights.empty()) throw std::invalid_argument("most_likely_index: empty belief");
    return static_cast<int>(std::max_element(b.weights.begin(), b.weights.end()) - b.weights.begin());
}

// Planner root: observed physical state, observed ego driver state and the
// driver parameters of the highest-weight particle (lowest index on ties).
inline WorldState most_likely_state(const Belief& b, const Observation& o, const SimParams& sim = {}) {
    const auto& best = b.particles[static_cast<std::size_t>(most_likely_index(b))];
    std::unordered_map<int, std::size_t> col;
    for (std::size_t j = 0; j < b.ids.size(); ++j) col[b.ids[j]] = j;
    std::vector<DriverParams> params;
    params.reserve(o.vehicles.size());
    for (const auto& v : o.vehicles) {
        auto it = col.find(v.id);
        params.push_back(it == col.end() ? sim.drivers.normal : best[it->second]);
    }
    return assemble_state(o, params);
}

namespace detail {

inline std::vector<std::size_t> multinomial_resample(const std::vector<double>& w, Rng& rng) {
    std::discrete_distribution<std::size_t> dist(w.begin(), w.end());
    std::vector<std::size_t> idx(w.size());
    for (auto& i : idx) i = dist(rng);
    return idx;
}

inline void jitter(std::vector<std::vector<DriverParams>>& parts, std::size_t vehicles, Rng& rng, const SimParams& sim) {
    const std::size_t m = parts.size();
    if (m < 2 || vehicles == 0) return;
    std::vector<std::array<double, DriverParams::kSize>> sd(vehicles);
    for (std::size_t j = 0; j < vehicles; ++j) {
        for (std::size_t i = 0; i < DriverParams::kSize; ++i) {
            double mean = 0.0;
            for (const auto& p : parts) mean += p[j][i];
            mean /= static_cast<double>(m);
            double var = 0.0;
            for (const auto& p : parts) var += (p[j][i] - mean) * (p[j][i] - mean);
            sd[j][i] = std::sqrt(var / static_cast<double>(m - 1));
        }
    }
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_jitter = static_cast<std::size_t>(std::lround(sim.jitter_fraction * static_cast<double>(m)));
    for (std::size_t r = 0; r < n_jitter; ++r) {
        auto& p = parts[order[r]];
        for (std::size_t j = 0; j < vehicles; ++j) {
            for (std::size_t i = 0; i < DriverParams::kSize; ++i) p[j][i] += sim.jitter_scale * sd[j][i] * standard_normal(rng);
            p[j] = clamp_to_population(p[j], sim.drivers);
        }
    }
}

}  // namespace detail

// One filter step after the ego took action `a`. `o_prev` is the observation
// the belief is conditioned on, `o_new` the one that followed.
inline Belief update_belief(const Belief& b, Action a, const Observation& o_prev, const Observation& o_new, Rng& rng,
                            const SimParams& sim = {}) {
    const std::size_t m = b.particles.size();
    const std::size_t nv = o_prev.vehicles.size();

    // Columns in o_prev order; untracked vehicles get prior draws.
    std::unordered_map<int, std::size_t> col;
    for (std::size_t j = 0; j < b.ids.size(); ++j) col[b.ids[j]] = j;

    const auto pick = detail::multinomial_resample(b.weights, rng);
    std::vector<std::vector<DriverParams>> parts(m, std::vector<DriverParams>(nv));
    for (std::size_t k = 0; k < m; ++k) {
        for (std::size_t j = 0; j < nv; ++j) {
            auto it = col.find(o_prev.vehicles[j].id);
            parts[k][j] = it == col.end() ? sample_driver_params(rng, sim.copula_rho, sim.drivers) : b.particles[pick[k]][it->second];
        }
    }
    detail::jitter(parts, nv, rng, sim);

    // Predicted physical states.
    std::unordered_map<int, std::size_t> new_col;
    for (std::size_t j = 0; j < o_new.vehicles.size(); ++j) new_col[o_new.vehicles[j].id] = j;

    std::vector<std::vector<double>> lik(nv, std::vector<double>(m, 1.0));
    std::vector<bool> in_both(nv, false);
    for (std::size_t j = 0; j < nv; ++j) in_both[j] = new_col.count(o_prev.vehicles[j].id) > 0;

    for (std::size_t k = 0; k < m; ++k) {
        WorldState w = assemble_state(o_prev, parts[k]);
        w.s_term = false;
        apply_action_to_ego(w, a, sim);
        step_world(w, rng, sim);
        for (std::size_t j = 0; j < nv; ++j) {
            if (!in_both[j]) continue;
            const PhysicalState& pred = w.others[j].phys;
            const PhysicalState& obs = o_new.vehicles[new_col[o_prev.vehicles[j].id]].phys;
            lik[j][k] = particle_likelihood(obs.v_x, obs.y, pred.v_x, pred.y, sim);
        }
    }

    // Degeneracy recovery per vehicle, then joint log-weights.
    std::vector<double> logw(m, 0.0);
    for (std::size_t j = 0; j < nv; ++j) {
        if (!in_both[j]) continue;
        const double best = *std::max_element(lik[j].begin(), lik[j].end());
        if (!(best > 0.0)) {
            for (auto& p : parts) p[j] = sample_driver_params(rng, sim.copula_rho, sim.drivers);
            continue;
        }
        for (std::size_t k = 0; k < m; ++k) logw[k] += std::log(lik[j][k]);
    }
    const double mx = *std::max_element(logw.begin(), logw.end());
    Belief out;
    out.weights.resize(m);
    double total = 0.0;
    for (std::size_t k = 0; k < m; ++k) total += out.weights[k] = std::exp(logw[k] - mx);
    for (auto& w : out.weights) w /= total;

    // Re-key on the new observation: keep survivors, add newcomers, drop the rest.
    for (const auto& v : o_new.vehicles) out.ids.push_back(v.id);
    std::unordered_map<int, std::size_t> prev_col;
    for (std::size_t j = 0; j < nv; ++j) prev_col[o_prev.vehicles[j].id] = j;
    out.particles.assign(m, std::vector<DriverParams>(o_new.vehicles.size()));
    for (std::size_t k = 0; k < m; ++k) {
        for (std::size_t j = 0; j < o_new.vehicles.size(); ++j) {
            auto it = prev_col.find(o_new.vehicles[j].id);
            out.particles[k][j] = it == prev_col.end() ? sample_driver_params(rng, sim.copula_rho, sim.drivers) : parts[k][it->second];
        }
    }
    return out;
}

}  // namespace tacdec
