#pragma once

// Flat key=value run configuration. Blank lines and text after '#' are
// ignored; every key maps to one parameter and unset keys keep defaults.

#include <charconv>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "params.hpp"

namespace tacdec {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct RunConfig {
    SimParams sim;
    SearchConfig search;
    TrainConfig train;
};

namespace detail {

struct ConfigKey {
    std::function<double&(RunConfig&)> real;
    std::function<int&(RunConfig&)> integer;
    std::function<unsigned long long&(RunConfig&)> seed;
};

inline const std::map<std::string, ConfigKey>& config_keys() {
    static const std::map<std::string, ConfigKey> keys = [] {
        std::map<std::string, ConfigKey> k;
        auto real = [&](const char* name, auto f) { k[name].real = f; };
        auto integer = [&](const char* name, auto f) { k[name].integer = f; };

        integer("n", [](RunConfig& c) -> int& { return c.search.iterations; });
        real("c_puct", [](RunConfig& c) -> double& { return c.search.c_puct; });
        real("k", [](RunConfig& c) -> double& { return c.search.k; });
        real("alpha", [](RunConfig& c) -> double& { return c.search.alpha; });
        real("tau", [](RunConfig& c) -> double& { return c.search.tau; });
        real("beta", [](RunConfig& c) -> double& { return c.search.beta; });
        real("epsilon", [](RunConfig& c) -> double& { return c.search.epsilon; });
        integer("max_depth", [](RunConfig& c) -> int& { return c.search.max_depth; });
        integer("rollout_depth", [](RunConfig& c) -> int& { return c.search.rollout_depth; });

        integer("n_start", [](RunConfig& c) -> int& { return c.train.n_start; });
        integer("replay_size", [](RunConfig& c) -> int& { return c.train.replay_size; });
        integer("mini_batch", [](RunConfig& c) -> int& { return c.train.mini_batch; });
        real("c1", [](RunConfig& c) -> double& { return c.train.c1; });
        real("c2", [](RunConfig& c) -> double& { return c.train.c2; });
        real("c3", [](RunConfig& c) -> double& { return c.train.c3; });
        real("learning_rate", [](RunConfig& c) -> double& { return c.train.learning_rate; });
        real("momentum", [](RunConfig& c) -> double& { return c.train.momentum; });
        real("grad_clip", [](RunConfig& c) -> double& { return c.train.grad_clip; });
        integer("workers", [](RunConfig& c) -> int& { return c.train.workers; });
        integer("total_samples", [](RunConfig& c) -> int& { return c.train.total_samples; });
        integer("eval_interval", [](RunConfig& c) -> int& { return c.train.eval_interval; });
        integer("checkpoint_interval", [](RunConfig& c) -> int& { return c.train.checkpoint_interval; });
        integer("eval_episodes", [](RunConfig& c) -> int& { return c.train.eval_episodes; });
        k["eval_seed"].seed = [](RunConfig& c) -> unsigned long long& { return c.train.eval_seed; };

        real("sigma_vel", [](RunConfig& c) -> double& { return c.sim.sigma_vel; });
        real("b_max", [](RunConfig& c) -> double& { return c.sim.b_max; });
        real("dt", [](RunConfig& c) -> double& { return c.sim.dt; });
        real("v_y_lc", [](RunConfig& c) -> double& { return c.sim.v_y_lc; });
        real("T_min", [](RunConfig& c) -> double& { return c.sim.T_min; });
        real("T_max", [](RunConfig& c) -> double& { return c.sim.T_max; });
        real("dT_set", [](RunConfig& c) -> double& { return c.sim.dT_set; });
        real("dv_set", [](RunConfig& c) -> double& { return c.sim.dv_set; });
        real("v_des", [](RunConfig& c) -> double& { return c.sim.v_des; });
        real("c_lc", [](RunConfig& c) -> double& { return c.sim.c_lc; });
        real("gamma", [](RunConfig& c) -> double& { return c.sim.gamma; });
        real("x_sensor", [](RunConfig& c) -> double& { return c.sim.x_sensor; });
        integer("n_max", [](RunConfig& c) -> int& { return c.sim.n_max; });
        real("x_exit", [](RunConfig& c) -> double& { return c.sim.x_exit; });
        real("v_init", [](RunConfig& c) -> double& { return c.sim.v_init; });
        integer("particles", [](RunConfig& c) -> int& { return c.sim.particles; });
        real("gamma_lane", [](RunConfig& c) -> double& { return c.sim.gamma_lane; });
        real("y_max", [](RunConfig& c) -> double& { return c.sim.y_max; });
        real("v_x_max", [](RunConfig& c) -> double& { return c.sim.v_x_max; });
        real("v_set_min", [](RunConfig& c) -> double& { return c.sim.v_set_min; });
        real("v_set_max", [](RunConfig& c) -> double& { return c.sim.v_set_max; });
        integer("episode_steps", [](RunConfig& c) -> int& { return c.sim.episode_steps; });
        integer("exit_step_limit", [](RunConfig& c) -> int& { return c.sim.exit_step_limit; });
        integer("n_init", [](RunConfig& c) -> int& { return c.sim.n_init; });
        real("insert_offset", [](RunConfig& c) -> double& { return c.sim.insert_offset; });
        real("copula_rho", [](RunConfig& c) -> double& { return c.sim.copula_rho; });
        real("a_min", [](RunConfig& c) -> double& { return c.sim.a_min; });

        static const char* fields[] = {"v_set", "T_set", "d0", "a", "b", "p", "a_th", "b_safe"};
        for (std::size_t i = 0; i < DriverParams::kSize; ++i) {
            const std::string f = fields[i];
            k["driver.normal." + f].real = [i](RunConfig& c) -> double& { return c.sim.drivers.normal[i]; };
            k["driver.timid." + f].real = [i](RunConfig& c) -> double& { return c.sim.drivers.timid[i]; };
            k["driver.aggressive." + f].real = [i](RunConfig& c) -> double& { return c.sim.drivers.aggressive[i]; };
        }
        return k;
    }();
    return keys;
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <class T>
bool parse_number(const std::string& s, T& out) {
    const char* end = s.data() + s.size();
    auto [p, ec] = std::from_chars(s.data(), end, out);
    return ec == std::errc() && p == end;
}

}  // namespace detail

// Applies `in` on top of `base`. Errors name the offending line.
inline RunConfig parse_config(std::istream& in, RunConfig base = {}, const std::string& source = "config") {
    const auto& keys = detail::config_keys();
    std::set<std::string> seen;
    std::string line;
    int lineno = 0;
    auto fail = [&](const std::string& msg) { throw ConfigError(source + ":" + std::to_string(lineno) + ": " + msg); };
    while (std::getline(in, line)) {
        ++lineno;
        if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) fail("expected key = value");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string val = detail::trim(line.substr(eq + 1));
        auto it = keys.find(key);
        if (it == keys.end()) fail("unknown key '" + key + "'");
        if (!seen.insert(key).second) fail("duplicate key '" + key + "'");
        if (val.empty()) fail("missing value for '" + key + "'");
        const detail::ConfigKey& k = it->second;
        if (k.real) {
            double v;
            if (!detail::parse_number(val, v)) fail("'" + val + "' is not a number");
            k.real(base) = v;
        } else if (k.integer) {
            int v;
            if (!detail::parse_number(val, v)) fail("'" + val + "' is not an integer");
            k.integer(base) = v;
        } else {
            unsigned long long v;
            if (!detail::parse_number(val, v)) fail("'" + val + "' is not an unsigned integer");
            k.seed(base) = v;
        }
    }
    base.search.gamma = base.sim.gamma;
    if (base.search.iterations < 1) throw ConfigError(source + ": n must be at least 1");
    if (base.train.mini_batch < 1 || base.train.replay_size < 1) throw ConfigError(source + ": mini_batch and replay_size must be positive");
    if (!(base.sim.gamma > 0.0 && base.sim.gamma < 1.0)) throw ConfigError(source + ": gamma must lie in (0, 1)");
    return base;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::ios_base::failure("cannot open config '" + path + "'");
    return parse_config(in, {}, path);
}

// Every key with its current value, sorted; parses back to the same config.
inline std::string dump_config(const RunConfig& cfg) {
    RunConfig c = cfg;
    std::ostringstream os;
    os.precision(17);
    for (const auto& [name, k] : detail::config_keys()) {
        os << name << " = ";
        if (k.real)
            os << k.real(c);
        else if (k.integer)
            os << k.integer(c);
        else
            os << k.seed(c);
        os << '\n';
    }
    return os.str();
}

}  // namespace tacdec
