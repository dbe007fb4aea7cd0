// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails. Training artifacts go to ./acceptance_artifacts.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "../unit/fixtures.hpp"
#include "tacdec/config.hpp"
#include "tacdec/evaluation.hpp"
#include "tacdec/scenario_io.hpp"
#include "tacdec/training.hpp"

using namespace tacdec;
namespace fs = std::filesystem;

namespace {

const std::string kSource = TACDEC_SOURCE_DIR;
const fs::path kArtifacts = "acceptance_artifacts";

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string rate(int k, int n) { return std::to_string(k) + "/" + std::to_string(n); }

bool rel_close(double a, double b, double tol) { return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)}); }

// ---------------------------------------------------------------------------
// 1. Model oracles

struct OracleTally {
    int checked = 0;
    int failed = 0;
    void check(bool ok) {
        ++checked;
        failed += ok ? 0 : 1;
    }
};

Verdict model_oracles() {
    Rng rng(101);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::ostringstream detail;
    bool all = true;
    auto report = [&](const char* name, const OracleTally& t) {
        detail << name << ' ' << (t.checked - t.failed) << '/' << t.checked << ' ';
        all = all && t.failed == 0 && t.checked >= 20;
    };

    OracleTally idm;
    for (int i = 0; i < 200; ++i) {
        const DriverParams p = sample_driver_params(rng);
        const double v = 30.0 * u01(rng), d = 1.0 + 120.0 * u01(rng), dv = -10.0 + 20.0 * u01(rng);
        idm.check(rel_close(idm_acceleration(v, d, dv, p), fixture::idm_oracle(v, d, dv, p), 1e-9));
    }
    report("idm", idm);

    OracleTally mobil;
    std::uniform_real_distribution<double> gap(8.0, 90.0), speed(10.0, 30.0);
    std::uniform_int_distribution<int> lane(0, kNumLanes - 1);
    for (int t = 0; t < 400; ++t) {
        WorldState w = fixture::road(-1e5, 3.0, 25.0);
        w.others.push_back(fixture::car(1, 0.0, lane(rng), speed(rng), sample_driver_params(rng)));
        for (int k = 0; k < 5; ++k)
            w.others.push_back(fixture::car(2 + k, (k % 2 ? 1.0 : -1.0) * gap(rng), lane(rng), speed(rng), sample_driver_params(rng)));
        bool clash = false;
        for (int i = 1; i < w.vehicle_count() && !clash; ++i)
            for (int j = i + 1; j < w.vehicle_count(); ++j)
                if (std::lround(w.at(i).phys.y) == std::lround(w.at(j).phys.y) && std::abs(w.at(i).phys.x - w.at(j).phys.x) < 5.0)
                    clash = true;
        if (clash) continue;
        mobil.check(mobil_decide(w, 1, SimParams{}) == fixture::MobilOracle::decide(w, 1));
    }
    report("mobil", mobil);

    OracleTally ret;
    for (int t = 0; t < 50; ++t) {
        std::vector<double> r(1 + rng() % 60);
        for (auto& x : r) x = -1.0 + 2.0 * u01(rng);
        const double v_end = 20.0 * u01(rng);
        const auto z = compute_returns(r, v_end, 0.95);
        bool ok = z.size() == r.size();
        for (std::size_t i = 0; ok && i < r.size(); ++i) {
            double want = 0.0;
            for (std::size_t k = i; k < r.size(); ++k) want += std::pow(0.95, static_cast<double>(k - i)) * r[k];
            want += std::pow(0.95, static_cast<double>(r.size() - i)) * v_end;
            ok = rel_close(z[i], want, 1e-9);
        }
        ret.check(ok);
    }
    report("compute_returns", ret);

    OracleTally vp;
    for (int t = 0; t < 50; ++t) {
        VisitCounts n{};
        int total = 0;
        for (auto& c : n) total += c = static_cast<int>(rng() % 40);
        if (total == 0) n[0] = total = 1;
        const double tau = 0.5 + 1.5 * u01(rng);
        const Policy pi = visit_policy(n, tau);
        double z = 0.0;
        for (int c : n) z += std::pow(c, 1.0 / tau);
        bool ok = true;
        for (int a = 0; a < kNumActions; ++a) ok = ok && rel_close(pi[static_cast<std::size_t>(a)], std::pow(n[static_cast<std::size_t>(a)], 1.0 / tau) / z, 1e-9);
        vp.check(ok);
    }
    report("visit_policy", vp);

    OracleTally ucb;
    const SearchConfig cfg;
    for (int t = 0; t < 50; ++t) {
        const double q = 20.0 * u01(rng), p = u01(rng);
        const int n_sa = static_cast<int>(rng() % 50), n_s = n_sa + static_cast<int>(rng() % 50);
        const double want = q / 20.0 + 0.1 * p * std::sqrt(n_s + 1.0) / (1.0 + n_sa);
        ucb.check(rel_close(ucb_score(q, n_sa, n_s, p, cfg), want, 1e-9));
    }
    report("ucb", ucb);

    OracleTally rew;
    const SimParams sim;
    for (int t = 0; t < 60; ++t) {
        const bool exit_case = t % 3 == 0;
        WorldState s = fixture::road(800.0, lane(rng), 30.0 * u01(rng), exit_case ? Case::Exit : Case::Continuous);
        WorldState next = s;
        next.ego.phys.v_x = 30.0 * u01(rng);
        const Action a = action_from_index(static_cast<int>(rng() % kNumActions));
        if (exit_case && t % 2 == 0) {
            next.s_term = true;
            next.ego.phys.x = 1001.0;
        }
        double want = 1.0 - std::abs(next.ego.phys.v_x - 25.0) / 25.0;
        if (a == Action::Left || a == Action::Right) want -= 0.03;
        if (next.s_term && next.ego.phys.y == 0.0) want += 0.95 / 0.05;
        rew.check(rel_close(reward(s, a, next, sim), want, 1e-9));
    }
    report("reward", rew);
    return {all, detail.str()};
}

// ---------------------------------------------------------------------------
// 2-3. Network

EncodedState random_xi(Rng& rng, int vehicles) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    EncodedState xi{};
    for (int i = 0; i < kEgoFeatures; ++i) xi[static_cast<std::size_t>(i)] = u(rng);
    for (int s = 0; s < kMaxVehicles; ++s)
        for (int k = 0; k < kVehicleFeatures; ++k)
            xi[static_cast<std::size_t>(kEgoFeatures + kVehicleFeatures * s + k)] =
                s < vehicles ? u(rng) : kPaddingBlock[static_cast<std::size_t>(k)];
    return xi;
}

PolicyValueNet random_net(std::uint64_t seed) {
    PolicyValueNet net;
    Rng rng(seed);
    net.initialize(rng);
    std::normal_distribution<double> n(0.0, 0.1);
    for (const DenseLayer& L : net.layers())
        for (int i = 0; i < L.out; ++i) net.params()[L.b + static_cast<std::size_t>(i)] = n(rng);
    return net;
}

Verdict gradient_check() {
    PolicyValueNet net = random_net(202);
    Rng rng(203);
    std::normal_distribution<double> near(0.0, 0.3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Sample> batch;
    for (int i = 0; i < 8; ++i) {
        Sample s;
        s.xi = random_xi(rng, 1 + 2 * i);
        double t = 0.0;
        for (auto& p : s.pi) t += p = u(rng);
        for (auto& p : s.pi) p /= t;
        s.z = net.forward(s.xi).value + near(rng);
        batch.push_back(s);
    }
    const LossWeights lw;
    std::vector<double> g;
    net.gradient(batch, lw, g);

    // 100 coordinates spread over the layers, weights and biases alike.
    std::vector<std::size_t> coords;
    const auto& layers = net.layers();
    for (int k = 0; coords.size() < 100; ++k) {
        const DenseLayer& L = layers[static_cast<std::size_t>(k) % layers.size()];
        coords.push_back(k % 5 == 4 ? L.b + rng() % static_cast<std::size_t>(L.out) : L.w + rng() % static_cast<std::size_t>(L.out * L.in));
    }
    const double h = 1e-4;
    double worst = 0.0;
    for (std::size_t idx : coords) {
        const double orig = net.params()[idx];
        net.params()[idx] = orig + h;
        const double up = net.loss(batch, lw).total;
        net.params()[idx] = orig - h;
        const double dn = net.loss(batch, lw).total;
        net.params()[idx] = orig;
        const double fd = (up - dn) / (2.0 * h);
        worst = std::max(worst, std::abs(fd - g[idx]) / std::max({std::abs(fd), std::abs(g[idx]), 1e-6}));
    }
    return {worst < 1e-4, std::to_string(coords.size()) + " coordinates, worst relative error " + fmt("%.2e", worst)};
}

Verdict permutation_invariance() {
    Rng rng(303);
    double worst = 0.0;
    for (int t = 0; t < 1000; ++t) {
        const PolicyValueNet net = random_net(1000 + static_cast<std::uint64_t>(t));
        const EncodedState xi = random_xi(rng, static_cast<int>(rng() % (kMaxVehicles + 1)));
        std::vector<int> perm(kMaxVehicles);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        EncodedState p = xi;
        for (int s = 0; s < kMaxVehicles; ++s)
            for (int k = 0; k < kVehicleFeatures; ++k)
                p[static_cast<std::size_t>(kEgoFeatures + kVehicleFeatures * s + k)] =
                    xi[static_cast<std::size_t>(kEgoFeatures + kVehicleFeatures * perm[static_cast<std::size_t>(s)] + k)];
        const NetworkOutput a = net.forward(xi), b = net.forward(p);
        for (int k = 0; k < kNumActions; ++k) worst = std::max(worst, std::abs(a.p[static_cast<std::size_t>(k)] - b.p[static_cast<std::size_t>(k)]));
        worst = std::max(worst, std::abs(a.value - b.value));
    }

    // Vehicles outside the sensor range only fill padding slots.
    bool padding_ok = true;
    const SimParams sim;
    for (int t = 0; t < 100 && padding_ok; ++t) {
        const PolicyValueNet net = random_net(5000 + static_cast<std::uint64_t>(t));
        WorldState w = fixture::road(0.0, static_cast<double>(rng() % kNumLanes), 20.0);
        for (int k = 0; k < 5; ++k) w.others.push_back(fixture::car(1 + k, -90.0 + 40.0 * k, static_cast<double>(rng() % kNumLanes), 22.0));
        WorldState padded = w;
        for (int k = 0; k < 3; ++k) padded.others.push_back(fixture::car(10 + k, 400.0 + 50.0 * k, static_cast<double>(k), 22.0));
        const NetworkOutput a = net.forward(encode_state(w, sim)), b = net.forward(encode_state(padded, sim));
        padding_ok = a.p == b.p && a.value == b.value;
    }
    return {worst <= 1e-12 && padding_ok,
            "1000 permutations, max deviation " + fmt("%.1e", worst) + (padding_ok ? ", padding exact" : ", padding changed the output")};
}

// ---------------------------------------------------------------------------
// 4. Safety invariant

Verdict safety_invariant() {
    const SimParams sim;
    int collisions = 0;
    long steps = 0;
    const int episodes = 10000;
    for (int e = 0; e < episodes; ++e) {
        Rng rng = make_rng(404, {static_cast<std::uint64_t>(e)});
        WorldState w = generate_initial_state(rng, e % 2 ? Case::Exit : Case::Continuous, sim);
        while (!episode_over(w, sim)) {
            const ActionMask m = available_actions(w, sim);
            std::vector<Action> ok;
            for (int a = 0; a < kNumActions; ++a)
                if (m[static_cast<std::size_t>(a)]) ok.push_back(action_from_index(a));
            w = generative_step(w, ok[rng() % ok.size()], rng, sim).next;
            ++steps;
            if (has_collision(w)) {
                ++collisions;
                break;
            }
        }
    }
    return {collisions == 0, std::to_string(episodes) + " episodes, " + std::to_string(steps) + " steps, " + std::to_string(collisions) + " collisions"};
}

// ---------------------------------------------------------------------------
// Training runs

struct TrainedRun {
    PolicyValueNet net;
    std::vector<TrainLogRow> rows;
    RunConfig cfg;
    std::vector<WorldState> scenarios;
};

EvalReport evaluate_agent(AgentKind kind, const PolicyValueNet* net, int iterations, const TrainedRun& run) {
    AgentSpec spec;
    spec.kind = kind;
    spec.net = net;
    spec.cfg = run.cfg.search;
    spec.iterations = iterations;
    return run_evaluation(spec, run.scenarios, run.cfg.train.eval_seed, run.cfg.sim, run.cfg.train.workers);
}

TrainedRun train(Case road_case, const std::string& config_name) {
    TrainedRun run;
    run.cfg = load_config(kSource + "/configs/" + config_name);
    run.scenarios = make_scenario_set(road_case, run.cfg.train.eval_episodes, run.cfg.train.eval_seed, run.cfg.sim);
    TrainerOptions opt;
    opt.road_case = road_case;
    opt.iterations = run.cfg.search.iterations;
    opt.total_samples = static_cast<std::uint64_t>(run.cfg.train.total_samples);
    const fs::path dir = kArtifacts / case_name(road_case);
    fs::create_directories(dir);
    opt.checkpoint_dir = dir.string();
    Trainer trainer(opt, run.cfg.train, run.cfg.search, run.cfg.sim);
    trainer.set_eval_hook([&](const PolicyValueNet& net) {
        const EvalReport r = evaluate_agent(AgentKind::MctsNN, &net, run.cfg.search.iterations, run);
        return EvalSummary{r.mean_reward, r.success_rate};
    });
    std::ofstream log(dir / "train_log.csv");
    trainer.set_log(&log);
    trainer.run();
    save_checkpoint(trainer.net(), (dir / "final.bin").string());
    run.net = trainer.net();
    run.rows = trainer.rows();
    return run;
}

std::vector<double> eval_rewards(const TrainedRun& run) {
    std::vector<double> out;
    for (const auto& r : run.rows)
        if (!std::isnan(r.eval_avg_reward)) out.push_back(r.eval_avg_reward);
    return out;
}

// ---------------------------------------------------------------------------
// 5. Double lane change

// The ego's front bumper is past the front bumper of every other vehicle.
bool ahead_of_all(const WorldState& w) {
    return std::all_of(w.others.begin(), w.others.end(), [&](const Vehicle& v) { return w.ego.phys.x > v.phys.x; });
}

int count_ahead(const WorldState& s0, AgentSpec spec, int seeds) {
    const SimParams sim;
    const int steps = static_cast<int>(std::lround(15.0 / sim.dt));
    int ahead = 0;
    for (int i = 0; i < seeds; ++i) {
        Rng env = make_rng(505, {0xe7, static_cast<std::uint64_t>(i)});
        Rng agent = make_rng(505, {0xa7, static_cast<std::uint64_t>(i)});
        WorldState final_state;
        run_episode(s0, spec, env, agent, sim, nullptr, &final_state, steps);
        ahead += ahead_of_all(final_state) ? 1 : 0;
    }
    return ahead;
}

Verdict double_lane_change(const PolicyValueNet& net) {
    const WorldState s0 = load_scenario_file(kSource + "/scenarios/double_lane_change.txt").at(0);
    const int seeds = 10;
    AgentSpec rule;
    rule.kind = AgentKind::IdmMobil;
    AgentSpec mcts;
    mcts.kind = AgentKind::Mcts;
    mcts.iterations = 2000;
    AgentSpec mctsnn = mcts;
    mctsnn.kind = AgentKind::MctsNN;
    mctsnn.net = &net;
    const int r = count_ahead(s0, rule, seeds), m = count_ahead(s0, mcts, seeds), n = count_ahead(s0, mctsnn, seeds);
    return {r == 0 && m == seeds && n == seeds,
            "ahead after 15 s: idm-mobil " + rate(r, seeds) + ", mcts " + rate(m, seeds) + ", mctsnn " + rate(n, seeds)};
}

// ---------------------------------------------------------------------------
// 6. Continuous-case training

Verdict continuous_training(const TrainedRun& run) {
    const auto rewards = eval_rewards(run);
    const EvalReport nn = evaluate_agent(AgentKind::MctsNN, &run.net, run.cfg.search.iterations, run);
    const EvalReport rule = evaluate_agent(AgentKind::IdmMobil, nullptr, 0, run);
    const double ratio = speed_ratio(nn, rule);
    const bool improved = rewards.size() >= 2 && rewards.back() > rewards.front();
    return {improved && ratio >= 0.98,
            "eval reward " + fmt("%.4f", rewards.empty() ? NAN : rewards.front()) + " -> " + fmt("%.4f", rewards.empty() ? NAN : rewards.back()) +
                ", speed ratio vs idm-mobil " + fmt("%.4f", ratio)};
}

// ---------------------------------------------------------------------------
// 7-9. Exit case

Verdict exit_ordering(const TrainedRun& run) {
    const int n = run.cfg.search.iterations;
    const double nn = evaluate_agent(AgentKind::MctsNN, &run.net, n, run).success_rate;
    const double mcts = evaluate_agent(AgentKind::Mcts, nullptr, n, run).success_rate;
    const double rule = evaluate_agent(AgentKind::IdmMobil, nullptr, 0, run).success_rate;
    return {nn >= mcts && mcts >= rule,
            "success mctsnn " + fmt("%.2f", nn) + ", mcts " + fmt("%.2f", mcts) + ", exit baseline " + fmt("%.2f", rule)};
}

Verdict iteration_monotonicity(const TrainedRun& run) {
    AgentSpec spec;
    spec.kind = AgentKind::MctsNN;
    spec.net = &run.net;
    spec.cfg = run.cfg.search;
    const auto pts = iteration_sweep(spec, {1, 10, 200}, run.scenarios, run.cfg.train.eval_seed, run.cfg.sim, run.cfg.train.workers);
    bool ok = true;
    std::string d = "success";
    for (std::size_t i = 0; i < pts.size(); ++i) {
        d += " n=" + std::to_string(pts[i].iterations) + ":" + fmt("%.2f", pts[i].report.success_rate);
        if (i > 0) ok = ok && pts[i].report.success_rate >= pts[i - 1].report.success_rate;
    }
    return {ok, d};
}

Verdict value_map(const TrainedRun& run) {
    const SimParams& sim = run.cfg.sim;
    double lo = INFINITY, hi = -INFINITY;
    for (int lane = 0; lane < kNumLanes; ++lane)
        for (double x = 0.0; x <= 400.0; x += 20.0) {
            const double v = run.net.forward(encode_state(value_map_state(x, lane, sim), sim)).value;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    std::string bad_lanes;
    for (int lane = 1; lane < kNumLanes; ++lane) {
        double prev = INFINITY;
        bool mono = true;
        for (double x = sim.x_exit - 200.0; x < sim.x_exit; x += 10.0) {
            const double v = run.net.forward(encode_state(value_map_state(x, lane, sim), sim)).value;
            mono = mono && v <= prev;
            prev = v;
        }
        if (!mono) bad_lanes += " " + std::to_string(lane);
    }
    const bool far_ok = lo >= 18.0 && hi <= 20.0;
    return {far_ok && bad_lanes.empty(), "far V in [" + fmt("%.2f", lo) + ", " + fmt("%.2f", hi) + "], last 200 m " +
                                             (bad_lanes.empty() ? std::string("non-increasing in lanes 1-3") : "not monotone in lane(s)" + bad_lanes)};
}

// ---------------------------------------------------------------------------
// 10. Reproducibility

std::string log_without_wall_time(const std::vector<TrainLogRow>& rows) {
    std::ostringstream os;
    for (TrainLogRow r : rows) {
        r.wall_time_s = 0.0;
        write_log_row(os, r);
    }
    return os.str();
}

Verdict reproducibility() {
    TrainerOptions opt;
    opt.seed = 1010;
    opt.iterations = 50;
    opt.total_samples = 1000;
    TrainConfig tc;
    tc.workers = 2;
    tc.n_start = 400;
    tc.eval_interval = 500;
    SimParams sim;
    sim.particles = 100;
    const SearchConfig sc;
    const auto scenarios = make_scenario_set(Case::Exit, 4, 11, sim);

    auto train_once = [&] {
        Trainer t(opt, tc, sc, sim);
        t.set_eval_hook([&](const PolicyValueNet& net) {
            AgentSpec spec;
            spec.kind = AgentKind::MctsNN;
            spec.net = &net;
            spec.iterations = 20;
            const EvalReport r = run_evaluation(spec, scenarios, 3, sim, 2);
            return EvalSummary{r.mean_reward, r.success_rate};
        });
        t.run();
        return std::make_pair(log_without_wall_time(t.rows()), t.net().params());
    };
    const auto a = train_once(), b = train_once();
    const bool logs_equal = a.first == b.first && a.second == b.second;

    AgentSpec spec;
    spec.kind = AgentKind::Mcts;
    spec.iterations = 100;
    std::ostringstream ra, rb;
    write_eval_csv(ra, run_evaluation(spec, scenarios, 12, sim, 2));
    write_eval_csv(rb, run_evaluation(spec, scenarios, 12, sim, 1));
    const bool evals_equal = ra.str() == rb.str();
    return {logs_equal && evals_equal, std::string("training log ") + (logs_equal ? "identical" : "differs") + ", evaluation report " +
                                           (evals_equal ? "identical" : "differs")};
}

}  // namespace

int main() {
    fs::create_directories(kArtifacts);
    int failures = 0;
    auto emit = [&](int id, const char* name, const std::function<Verdict()>& fn) {
        const auto t0 = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = fn();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        failures += v.pass ? 0 : 1;
        std::cout << "criterion " << id << ' ' << (v.pass ? "PASS" : "FAIL") << ' ' << name << ": " << v.detail << " ["
                  << fmt("%.0f", secs) << " s]" << std::endl;
    };

    emit(1, "model oracles", model_oracles);
    emit(2, "gradient check", gradient_check);
    emit(3, "permutation and padding invariance", permutation_invariance);
    emit(4, "safety invariant", safety_invariant);
    emit(10, "reproducibility", reproducibility);

    TrainedRun cont, exit;
    bool cont_ok = true, exit_ok = true;
    std::string cont_err, exit_err;
    try {
        cont = train(Case::Continuous, "continuous.conf");
    } catch (const std::exception& e) {
        cont_ok = false;
        cont_err = e.what();
    }
    auto need = [](bool ok, const std::string& err, std::function<Verdict()> fn) -> std::function<Verdict()> {
        if (ok) return fn;
        return [err] { return Verdict{false, "training failed: " + err}; };
    };
    emit(6, "continuous-case training", need(cont_ok, cont_err, [&] { return continuous_training(cont); }));
    emit(5, "double lane change", need(cont_ok, cont_err, [&] { return double_lane_change(cont.net); }));

    try {
        exit = train(Case::Exit, "exit.conf");
    } catch (const std::exception& e) {
        exit_ok = false;
        exit_err = e.what();
    }
    emit(7, "exit-case success ordering", need(exit_ok, exit_err, [&] { return exit_ordering(exit); }));
    emit(8, "iteration sweep", need(exit_ok, exit_err, [&] { return iteration_monotonicity(exit); }));
    emit(9, "value map", need(exit_ok, exit_err, [&] { return value_map(exit); }));

    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
    return failures == 0 ? 0 : 1;
}
