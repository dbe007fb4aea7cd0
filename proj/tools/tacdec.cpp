// Command-line entry point: training, evaluation, single episodes, sweeps and
// plotting.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tacdec/config.hpp"
#include "tacdec/evaluation.hpp"
#include "tacdec/plot.hpp"
#include "tacdec/scenario_io.hpp"
#include "tacdec/training.hpp"

namespace fs = std::filesystem;
using namespace tacdec;

namespace {

enum ExitCode { kOk = 0, kUsage = 2, kConfig = 3, kIo = 4, kInvariant = 5 };

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

RunConfig config_or_default(const std::string& path) {
    if (path.empty()) return {};
    if (!fs::exists(path)) throw IoError("config file '" + path + "' not found");
    return load_config(path);
}

std::ofstream open_out(const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write '" + path + "'");
    return os;
}

std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            std::size_t used = 0;
            const int v = std::stoi(tok, &used);
            if (used != tok.size() || v < 1) throw std::invalid_argument(tok);
            out.push_back(v);
        } catch (const std::exception&) {
            throw UsageError("bad iteration count '" + tok + "'");
        }
    }
    if (out.empty()) throw UsageError("empty iteration list");
    return out;
}

struct AgentArgs {
    std::string agent = "mctsnn";
    std::string checkpoint;
    int iterations = 0;
};

struct LoadedAgent {
    AgentSpec spec;
    std::unique_ptr<PolicyValueNet> net;
};

LoadedAgent make_agent(const AgentArgs& a, const RunConfig& cfg) {
    LoadedAgent out;
    try {
        out.spec.kind = parse_agent(a.agent);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    out.spec.cfg = cfg.search;
    out.spec.iterations = a.iterations > 0 ? a.iterations : cfg.search.iterations;
    if (out.spec.kind == AgentKind::MctsNN) {
        if (a.checkpoint.empty()) throw UsageError("--checkpoint is required for the mctsnn agent");
        if (!fs::exists(a.checkpoint)) throw IoError("checkpoint '" + a.checkpoint + "' not found");
        out.net = std::make_unique<PolicyValueNet>(load_checkpoint(a.checkpoint).net);
        out.spec.net = out.net.get();
    }
    return out;
}

void add_agent_options(CLI::App* sub, AgentArgs& a) {
    sub->add_option("--agent", a.agent, "mctsnn | mcts | idm-mobil")->check(CLI::IsMember({"mctsnn", "mcts", "idm-mobil"}));
    sub->add_option("--checkpoint", a.checkpoint, "network checkpoint (mctsnn)");
    sub->add_option("--iterations", a.iterations, "search iterations per decision (default: n from the config)");
}

// ---------------------------------------------------------------------------

int cmd_train(const std::string& case_s, const std::string& config, int workers, std::uint64_t seed, const std::string& out_dir) {
    RunConfig cfg = config_or_default(config);
    if (workers > 0) cfg.train.workers = workers;
    const Case c = parse_case(case_s);
    fs::create_directories(out_dir);
    {
        auto os = open_out(out_dir + "/config.txt");
        os << dump_config(cfg);
    }
    const auto scenarios = make_scenario_set(c, cfg.train.eval_episodes, cfg.train.eval_seed, cfg.sim);
    save_scenario_file(out_dir + "/eval_scenarios.txt", scenarios);

    TrainerOptions opt;
    opt.road_case = c;
    opt.seed = seed;
    opt.iterations = cfg.search.iterations;
    opt.total_samples = static_cast<std::uint64_t>(cfg.train.total_samples);
    opt.checkpoint_dir = out_dir;
    Trainer trainer(opt, cfg.train, cfg.search, cfg.sim);
    const int eval_workers = cfg.train.workers;
    trainer.set_eval_hook([&](const PolicyValueNet& net) {
        AgentSpec spec;
        spec.kind = AgentKind::MctsNN;
        spec.net = &net;
        spec.cfg = cfg.search;
        spec.iterations = cfg.search.iterations;
        const EvalReport r = run_evaluation(spec, scenarios, cfg.train.eval_seed, cfg.sim, eval_workers);
        return EvalSummary{r.mean_reward, r.success_rate};
    });
    auto log = open_out(out_dir + "/train_log.csv");
    trainer.set_log(&log);
    trainer.set_progress(&std::cerr);
    trainer.run();
    std::cout << save_checkpoint(trainer.net(), out_dir + "/final.bin", &trainer.velocity());
    std::cout << "samples " << trainer.memory().inserted() << " updates " << trainer.updates() << '\n';
    return kOk;
}

int cmd_evaluate(const AgentArgs& a, const std::string& config, const std::string& episodes, std::uint64_t seed, int workers,
                 const std::string& out) {
    const RunConfig cfg = config_or_default(config);
    LoadedAgent agent = make_agent(a, cfg);
    const auto scenarios = load_scenario_file(episodes);
    if (scenarios.empty()) throw ScenarioError("scenario file '" + episodes + "' holds no scenarios");
    agent.spec.road_case = scenarios.front().road_case;
    const EvalReport r = run_evaluation(agent.spec, scenarios, seed, cfg.sim, workers > 0 ? workers : cfg.train.workers);
    if (!out.empty()) {
        auto os = open_out(out);
        write_eval_csv(os, r);
    }
    write_eval_summary(std::cout, r);
    return kOk;
}

int cmd_episode(const AgentArgs& a, const std::string& config, const std::string& scenario, std::uint64_t seed,
                const std::string& trace) {
    const RunConfig cfg = config_or_default(config);
    LoadedAgent agent = make_agent(a, cfg);
    const auto set = load_scenario_file(scenario);
    if (set.size() != 1) throw ScenarioError("'" + scenario + "' must hold exactly one scenario");
    Rng env = make_rng(seed, {0xe7, 0});
    Rng ag = make_rng(seed, {0xa7, 0});
    std::ofstream tos;
    if (!trace.empty()) tos = open_out(trace);
    WorldState final_state;
    const EpisodeRow row = run_episode(set.front(), agent.spec, env, ag, cfg.sim, trace.empty() ? nullptr : &tos, &final_state);
    std::cout << "steps " << row.steps << " avg_reward " << format_metric(row.avg_reward) << " mean_speed "
              << format_metric(row.mean_speed) << " lane_changes " << row.lane_changes << " success " << row.success << '\n';
    std::cout << "final ego x " << format_metric(final_state.ego.phys.x) << " lane " << current_lane(final_state.ego.phys) << '\n';
    return kOk;
}

int cmd_plot(const std::string& metrics, const std::string& out_dir) {
    std::ifstream in(metrics);
    if (!in) throw IoError("cannot open '" + metrics + "'");
    const CsvTable t = read_csv(in);
    std::vector<std::pair<std::string, std::string>> charts;
    if (t.column("samples_inserted") >= 0) {
        const auto x = t.numbers("samples_inserted");
        charts.emplace_back("reward.svg", line_chart_svg({{"eval avg reward", x, t.numbers("eval_avg_reward")}},
                                                         {"Average reward per step", "training samples", "reward"}));
        const auto succ = t.numbers("eval_success_rate");
        if (std::any_of(succ.begin(), succ.end(), [](double v) { return !std::isnan(v); }))
            charts.emplace_back("success.svg", line_chart_svg({{"success rate", x, succ}}, {"Exit success rate", "training samples", "rate"}));
        charts.emplace_back("loss.svg", line_chart_svg({{"total", x, t.numbers("mean_loss")},
                                                        {"value", x, t.numbers("value_loss")},
                                                        {"policy", x, t.numbers("policy_loss")}},
                                                       {"Training loss", "training samples", "loss"}));
    } else if (t.column("iterations") >= 0) {
        const auto x = t.numbers("iterations");
        charts.emplace_back("speed.svg", line_chart_svg({{"mean speed", x, t.numbers("mean_speed")}},
                                                        {"Mean speed vs iterations", "iterations", "m/s", true}));
        charts.emplace_back("success.svg", line_chart_svg({{"success rate", x, t.numbers("success_rate")}},
                                                          {"Success rate vs iterations", "iterations", "rate", true}));
        charts.emplace_back("reward.svg", line_chart_svg({{"avg reward", x, t.numbers("avg_reward")}},
                                                         {"Average reward vs iterations", "iterations", "reward", true}));
    } else {
        throw UsageError("unrecognized metrics CSV header");
    }
    fs::create_directories(out_dir);
    for (const auto& [name, svg] : charts) {
        auto os = open_out(out_dir + "/" + name);
        os << svg;
        std::cout << out_dir << '/' << name << '\n';
    }
    return kOk;
}

int cmd_sweep(AgentArgs a, const std::string& config, const std::string& episodes, const std::string& list, std::uint64_t seed,
              int workers, const std::string& out) {
    const RunConfig cfg = config_or_default(config);
    const auto ns = parse_int_list(list);
    a.iterations = ns.front();
    LoadedAgent agent = make_agent(a, cfg);
    std::vector<WorldState> scenarios;
    if (episodes.empty())
        scenarios = make_scenario_set(Case::Exit, cfg.train.eval_episodes, cfg.train.eval_seed, cfg.sim);
    else
        scenarios = load_scenario_file(episodes);
    const auto pts = iteration_sweep(agent.spec, ns, scenarios, seed, cfg.sim, workers > 0 ? workers : cfg.train.workers);
    if (!out.empty()) {
        auto os = open_out(out);
        write_sweep_csv(os, pts);
    }
    write_sweep_csv(std::cout, pts);
    return kOk;
}

int cmd_value_map(const std::string& checkpoint, const std::string& config, int iterations, double step, std::uint64_t seed,
                  const std::string& out) {
    const RunConfig cfg = config_or_default(config);
    if (!fs::exists(checkpoint)) throw IoError("checkpoint '" + checkpoint + "' not found");
    const PolicyValueNet net = load_checkpoint(checkpoint).net;
    if (!(step > 0.0)) throw UsageError("--step must be positive");
    std::vector<double> xs;
    for (double x = 0.0; x < cfg.sim.x_exit - 1e-9; x += step) xs.push_back(x);
    const auto cells = value_map_sweep(net, xs, {0, 1, 2, 3}, cfg.search, iterations > 0 ? iterations : cfg.search.iterations,
                                       seed, cfg.sim);
    if (out.empty()) {
        write_value_map_csv(std::cout, cells);
    } else {
        auto os = open_out(out);
        write_value_map_csv(os, cells);
    }
    return kOk;
}

int cmd_make_scenarios(const std::string& case_s, const std::string& config, int count, std::uint64_t seed, const std::string& out) {
    const RunConfig cfg = config_or_default(config);
    save_scenario_file(out, make_scenario_set(parse_case(case_s), count, seed, cfg.sim));
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Tactical highway decision making with tree search and a learned policy/value network"};
    app.require_subcommand(1);

    std::string case_s = "continuous", config, out, episodes, scenario, trace, metrics, list = "1,10,100,1000,2000";
    std::uint64_t seed = 1;
    int workers = 0, count = 20, vm_iterations = 0;
    double step = 20.0;
    AgentArgs agent;

    auto* train = app.add_subcommand("train", "train a policy/value network by self-play");
    train->add_option("--case", case_s)->check(CLI::IsMember({"continuous", "exit"}));
    train->add_option("--config", config, "key=value configuration file");
    train->add_option("--workers", workers);
    train->add_option("--seed", seed);
    train->add_option("--out", out, "output directory")->required();

    auto* evaluate = app.add_subcommand("evaluate", "evaluate an agent on a scenario set");
    add_agent_options(evaluate, agent);
    evaluate->add_option("--episodes", episodes, "scenario set file")->required();
    evaluate->add_option("--config", config);
    evaluate->add_option("--seed", seed);
    evaluate->add_option("--workers", workers);
    evaluate->add_option("--out", out, "per-episode CSV");

    auto* episode = app.add_subcommand("episode", "replay one scenario with a per-step trace");
    add_agent_options(episode, agent);
    episode->add_option("--scenario", scenario)->required();
    episode->add_option("--config", config);
    episode->add_option("--seed", seed);
    episode->add_option("--trace", trace, "per-step CSV trace");

    auto* plot = app.add_subcommand("plot", "render SVG line charts from a training log or sweep CSV");
    plot->add_option("--metrics", metrics)->required();
    plot->add_option("--out", out, "output directory")->required();

    auto* sweep = app.add_subcommand("sweep-n", "evaluate an agent for several iteration counts");
    sweep->add_option("--agent", agent.agent, "mctsnn | mcts")->check(CLI::IsMember({"mctsnn", "mcts"}));
    sweep->add_option("--checkpoint", agent.checkpoint, "network checkpoint (mctsnn)");
    sweep->add_option("--iterations", list, "comma-separated iteration counts");
    sweep->add_option("--episodes", episodes, "scenario set (default: frozen exit set from the config)");
    sweep->add_option("--config", config);
    sweep->add_option("--seed", seed);
    sweep->add_option("--workers", workers);
    sweep->add_option("--out", out);

    auto* vmap = app.add_subcommand("value-map", "value and action over position and lane on an empty exit road");
    vmap->add_option("--checkpoint", agent.checkpoint)->required();
    vmap->add_option("--config", config);
    vmap->add_option("--iterations", vm_iterations);
    vmap->add_option("--step", step, "longitudinal grid step, m");
    vmap->add_option("--seed", seed);
    vmap->add_option("--out", out);

    auto* make = app.add_subcommand("make-scenarios", "write a frozen set of random initial states");
    make->add_option("--case", case_s)->check(CLI::IsMember({"continuous", "exit"}));
    make->add_option("--config", config);
    make->add_option("--count", count);
    make->add_option("--seed", seed);
    make->add_option("--out", out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    try {
        if (*train) return cmd_train(case_s, config, workers, seed, out);
        if (*evaluate) return cmd_evaluate(agent, config, episodes, seed, workers, out);
        if (*episode) return cmd_episode(agent, config, scenario, seed, trace);
        if (*plot) return cmd_plot(metrics, out);
        if (*sweep) return cmd_sweep(agent, config, episodes, list, seed, workers, out);
        if (*vmap) return cmd_value_map(agent.checkpoint, config, vm_iterations, step, seed, out);
        if (*make) return cmd_make_scenarios(case_s, config, count, seed, out);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n' << app.help();
        return kUsage;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const ScenarioIoError& e) {
        std::cerr << "io error: " << e.what() << '\n';
        return kIo;
    } catch (const ScenarioError& e) {
        std::cerr << "scenario error: " << e.what() << '\n';
        return kConfig;
    } catch (const InvariantViolation& e) {
        std::cerr << "invariant violation: " << e.what() << '\n';
        return kInvariant;
    } catch (const PreconditionError& e) {
        std::cerr << "invariant violation: " << e.what() << '\n';
        return kInvariant;
    } catch (const CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << '\n';
        return kIo;
    } catch (const EmptyInputError& e) {
        std::cerr << "empty input: " << e.what() << '\n';
        return kIo;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << '\n';
        return kIo;
    } catch (const std::ios_base::failure& e) {
        std::cerr << "io error: " << e.what() << '\n';
        return kIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kIo;
    }
    return kUsage;
}
