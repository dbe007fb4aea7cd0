#pragma once

// Self-play data generation, replay memory and the trainer loop.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "belief.hpp"
#include "network.hpp"
#include "params.hpp"
#include "pomdp.hpp"
#include "rng.hpp"
#include "search.hpp"
#include "traffic.hpp"

namespace tacdec {

using Experience = Sample;

class InvariantViolation : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// z_i = sum_{k>=i} gamma^(k-i) r_k + gamma^(N-i) v_end
inline std::vector<double> compute_returns(const std::vector<double>& rewards, double v_end, double gamma) {
    std::vector<double> z(rewards.size());
    double acc = v_end;
    for (std::size_t i = rewards.size(); i-- > 0;) {
        acc = rewards[i] + gamma * acc;
        z[i] = acc;
    }
    return z;
}

class ReplayMemory {
public:
    explicit ReplayMemory(std::size_t capacity) : capacity_(capacity) {
        if (capacity == 0) throw std::invalid_argument("ReplayMemory: zero capacity");
        data_.reserve(capacity);
    }

    void push(const Experience& e) {
        if (data_.size() < capacity_)
            data_.push_back(e);
        else
            data_[head_] = e;
        head_ = (head_ + 1) % capacity_;
        ++inserted_;
    }

    std::size_t size() const { return data_.size(); }
    std::size_t capacity() const { return capacity_; }
    std::uint64_t inserted() const { return inserted_; }

    // i-th element from oldest to newest.
    const Experience& at(std::size_t i) const {
        if (i >= data_.size()) throw std::out_of_range("ReplayMemory::at");
        return data_.size() < capacity_ ? data_[i] : data_[(head_ + i) % capacity_];
    }

    std::size_t sample_index(Rng& rng) const {
        if (data_.empty()) throw std::logic_error("ReplayMemory: sampling from empty memory");
        std::uniform_int_distribution<std::size_t> d(0, data_.size() - 1);
        return d(rng);
    }

    std::vector<Experience> sample(std::size_t n, Rng& rng) const {
        std::vector<Experience> out;
        out.reserve(n);
        for (std::size_t i = 0; i < n; ++i) out.push_back(data_[sample_index(rng)]);
        return out;
    }

private:
    std::size_t capacity_;
    std::vector<Experience> data_;
    std::size_t head_ = 0;
    std::uint64_t inserted_ = 0;
};

// ---------------------------------------------------------------------------
// Episodes

struct EpisodeStats {
    int steps = 0;
    double total_reward = 0.0;
    double speed_sum = 0.0;
    int lane_changes = 0;
    bool success = false;
    bool terminal = false;
};

struct TrainingEpisode {
    std::vector<Experience> samples;
    EpisodeStats stats;
};

// Runs one self-play episode from `s0`. Environment noise and agent
// randomness use separate streams so the search cannot shift the traffic.
inline TrainingEpisode run_training_episode(const WorldState& s0, const PolicyValueNet& net, SearchConfig cfg, int iterations,
                                            Rng& env_rng, Rng& agent_rng, const SimParams& sim = {}) {
    cfg.mode = SearchMode::Train;
    TrainingEpisode ep;
    std::vector<double> rewards;
    WorldState s = s0;
    Observation o = observe(s, sim);
    Belief b = init_belief(o, agent_rng, sim);
    while (!episode_over(s, sim)) {
        const WorldState root = most_likely_state(b, o, sim);
        const SearchResult r = select_action(root, iterations, net, cfg, agent_rng, sim);
        const Transition t = generative_step(s, r.action, env_rng, sim);
        if (has_collision(t.next)) throw InvariantViolation("collision during training episode at step " + std::to_string(s.step_count));
        ep.samples.push_back({encode_state(root, sim), r.pi, 0.0});
        rewards.push_back(t.reward);
        ep.stats.total_reward += t.reward;
        ep.stats.speed_sum += t.next.ego.phys.v_x;
        if ((r.action == Action::Left || r.action == Action::Right) && !is_mid_change(s.ego.phys)) ++ep.stats.lane_changes;
        const Observation o_next = observe(t.next, sim);
        if (!t.next.s_term) b = update_belief(b, r.action, o, o_next, agent_rng, sim);
        o = o_next;
        s = t.next;
    }
    ep.stats.steps = static_cast<int>(rewards.size());
    ep.stats.terminal = s.s_term;
    ep.stats.success = exit_success(s, sim);
    const double v_end = s.s_term ? 0.0 : net.forward(encode_state(most_likely_state(b, o, sim), sim)).value;
    const auto z = compute_returns(rewards, v_end, cfg.gamma);
    for (std::size_t i = 0; i < z.size(); ++i) ep.samples[i].z = z[i];
    return ep;
}

// ---------------------------------------------------------------------------
// Trainer

struct TrainLogRow {
    std::uint64_t samples_inserted = 0;
    double mean_loss = std::numeric_limits<double>::quiet_NaN();
    double value_loss = std::numeric_limits<double>::quiet_NaN();
    double policy_loss = std::numeric_limits<double>::quiet_NaN();
    double eval_avg_reward = std::numeric_limits<double>::quiet_NaN();
    double eval_success_rate = std::numeric_limits<double>::quiet_NaN();
    double wall_time_s = 0.0;
};

inline constexpr const char* kTrainLogHeader =
    "samples_inserted,mean_loss,value_loss,policy_loss,eval_avg_reward,eval_success_rate,wall_time_s";

inline std::string format_metric(double v) {
    if (std::isnan(v)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

inline void write_log_row(std::ostream& os, const TrainLogRow& r) {
    os << r.samples_inserted << ',' << format_metric(r.mean_loss) << ',' << format_metric(r.value_loss) << ','
       << format_metric(r.policy_loss) << ',' << format_metric(r.eval_avg_reward) << ','
       << format_metric(r.eval_success_rate) << ',' << format_metric(r.wall_time_s) << '\n';
}

struct EvalSummary {
    double avg_reward = 0.0;
    double success_rate = 0.0;
};

// Evaluation hook invoked by the trainer with the current network.
using EvalHook = std::function<EvalSummary(const PolicyValueNet&)>;

struct TrainerOptions {
    Case road_case = Case::Continuous;
    std::uint64_t seed = 1;
    int iterations = 2000;               // search iterations per decision
    std::uint64_t total_samples = 250000;
    std::string checkpoint_dir;          // empty: no checkpoints
};

class Trainer {
public:
    Trainer(const TrainerOptions& opt, const TrainConfig& tc, const SearchConfig& sc, const SimParams& sim)
        : opt_(opt), tc_(tc), sc_(sc), sim_(sim), memory_(static_cast<std::size_t>(tc.replay_size)) {
        Rng init = make_rng(opt.seed, {0x1417});
        net_.initialize(init);
        velocity_.assign(net_.param_count(), 0.0);
    }

    void set_eval_hook(EvalHook h) { eval_ = std::move(h); }
    void set_log(std::ostream* os) { log_ = os; }
    void set_progress(std::ostream* os) { progress_ = os; }

    PolicyValueNet& net() { return net_; }
    const ReplayMemory& memory() const { return memory_; }
    const std::vector<double>& velocity() const { return velocity_; }
    std::uint64_t updates() const { return updates_; }
    const std::vector<TrainLogRow>& rows() const { return rows_; }

    // Runs until total_samples have been inserted. Each round, every worker
    // plays one episode against the same parameter snapshot; episodes are
    // then ingested in episode order, so results do not depend on thread
    // scheduling.
    void run() {
        if (log_) *log_ << kTrainLogHeader << '\n';
        start_ = std::chrono::steady_clock::now();
        if (memory_.inserted() == 0) evaluate_now();
        const int workers = std::max(1, tc_.workers);
        while (memory_.inserted() < opt_.total_samples) {
            std::vector<TrainingEpisode> batch(static_cast<std::size_t>(workers));
            std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
            const PolicyValueNet snapshot = net_;
            auto job = [&](int w) {
                try {
                    batch[static_cast<std::size_t>(w)] = play(snapshot, episode_ + static_cast<std::uint64_t>(w));
                } catch (...) {
                    errors[static_cast<std::size_t>(w)] = std::current_exception();
                }
            };
            if (workers == 1) {
                job(0);
            } else {
                std::vector<std::thread> pool;
                for (int w = 0; w < workers; ++w) pool.emplace_back(job, w);
                for (auto& t : pool) t.join();
            }
            for (auto& e : errors)
                if (e) std::rethrow_exception(e);
            for (auto& ep : batch) {
                ingest(ep, episode_);
                ++episode_;
                if (memory_.inserted() >= opt_.total_samples) break;
            }
        }
        if (rows_.empty() || std::isnan(rows_.back().eval_avg_reward)) evaluate_now();
    }

    TrainingEpisode play(const PolicyValueNet& net, std::uint64_t episode) const {
        Rng env = make_rng(opt_.seed, {0xe9, episode});
        Rng agent = make_rng(opt_.seed, {0xa9, episode});
        const WorldState s0 = generate_initial_state(env, opt_.road_case, sim_);
        return run_training_episode(s0, net, sc_, opt_.iterations, env, agent, sim_);
    }

    // Adds an episode's samples and performs one mini-batch update per
    // sample once the memory holds n_start insertions.
    void ingest(const TrainingEpisode& ep, std::uint64_t episode) {
        const std::uint64_t before = memory_.inserted();
        for (const auto& x : ep.samples) memory_.push(x);
        TrainLogRow row;
        row.samples_inserted = memory_.inserted();
        if (memory_.inserted() >= static_cast<std::uint64_t>(tc_.n_start)) {
            Rng rng = make_rng(opt_.seed, {0x7a, episode});
            const LossWeights lw{tc_.c1, tc_.c2, tc_.c3};
            std::vector<double> grad;
            double tot = 0.0, val = 0.0, pol = 0.0;
            for (std::size_t i = 0; i < ep.samples.size(); ++i) {
                const auto mb = memory_.sample(static_cast<std::size_t>(tc_.mini_batch), rng);
                const LossBreakdown l = net_.gradient(mb, lw, grad);
                clip_gradient_norm(grad, tc_.grad_clip);
                sgd_step(net_.params(), grad, velocity_, tc_.learning_rate, tc_.momentum);
                ++updates_;
                tot += l.total;
                val += l.value;
                pol += l.policy;
            }
            if (!ep.samples.empty()) {
                const double n = static_cast<double>(ep.samples.size());
                row.mean_loss = tot / n;
                row.value_loss = val / n;
                row.policy_loss = pol / n;
            }
        }
        const auto every = static_cast<std::uint64_t>(std::max(1, tc_.eval_interval));
        if (eval_ && before / every != memory_.inserted() / every) attach_eval(row);
        const auto ck = static_cast<std::uint64_t>(std::max(1, tc_.checkpoint_interval));
        if (!opt_.checkpoint_dir.empty() && before / ck != memory_.inserted() / ck) checkpoint();
        emit(row);
    }

    std::string checkpoint() const {
        const std::string path = opt_.checkpoint_dir + "/checkpoint_" + std::to_string(memory_.inserted()) + ".bin";
        save_checkpoint(net_, path, &velocity_);
        return path;
    }

private:
    void attach_eval(TrainLogRow& row) const {
        const EvalSummary e = eval_(net_);
        row.eval_avg_reward = e.avg_reward;
        row.eval_success_rate = opt_.road_case == Case::Exit ? e.success_rate : std::numeric_limits<double>::quiet_NaN();
    }

    void evaluate_now() {
        if (!eval_) return;
        TrainLogRow row;
        row.samples_inserted = memory_.inserted();
        attach_eval(row);
        emit(row);
    }

    void emit(TrainLogRow& row) {
        row.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        rows_.push_back(row);
        if (log_) {
            write_log_row(*log_, row);
            log_->flush();
        }
        if (progress_ && !std::isnan(row.eval_avg_reward))
            *progress_ << "samples " << row.samples_inserted << " eval reward " << format_metric(row.eval_avg_reward)
                       << " success " << format_metric(row.eval_success_rate) << '\n';
    }

    TrainerOptions opt_;
    TrainConfig tc_;
    SearchConfig sc_;
    SimParams sim_;
    PolicyValueNet net_;
    std::vector<double> velocity_;
    ReplayMemory memory_;
    EvalHook eval_;
    std::ostream* log_ = nullptr;
    std::ostream* progress_ = nullptr;
    std::vector<TrainLogRow> rows_;
    std::uint64_t episode_ = 0;
    std::uint64_t updates_ = 0;
    std::chrono::steady_clock::time_point start_;
};

}  // namespace tacdec
