#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "fixtures.hpp"
#include "tacdec/search.hpp"

using namespace tacdec;
using fixture::car;
using fixture::road;

namespace {

PolicyValueNet trained_looking_net(std::uint64_t seed) {
    PolicyValueNet net;
    Rng rng(seed);
    net.initialize(rng);
    return net;
}

int sum(const VisitCounts& v) { return std::accumulate(v.begin(), v.end(), 0); }

}  // namespace

TEST(Ucb, Examples) {
    SearchConfig cfg;
    EXPECT_NEAR(ucb_score(10.0, 1, 3, 0.5, cfg), 0.55, 1e-12);
    EXPECT_NEAR(ucb_score(7.0, 4, 9, 0.0, cfg), 7.0 / 20.0, 1e-15);
    Rng rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 100; ++i) {
        const double q = 20.0 * u(rng), p = u(rng);
        const int n_sa = static_cast<int>(rng() % 50), n_s = n_sa + static_cast<int>(rng() % 50);
        const double want = q / 20.0 + 0.1 * p * std::sqrt(n_s + 1.0) / (1.0 + n_sa);
        EXPECT_NEAR(ucb_score(q, n_sa, n_s, p, cfg), want, 1e-12);
    }
}

TEST(Widening, Limit) {
    SearchConfig cfg;
    EXPECT_NEAR(widening_limit(8, cfg), std::pow(8.0, 0.3), 1e-12);
    EXPECT_NEAR(widening_limit(8, cfg), 1.866, 1e-3);
    EXPECT_DOUBLE_EQ(widening_limit(0, cfg), 0.0);
}

TEST(VisitPolicy, Examples) {
    const Policy pi = visit_policy({10, 5, 0, 0, 0}, 1.1);
    const double a = std::pow(10.0, 1 / 1.1), b = std::pow(5.0, 1 / 1.1);
    EXPECT_NEAR(pi[0], a / (a + b), 1e-12);
    EXPECT_NEAR(pi[0], 0.6525, 1e-4);
    EXPECT_NEAR(pi[1], 0.3475, 1e-4);
    const Policy one = visit_policy({0, 0, 7, 0, 0}, 1.1);
    EXPECT_DOUBLE_EQ(one[2], 1.0);
    EXPECT_THROW(visit_policy({0, 0, 0, 0, 0}, 1.1), std::invalid_argument);
}

TEST(Greedy, TiesGoToLowestIndex) {
    EXPECT_EQ(greedy_action({3, 7, 7, 0, 0}), 1);
    EXPECT_EQ(greedy_action({0, 0, 0, 0, 1}), 4);
}

TEST(RootNoise, EpsilonZeroAndNormalization) {
    SearchConfig cfg;
    Rng rng(2);
    const Policy p{0.1, 0.2, 0.3, 0.25, 0.15};
    const ActionMask all{true, true, true, true, true};
    cfg.epsilon = 0.0;
    EXPECT_EQ(add_root_noise(p, all, rng, cfg), p);
    cfg.epsilon = 0.25;
    const ActionMask some{true, false, true, true, false};
    const Policy masked = mask_priors(p, some);
    for (int i = 0; i < 100; ++i) {
        const Policy n = add_root_noise(masked, some, rng, cfg);
        EXPECT_NEAR(std::accumulate(n.begin(), n.end(), 0.0), 1.0, 1e-12);
        EXPECT_EQ(n[1], 0.0);
        EXPECT_EQ(n[4], 0.0);
    }
}

TEST(Search, VisitsSumToIterationsAndRespectMask) {
    const PolicyValueNet net = trained_looking_net(3);
    SearchConfig cfg;
    cfg.mode = SearchMode::Eval;
    SimParams sim;
    Rng env(4);
    const WorldState s0 = generate_initial_state(env, Case::Continuous, sim);
    for (int n : {1, 7, 100}) {
        Rng rng(5);
        const SearchResult r = select_action(s0, n, net, cfg, rng, sim);
        EXPECT_EQ(sum(r.visits), n);
        const ActionMask m = available_actions(s0, sim);
        for (int a = 0; a < kNumActions; ++a)
            if (!m[static_cast<std::size_t>(a)]) {
                EXPECT_EQ(r.visits[static_cast<std::size_t>(a)], 0);
            }
        EXPECT_TRUE(m[static_cast<std::size_t>(index(r.action))]);
    }
}

TEST(Search, SingleIterationPicksPriorArgmax) {
    const PolicyValueNet net = trained_looking_net(6);
    SearchConfig cfg;
    cfg.mode = SearchMode::Eval;
    SimParams sim;
    const WorldState s0 = road(0.0, 1.0, 25.0);
    // With equal Q the exploration term decides the first pick.
    NeuralTreeSearch search(net, cfg, sim);
    Rng rng(7);
    const SearchResult r = search.run(s0, 1, rng);
    const Policy& prior = search.root()->prior;
    EXPECT_EQ(index(r.action), static_cast<int>(std::max_element(prior.begin(), prior.end()) - prior.begin()));
}

TEST(Search, DeterministicForSeed) {
    const PolicyValueNet net = trained_looking_net(8);
    SearchConfig cfg;
    SimParams sim;
    Rng env(9);
    const WorldState s0 = generate_initial_state(env, Case::Exit, sim);
    Rng a(10), b(10);
    const SearchResult ra = select_action(s0, 150, net, cfg, a, sim);
    const SearchResult rb = select_action(s0, 150, net, cfg, b, sim);
    EXPECT_EQ(ra.visits, rb.visits);
    EXPECT_EQ(ra.action, rb.action);
    EXPECT_EQ(ra.q, rb.q);
}

TEST(Search, QBoundedAndWideningHolds) {
    const PolicyValueNet net = trained_looking_net(11);
    SearchConfig cfg;
    SimParams sim;
    Rng env(12), rng(13);
    const WorldState s0 = generate_initial_state(env, Case::Continuous, sim);
    NeuralTreeSearch search(net, cfg, sim);
    search.run(s0, 400, rng);
    const StateNode* root = search.root();
    for (int a = 0; a < kNumActions; ++a) {
        const auto ua = static_cast<std::size_t>(a);
        EXPECT_LE(root->q[ua], 20.0 + 1e-9);
        if (root->n[ua] > 0) {
            EXPECT_LE(static_cast<double>(root->children[ua].size()), 1.0 + widening_limit(root->n[ua], cfg));
        }
    }
}

TEST(Search, TraceWritesOneLinePerIteration) {
    const PolicyValueNet net = trained_looking_net(14);
    SearchConfig cfg;
    SimParams sim;
    NeuralTreeSearch search(net, cfg, sim);
    std::ostringstream os;
    search.set_trace(&os);
    Rng rng(15);
    search.run(road(0.0, 1.0, 25.0), 25, rng);
    const std::string t = os.str();
    EXPECT_EQ(std::count(t.begin(), t.end(), '\n'), 25);
}

TEST(Search, TerminalRootRejected) {
    const PolicyValueNet net;
    WorldState s = road(1001.0, 0.0, 25.0, Case::Exit);
    s.s_term = true;
    Rng rng(1);
    EXPECT_THROW(select_action(s, 10, net, {}, rng), PreconditionError);
}
