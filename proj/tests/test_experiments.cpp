#include "cfmdp/experiments.hpp"
#include "cfmdp/verify.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <atomic>
#include <cmath>

namespace cfmdp {
namespace {

TEST(Stats, MeanCiSkipsNan) {
    const auto r = mean_ci95({1.0, 3.0, std::nan(""), 5.0});
    EXPECT_EQ(r.count, 3u);
    EXPECT_DOUBLE_EQ(r.mean, 3.0);
    EXPECT_NEAR(r.half_width, 1.96 * 2.0 / std::sqrt(3.0), 1e-12);
    EXPECT_EQ(mean_ci95({}).count, 0u);
}

TEST(Stats, RelativeImprovement) {
    EXPECT_DOUBLE_EQ(relative_improvement(10.0, 12.0), 0.2);
    EXPECT_DOUBLE_EQ(relative_improvement(-10.0, -5.0), 0.5);
    EXPECT_EQ(relative_improvement(4.0, 4.0), 0.0);
    EXPECT_TRUE(std::isnan(relative_improvement(0.0, 1.0)));
    EXPECT_TRUE(std::isnan(relative_improvement(kNegInf, 1.0)));
}

TEST(ParallelFor, VisitsEveryIndexAndPropagatesErrors) {
    std::vector<std::atomic<int>> hits(257);
    parallel_for(hits.size(), [&](std::size_t i) { ++hits[i]; }, 4);
    for (const auto& h : hits) EXPECT_EQ(h.load(), 1);
    EXPECT_THROW(parallel_for(10, [](std::size_t i) { if (i == 7) throw invalid_input("boom"); }, 3), invalid_input);
}

TEST(SynthInstance, RowsAreDistributionsWithDominantSuccessor) {
    const auto mdp = synth_instance(8, 4, 5, 0.4, 3);
    EXPECT_TRUE(validate_mdp(mdp).empty());
    for (StateId s = 0; s < 8; ++s)
        for (ActionId a = 0; a < 4; ++a) {
            const auto row = mdp.transition_row(s, a);
            const auto top = std::max_element(row.begin(), row.end());
            // the s* weight is 1 and every other weight is below alpha < 1
            for (auto it = row.begin(); it != row.end(); ++it)
                if (it != top) {
                    EXPECT_LT(*it, *top * 0.4);
                }
            EXPECT_EQ(mdp.reward(s, a), double(s));
        }
}

TEST(SynthInstance, DominantMassMatchesClosedForm) {
    // n = 2: the dominant entry is 1 / (1 + alpha U), whose mean is log(1 + alpha) / alpha
    for (double alpha : {0.2, 1.0}) {
        const int m = 20'000;
        const auto mdp = synth_instance(2, m, 1, alpha, 11);
        double mean = 0.0, sq = 0.0;
        for (StateId s = 0; s < 2; ++s)
            for (ActionId a = 0; a < m; ++a) {
                const auto row = mdp.transition_row(s, a);
                const double top = std::max(row[0], row[1]);
                mean += top / (2.0 * m);
                sq += top * top / (2.0 * m);
            }
        const double se = std::sqrt((sq - mean * mean) / (2.0 * m));
        EXPECT_NEAR(mean, std::log1p(alpha) / alpha, 4 * se) << alpha;
    }
}

TEST(SynthInstance, DeterministicAndValidated) {
    EXPECT_EQ(synth_instance(4, 3, 2, 0.5, 9).transition_data(), synth_instance(4, 3, 2, 0.5, 9).transition_data());
    EXPECT_THROW(synth_instance(4, 3, 2, 0.0, 9), invalid_input);
    EXPECT_THROW(synth_instance(4, 3, 2, 1.5, 9), invalid_input);
}

SyntheticSpec small_spec() {
    SyntheticSpec spec;
    spec.n = 6;
    spec.m = 3;
    spec.horizon = 6;
    spec.n_instances = 2;
    spec.realizations_per_instance = 5;
    spec.seed = 21;
    return spec;
}

TEST(SyntheticSuite, ImprovementsNonNegativeAndMonotone) {
    SuiteOptions options;
    options.ks = {0, 1, 2, 4};
    options.d = 200;
    options.n_samples = 20;
    const auto report = run_synthetic_suite(small_spec(), options);
    ASSERT_EQ(report.records.size(), 10u * 4u);
    for (std::size_t i = 0; i < report.records.size(); i += 4) {
        EXPECT_NEAR(report.records[i].cf_outcome, report.records[i].observed_outcome, 1e-9);
        for (int q = 0; q < 4; ++q) {
            const auto& r = report.records[i + q];
            EXPECT_GE(r.cf_outcome, r.observed_outcome - 1e-9);
            if (q > 0) {
                EXPECT_GE(r.cf_outcome, report.records[i + q - 1].cf_outcome - 1e-9);
            }
            EXPECT_GE(r.unique_explanations, 1);
        }
    }
    ASSERT_EQ(report.change_frequency.size(), 4u);
    for (double f : report.change_frequency[0]) EXPECT_EQ(f, 0.0);
}

TEST(SyntheticSuite, ReproducibleAcrossThreadCounts) {
    SuiteOptions options;
    options.ks = {1, 3};
    options.d = 100;
    options.n_samples = 10;
    options.threads = 1;
    const auto a = run_synthetic_suite(small_spec(), options);
    options.threads = 3;
    const auto b = run_synthetic_suite(small_spec(), options);
    ASSERT_EQ(a.records.size(), b.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i) {
        EXPECT_EQ(a.records[i].cf_outcome, b.records[i].cf_outcome);
        EXPECT_EQ(a.records[i].unique_explanations, b.records[i].unique_explanations);
    }
    EXPECT_EQ(a.change_frequency, b.change_frequency);
}

TEST(SyntheticSuite, RejectsBudgetAboveHorizon) {
    SuiteOptions options;
    options.ks = {7};
    EXPECT_THROW(run_synthetic_suite(small_spec(), options), invalid_input);
}

EpisodeLog toy_log() {
    EpisodeLog log;
    log.state_labels = {"A", "B", "C", "D", "E"};
    log.action_labels = {"x", "y"};
    log.episodes = {{"e1", {{0, 1, 2}, {0, 1, 0}}}, {"e2", {{1, 2, 3, 4}, {1, 1, 0, 0}}}};
    return log;
}

TEST(Dirichlet, EmptyLogGivesPriorMean) {
    EpisodeLog log = toy_log();
    log.episodes.clear();
    const auto p = dirichlet_transition_estimate(log, 5, 2);
    // row of state 2: band weights (0.01, 1, 1, 1, 0.01), total 3.02
    const std::size_t base = (2 * 2 + 0) * 5;
    const double expected[] = {0.01 / 3.02, 1 / 3.02, 1 / 3.02, 1 / 3.02, 0.01 / 3.02};
    for (int j = 0; j < 5; ++j) EXPECT_NEAR(p[base + j], expected[j], 1e-15);
}

TEST(Dirichlet, CountsConcentrateMass) {
    EpisodeLog log = toy_log();
    log.episodes.clear();
    Trajectory tr;
    for (int i = 0; i <= 1000; ++i) {
        tr.states.push_back(i % 2 == 0 ? 2 : 3);
        tr.actions.push_back(0);
    }
    log.episodes.push_back({"long", tr});
    const auto p = dirichlet_transition_estimate(log, 5, 2);
    // 500 observations of 2 -x-> 3 against prior mass 3.02
    EXPECT_NEAR(p[(2 * 2 + 0) * 5 + 3], 501.0 / 503.02, 1e-12);
    EXPECT_GE(p[(2 * 2 + 0) * 5 + 3], 0.99);
    for (double v : p) EXPECT_GT(v, 0.0);
}

TEST(Dirichlet, PosteriorSamplingAgreesWithClosedForm) {
    const auto log = toy_log();
    const auto closed = dirichlet_transition_estimate(log, 5, 2);
    const auto sampled = dirichlet_transition_estimate(log, 5, 2, {20'000, 4});
    for (std::size_t i = 0; i < closed.size(); ++i) EXPECT_NEAR(sampled[i], closed[i], 0.01) << i;
    for (StateId s = 0; s < 5; ++s)
        for (ActionId a = 0; a < 2; ++a) {
            double total = 0.0;
            for (int j = 0; j < 5; ++j) total += sampled[(s * 2 + a) * 5 + j];
            EXPECT_NEAR(total, 1.0, 1e-12);
        }
}

TEST(Dirichlet, RejectsOutOfRangeEpisodes) {
    auto log = toy_log();
    log.episodes.push_back({"bad", {{0, 9}, {0, 0}}});
    EXPECT_THROW(dirichlet_transition_estimate(log, 5, 2), invalid_input);
}

TEST(Rewards, StateRankedAndUnobservedForbidden) {
    const auto log = toy_log();
    const auto r = assign_rewards_from_log(log, 5, 2);
    EXPECT_EQ(r[0 * 2 + 0], 5.0);
    EXPECT_EQ(r[0 * 2 + 1], kNegInf);
    EXPECT_EQ(r[4 * 2 + 0], 1.0);
    EXPECT_EQ(r[3 * 2 + 0], 2.0);
    const auto open = assign_rewards_from_log(log, 5, 2, false);
    for (StateId s = 0; s < 5; ++s)
        for (ActionId a = 0; a < 2; ++a) EXPECT_EQ(open[s * 2 + a], double(5 - s));
}

TEST(LogModel, ObservedEpisodesHaveFiniteOutcome) {
    const auto log = toy_log();
    const auto model = estimate_log_model(log);
    for (const auto& e : log.episodes) {
        const auto mdp = model.for_horizon(e.trajectory.length());
        EXPECT_TRUE(validate_mdp(mdp).empty());
        EXPECT_TRUE(std::isfinite(outcome(mdp, e.trajectory)));
    }
    SuiteOptions options;
    options.ks = {0, 2};
    options.d = 100;
    options.n_samples = 10;
    const auto report = run_log_suite(log, model, options, 3);
    ASSERT_EQ(report.records.size(), 4u);
    for (const auto& r : report.records) EXPECT_GE(r.cf_outcome, r.observed_outcome - 1e-9);
}

struct Case {
    TinyInstance inst;
    CounterfactualTransitions cf;
};

Case tiny_case(std::uint64_t seed) {
    auto inst = random_tiny_instance(seed, {4, 3, 6, 3, 0.2, 0.0});
    auto cf = estimate_counterfactual_transitions(inst.mdp, inst.traj, 200, seed);
    return {std::move(inst), std::move(cf)};
}

TEST(Baselines, DominatedByOptimalPolicy) {
    for (std::uint64_t seed = 1; seed <= 25; ++seed) {
        const auto [inst, cf] = tiny_case(seed);
        const double best = solve_optimal_cf_policy(inst.mdp, inst.traj, cf, inst.k).value(inst.traj.states[0]);
        for (auto kind : {BaselineKind::random, BaselineKind::greedy, BaselineKind::noisy_greedy}) {
            const auto p = baseline_policy(kind, inst.mdp, inst.traj, cf, inst.k, seed);
            EXPECT_LE(evaluate_policy_exact(p, cf, inst.traj, inst.mdp, inst.k), best + 1e-9) << to_string(kind);
        }
    }
}

TEST(Baselines, ZeroBudgetReplaysObserved) {
    const auto [inst, cf] = tiny_case(3);
    for (auto kind : {BaselineKind::random, BaselineKind::greedy, BaselineKind::noisy_greedy})
        EXPECT_EQ(baseline_policy(kind, inst.mdp, inst.traj, cf, 0, 1),
                  EnhancedPolicy::observed(inst.traj, inst.mdp.states(), 0));
}

TEST(Baselines, GreedyMatchesHandLookahead) {
    // R = (1, 0 | 5, 2); from state 0 action 1 reaches state 1 w.p. 0.7
    const Mdp mdp(2, 2, 2, {1.0, 0.0, 0.3, 0.7, 0.5, 0.5, 0.5, 0.5}, {1.0, 0.0, 5.0, 2.0});
    const CounterfactualTransitions cf(2, 2, 1, 0, {1.0, 0.0, 0.3, 0.7, 0.5, 0.5, 0.5, 0.5});
    // a=0: 1 + 1 = 2; a=1: 0 + 0.3 + 3.5 = 3.8
    EXPECT_EQ(greedy_action(mdp, cf, 0, 0), 1);
    // last step has no lookahead
    EXPECT_EQ(greedy_action(mdp, cf, 1, 0), 0);
    EXPECT_EQ(greedy_next_state_reward(Mdp(1, 2, 1, {1.0, 1.0}, {kNegInf, -3.0}), 0), -3.0);
}

TEST(Baselines, NoisyGreedyHalfAndHalf) {
    const auto mdp = synth_instance(10, 4, 30, 0.5, 5);
    DeterministicPolicy pi;
    pi.table.assign(30, std::vector<ActionId>(10, 0));
    const auto traj = sample_trajectory(mdp, pi, 0.0, 2, 0);
    const auto cf = estimate_counterfactual_transitions(mdp, traj, 100, 4);
    const int k = 30;
    const auto p = baseline_policy(BaselineKind::noisy_greedy, mdp, traj, cf, k, 99);
    int greedy_hits = 0, decisive = 0;
    for (int t = 0; t < 30; ++t)
        for (StateId s = 0; s < 10; ++s) {
            const ActionId g = greedy_action(mdp, cf, t, s);
            if (g == traj.actions[t]) continue;
            for (int l = 0; l < k; ++l) {
                ++decisive;
                greedy_hits += p.at(t, l, s) == g;
            }
        }
    ASSERT_GT(decisive, 1000);
    EXPECT_NEAR(double(greedy_hits) / decisive, 0.5, 3 * std::sqrt(0.25 / decisive));
}

TEST(Explanations, UniqueCountProperties) {
    const auto [inst, cf] = tiny_case(12);
    const auto zero = solve_optimal_cf_policy(inst.mdp, inst.traj, cf, 0);
    EXPECT_EQ(unique_explanations(zero.actions, cf, inst.traj, inst.mdp, 200, 1), 1);
    const auto policy = solve_optimal_cf_policy(inst.mdp, inst.traj, cf, inst.k);
    int previous = 0;
    for (int n : {1, 10, 100, 1000}) {
        const int u = unique_explanations(policy.actions, cf, inst.traj, inst.mdp, n, 8);
        EXPECT_GE(u, previous);
        EXPECT_LE(u, n);
        previous = u;
    }
}

TEST(Explanations, DeterministicDynamicsGiveOneExplanation) {
    std::vector<prec_t> p(3 * 2 * 3, 0.0);
    for (int s = 0; s < 3; ++s)
        for (int a = 0; a < 2; ++a) p[(s * 2 + a) * 3 + (s + a) % 3] = 1.0;
    const Mdp mdp(3, 2, 5, p, {0, 1, 2, 0, 1, 3});
    const Trajectory traj{{0, 0, 0, 0, 0}, {0, 0, 0, 0, 0}};
    const auto cf = estimate_counterfactual_transitions(mdp, traj, 50, 2);
    const auto policy = solve_optimal_cf_policy(mdp, traj, cf, 2);
    EXPECT_EQ(unique_explanations(policy.actions, cf, traj, mdp, 100, 3), 1);
}

TEST(Explanations, ChangeProfileBounds) {
    const auto [inst, cf] = tiny_case(17);
    const auto zero = solve_optimal_cf_policy(inst.mdp, inst.traj, cf, 0);
    for (double f : change_frequency_profile(zero.actions, cf, inst.traj, inst.mdp, 50, 1).frequency)
        EXPECT_EQ(f, 0.0);
    const auto policy = solve_optimal_cf_policy(inst.mdp, inst.traj, cf, inst.k);
    const auto a = change_frequency_profile(policy.actions, cf, inst.traj, inst.mdp, 300, 5);
    const auto b = change_frequency_profile(policy.actions, cf, inst.traj, inst.mdp, 300, 5);
    EXPECT_EQ(a.frequency, b.frequency);
    EXPECT_EQ(a.best, b.best);
    double total = 0.0;
    for (double f : a.frequency) total += f;
    EXPECT_LE(total, inst.k + 1e-12);
    EXPECT_LE(int(a.best.changed_steps.size()), inst.k);
}

} // namespace
} // namespace cfmdp
