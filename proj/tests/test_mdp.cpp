#include "cfmdp/experiments.hpp"
#include "cfmdp/mdp.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

namespace cfmdp {
namespace {

Mdp identity_mdp(int n, int m, int horizon, double reward = 0.0) {
    std::vector<prec_t> p(std::size_t(n) * m * n, 0.0), r(std::size_t(n) * m, reward);
    for (int s = 0; s < n; ++s)
        for (int a = 0; a < m; ++a) p[(std::size_t(s) * m + a) * n + s] = 1.0;
    return Mdp(n, m, horizon, p, r);
}

Mdp random_mdp(int n, int m, int horizon, std::uint64_t seed) {
    rng_t rng(seed);
    std::vector<prec_t> p(std::size_t(n) * m * n), r(std::size_t(n) * m);
    for (std::size_t row = 0; row < std::size_t(n) * m; ++row) {
        double total = 0.0;
        for (int j = 0; j < n; ++j) total += p[row * n + j] = uniform_open(rng);
        for (int j = 0; j < n; ++j) p[row * n + j] /= total;
        r[row] = 10.0 * uniform_open(rng) - 5.0;
    }
    return Mdp(n, m, horizon, p, r);
}

TEST(ValidateMdp, IdentityIsValid) { EXPECT_TRUE(validate_mdp(identity_mdp(2, 2, 3)).empty()); }

TEST(ValidateMdp, ShortRowNamesCell) {
    std::vector<prec_t> p{1.0, 0.0, 0.9, 0.0, 0.0, 1.0, 0.0, 1.0};
    const Mdp mdp(2, 2, 1, p, std::vector<prec_t>(4, 0.0));
    const auto report = validate_mdp(mdp);
    ASSERT_EQ(report.size(), 1u);
    EXPECT_NE(report[0].find("s=0, a=1"), std::string::npos);
}

TEST(ValidateMdp, NanRewardNamesCell) {
    auto mdp = identity_mdp(2, 2, 1);
    auto r = mdp.reward_data();
    r[3] = std::numeric_limits<double>::quiet_NaN();
    const Mdp bad(2, 2, 1, mdp.transition_data(), r);
    const auto report = validate_mdp(bad);
    ASSERT_EQ(report.size(), 1u);
    EXPECT_NE(report[0].find("reward (s=1, a=1)"), std::string::npos);
}

TEST(ValidateMdp, PositiveInfinityRewardRejected) {
    auto mdp = identity_mdp(1, 1, 1);
    const Mdp bad(1, 1, 1, mdp.transition_data(), {std::numeric_limits<double>::infinity()});
    EXPECT_EQ(validate_mdp(bad).size(), 1u);
    const Mdp ok(1, 1, 1, mdp.transition_data(), {kNegInf});
    EXPECT_TRUE(validate_mdp(ok).empty());
}

TEST(ValidateMdp, NegativeEntryRejected) {
    const Mdp bad(2, 1, 1, {1.5, -0.5, 0.0, 1.0}, {0.0, 0.0});
    EXPECT_EQ(validate_mdp(bad).size(), 1u);
}

TEST(MdpConstruction, RejectsBadDimensions) {
    EXPECT_THROW(Mdp(0, 1, 1, {}, {}), invalid_input);
    EXPECT_THROW(Mdp(1, 1, 0, {1.0}, {0.0}), invalid_input);
    EXPECT_THROW(Mdp(2, 1, 1, {1.0}, {0.0, 0.0}), invalid_input);
}

TEST(Outcome, DirectSum) {
    std::vector<prec_t> r(4 * 1);
    for (int s = 0; s < 4; ++s) r[s] = s;
    auto base = identity_mdp(4, 1, 2);
    const Mdp mdp(4, 1, 2, base.transition_data(), r);
    EXPECT_EQ(outcome(mdp, {{2, 3}, {0, 0}}), 5.0);
}

TEST(Outcome, NegativeInfinityAbsorbs) {
    auto base = identity_mdp(2, 2, 3);
    const Mdp mdp(2, 2, 3, base.transition_data(), {1.0, kNegInf, 2.0, 3.0});
    EXPECT_EQ(outcome(mdp, {{0, 0, 0}, {0, 1, 0}}), kNegInf);
}

TEST(Outcome, LengthMismatchThrows) {
    EXPECT_THROW(outcome(identity_mdp(2, 2, 3), {{0, 0}, {0, 0}}), invalid_input);
}

TEST(Outcome, MatchesIndependentResum) {
    const auto mdp = random_mdp(5, 3, 12, 7);
    DeterministicPolicy pi;
    pi.table.assign(12, std::vector<ActionId>(5, 1));
    const auto traj = sample_trajectory(mdp, pi, 0.5, 11, 2);
    double expected = 0.0;
    for (int t = 0; t < 12; ++t) expected += mdp.reward_data()[traj.states[t] * 3 + traj.actions[t]];
    EXPECT_EQ(outcome(mdp, traj), expected);
    EXPECT_EQ(outcome(mdp, traj), outcome(mdp, traj));
}

TEST(Bellman, OneStepHorizonPicksBestReward) {
    auto base = identity_mdp(2, 3, 1);
    const Mdp mdp(2, 3, 1, base.transition_data(), {1.0, 4.0, 4.0, 7.0, 0.0, -1.0});
    const auto sol = optimal_policy_bellman(mdp);
    EXPECT_EQ(sol.policy(0, 0), 1); // tie 4 vs 4 goes to the smaller action
    EXPECT_EQ(sol.policy(0, 1), 0);
    EXPECT_EQ(sol.values[1][0], 0.0);
}

TEST(Bellman, ActionIndependentAbsorption) {
    // every row is a point mass on s* = 3, R(s,a) = s
    const int n = 5, m = 2, horizon = 6;
    std::vector<prec_t> p(n * m * n, 0.0), r(n * m);
    for (int s = 0; s < n; ++s)
        for (int a = 0; a < m; ++a) {
            p[(s * m + a) * n + 3] = 1.0;
            r[s * m + a] = s;
        }
    const auto sol = optimal_policy_bellman(Mdp(n, m, horizon, p, r));
    for (int s0 = 0; s0 < n; ++s0) EXPECT_DOUBLE_EQ(sol.values[0][s0], s0 + (horizon - 1) * 3.0);
}

TEST(Bellman, MatchesExhaustiveEnumeration) {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto mdp = random_mdp(2, 2, 3, seed);
        const auto sol = optimal_policy_bellman(mdp);
        for (int s0 = 0; s0 < 2; ++s0) {
            EXPECT_NEAR(sol.values[0][s0], oracle::exhaustive_best_value(mdp, s0), 1e-9);
            EXPECT_NEAR(oracle::policy_value(mdp, sol.policy.table, s0), sol.values[0][s0], 1e-9);
        }
    }
}

TEST(Bellman, DominatesEveryEnumeratedPolicy) {
    // n*m*T <= 50
    const auto mdp = random_mdp(3, 2, 4, 99);
    const auto sol = optimal_policy_bellman(mdp);
    std::vector<std::vector<int>> table(4, std::vector<int>(3, 0));
    for (int code = 0; code < (1 << 12); ++code) {
        for (int c = 0; c < 12; ++c) table[c / 3][c % 3] = (code >> c) & 1;
        for (int s0 = 0; s0 < 3; ++s0)
            EXPECT_LE(oracle::policy_value(mdp, table, s0), sol.values[0][s0] + 1e-9);
    }
}

TEST(Bellman, NegativeInfinityRewardsAvoided) {
    auto base = identity_mdp(2, 2, 3);
    const Mdp mdp(2, 2, 3, base.transition_data(), {kNegInf, 1.0, 2.0, kNegInf});
    const auto sol = optimal_policy_bellman(mdp);
    EXPECT_EQ(sol.values[0][0], 3.0);
    EXPECT_EQ(sol.values[0][1], 6.0);
    EXPECT_FALSE(std::isnan(sol.values[0][0]));
}

TEST(SampleTrajectory, NoDeviationIsPolicyRollout) {
    // deterministic cycle s -> s+1 mod 3
    std::vector<prec_t> p(3 * 2 * 3, 0.0);
    for (int s = 0; s < 3; ++s)
        for (int a = 0; a < 2; ++a) p[(s * 2 + a) * 3 + (s + 1) % 3] = 1.0;
    const Mdp mdp(3, 2, 5, p, std::vector<prec_t>(6, 0.0));
    DeterministicPolicy pi;
    pi.table.assign(5, {0, 1, 0});
    const auto traj = sample_trajectory(mdp, pi, 0.0, 42, 0);
    EXPECT_EQ(traj.states, (std::vector<int>{0, 1, 2, 0, 1}));
    EXPECT_EQ(traj.actions, (std::vector<int>{0, 1, 0, 0, 1}));
}

TEST(SampleTrajectory, FullDeviationAlwaysDiffers) {
    const auto mdp = random_mdp(4, 2, 50, 3);
    DeterministicPolicy pi;
    pi.table.assign(50, std::vector<ActionId>(4, 0));
    const auto traj = sample_trajectory(mdp, pi, 1.0, 5, 1);
    for (int t = 0; t < 50; ++t) EXPECT_NE(traj.actions[t], pi(t, traj.states[t]));
}

TEST(SampleTrajectory, AgreementFrequencyBinomial) {
    const int steps = 10'000;
    const auto mdp = random_mdp(4, 5, steps, 8);
    DeterministicPolicy pi;
    pi.table.assign(steps, std::vector<ActionId>{0, 1, 2, 3});
    const auto traj = sample_trajectory(mdp, pi, 0.05, 2024, 0);
    int agree = 0;
    for (int t = 0; t < steps; ++t) agree += traj.actions[t] == pi(t, traj.states[t]);
    const double freq = double(agree) / steps;
    const double sigma = std::sqrt(0.95 * 0.05 / steps);
    EXPECT_NEAR(freq, 0.95, 3 * sigma);
}

TEST(SampleTrajectory, ReproducibleAndValid) {
    const auto mdp = random_mdp(6, 3, 30, 12);
    DeterministicPolicy pi;
    pi.table.assign(30, std::vector<ActionId>(6, 2));
    const auto a = sample_trajectory(mdp, pi, 0.2, 77, 4);
    EXPECT_EQ(a, sample_trajectory(mdp, pi, 0.2, 77, 4));
    EXPECT_NO_THROW(validate_trajectory(mdp, a));
    EXPECT_THROW(sample_trajectory(mdp, pi, 1.5, 77, 4), invalid_input);
}

TEST(ValidateTrajectory, ZeroProbabilityTransitionRejected) {
    const auto mdp = identity_mdp(2, 1, 2);
    EXPECT_THROW(validate_trajectory(mdp, {{0, 1}, {0, 0}}), invalid_input);
    EXPECT_NO_THROW(validate_trajectory(mdp, {{1, 1}, {0, 0}}));
}

} // namespace
} // namespace cfmdp
