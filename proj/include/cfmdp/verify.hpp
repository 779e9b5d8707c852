#pragma once

#include "cfmdp/common.hpp"
#include "cfmdp/gumbel.hpp"
#include "cfmdp/mdp.hpp"
#include "cfmdp/planner.hpp"

#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

namespace cfmdp {

/// Equal within `tol`, treating equal infinities as equal.
inline bool values_match(prec_t a, prec_t b, prec_t tol) {
    return a == b || std::abs(a - b) <= tol;
}

struct TinyInstance {
    Mdp mdp;
    Trajectory traj;
    int k = 0;
};

struct TinyInstanceLimits {
    int max_states = 3;
    int max_actions = 3;
    int max_horizon = 4;
    int max_budget = 2;
    /// Chance that a transition entry is zeroed (one entry per row always survives).
    double zero_prob = 0.2;
    /// Chance that a reward is the -inf sentinel.
    double forbidden_prob = 0.0;
};

/// Random instance of the given size with a realization sampled from a
/// random behavior policy.
inline TinyInstance random_instance(std::uint64_t seed, int n, int m, int horizon, int k, double zero_prob = 0.2,
                                    double forbidden_prob = 0.0) {
    rng_t rng(seed);
    std::vector<prec_t> transition(std::size_t(n) * m * n), reward(std::size_t(n) * m);
    for (std::size_t row = 0; row < std::size_t(n) * m; ++row) {
        const int keep = uniform_index(rng, n);
        double total = 0.0;
        for (int j = 0; j < n; ++j) {
            double w = uniform_open(rng);
            if (j != keep && uniform_open(rng) < zero_prob) w = 0.0;
            transition[row * n + j] = w;
            total += w;
        }
        for (int j = 0; j < n; ++j) transition[row * n + j] /= total;
        reward[row] = uniform_open(rng) < forbidden_prob ? kNegInf : double(uniform_index(rng, 6));
    }
    TinyInstance inst{Mdp(n, m, horizon, std::move(transition), std::move(reward)), {}, k};

    DeterministicPolicy behavior;
    behavior.table.assign(horizon, std::vector<ActionId>(n));
    for (auto& row : behavior.table)
        for (auto& a : row) a = uniform_index(rng, m);
    inst.traj = sample_trajectory(inst.mdp, behavior, 0.3, mix_seed(seed), uniform_index(rng, n));
    return inst;
}

/// Random instance with sizes drawn up to the given limits.
inline TinyInstance random_tiny_instance(std::uint64_t seed, const TinyInstanceLimits& lim = {}) {
    rng_t rng(seed);
    const int n = 2 + uniform_index(rng, lim.max_states - 1);
    const int m = 2 + uniform_index(rng, lim.max_actions - 1);
    const int horizon = 1 + uniform_index(rng, lim.max_horizon);
    const int k = uniform_index(rng, std::min(lim.max_budget, horizon) + 1);
    return random_instance(derive_seed(seed, 7), n, m, horizon, k, lim.zero_prob, lim.forbidden_prob);
}

struct VerifyReport {
    int instances = 0;
    int enumerated = 0;
    int failures = 0;
    std::vector<std::string> messages;

    bool ok() const { return failures == 0; }
    void fail(std::string msg) {
        ++failures;
        messages.push_back(std::move(msg));
    }
};

/**
 * Oracle-equivalence and stability checks on `count` seeded tiny instances:
 * factual reproduction, counterfactual stability, DP value against
 * enumeration (or enhanced-MDP backward induction when enumeration is too
 * large), forward evaluation of the DP policy, and the k = 0 identity.
 */
inline VerifyReport run_verification(int count, std::uint64_t seed, int d = 200,
                                     std::uint64_t max_policies = 10'000'000) {
    VerifyReport report;
    for (int i = 0; i < count; ++i) {
        const auto inst = random_tiny_instance(derive_seed(seed, std::uint64_t(i)));
        const auto& [mdp, traj, k] = inst;
        const auto cf = estimate_counterfactual_transitions(mdp, traj, d, derive_seed(seed, 1000, i));
        ++report.instances;
        auto tag = [&](const char* what) {
            std::ostringstream os;
            os << "instance " << i << " (n=" << mdp.states() << ", m=" << mdp.actions() << ", T=" << mdp.horizon()
               << ", k=" << k << "): " << what;
            return os.str();
        };

        for (int t = 0; t < cf.slices(); ++t)
            if (cf(t, traj.states[t], traj.actions[t], traj.states[t + 1]) != 1.0)
                report.fail(tag("factual transition not reproduced"));
        if (!check_counterfactual_stability(mdp, traj, cf).empty()) report.fail(tag("stability violated"));

        const auto policy = solve_optimal_cf_policy(mdp, traj, cf, k);
        const prec_t dp_value = policy.value(traj.states[0]);
        prec_t reference;
        try {
            reference = brute_force_oracle(mdp, traj, cf, k, max_policies);
            ++report.enumerated;
        } catch (const invalid_input&) {
            reference = enhanced_backward_induction(mdp, traj, cf, k);
        }
        if (!values_match(dp_value, reference, 1e-9)) report.fail(tag("DP value differs from oracle"));
        if (!values_match(evaluate_policy_exact(policy.actions, cf, traj, mdp, k), dp_value, 1e-9))
            report.fail(tag("forward evaluation differs from DP value"));
        const prec_t observed = outcome(mdp, traj);
        if (!(dp_value >= observed - 1e-9) && !(dp_value == observed)) report.fail(tag("value below observed outcome"));
        const auto replay = solve_optimal_cf_policy(mdp, traj, cf, 0);
        if (!values_match(replay.value(traj.states[0]), observed, 1e-9))
            report.fail(tag("k = 0 value differs from observed outcome"));
    }
    return report;
}

} // namespace cfmdp
