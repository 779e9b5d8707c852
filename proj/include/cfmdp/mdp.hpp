#pragma once

#include "cfmdp/common.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace cfmdp {

/// Tolerance for transition rows summing to one.
inline constexpr prec_t kRowSumTolerance = 1e-9;

/**
 * Stationary finite-horizon MDP with `n` states, `m` actions and horizon `T`
 * (time steps 0..T-1).
 *
 * Transitions are stored row-major as P[(s * m + a) * n + s'] and rewards as
 * R[s * m + a]. The constructor only checks that dimensions agree; use
 * validate_mdp() for the probabilistic invariants.
 */
class Mdp {
public:
    Mdp() = default;

    Mdp(int n, int m, int horizon, std::vector<prec_t> transition, std::vector<prec_t> reward)
        : n_(n), m_(m), horizon_(horizon), transition_(std::move(transition)),
          reward_(std::move(reward)) {
        if (n < 1 || m < 1 || horizon < 1)
            throw invalid_input("Mdp: n, m and horizon must all be >= 1");
        if (transition_.size() != std::size_t(n) * m * n)
            throw invalid_input("Mdp: transition tensor must have n*m*n entries");
        if (reward_.size() != std::size_t(n) * m)
            throw invalid_input("Mdp: reward matrix must have n*m entries");
        log_transition_.resize(transition_.size());
        for (std::size_t i = 0; i < transition_.size(); ++i)
            log_transition_[i] = transition_[i] > 0.0 ? std::log(transition_[i]) : kNegInf;
    }

    int states() const { return n_; }
    int actions() const { return m_; }
    int horizon() const { return horizon_; }

    prec_t transition(StateId s, ActionId a, StateId next) const {
        return transition_[(std::size_t(s) * m_ + a) * n_ + next];
    }
    std::span<const prec_t> transition_row(StateId s, ActionId a) const {
        return {transition_.data() + (std::size_t(s) * m_ + a) * n_, std::size_t(n_)};
    }
    /// log P(.|s,a), with -inf at zero-probability successors.
    std::span<const prec_t> log_transition_row(StateId s, ActionId a) const {
        return {log_transition_.data() + (std::size_t(s) * m_ + a) * n_, std::size_t(n_)};
    }
    prec_t reward(StateId s, ActionId a) const { return reward_[std::size_t(s) * m_ + a]; }

    const std::vector<prec_t>& transition_data() const { return transition_; }
    const std::vector<prec_t>& reward_data() const { return reward_; }

    /// Same model with a different horizon.
    Mdp with_horizon(int horizon) const {
        Mdp copy = *this;
        if (horizon < 1) throw invalid_input("Mdp: horizon must be >= 1");
        copy.horizon_ = horizon;
        return copy;
    }

    bool valid_state(StateId s) const { return s >= 0 && s < n_; }
    bool valid_action(ActionId a) const { return a >= 0 && a < m_; }

private:
    int n_ = 0;
    int m_ = 0;
    int horizon_ = 0;
    std::vector<prec_t> transition_;
    std::vector<prec_t> reward_;
    std::vector<prec_t> log_transition_;
};

/// Observed realization: exactly T state-action pairs, no terminal state.
struct Trajectory {
    std::vector<StateId> states;
    std::vector<ActionId> actions;

    int length() const { return int(states.size()); }
    bool operator==(const Trajectory&) const = default;
};

/// Time-indexed deterministic policy, table[t][s].
struct DeterministicPolicy {
    std::vector<std::vector<ActionId>> table;

    ActionId operator()(int t, StateId s) const { return table[t][s]; }
};

/// Lists every violated Mdp invariant. Empty iff the model is valid.
inline std::vector<std::string> validate_mdp(const Mdp& mdp) {
    std::vector<std::string> report;
    const int n = mdp.states(), m = mdp.actions();
    if (n < 1 || m < 1 || mdp.horizon() < 1) {
        report.emplace_back("dimensions: n, m and T must all be >= 1");
        return report;
    }
    for (StateId s = 0; s < n; ++s) {
        for (ActionId a = 0; a < m; ++a) {
            prec_t sum = 0.0;
            bool bad_entry = false;
            for (const prec_t p : mdp.transition_row(s, a)) {
                if (!(p >= 0.0) || !std::isfinite(p)) bad_entry = true;
                sum += p;
            }
            if (bad_entry) {
                std::ostringstream msg;
                msg << "transition (s=" << s << ", a=" << a << "): negative or non-finite entry";
                report.push_back(msg.str());
            } else if (std::abs(sum - 1.0) > kRowSumTolerance) {
                std::ostringstream msg;
                msg.precision(17);
                msg << "transition (s=" << s << ", a=" << a << "): row sums to " << sum;
                report.push_back(msg.str());
            }
            if (!is_extended_real(mdp.reward(s, a))) {
                std::ostringstream msg;
                msg << "reward (s=" << s << ", a=" << a << "): " << mdp.reward(s, a)
                    << " is neither finite nor -inf";
                report.push_back(msg.str());
            }
        }
    }
    return report;
}

inline void require_valid(const Mdp& mdp) {
    const auto report = validate_mdp(mdp);
    if (!report.empty()) throw invalid_input("invalid mdp: " + report.front());
}

/// Checks lengths, index bounds and that every observed transition has
/// positive probability. Throws invalid_input on the first problem.
inline void validate_trajectory(const Mdp& mdp, const Trajectory& traj) {
    if (traj.states.size() != traj.actions.size())
        throw invalid_input("trajectory: states and actions differ in length");
    if (traj.length() != mdp.horizon())
        throw invalid_input("trajectory: length " + std::to_string(traj.length()) +
                            " does not match horizon " + std::to_string(mdp.horizon()));
    for (int t = 0; t < traj.length(); ++t) {
        if (!mdp.valid_state(traj.states[t]) || !mdp.valid_action(traj.actions[t]))
            throw invalid_input("trajectory: index out of range at t=" + std::to_string(t));
    }
    for (int t = 0; t + 1 < traj.length(); ++t) {
        if (!(mdp.transition(traj.states[t], traj.actions[t], traj.states[t + 1]) > 0.0))
            throw invalid_input("trajectory: zero-probability transition at t=" +
                                std::to_string(t));
    }
}

/// Sum of rewards along the trajectory; -inf absorbs.
inline prec_t outcome(const Mdp& mdp, const Trajectory& traj) {
    if (traj.length() != mdp.horizon() || traj.actions.size() != traj.states.size())
        throw invalid_input("outcome: trajectory length does not match horizon");
    prec_t total = 0.0;
    for (int t = 0; t < traj.length(); ++t) total += mdp.reward(traj.states[t], traj.actions[t]);
    return total;
}

struct BellmanSolution {
    DeterministicPolicy policy;
    /// values[t][s] for t = 0..T, values[T][s] = 0.
    std::vector<std::vector<prec_t>> values;
};

/// Finite-horizon backward induction. Ties go to the smallest action.
inline BellmanSolution optimal_policy_bellman(const Mdp& mdp) {
    require_valid(mdp);
    const int n = mdp.states(), m = mdp.actions(), horizon = mdp.horizon();
    BellmanSolution sol;
    sol.values.assign(horizon + 1, std::vector<prec_t>(n, 0.0));
    sol.policy.table.assign(horizon, std::vector<ActionId>(n, 0));
    for (int t = horizon - 1; t >= 0; --t) {
        const auto& next = sol.values[t + 1];
        for (StateId s = 0; s < n; ++s) {
            prec_t best = kNegInf;
            ActionId best_action = 0;
            for (ActionId a = 0; a < m; ++a) {
                prec_t value = mdp.reward(s, a);
                const auto row = mdp.transition_row(s, a);
                for (StateId sn = 0; sn < n; ++sn) value += weighted(row[sn], next[sn]);
                if (value > best) {
                    best = value;
                    best_action = a;
                }
            }
            sol.values[t][s] = best;
            sol.policy.table[t][s] = best_action;
        }
    }
    return sol;
}

/// Rolls out `policy` from s0. With probability `deviation_prob` a step takes
/// a uniformly random action other than the policy's.
inline Trajectory sample_trajectory(const Mdp& mdp, const DeterministicPolicy& policy,
                                    double deviation_prob, std::uint64_t seed, StateId s0) {
    if (!(deviation_prob >= 0.0 && deviation_prob <= 1.0))
        throw invalid_input("sample_trajectory: deviation_prob must lie in [0, 1]");
    if (!mdp.valid_state(s0)) throw invalid_input("sample_trajectory: invalid initial state");
    if (int(policy.table.size()) < mdp.horizon())
        throw invalid_input("sample_trajectory: policy shorter than horizon");
    rng_t rng(seed);
    const int horizon = mdp.horizon(), m = mdp.actions();
    Trajectory traj;
    traj.states.reserve(horizon);
    traj.actions.reserve(horizon);
    StateId s = s0;
    for (int t = 0; t < horizon; ++t) {
        ActionId a = policy(t, s);
        if (m > 1 && uniform_open(rng) < deviation_prob) {
            // uniform over the m-1 other actions
            const ActionId other = uniform_index(rng, m - 1);
            a = other >= a ? other + 1 : other;
        }
        traj.states.push_back(s);
        traj.actions.push_back(a);
        if (t + 1 < horizon) s = sample_categorical(rng, mdp.transition_row(s, a));
    }
    return traj;
}

} // namespace cfmdp
