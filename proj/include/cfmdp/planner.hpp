#pragma once

#include "cfmdp/common.hpp"
#include "cfmdp/gumbel.hpp"
#include "cfmdp/mdp.hpp"

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace cfmdp {

/// Counterfactual state s paired with the number l of actions changed so far.
struct EnhancedState {
    StateId s;
    int l;
    bool operator==(const EnhancedState&) const = default;
};

/**
 * Deterministic non-stationary policy over enhanced states, pi((s, l), t),
 * for s in [0, n), l in [0, k], t in [0, T).
 */
class EnhancedPolicy {
public:
    EnhancedPolicy() = default;
    EnhancedPolicy(int states, int horizon, int budget, ActionId fill = 0)
        : n_(states), horizon_(horizon), k_(budget),
          table_(std::size_t(horizon) * (budget + 1) * states, fill) {
        if (states < 1 || horizon < 1 || budget < 0)
            throw invalid_input("EnhancedPolicy: bad dimensions");
    }

    /// Policy that always replays the observed actions.
    static EnhancedPolicy observed(const Trajectory& traj, int states, int budget) {
        EnhancedPolicy p(states, traj.length(), budget);
        for (int t = 0; t < traj.length(); ++t)
            for (int l = 0; l <= budget; ++l)
                for (StateId s = 0; s < states; ++s) p.at(t, l, s) = traj.actions[t];
        return p;
    }

    int states() const { return n_; }
    int horizon() const { return horizon_; }
    int budget() const { return k_; }

    ActionId operator()(EnhancedState x, int t) const { return at(t, x.l, x.s); }
    ActionId at(int t, int l, StateId s) const { return table_[index(t, l, s)]; }
    ActionId& at(int t, int l, StateId s) { return table_[index(t, l, s)]; }

    const std::vector<ActionId>& data() const { return table_; }
    bool operator==(const EnhancedPolicy&) const = default;

private:
    std::size_t index(int t, int l, StateId s) const {
        return (std::size_t(t) * (k_ + 1) + l) * n_ + s;
    }

    int n_ = 0;
    int horizon_ = 0;
    int k_ = 0;
    std::vector<ActionId> table_;
};

/**
 * Optimal counterfactual policy and its value table h(s, r, c): the best
 * expected reward over the last r steps from state s with at most c changes
 * left. r in [0, T], c in [0, k].
 */
struct CfPolicy {
    int k = 0;
    EnhancedPolicy actions;
    std::vector<prec_t> values;

    prec_t h(StateId s, int r, int c) const {
        return values[(std::size_t(r) * (k + 1) + c) * actions.states() + s];
    }
    prec_t& h(StateId s, int r, int c) {
        return values[(std::size_t(r) * (k + 1) + c) * actions.states() + s];
    }
    /// Optimal average counterfactual outcome h(s_0, T, k).
    prec_t value(StateId s0) const { return h(s0, actions.horizon(), k); }
};

/// P+_{tau,t}((s',l') | (s,l), a). Nonzero only if the change counter moves
/// consistently with whether a differs from the observed action.
inline prec_t enhanced_transition(const CounterfactualTransitions& cf, const Trajectory& traj, int k, int t,
                                  EnhancedState from, ActionId a, EnhancedState to) {
    if (to.l > k || to.l < 0 || from.l < 0) return 0.0;
    const bool observed_action = a == traj.actions[t];
    const bool compatible = (observed_action && to.l == from.l) || (!observed_action && to.l == from.l + 1);
    return compatible ? cf(t, from.s, a, to.s) : 0.0;
}

namespace detail {

inline void check_planner_inputs(const Mdp& mdp, const Trajectory& traj, const CounterfactualTransitions& cf,
                                 int k) {
    const int horizon = traj.length();
    if (horizon < 1 || int(traj.actions.size()) != horizon)
        throw invalid_input("planner: malformed trajectory");
    if (k < 0 || k > horizon) throw invalid_input("planner: k must lie in [0, T]");
    if (cf.states() != mdp.states() || cf.actions() != mdp.actions())
        throw invalid_input("planner: counterfactual tensor and mdp disagree on n or m");
    if (cf.slices() != horizon - 1)
        throw invalid_input("planner: counterfactual tensor needs T-1 slices");
    for (int t = 0; t < horizon; ++t)
        if (!mdp.valid_state(traj.states[t]) || !mdp.valid_action(traj.actions[t]))
            throw invalid_input("planner: trajectory index out of range");
}

/// R(s,a) + sum_{s'} P_{tau,t}(s'|s,a) * next[s']. The final step (no slice) adds nothing.
inline prec_t one_step_value(const Mdp& mdp, const CounterfactualTransitions& cf, int t, StateId s, ActionId a,
                             const prec_t* next) {
    prec_t value = mdp.reward(s, a);
    if (t < cf.slices()) {
        const auto row = cf.row(t, s, a);
        for (std::size_t sn = 0; sn < row.size(); ++sn) value += weighted(row[sn], next[sn]);
    }
    return value;
}

} // namespace detail

/**
 * Dynamic program for the optimal counterfactual policy under at most k
 * action changes. Runs in O(n^2 m T k).
 *
 * With budget left, an alternative action replaces the observed one only on
 * strict improvement; alternatives are scanned in ascending order.
 */
inline CfPolicy solve_optimal_cf_policy(const Mdp& mdp, const Trajectory& traj, const CounterfactualTransitions& cf,
                                        int k) {
    detail::check_planner_inputs(mdp, traj, cf, k);
    const int n = mdp.states(), m = mdp.actions(), horizon = traj.length();

    CfPolicy result;
    result.k = k;
    result.actions = EnhancedPolicy(n, horizon, k);
    result.values.assign(std::size_t(horizon + 1) * (k + 1) * n, 0.0);

    for (int r = 1; r <= horizon; ++r) {
        const int t = horizon - r;
        const ActionId observed = traj.actions[t];
        const prec_t* next0 = &result.h(0, r - 1, 0);
        for (StateId s = 0; s < n; ++s) {
            result.h(s, r, 0) = detail::one_step_value(mdp, cf, t, s, observed, next0);
            result.actions.at(t, k, s) = observed;
        }
    }
    for (int r = 1; r <= horizon; ++r) {
        const int t = horizon - r;
        const ActionId observed = traj.actions[t];
        for (int c = 1; c <= k; ++c) {
            const prec_t* keep_next = &result.h(0, r - 1, c);
            const prec_t* change_next = &result.h(0, r - 1, c - 1);
            for (StateId s = 0; s < n; ++s) {
                prec_t best_reward = detail::one_step_value(mdp, cf, t, s, observed, keep_next);
                ActionId best_action = observed;
                for (ActionId a = 0; a < m; ++a) {
                    if (a == observed) continue;
                    const prec_t reward_alt = detail::one_step_value(mdp, cf, t, s, a, change_next);
                    if (reward_alt > best_reward) {
                        best_reward = reward_alt;
                        best_action = a;
                    }
                }
                result.h(s, r, c) = best_reward;
                result.actions.at(t, k - c, s) = best_action;
            }
        }
    }
    return result;
}

/**
 * Exact average counterfactual outcome of `policy`, by pushing the
 * enhanced-state distribution forward from (s_0, 0).
 *
 * Throws invalid_input if a reachable state with the budget exhausted picks
 * a non-observed action.
 */
inline prec_t evaluate_policy_exact(const EnhancedPolicy& policy, const CounterfactualTransitions& cf,
                                    const Trajectory& traj, const Mdp& rewards, int k) {
    const int n = rewards.states(), horizon = traj.length();
    if (policy.budget() != k || policy.horizon() != horizon || policy.states() != n)
        throw invalid_input("evaluate_policy_exact: policy dimensions do not match");
    if (cf.slices() != horizon - 1 || cf.states() != n)
        throw invalid_input("evaluate_policy_exact: counterfactual tensor dimensions do not match");

    // mass[l * n + s]
    std::vector<prec_t> mass(std::size_t(k + 1) * n, 0.0), next_mass(mass.size());
    mass[traj.states[0]] = 1.0;
    prec_t total = 0.0;
    for (int t = 0; t < horizon; ++t) {
        std::fill(next_mass.begin(), next_mass.end(), 0.0);
        for (int l = 0; l <= k; ++l) {
            for (StateId s = 0; s < n; ++s) {
                const prec_t p = mass[std::size_t(l) * n + s];
                if (p == 0.0) continue;
                const ActionId a = policy.at(t, l, s);
                const bool changed = a != traj.actions[t];
                if (changed && l == k)
                    throw invalid_input("evaluate_policy_exact: policy exceeds the change budget at t=" +
                                        std::to_string(t));
                total += weighted(p, rewards.reward(s, a));
                if (t + 1 < horizon) {
                    const int next_l = changed ? l + 1 : l;
                    const auto row = cf.row(t, s, a);
                    for (StateId sn = 0; sn < n; ++sn)
                        next_mass[std::size_t(next_l) * n + sn] += p * row[sn];
                }
            }
        }
        mass.swap(next_mass);
    }
    return total;
}

/**
 * Reference optimum by backward induction over the explicit enhanced MDP
 * with change counters 0..T (uncapped), using enhanced_transition for every
 * successor. Actions that would push the counter past k are excluded.
 */
inline prec_t enhanced_backward_induction(const Mdp& mdp, const Trajectory& traj, const CounterfactualTransitions& cf,
                                          int k) {
    detail::check_planner_inputs(mdp, traj, cf, k);
    const int n = mdp.states(), m = mdp.actions(), horizon = traj.length();
    const int levels = horizon + 1;
    std::vector<prec_t> next(std::size_t(levels) * n, 0.0), current(next.size());
    for (int t = horizon - 1; t >= 0; --t) {
        for (int l = 0; l < levels; ++l) {
            for (StateId s = 0; s < n; ++s) {
                prec_t best = kNegInf;
                bool any = false;
                for (ActionId a = 0; a < m; ++a) {
                    const int used = l + (a != traj.actions[t] ? 1 : 0);
                    if (used > k) continue;
                    prec_t value = mdp.reward(s, a);
                    if (t + 1 < horizon) {
                        for (int ln = 0; ln < levels; ++ln)
                            for (StateId sn = 0; sn < n; ++sn)
                                value += weighted(enhanced_transition(cf, traj, k, t, {s, l}, a, {sn, ln}),
                                                  next[std::size_t(ln) * n + sn]);
                    }
                    if (!any || value > best) best = value;
                    any = true;
                }
                current[std::size_t(l) * n + s] = best;
            }
        }
        next.swap(current);
    }
    return next[traj.states[0]];
}

namespace detail {

// Exhaustive search over joint action assignments. At each step every
// reachable enhanced state (positive mass, l < k) takes each action in turn,
// jointly with all other reachable states, so no per-state decomposition is
// used.
struct OracleSearch {
    const Mdp& mdp;
    const Trajectory& traj;
    const CounterfactualTransitions& cf;
    int k;
    std::uint64_t max_policies;
    std::uint64_t leaves = 0;

    prec_t best_from(int t, const std::vector<prec_t>& mass) {
        const int n = mdp.states(), m = mdp.actions(), horizon = traj.length();
        if (t == horizon) {
            if (++leaves > max_policies) throw invalid_input("brute_force_oracle: instance too large to enumerate");
            return 0.0;
        }
        struct Point {
            int l;
            StateId s;
            prec_t p;
        };
        std::vector<Point> free_points, forced_points;
        for (int l = 0; l <= k; ++l)
            for (StateId s = 0; s < n; ++s)
                if (const prec_t p = mass[std::size_t(l) * n + s]; p > 0.0)
                    (l < k ? free_points : forced_points).push_back({l, s, p});

        std::vector<ActionId> choice(free_points.size(), 0);
        std::vector<prec_t> next(mass.size());
        prec_t best = kNegInf;
        bool any = false;
        auto apply = [&](const Point& x, ActionId a, prec_t& gained) {
            gained += weighted(x.p, mdp.reward(x.s, a));
            if (t + 1 == horizon) return;
            const int next_l = x.l + (a != traj.actions[t] ? 1 : 0);
            const auto row = cf.row(t, x.s, a);
            for (StateId sn = 0; sn < n; ++sn) next[std::size_t(next_l) * n + sn] += x.p * row[sn];
        };
        while (true) {
            std::fill(next.begin(), next.end(), 0.0);
            prec_t gained = 0.0;
            for (std::size_t i = 0; i < free_points.size(); ++i) apply(free_points[i], choice[i], gained);
            for (const auto& x : forced_points) apply(x, traj.actions[t], gained);
            const prec_t value = gained + best_from(t + 1, next);
            if (!any || value > best) best = value;
            any = true;
            std::size_t i = 0;
            for (; i < choice.size(); ++i) {
                if (++choice[i] < m) break;
                choice[i] = 0;
            }
            if (i == choice.size()) break;
        }
        return best;
    }
};

} // namespace detail

/**
 * Exact optimum by exhaustive enumeration of deterministic enhanced-state
 * policies, restricted to the decision points that can affect the outcome:
 * enhanced states reached with positive probability and l < k (at l = k
 * the observed action is forced). Every joint assignment is evaluated by
 * pushing the enhanced-state distribution forward.
 *
 * Throws if more than `max_policies` complete assignments would be needed.
 */
inline prec_t brute_force_oracle(const Mdp& mdp, const Trajectory& traj, const CounterfactualTransitions& cf, int k,
                                 std::uint64_t max_policies = 10'000'000) {
    detail::check_planner_inputs(mdp, traj, cf, k);
    std::vector<prec_t> mass(std::size_t(k + 1) * mdp.states(), 0.0);
    mass[traj.states[0]] = 1.0;
    detail::OracleSearch search{mdp, traj, cf, k, max_policies};
    return search.best_from(0, mass);
}

/// One sampled counterfactual realization tau'.
struct Explanation {
    std::vector<StateId> states;
    std::vector<int> levels;
    std::vector<ActionId> actions;
    prec_t outcome = 0.0;
    /// Time steps where the action differs from the observed one.
    std::vector<int> changed_steps;

    bool operator==(const Explanation&) const = default;
};

/**
 * Samples tau' by rolling `policy` forward through the counterfactual
 * dynamics from (s_0, 0).
 */
inline Explanation sample_explanation(const EnhancedPolicy& policy, const CounterfactualTransitions& cf,
                                      const Trajectory& traj, const Mdp& rewards, std::uint64_t seed) {
    const int horizon = traj.length(), k = policy.budget();
    if (policy.horizon() != horizon || cf.slices() != horizon - 1)
        throw invalid_input("sample_explanation: dimensions do not match");
    rng_t rng(seed);
    Explanation ex;
    ex.states.reserve(horizon);
    ex.levels.reserve(horizon);
    ex.actions.reserve(horizon);
    StateId s = traj.states[0];
    int l = 0;
    for (int t = 0; t < horizon; ++t) {
        const ActionId a = policy.at(t, l, s);
        ex.states.push_back(s);
        ex.levels.push_back(l);
        ex.actions.push_back(a);
        ex.outcome += rewards.reward(s, a);
        const bool changed = a != traj.actions[t];
        if (changed) ex.changed_steps.push_back(t);
        if (int(ex.changed_steps.size()) > k)
            throw std::logic_error("sample_explanation: explanation exceeds the change budget");
        if (t + 1 < horizon) {
            s = sample_categorical(rng, cf.row(t, s, a));
            if (changed) ++l;
        }
    }
    return ex;
}

inline Explanation sample_explanation(const CfPolicy& policy, const CounterfactualTransitions& cf,
                                      const Trajectory& traj, const Mdp& rewards, std::uint64_t seed) {
    return sample_explanation(policy.actions, cf, traj, rewards, seed);
}

} // namespace cfmdp
