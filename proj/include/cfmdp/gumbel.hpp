#pragma once

#include "cfmdp/common.hpp"
#include "cfmdp/mdp.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace cfmdp {

/// One exogenous Gumbel draw per state, U_{t,s}.
using NoiseVector = std::vector<double>;

/// Default number of posterior noise samples per time step.
inline constexpr int kDefaultNoiseSamples = 1000;

/**
 * Gumbel-Max structural transition: argmax_s (logits[s] + noise[s]).
 *
 * Zero-probability successors carry -inf logits and can never win. Exact
 * ties go to the smallest state index.
 */
inline StateId gumbel_max_next_state(std::span<const prec_t> logits, std::span<const double> noise) {
    if (logits.size() != noise.size())
        throw invalid_input("gumbel_max_next_state: logits and noise differ in size");
    StateId best = -1;
    prec_t best_value = kNegInf;
    for (std::size_t s = 0; s < logits.size(); ++s) {
        if (is_neg_inf(logits[s])) continue;
        const prec_t v = logits[s] + noise[s];
        if (best < 0 || v > best_value) {
            best = StateId(s);
            best_value = v;
        }
    }
    if (best < 0) throw invalid_input("gumbel_max_next_state: all logits are -inf");
    return best;
}

inline NoiseVector sample_prior_noise(int n, rng_t& rng) {
    if (n < 1) throw invalid_input("sample_prior_noise: n must be >= 1");
    NoiseVector u(n);
    for (auto& x : u) x = standard_gumbel(rng);
    return u;
}

inline NoiseVector sample_prior_noise(int n, std::uint64_t seed) {
    rng_t rng(seed);
    return sample_prior_noise(n, rng);
}

/**
 * Draws U ~ Gumbel(0,1)^n conditioned on argmax_j(log p_j + U_j) = observed.
 *
 * Top-down construction: the maximum of the perturbed logits is
 * Gumbel(log sum p) = Gumbel(0); the observed state attains it, every other
 * supported state is a Gumbel(log p_j) truncated below the maximum, and
 * zero-probability states keep unconstrained prior noise.
 */
inline NoiseVector sample_posterior_noise(std::span<const prec_t> transition_row, StateId observed_next,
                                          rng_t& rng) {
    const int n = int(transition_row.size());
    if (observed_next < 0 || observed_next >= n || !(transition_row[observed_next] > 0.0))
        throw invalid_input("sample_posterior_noise: observed state outside the support");
    std::vector<prec_t> logits(n);
    for (int j = 0; j < n; ++j)
        logits[j] = transition_row[j] > 0.0 ? std::log(transition_row[j]) : kNegInf;

    NoiseVector u(n);
    while (true) {
        const double top = standard_gumbel(rng);
        u[observed_next] = top - logits[observed_next];
        for (int j = 0; j < n; ++j) {
            if (j == observed_next) continue;
            if (is_neg_inf(logits[j])) {
                u[j] = standard_gumbel(rng);
                continue;
            }
            const double g = logits[j] + standard_gumbel(rng);
            // -log(exp(-top) + exp(-g)), evaluated without overflow
            const double truncated = g > top ? top - std::log1p(std::exp(top - g))
                                             : g - std::log1p(std::exp(g - top));
            u[j] = truncated - logits[j];
        }
        // Rounding can make a truncated value tie the maximum; such draws sit
        // on a measure-zero boundary and are redrawn.
        if (gumbel_max_next_state(logits, u) == observed_next) return u;
    }
}

inline NoiseVector sample_posterior_noise(std::span<const prec_t> transition_row, StateId observed_next,
                                          std::uint64_t seed) {
    rng_t rng(seed);
    return sample_posterior_noise(transition_row, observed_next, rng);
}

/**
 * Non-stationary counterfactual transition tensor P_{tau,t}(s' | s, a), one
 * n x m x n slice for each t = 0..T-2.
 */
class CounterfactualTransitions {
public:
    CounterfactualTransitions() = default;

    CounterfactualTransitions(int n, int m, int slices, int samples)
        : n_(n), m_(m), slices_(slices), samples_(samples),
          data_(std::size_t(slices) * n * m * n, 0.0) {
        if (n < 1 || m < 1 || slices < 0)
            throw invalid_input("CounterfactualTransitions: bad dimensions");
    }

    CounterfactualTransitions(int n, int m, int slices, int samples, std::vector<prec_t> data)
        : CounterfactualTransitions(n, m, slices, samples) {
        if (data.size() != data_.size())
            throw invalid_input("CounterfactualTransitions: data size mismatch");
        data_ = std::move(data);
    }

    int states() const { return n_; }
    int actions() const { return m_; }
    int slices() const { return slices_; }
    /// Number of posterior samples behind every entry (0 when unknown).
    int samples() const { return samples_; }

    prec_t operator()(int t, StateId s, ActionId a, StateId next) const {
        return data_[index(t, s, a) + next];
    }
    prec_t& at(int t, StateId s, ActionId a, StateId next) { return data_[index(t, s, a) + next]; }

    std::span<const prec_t> row(int t, StateId s, ActionId a) const {
        return {data_.data() + index(t, s, a), std::size_t(n_)};
    }
    std::span<prec_t> row(int t, StateId s, ActionId a) {
        return {data_.data() + index(t, s, a), std::size_t(n_)};
    }

    const std::vector<prec_t>& data() const { return data_; }

private:
    std::size_t index(int t, StateId s, ActionId a) const {
        return ((std::size_t(t) * n_ + s) * m_ + a) * n_;
    }

    int n_ = 0;
    int m_ = 0;
    int slices_ = 0;
    int samples_ = 0;
    std::vector<prec_t> data_;
};

/**
 * Fills one slice from a set of posterior noise samples shared by every
 * (s, a) row.
 */
inline void fill_counterfactual_slice(const Mdp& mdp, std::span<const NoiseVector> noise, int t,
                                      CounterfactualTransitions& cf) {
    const int n = mdp.states(), m = mdp.actions();
    const double total = double(noise.size());
    std::vector<int> counts(n);
    for (StateId s = 0; s < n; ++s) {
        for (ActionId a = 0; a < m; ++a) {
            std::fill(counts.begin(), counts.end(), 0);
            const auto logits = mdp.log_transition_row(s, a);
            for (const auto& u : noise) ++counts[gumbel_max_next_state(logits, u)];
            auto row = cf.row(t, s, a);
            for (StateId sn = 0; sn < n; ++sn) row[sn] = double(counts[sn]) / total;
        }
    }
}

/**
 * Monte-Carlo estimate of the counterfactual transition tensor from `d`
 * posterior noise samples per time step.
 *
 * Slice t uses its own seeded stream derived from (seed, t), so slices are
 * independent of each other and of evaluation order.
 */
inline CounterfactualTransitions estimate_counterfactual_transitions(const Mdp& mdp, const Trajectory& traj,
                                                                     int d, std::uint64_t seed) {
    if (d < 1) throw invalid_input("estimate_counterfactual_transitions: d must be >= 1");
    require_valid(mdp);
    validate_trajectory(mdp, traj);
    const int horizon = traj.length();
    CounterfactualTransitions cf(mdp.states(), mdp.actions(), horizon - 1, d);
    std::vector<NoiseVector> noise(d);
    for (int t = 0; t + 1 < horizon; ++t) {
        rng_t rng(derive_seed(seed, std::uint64_t(t)));
        const auto observed_row = mdp.transition_row(traj.states[t], traj.actions[t]);
        for (auto& u : noise) u = sample_posterior_noise(observed_row, traj.states[t + 1], rng);
        fill_counterfactual_slice(mdp, noise, t, cf);
    }
    return cf;
}

struct StabilityViolation {
    int t;
    StateId s;
    ActionId a;
    StateId next;
    prec_t mass;
};

/**
 * Lists every entry that breaks counterfactual stability: for s' other than
 * the observed successor, whenever
 *   P(s_{t+1}|s,a) / P(s_{t+1}|s_t,a_t) >= P(s'|s,a) / P(s'|s_t,a_t)
 * the counterfactual mass on s' must be zero. Ratios with a zero
 * denominator count as +inf.
 */
inline std::vector<StabilityViolation> check_counterfactual_stability(const Mdp& mdp, const Trajectory& traj,
                                                                       const CounterfactualTransitions& cf) {
    std::vector<StabilityViolation> violations;
    const int n = mdp.states(), m = mdp.actions();
    auto ratio = [](prec_t num, prec_t den) {
        return den > 0.0 ? num / den : std::numeric_limits<prec_t>::infinity();
    };
    for (int t = 0; t < cf.slices(); ++t) {
        const StateId observed = traj.states[t + 1];
        const auto factual_row = mdp.transition_row(traj.states[t], traj.actions[t]);
        for (StateId s = 0; s < n; ++s) {
            for (ActionId a = 0; a < m; ++a) {
                const prec_t observed_ratio = ratio(mdp.transition(s, a, observed), factual_row[observed]);
                for (StateId sn = 0; sn < n; ++sn) {
                    if (sn == observed) continue;
                    const prec_t other_ratio = ratio(mdp.transition(s, a, sn), factual_row[sn]);
                    if (observed_ratio >= other_ratio && cf(t, s, a, sn) != 0.0)
                        violations.push_back({t, s, a, sn, cf(t, s, a, sn)});
                }
            }
        }
    }
    return violations;
}

} // namespace cfmdp
