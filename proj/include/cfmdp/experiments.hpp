#pragma once

#include "cfmdp/common.hpp"
#include "cfmdp/gumbel.hpp"
#include "cfmdp/mdp.hpp"
#include "cfmdp/planner.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <numeric>
#include <set>
#include <string>
#include <thread>
#include <vector>

namespace cfmdp {

// Runs body(i) for i in [0, count) on up to `threads` workers (0 = hardware
// concurrency). Results must be written to per-index slots.
inline void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body, unsigned threads = 0) {
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = unsigned(std::min<std::size_t>(threads, count));
    if (threads <= 1) {
        for (std::size_t i = 0; i < count; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::atomic<bool> failed{false};
    std::vector<std::jthread> workers;
    std::mutex error_mutex;
    for (unsigned w = 0; w < threads; ++w) {
        workers.emplace_back([&] {
            for (std::size_t i = next++; i < count && !failed; i = next++) {
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!failed.exchange(true)) error = std::current_exception();
                }
            }
        });
    }
    workers.clear();
    if (error) std::rethrow_exception(error);
}

/// Mean and 95% normal-approximation confidence half-width.
struct MeanCi {
    double mean = 0.0;
    double half_width = 0.0;
    std::size_t count = 0;

    double lower() const { return mean - half_width; }
    double upper() const { return mean + half_width; }
};

/// Skips NaN entries.
inline MeanCi mean_ci95(const std::vector<double>& values) {
    MeanCi r;
    double sum = 0.0;
    for (double v : values)
        if (!std::isnan(v)) {
            sum += v;
            ++r.count;
        }
    if (r.count == 0) return r;
    r.mean = sum / double(r.count);
    if (r.count > 1) {
        double ss = 0.0;
        for (double v : values)
            if (!std::isnan(v)) ss += (v - r.mean) * (v - r.mean);
        r.half_width = 1.96 * std::sqrt(ss / double(r.count - 1) / double(r.count));
    }
    return r;
}

/// (cf - observed) / |observed|; NaN when the observed outcome is zero or
/// either outcome is infinite and the ratio is undefined.
inline double relative_improvement(prec_t observed, prec_t counterfactual) {
    if (observed == counterfactual) return 0.0;
    if (observed == 0.0 || !std::isfinite(observed) || !std::isfinite(counterfactual))
        return std::numeric_limits<double>::quiet_NaN();
    return (counterfactual - observed) / std::abs(observed);
}

// ---------------------------------------------------------------------------
// Synthetic environments

struct SyntheticSpec {
    int n = 20;
    int m = 10;
    int horizon = 20;
    double alpha = 0.4;
    int n_instances = 10;
    int realizations_per_instance = 50;
    double deviation_prob = 0.05;
    std::uint64_t seed = 1;

    void validate() const {
        if (n < 1 || m < 1 || horizon < 1) throw invalid_input("SyntheticSpec: sizes must be >= 1");
        if (!(alpha > 0.0 && alpha <= 1.0)) throw invalid_input("SyntheticSpec: alpha must lie in (0, 1]");
        if (n_instances < 1 || realizations_per_instance < 1)
            throw invalid_input("SyntheticSpec: counts must be >= 1");
        if (!(deviation_prob >= 0.0 && deviation_prob <= 1.0))
            throw invalid_input("SyntheticSpec: deviation_prob must lie in [0, 1]");
    }
};

/**
 * Random instance: every (s, a) row draws its own most-likely successor s*
 * with weight 1, the other weights are U[0, alpha], then normalizes.
 * Rewards are R(s, a) = s.
 */
inline Mdp synth_instance(int n, int m, int horizon, double alpha, std::uint64_t seed) {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw invalid_input("synth_instance: alpha must lie in (0, 1]");
    rng_t rng(seed);
    std::vector<prec_t> transition(std::size_t(n) * m * n), reward(std::size_t(n) * m);
    for (StateId s = 0; s < n; ++s) {
        for (ActionId a = 0; a < m; ++a) {
            prec_t* row = transition.data() + (std::size_t(s) * m + a) * n;
            const StateId star = uniform_index(rng, n);
            double total = 0.0;
            for (StateId j = 0; j < n; ++j) {
                row[j] = j == star ? 1.0 : alpha * uniform_open(rng);
                total += row[j];
            }
            for (StateId j = 0; j < n; ++j) row[j] /= total;
            reward[std::size_t(s) * m + a] = s;
        }
    }
    return Mdp(n, m, horizon, std::move(transition), std::move(reward));
}

struct RealizationRecord {
    int instance = 0;
    int realization = 0;
    int k = 0;
    prec_t observed_outcome = 0.0;
    prec_t cf_outcome = 0.0;
    double relative_improvement = 0.0;
    int unique_explanations = 0;
};

struct KAggregate {
    int k = 0;
    MeanCi observed_outcome;
    MeanCi cf_outcome;
    MeanCi relative_improvement;
    MeanCi unique_explanations;
};

struct MetricsReport {
    std::vector<RealizationRecord> records;
    std::vector<KAggregate> aggregates;
    /// change_frequency[i][t]: mean over realizations of the per-timestep
    /// change frequency, for k = aggregates[i].k.
    std::vector<std::vector<double>> change_frequency;
    double cf_estimation_seconds = 0.0;
    std::size_t realizations = 0;
};

inline std::vector<KAggregate> aggregate_by_k(const std::vector<RealizationRecord>& records,
                                              const std::vector<int>& ks) {
    std::vector<KAggregate> out;
    for (int k : ks) {
        std::vector<double> observed, cf, rel, unique;
        for (const auto& r : records) {
            if (r.k != k) continue;
            observed.push_back(r.observed_outcome);
            cf.push_back(r.cf_outcome);
            rel.push_back(r.relative_improvement);
            unique.push_back(r.unique_explanations);
        }
        out.push_back({k, mean_ci95(observed), mean_ci95(cf), mean_ci95(rel), mean_ci95(unique)});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Explanation statistics

/// Distinct counterfactual action sequences among `n_samples` explanations.
/// Sample i uses seed derive_seed(seed, i), so counts grow with n_samples.
inline int unique_explanations(const EnhancedPolicy& policy, const CounterfactualTransitions& cf,
                               const Trajectory& traj, const Mdp& rewards, int n_samples, std::uint64_t seed) {
    if (n_samples < 1) throw invalid_input("unique_explanations: n_samples must be >= 1");
    std::set<std::vector<ActionId>> seen;
    for (int i = 0; i < n_samples; ++i)
        seen.insert(sample_explanation(policy, cf, traj, rewards, derive_seed(seed, std::uint64_t(i))).actions);
    return int(seen.size());
}

struct ChangeProfile {
    /// Fraction of samples with a'_t != a_t, per t.
    std::vector<double> frequency;
    Explanation best;
    int best_sample = 0;
};

/// Per-timestep change frequencies plus the best-outcome sample (earliest
/// sample wins ties).
inline ChangeProfile change_frequency_profile(const EnhancedPolicy& policy, const CounterfactualTransitions& cf,
                                              const Trajectory& traj, const Mdp& rewards, int n_samples,
                                              std::uint64_t seed) {
    if (n_samples < 1) throw invalid_input("change_frequency_profile: n_samples must be >= 1");
    ChangeProfile profile;
    profile.frequency.assign(traj.length(), 0.0);
    for (int i = 0; i < n_samples; ++i) {
        auto ex = sample_explanation(policy, cf, traj, rewards, derive_seed(seed, std::uint64_t(i)));
        for (int t : ex.changed_steps) profile.frequency[t] += 1.0;
        if (i == 0 || ex.outcome > profile.best.outcome) {
            profile.best = std::move(ex);
            profile.best_sample = i;
        }
    }
    for (auto& f : profile.frequency) f /= double(n_samples);
    return profile;
}

struct SuiteOptions {
    std::vector<int> ks{2, 5, 10};
    int d = kDefaultNoiseSamples;
    /// Explanations sampled per realization for uniqueness and change profiles.
    int n_samples = 100;
    unsigned threads = 0;
};

/**
 * Synthetic pipeline: per instance build the MDP and its Bellman policy,
 * sample noisy realizations, estimate counterfactual tensors and solve the
 * counterfactual policy for every k.
 */
inline MetricsReport run_synthetic_suite(const SyntheticSpec& spec, const SuiteOptions& options) {
    spec.validate();
    for (int k : options.ks)
        if (k < 0 || k > spec.horizon) throw invalid_input("run_synthetic_suite: k must lie in [0, T]");

    std::vector<Mdp> instances(spec.n_instances);
    std::vector<DeterministicPolicy> behavior(spec.n_instances);
    for (int i = 0; i < spec.n_instances; ++i) {
        instances[i] = synth_instance(spec.n, spec.m, spec.horizon, spec.alpha, derive_seed(spec.seed, 1, i));
        behavior[i] = optimal_policy_bellman(instances[i]).policy;
    }

    const std::size_t total = std::size_t(spec.n_instances) * spec.realizations_per_instance;
    const std::size_t nk = options.ks.size();
    std::vector<RealizationRecord> records(total * nk);
    std::vector<std::vector<double>> frequencies(total * nk);
    std::vector<double> seconds(total);

    parallel_for(
        total,
        [&](std::size_t idx) {
            const int i = int(idx / spec.realizations_per_instance);
            const int j = int(idx % spec.realizations_per_instance);
            const Mdp& mdp = instances[i];
            const std::uint64_t base = derive_seed(spec.seed, 2, idx);
            rng_t start_rng(derive_seed(base, 0));
            const StateId s0 = uniform_index(start_rng, spec.n);
            const Trajectory traj =
                sample_trajectory(mdp, behavior[i], spec.deviation_prob, derive_seed(base, 1), s0);
            const auto started = std::chrono::steady_clock::now();
            const auto cf = estimate_counterfactual_transitions(mdp, traj, options.d, derive_seed(base, 2));
            seconds[idx] = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
            const prec_t observed = outcome(mdp, traj);
            for (std::size_t q = 0; q < nk; ++q) {
                const int k = options.ks[q];
                const auto policy = solve_optimal_cf_policy(mdp, traj, cf, k);
                const prec_t value = policy.value(traj.states[0]);
                auto& rec = records[idx * nk + q];
                rec = {i, j, k, observed, value, relative_improvement(observed, value), 0};
                const std::uint64_t sample_seed = derive_seed(base, 3, std::uint64_t(k));
                rec.unique_explanations =
                    unique_explanations(policy.actions, cf, traj, mdp, options.n_samples, sample_seed);
                frequencies[idx * nk + q] =
                    change_frequency_profile(policy.actions, cf, traj, mdp, options.n_samples, sample_seed)
                        .frequency;
            }
        },
        options.threads);

    MetricsReport report;
    report.records = std::move(records);
    report.aggregates = aggregate_by_k(report.records, options.ks);
    report.realizations = total;
    report.cf_estimation_seconds = std::accumulate(seconds.begin(), seconds.end(), 0.0);
    report.change_frequency.assign(nk, std::vector<double>(spec.horizon, 0.0));
    for (std::size_t idx = 0; idx < total; ++idx)
        for (std::size_t q = 0; q < nk; ++q)
            for (int t = 0; t < spec.horizon; ++t)
                report.change_frequency[q][t] += frequencies[idx * nk + q][t] / double(total);
    return report;
}

// ---------------------------------------------------------------------------
// Episode logs

struct Episode {
    std::string id;
    Trajectory trajectory;
    bool operator==(const Episode&) const = default;
};

/// Logged realizations of possibly varying horizon plus vocabulary labels.
struct EpisodeLog {
    std::vector<Episode> episodes;
    std::vector<std::string> state_labels;
    std::vector<std::string> action_labels;

    int states() const { return int(state_labels.size()); }
    int actions() const { return int(action_labels.size()); }

    void validate() const {
        for (const auto& e : episodes) {
            const auto& tr = e.trajectory;
            if (tr.states.size() != tr.actions.size())
                throw invalid_input("episode " + e.id + ": states and actions differ in length");
            if (tr.states.empty()) throw invalid_input("episode " + e.id + ": empty episode");
            for (StateId s : tr.states)
                if (s < 0 || s >= states()) throw invalid_input("episode " + e.id + ": state out of range");
            for (ActionId a : tr.actions)
                if (a < 0 || a >= actions()) throw invalid_input("episode " + e.id + ": action out of range");
        }
    }
};

/// Dirichlet prior weight for row i, column j: 1 on the tridiagonal band, 0.01 elsewhere.
inline double neighbor_band_prior(StateId i, StateId j) { return std::abs(i - j) <= 1 ? 1.0 : 0.01; }

/// counts[(s * m + a) * n + s'] of observed transitions.
inline std::vector<double> transition_counts(const EpisodeLog& log, int n, int m) {
    std::vector<double> counts(std::size_t(n) * m * n, 0.0);
    for (const auto& e : log.episodes) {
        const auto& tr = e.trajectory;
        for (int t = 0; t + 1 < tr.length(); ++t)
            counts[(std::size_t(tr.states[t]) * m + tr.actions[t]) * n + tr.states[t + 1]] += 1.0;
    }
    return counts;
}

struct DirichletOptions {
    /// 0 selects the closed-form posterior mean; otherwise the estimate is the
    /// average of this many posterior draws.
    int posterior_samples = 0;
    std::uint64_t seed = 0;
};

/**
 * Posterior-mean transition tensor under a neighbor-band Dirichlet prior,
 * (alpha_ij + c_j) / sum_j' (alpha_ij' + c_j'). Every entry is positive.
 */
inline std::vector<prec_t> dirichlet_transition_estimate(const EpisodeLog& log, int n, int m,
                                                         const DirichletOptions& options = {}) {
    if (n < 1 || m < 1) throw invalid_input("dirichlet_transition_estimate: empty vocabulary");
    log.validate();
    const auto counts = transition_counts(log, n, m);
    std::vector<prec_t> estimate(counts.size());
    rng_t rng(options.seed);
    std::vector<double> draw(n);
    for (StateId s = 0; s < n; ++s) {
        for (ActionId a = 0; a < m; ++a) {
            const std::size_t base = (std::size_t(s) * m + a) * n;
            if (options.posterior_samples <= 0) {
                double total = 0.0;
                for (StateId j = 0; j < n; ++j) total += neighbor_band_prior(s, j) + counts[base + j];
                for (StateId j = 0; j < n; ++j)
                    estimate[base + j] = (neighbor_band_prior(s, j) + counts[base + j]) / total;
                continue;
            }
            std::vector<std::gamma_distribution<double>> gammas;
            for (StateId j = 0; j < n; ++j) gammas.emplace_back(neighbor_band_prior(s, j) + counts[base + j], 1.0);
            std::vector<double> sum(n, 0.0);
            for (int q = 0; q < options.posterior_samples; ++q) {
                double total = 0.0;
                for (StateId j = 0; j < n; ++j) total += draw[j] = gammas[j](rng);
                // shapes of 0.01 can underflow every component; such draws carry no information
                if (!(total > 0.0)) {
                    --q;
                    continue;
                }
                for (StateId j = 0; j < n; ++j) sum[j] += draw[j] / total;
            }
            double row_total = 0.0;
            for (StateId j = 0; j < n; ++j) row_total += sum[j];
            for (StateId j = 0; j < n; ++j) estimate[base + j] = sum[j] / row_total;
        }
    }
    return estimate;
}

/**
 * Rewards R(s, a) = n - s. With `forbid_unobserved`, pairs that never occur
 * in the log get -inf.
 */
inline std::vector<prec_t> assign_rewards_from_log(const EpisodeLog& log, int n, int m, bool forbid_unobserved = true) {
    log.validate();
    std::vector<bool> seen(std::size_t(n) * m, false);
    for (const auto& e : log.episodes)
        for (int t = 0; t < e.trajectory.length(); ++t)
            seen[std::size_t(e.trajectory.states[t]) * m + e.trajectory.actions[t]] = true;
    std::vector<prec_t> reward(std::size_t(n) * m);
    for (StateId s = 0; s < n; ++s)
        for (ActionId a = 0; a < m; ++a)
            reward[std::size_t(s) * m + a] =
                (!forbid_unobserved || seen[std::size_t(s) * m + a]) ? prec_t(n - s) : kNegInf;
    return reward;
}

// ---------------------------------------------------------------------------
// Baselines

enum class BaselineKind { random, greedy, noisy_greedy };

inline const char* to_string(BaselineKind kind) {
    switch (kind) {
    case BaselineKind::random: return "random";
    case BaselineKind::greedy: return "greedy";
    case BaselineKind::noisy_greedy: return "noisy_greedy";
    }
    return "unknown";
}

/// Value of landing in s' for the greedy lookahead: the best finite reward
/// available there, -inf if none.
// Stands in for the lookahead's R(s', a') whose a' is unbound; the two agree
// whenever rewards depend on the state only.
inline prec_t greedy_next_state_reward(const Mdp& mdp, StateId s) {
    prec_t best = kNegInf;
    for (ActionId a = 0; a < mdp.actions(); ++a)
        if (std::isfinite(mdp.reward(s, a))) best = std::max(best, mdp.reward(s, a));
    return best;
}

/// argmax_a R(s,a) + sum_{s'} P_{tau,t}(s'|s,a) R_next(s'); smallest action on ties.
inline ActionId greedy_action(const Mdp& mdp, const CounterfactualTransitions& cf, int t, StateId s) {
    ActionId best_action = 0;
    prec_t best = kNegInf;
    for (ActionId a = 0; a < mdp.actions(); ++a) {
        prec_t score = mdp.reward(s, a);
        if (t < cf.slices()) {
            const auto row = cf.row(t, s, a);
            for (StateId sn = 0; sn < mdp.states(); ++sn)
                score += weighted(row[sn], greedy_next_state_reward(mdp, sn));
        }
        if (a == 0 || score > best) {
            best = score;
            best_action = a;
        }
    }
    return best_action;
}

/**
 * Baseline counterfactual policies. While l < k: random picks a uniform
 * action, greedy the one-step lookahead action, noisy greedy the greedy
 * action with probability 0.5 and the observed one otherwise. At l = k all
 * replay the observed action.
 */
inline EnhancedPolicy baseline_policy(BaselineKind kind, const Mdp& mdp, const Trajectory& traj,
                                      const CounterfactualTransitions& cf, int k, std::uint64_t seed) {
    detail::check_planner_inputs(mdp, traj, cf, k);
    const int n = mdp.states(), m = mdp.actions(), horizon = traj.length();
    EnhancedPolicy policy = EnhancedPolicy::observed(traj, n, k);
    rng_t rng(seed);
    for (int t = 0; t < horizon; ++t) {
        for (StateId s = 0; s < n; ++s) {
            const ActionId greedy = kind == BaselineKind::random ? 0 : greedy_action(mdp, cf, t, s);
            for (int l = 0; l < k; ++l) {
                switch (kind) {
                case BaselineKind::random: policy.at(t, l, s) = uniform_index(rng, m); break;
                case BaselineKind::greedy: policy.at(t, l, s) = greedy; break;
                case BaselineKind::noisy_greedy:
                    policy.at(t, l, s) = uniform_open(rng) < 0.5 ? greedy : traj.actions[t];
                    break;
                }
            }
        }
    }
    return policy;
}

// ---------------------------------------------------------------------------
// Log-driven pipeline

struct LogModel {
    std::vector<prec_t> transition;
    std::vector<prec_t> reward;
    int n = 0;
    int m = 0;

    Mdp for_horizon(int horizon) const { return Mdp(n, m, horizon, transition, reward); }
};

inline LogModel estimate_log_model(const EpisodeLog& log, bool forbid_unobserved = true,
                                   const DirichletOptions& options = {}) {
    LogModel model;
    model.n = log.states();
    model.m = log.actions();
    model.transition = dirichlet_transition_estimate(log, model.n, model.m, options);
    model.reward = assign_rewards_from_log(log, model.n, model.m, forbid_unobserved);
    return model;
}

/// Counterfactual analysis of every logged episode; each episode uses the
/// shared model at its own horizon. `instance` in the records is the episode index.
inline MetricsReport run_log_suite(const EpisodeLog& log, const LogModel& model, const SuiteOptions& options,
                                   std::uint64_t seed) {
    const std::size_t total = log.episodes.size();
    const std::size_t nk = options.ks.size();
    std::vector<RealizationRecord> records(total * nk);
    std::vector<double> seconds(total);
    int max_horizon = 0;
    for (const auto& e : log.episodes) max_horizon = std::max(max_horizon, e.trajectory.length());
    std::vector<std::vector<double>> frequencies(total * nk);

    parallel_for(
        total,
        [&](std::size_t idx) {
            const Trajectory& traj = log.episodes[idx].trajectory;
            const Mdp mdp = model.for_horizon(traj.length());
            const std::uint64_t base = derive_seed(seed, 4, idx);
            const auto started = std::chrono::steady_clock::now();
            const auto cf = estimate_counterfactual_transitions(mdp, traj, options.d, derive_seed(base, 2));
            seconds[idx] = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
            const prec_t observed = outcome(mdp, traj);
            for (std::size_t q = 0; q < nk; ++q) {
                const int k = std::min(options.ks[q], traj.length());
                const auto policy = solve_optimal_cf_policy(mdp, traj, cf, k);
                const prec_t value = policy.value(traj.states[0]);
                auto& rec = records[idx * nk + q];
                rec = {int(idx), 0, options.ks[q], observed, value, relative_improvement(observed, value), 0};
                const std::uint64_t sample_seed = derive_seed(base, 3, std::uint64_t(k));
                rec.unique_explanations =
                    unique_explanations(policy.actions, cf, traj, mdp, options.n_samples, sample_seed);
                frequencies[idx * nk + q] =
                    change_frequency_profile(policy.actions, cf, traj, mdp, options.n_samples, sample_seed)
                        .frequency;
            }
        },
        options.threads);

    MetricsReport report;
    report.records = std::move(records);
    report.aggregates = aggregate_by_k(report.records, options.ks);
    report.realizations = total;
    report.cf_estimation_seconds = std::accumulate(seconds.begin(), seconds.end(), 0.0);
    report.change_frequency.assign(nk, std::vector<double>(max_horizon, 0.0));
    for (std::size_t idx = 0; idx < total; ++idx)
        for (std::size_t q = 0; q < nk; ++q) {
            const auto& f = frequencies[idx * nk + q];
            for (std::size_t t = 0; t < f.size(); ++t) report.change_frequency[q][t] += f[t] / double(total);
        }
    return report;
}

} // namespace cfmdp
