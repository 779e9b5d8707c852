// Command-line front end: synth, estimate, explain, baselines, verify.

#include "cfmdp/experiments.hpp"
#include "cfmdp/io.hpp"
#include "cfmdp/planner.hpp"
#include "cfmdp/verify.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace cfmdp;

namespace {

EpisodeLog load_log(const std::string& log_path, const std::string& vocab_path) {
    EpisodeLog log;
    auto in = io::open_input(log_path);
    log.episodes = io::read_episodes(in);
    auto vin = io::open_input(vocab_path);
    const auto vocab = io::read_vocabulary(vin);
    log.state_labels = vocab.states;
    log.action_labels = vocab.actions;
    log.validate();
    return log;
}

void write_report(const fs::path& dir, const MetricsReport& report) {
    {
        auto out = io::open_output(dir / "realizations.tsv");
        io::write_realizations(out, report);
    }
    {
        auto out = io::open_output(dir / "summary.tsv");
        io::write_summary(out, report);
    }
    auto out = io::open_output(dir / "change_frequency.tsv");
    io::write_change_frequency(out, report);
}

int run_synth(const std::string& config_path, const std::string& out_override) {
    auto in = io::open_input(config_path);
    auto config = io::parse_run_config(in);
    if (!out_override.empty()) config.output_dir = out_override;
    config.validate();
    MetricsReport report;
    if (config.mode == "synthetic") {
        report = run_synthetic_suite(config.synthetic, config.suite);
    } else {
        const auto log = load_log(config.log_path, config.vocab_path);
        report = run_log_suite(log, estimate_log_model(log), config.suite, config.synthetic.seed);
    }
    write_report(config.output_dir, report);
    for (const auto& a : report.aggregates)
        std::cout << "k=" << a.k << "\tcf_mean=" << io::format_real(a.cf_outcome.mean)
                  << "\trel_improvement=" << io::format_real(a.relative_improvement.mean)
                  << "\tunique=" << io::format_real(a.unique_explanations.mean) << "\n";
    std::cout << "cf_estimation_seconds_per_realization="
              << io::format_real(report.cf_estimation_seconds / double(std::max<std::size_t>(1, report.realizations)))
              << "\n";
    return 0;
}

int run_estimate(const std::string& log_path, const std::string& vocab_path, const std::string& out_dir,
                 int posterior_samples, std::uint64_t seed, bool allow_unobserved) {
    const auto log = load_log(log_path, vocab_path);
    const auto model = estimate_log_model(log, !allow_unobserved, {posterior_samples, seed});
    {
        auto out = io::open_output(fs::path(out_dir) / "transitions.txt");
        io::write_transitions(out, model.n, model.m, model.transition);
    }
    auto out = io::open_output(fs::path(out_dir) / "rewards.txt");
    io::write_rewards(out, model.n, model.m, model.reward);
    std::cout << "episodes=" << log.episodes.size() << " n=" << model.n << " m=" << model.m << "\n";
    return 0;
}

struct ModelInputs {
    std::string transitions;
    std::string rewards;
    std::string log;
    std::string id;
};

struct LoadedInputs {
    Mdp mdp;
    Trajectory traj;
};

LoadedInputs load_model(const ModelInputs& inputs) {
    auto tin = io::open_input(inputs.transitions);
    const auto tensor = io::read_transitions(tin);
    auto rin = io::open_input(inputs.rewards);
    const auto rewards = io::read_rewards(rin);
    if (rewards.n != tensor.n || rewards.m != tensor.m)
        throw invalid_input("transition and reward files disagree on n or m");
    auto lin = io::open_input(inputs.log);
    const auto episodes = io::read_episodes(lin);
    if (episodes.empty()) throw invalid_input("trajectory file has no episodes");
    const Episode* chosen = &episodes.front();
    if (!inputs.id.empty()) {
        chosen = nullptr;
        for (const auto& e : episodes)
            if (e.id == inputs.id) chosen = &e;
        if (!chosen) throw invalid_input("no episode with id " + inputs.id);
    }
    const int horizon = chosen->trajectory.length();
    if (horizon < 1) throw invalid_input("empty trajectory");
    Mdp mdp(tensor.n, tensor.m, horizon, tensor.data, rewards.data);
    require_valid(mdp);
    validate_trajectory(mdp, chosen->trajectory);
    return {std::move(mdp), chosen->trajectory};
}

int run_explain(const ModelInputs& inputs, int k, int d, std::uint64_t seed, int n_samples, const std::string& out_dir) {
    const auto [mdp, traj] = load_model(inputs);
    if (k < 0 || k > traj.length()) throw invalid_input("k must lie in [0, T]");
    const auto cf = estimate_counterfactual_transitions(mdp, traj, d, derive_seed(seed, 0));
    const auto policy = solve_optimal_cf_policy(mdp, traj, cf, k);
    const fs::path dir(out_dir);
    {
        auto out = io::open_output(dir / "counterfactual.txt");
        io::write_counterfactual(out, cf);
    }
    {
        auto out = io::open_output(dir / "policy.txt");
        io::write_policy(out, policy);
    }
    std::vector<Explanation> explanations;
    for (int i = 0; i < n_samples; ++i)
        explanations.push_back(sample_explanation(policy, cf, traj, mdp, derive_seed(seed, 1, std::uint64_t(i))));
    {
        auto out = io::open_output(dir / "explanations.tsv");
        io::write_explanations(out, explanations);
    }
    const auto profile = change_frequency_profile(policy.actions, cf, traj, mdp, n_samples, derive_seed(seed, 2));
    {
        auto out = io::open_output(dir / "change_frequency.tsv");
        out << "t\tobserved_state\tobserved_action\tchange_frequency\tbest_state\tbest_action\n";
        for (int t = 0; t < traj.length(); ++t)
            out << t << '\t' << traj.states[t] << '\t' << traj.actions[t] << '\t'
                << io::format_real(profile.frequency[t]) << '\t' << profile.best.states[t] << '\t'
                << profile.best.actions[t] << "\n";
    }
    const prec_t observed = outcome(mdp, traj);
    const prec_t value = policy.value(traj.states[0]);
    const int unique = unique_explanations(policy.actions, cf, traj, mdp, n_samples, derive_seed(seed, 3));
    {
        auto out = io::open_output(dir / "value.tsv");
        out << "k\tobserved_outcome\tcf_value\tunique_explanations\n"
            << k << '\t' << io::format_real(observed) << '\t' << io::format_real(value) << '\t' << unique << "\n";
    }
    std::cout << "observed_outcome=" << io::format_real(observed) << "\tcf_value=" << io::format_real(value)
              << "\tunique_explanations=" << unique << "\n";
    return 0;
}

int run_baselines(const ModelInputs& inputs, const std::vector<int>& ks, int d, std::uint64_t seed,
                  const std::string& out_dir) {
    const auto [mdp, traj] = load_model(inputs);
    const auto cf = estimate_counterfactual_transitions(mdp, traj, d, derive_seed(seed, 0));
    auto out = io::open_output(fs::path(out_dir) / "baselines.tsv");
    out << "k\tpolicy\tvalue\n";
    for (int k : ks) {
        if (k < 0 || k > traj.length()) throw invalid_input("k must lie in [0, T]");
        const auto optimal = solve_optimal_cf_policy(mdp, traj, cf, k);
        const prec_t best = evaluate_policy_exact(optimal.actions, cf, traj, mdp, k);
        out << k << "\toptimal\t" << io::format_real(best) << "\n";
        std::cout << "k=" << k << "\toptimal=" << io::format_real(best);
        for (auto kind : {BaselineKind::random, BaselineKind::greedy, BaselineKind::noisy_greedy}) {
            const auto policy = baseline_policy(kind, mdp, traj, cf, k, derive_seed(seed, 5, std::uint64_t(k)));
            const prec_t value = evaluate_policy_exact(policy, cf, traj, mdp, k);
            out << k << '\t' << to_string(kind) << '\t' << io::format_real(value) << "\n";
            std::cout << '\t' << to_string(kind) << '=' << io::format_real(value);
        }
        std::cout << "\n";
    }
    return 0;
}

int run_verify(int instances, std::uint64_t seed, int d) {
    const auto report = run_verification(instances, seed, d);
    for (const auto& msg : report.messages) std::cout << "FAIL " << msg << "\n";
    std::cout << "instances=" << report.instances << " enumerated=" << report.enumerated
              << " failures=" << report.failures << "\n";
    return report.ok() ? 0 : 1;
}

void add_model_options(CLI::App* cmd, ModelInputs& inputs) {
    cmd->add_option("--transitions", inputs.transitions, "Transition tensor file")->required()->check(CLI::ExistingFile);
    cmd->add_option("--rewards", inputs.rewards, "Reward matrix file")->required()->check(CLI::ExistingFile);
    cmd->add_option("--trajectory", inputs.log, "Episode log (JSON lines) holding the realization")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--id", inputs.id, "Episode id (default: first record)");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Counterfactual explanations for finite-horizon MDPs"};
    app.require_subcommand(1);

    std::string config_path, out_dir = ".", log_path, vocab_path;
    int posterior_samples = 0, k = 1, d = kDefaultNoiseSamples, verify_d = 200, n_samples = 1000, instances = 100;
    std::uint64_t seed = 1;
    bool allow_unobserved = false;
    std::vector<int> ks{0, 1, 2, 3};
    ModelInputs inputs;

    auto* synth = app.add_subcommand("synth", "Run an experiment suite described by a config file");
    synth->add_option("--config", config_path, "key = value config")->required()->check(CLI::ExistingFile);
    synth->add_option("--out", out_dir, "Output directory (overrides config)");

    auto* estimate = app.add_subcommand("estimate", "Estimate transitions and rewards from an episode log");
    estimate->add_option("--log", log_path, "Episode log (JSON lines)")->required()->check(CLI::ExistingFile);
    estimate->add_option("--vocab", vocab_path, "Vocabulary sidecar (JSON)")->required()->check(CLI::ExistingFile);
    estimate->add_option("--out", out_dir, "Output directory");
    estimate->add_option("--posterior-samples", posterior_samples,
                         "Average this many Dirichlet posterior draws instead of the closed-form mean");
    estimate->add_option("--seed", seed, "Seed for posterior sampling");
    estimate->add_flag("--allow-unobserved", allow_unobserved, "Give unobserved pairs finite rewards");

    auto* explain = app.add_subcommand("explain", "Optimal counterfactual policy and explanations for one realization");
    add_model_options(explain, inputs);
    explain->add_option("-k,--k", k, "Maximum number of changed actions");
    explain->add_option("-d,--d", d, "Posterior noise samples per time step");
    explain->add_option("--seed", seed, "Seed");
    explain->add_option("--samples", n_samples, "Explanations to sample");
    explain->add_option("--out", out_dir, "Output directory");

    auto* baselines = app.add_subcommand("baselines", "Compare baseline policies with the optimal one");
    add_model_options(baselines, inputs);
    baselines->add_option("--k", ks, "Budgets")->delimiter(',');
    baselines->add_option("-d,--d", d, "Posterior noise samples per time step");
    baselines->add_option("--seed", seed, "Seed");
    baselines->add_option("--out", out_dir, "Output directory");

    auto* verify = app.add_subcommand("verify", "Oracle-equivalence and stability checks on small random instances");
    verify->add_option("--instances", instances, "Number of instances");
    verify->add_option("--seed", seed, "Seed");
    verify->add_option("-d,--d", verify_d, "Posterior noise samples per time step");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*synth) return run_synth(config_path, synth->count("--out") ? out_dir : std::string());
        if (*estimate) return run_estimate(log_path, vocab_path, out_dir, posterior_samples, seed, allow_unobserved);
        if (*explain) return run_explain(inputs, k, d, seed, n_samples, out_dir);
        if (*baselines) return run_baselines(inputs, ks, d, seed, out_dir);
        if (*verify) return run_verify(instances, seed, verify_d);
    } catch (const io::format_error& e) {
        std::cerr << io::error_record("format_error", e.what()) << "\n";
        return 2;
    } catch (const invalid_input& e) {
        std::cerr << io::error_record("invalid_input", e.what()) << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << io::error_record("internal_error", e.what()) << "\n";
        return 1;
    }
    return 0;
}
