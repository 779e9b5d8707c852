#pragma once

#include "cfmdp/common.hpp"
#include "cfmdp/experiments.hpp"
#include "cfmdp/gumbel.hpp"
#include "cfmdp/mdp.hpp"
#include "cfmdp/planner.hpp"

#include <nlohmann/json.hpp>

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace cfmdp::io {

/// Malformed file or config contents.
class format_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Scalars

/// Shortest representation that parses back to the same double; -inf is `-inf`.
inline std::string format_real(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline double parse_real(std::string_view token) {
    if (token == "-inf") return kNegInf;
    if (token == "inf" || token == "+inf") return std::numeric_limits<double>::infinity();
    if (token == "nan") return std::numeric_limits<double>::quiet_NaN();
    double v = 0.0;
    const auto res = std::from_chars(token.data(), token.data() + token.size(), v);
    if (res.ec != std::errc() || res.ptr != token.data() + token.size())
        throw format_error("not a number: '" + std::string(token) + "'");
    return v;
}

inline long long parse_integer(std::string_view token) {
    long long v = 0;
    const auto res = std::from_chars(token.data(), token.data() + token.size(), v);
    if (res.ec != std::errc() || res.ptr != token.data() + token.size())
        throw format_error("not an integer: '" + std::string(token) + "'");
    return v;
}

namespace detail {

class TokenReader {
public:
    explicit TokenReader(std::istream& in) : in_(in) {}

    std::string next() {
        std::string token;
        while (in_ >> token) {
            if (token.front() == '#') {
                std::string rest;
                std::getline(in_, rest);
                continue;
            }
            return token;
        }
        throw format_error("unexpected end of input");
    }

    void expect(std::string_view word) {
        const auto token = next();
        if (token != word) throw format_error("expected '" + std::string(word) + "', got '" + token + "'");
    }

    long long integer_field(std::string_view key) {
        expect(key);
        return parse_integer(next());
    }

    double real() { return parse_real(next()); }
    long long integer() { return parse_integer(next()); }

private:
    std::istream& in_;
};

} // namespace detail

// ---------------------------------------------------------------------------
// Tensors
//
//   cfmdp-tensor 1
//   n <n>
//   m <m>
//   slices <count>
//   samples <d>
//   then slices*n*m rows of n probabilities, ordered (t, s, a).
//
// A stationary MDP transition tensor is a single slice with samples 0.

inline void write_tensor(std::ostream& out, int n, int m, int slices, int samples, const std::vector<prec_t>& data) {
    out << "cfmdp-tensor 1\n"
        << "n " << n << "\nm " << m << "\nslices " << slices << "\nsamples " << samples << "\n";
    for (int t = 0; t < slices; ++t)
        for (int s = 0; s < n; ++s)
            for (int a = 0; a < m; ++a) {
                out << "# t=" << t << " s=" << s << " a=" << a << "\n";
                const std::size_t base = ((std::size_t(t) * n + s) * m + a) * n;
                for (int j = 0; j < n; ++j) out << (j ? " " : "") << format_real(data[base + j]);
                out << "\n";
            }
}

inline void write_counterfactual(std::ostream& out, const CounterfactualTransitions& cf) {
    write_tensor(out, cf.states(), cf.actions(), cf.slices(), cf.samples(), cf.data());
}

inline CounterfactualTransitions read_counterfactual(std::istream& in) {
    detail::TokenReader reader(in);
    reader.expect("cfmdp-tensor");
    if (reader.integer() != 1) throw format_error("unsupported tensor version");
    const int n = int(reader.integer_field("n"));
    const int m = int(reader.integer_field("m"));
    const int slices = int(reader.integer_field("slices"));
    const int samples = int(reader.integer_field("samples"));
    if (n < 1 || m < 1 || slices < 0) throw format_error("bad tensor dimensions");
    std::vector<prec_t> data(std::size_t(slices) * n * m * n);
    for (auto& v : data) v = reader.real();
    return CounterfactualTransitions(n, m, slices, samples, std::move(data));
}

struct TransitionTensor {
    int n = 0;
    int m = 0;
    std::vector<prec_t> data;
};

inline void write_transitions(std::ostream& out, int n, int m, const std::vector<prec_t>& data) {
    write_tensor(out, n, m, 1, 0, data);
}

inline TransitionTensor read_transitions(std::istream& in) {
    const auto cf = read_counterfactual(in);
    if (cf.slices() != 1) throw format_error("transition tensor must have exactly one slice");
    return {cf.states(), cf.actions(), cf.data()};
}

// ---------------------------------------------------------------------------
// Reward matrix
//
//   cfmdp-rewards 1
//   n <n>
//   m <m>
//   then n rows of m values; forbidden pairs are `-inf`.

struct RewardMatrix {
    int n = 0;
    int m = 0;
    std::vector<prec_t> data;
};

inline void write_rewards(std::ostream& out, int n, int m, const std::vector<prec_t>& data) {
    out << "cfmdp-rewards 1\nn " << n << "\nm " << m << "\n";
    for (int s = 0; s < n; ++s) {
        for (int a = 0; a < m; ++a) out << (a ? " " : "") << format_real(data[std::size_t(s) * m + a]);
        out << "\n";
    }
}

inline RewardMatrix read_rewards(std::istream& in) {
    detail::TokenReader reader(in);
    reader.expect("cfmdp-rewards");
    if (reader.integer() != 1) throw format_error("unsupported rewards version");
    RewardMatrix r;
    r.n = int(reader.integer_field("n"));
    r.m = int(reader.integer_field("m"));
    if (r.n < 1 || r.m < 1) throw format_error("bad reward dimensions");
    r.data.resize(std::size_t(r.n) * r.m);
    for (auto& v : r.data) v = reader.real();
    return r;
}

// ---------------------------------------------------------------------------
// Counterfactual policy
//
//   cfmdp-policy 1
//   n <n>
//   horizon <T>
//   k <k>
//   actions   then T*(k+1) rows of n actions, ordered (t, l)
//   values    then (T+1)*(k+1) rows of n values h(s, r, c), ordered (r, c)

inline void write_policy(std::ostream& out, const CfPolicy& policy) {
    const int n = policy.actions.states(), horizon = policy.actions.horizon(), k = policy.k;
    out << "cfmdp-policy 1\nn " << n << "\nhorizon " << horizon << "\nk " << k << "\nactions\n";
    for (int t = 0; t < horizon; ++t)
        for (int l = 0; l <= k; ++l) {
            for (int s = 0; s < n; ++s) out << (s ? " " : "") << policy.actions.at(t, l, s);
            out << "\n";
        }
    out << "values\n";
    for (int r = 0; r <= horizon; ++r)
        for (int c = 0; c <= k; ++c) {
            for (int s = 0; s < n; ++s) out << (s ? " " : "") << format_real(policy.h(s, r, c));
            out << "\n";
        }
}

inline CfPolicy read_policy(std::istream& in) {
    detail::TokenReader reader(in);
    reader.expect("cfmdp-policy");
    if (reader.integer() != 1) throw format_error("unsupported policy version");
    const int n = int(reader.integer_field("n"));
    const int horizon = int(reader.integer_field("horizon"));
    const int k = int(reader.integer_field("k"));
    if (n < 1 || horizon < 1 || k < 0) throw format_error("bad policy dimensions");
    CfPolicy policy;
    policy.k = k;
    policy.actions = EnhancedPolicy(n, horizon, k);
    reader.expect("actions");
    for (int t = 0; t < horizon; ++t)
        for (int l = 0; l <= k; ++l)
            for (int s = 0; s < n; ++s) policy.actions.at(t, l, s) = ActionId(reader.integer());
    reader.expect("values");
    policy.values.resize(std::size_t(horizon + 1) * (k + 1) * n);
    for (auto& v : policy.values) v = reader.real();
    return policy;
}

// ---------------------------------------------------------------------------
// Explanations: tab-separated, one explanation per row, sequences
// comma-joined.

template <class T>
std::string join(const std::vector<T>& values, char sep = ',') {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out += sep;
        out += std::to_string(values[i]);
    }
    return out;
}

inline std::vector<int> split_integers(std::string_view text, char sep = ',') {
    std::vector<int> out;
    if (text.empty()) return out;
    std::size_t start = 0;
    while (true) {
        const auto pos = text.find(sep, start);
        out.push_back(int(parse_integer(text.substr(start, pos - start))));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline std::vector<std::string> split_fields(const std::string& line, char sep = '\t') {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(sep, start);
        fields.push_back(line.substr(start, pos - start));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return fields;
}

inline const char* kExplanationHeader = "sample\toutcome\tn_changes\tchanged_steps\tstates\tlevels\tactions";

inline void write_explanations(std::ostream& out, const std::vector<Explanation>& explanations) {
    out << kExplanationHeader << "\n";
    for (std::size_t i = 0; i < explanations.size(); ++i) {
        const auto& ex = explanations[i];
        out << i << '\t' << format_real(ex.outcome) << '\t' << ex.changed_steps.size() << '\t'
            << join(ex.changed_steps) << '\t' << join(ex.states) << '\t' << join(ex.levels) << '\t'
            << join(ex.actions) << "\n";
    }
}

inline std::vector<Explanation> read_explanations(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != kExplanationHeader) throw format_error("bad explanations header");
    std::vector<Explanation> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_fields(line);
        if (f.size() != 7) throw format_error("explanation row needs 7 fields");
        Explanation ex;
        ex.outcome = parse_real(f[1]);
        ex.changed_steps = split_integers(f[3]);
        ex.states = split_integers(f[4]);
        ex.levels = split_integers(f[5]);
        ex.actions = split_integers(f[6]);
        if (std::size_t(parse_integer(f[2])) != ex.changed_steps.size())
            throw format_error("explanation change count disagrees with its steps");
        out.push_back(std::move(ex));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Episode logs: JSON lines {"id": ..., "states": [...], "actions": [...]},
// vocabulary sidecar {"states": [labels], "actions": [labels]}.

inline Episode parse_episode(const nlohmann::json& j) {
    Episode e;
    if (!j.is_object() || !j.contains("states") || !j.contains("actions"))
        throw format_error("episode record needs 'states' and 'actions'");
    if (j.contains("id")) e.id = j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
    e.trajectory.states = j["states"].get<std::vector<int>>();
    e.trajectory.actions = j["actions"].get<std::vector<int>>();
    return e;
}

inline std::vector<Episode> read_episodes(std::istream& in) {
    std::vector<Episode> episodes;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            auto e = parse_episode(nlohmann::json::parse(line));
            if (e.id.empty()) e.id = std::to_string(episodes.size());
            episodes.push_back(std::move(e));
        } catch (const nlohmann::json::exception& ex) {
            throw format_error("episode log line " + std::to_string(line_no) + ": " + ex.what());
        } catch (const format_error& ex) {
            throw format_error("episode log line " + std::to_string(line_no) + ": " + ex.what());
        }
    }
    return episodes;
}

inline void write_episodes(std::ostream& out, const std::vector<Episode>& episodes) {
    for (const auto& e : episodes) {
        nlohmann::json j;
        j["id"] = e.id;
        j["states"] = e.trajectory.states;
        j["actions"] = e.trajectory.actions;
        out << j.dump() << "\n";
    }
}

struct Vocabulary {
    std::vector<std::string> states;
    std::vector<std::string> actions;
};

inline Vocabulary read_vocabulary(std::istream& in) {
    try {
        const auto j = nlohmann::json::parse(in);
        return {j.at("states").get<std::vector<std::string>>(), j.at("actions").get<std::vector<std::string>>()};
    } catch (const nlohmann::json::exception& ex) {
        throw format_error(std::string("vocabulary: ") + ex.what());
    }
}

inline void write_vocabulary(std::ostream& out, const Vocabulary& vocab) {
    nlohmann::json j;
    j["states"] = vocab.states;
    j["actions"] = vocab.actions;
    out << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Reports: tab-separated tables.

inline void write_realizations(std::ostream& out, const MetricsReport& report) {
    out << "instance\trealization\tk\tobserved_outcome\tcf_outcome\trelative_improvement\tunique_explanations\n";
    for (const auto& r : report.records)
        out << r.instance << '\t' << r.realization << '\t' << r.k << '\t' << format_real(r.observed_outcome) << '\t'
            << format_real(r.cf_outcome) << '\t' << format_real(r.relative_improvement) << '\t'
            << r.unique_explanations << "\n";
}

inline std::vector<RealizationRecord> read_realizations(std::istream& in) {
    std::string line;
    std::getline(in, line);
    std::vector<RealizationRecord> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_fields(line);
        if (f.size() != 7) throw format_error("realization row needs 7 fields");
        out.push_back({int(parse_integer(f[0])), int(parse_integer(f[1])), int(parse_integer(f[2])),
                       parse_real(f[3]), parse_real(f[4]), parse_real(f[5]), int(parse_integer(f[6]))});
    }
    return out;
}

inline void write_summary(std::ostream& out, const MetricsReport& report) {
    out << "k\tcount\tobserved_mean\tcf_mean\tcf_ci95\trel_improvement_mean\trel_improvement_ci95"
           "\tunique_mean\tunique_ci95\n";
    for (const auto& a : report.aggregates)
        out << a.k << '\t' << a.cf_outcome.count << '\t' << format_real(a.observed_outcome.mean) << '\t'
            << format_real(a.cf_outcome.mean) << '\t' << format_real(a.cf_outcome.half_width) << '\t'
            << format_real(a.relative_improvement.mean) << '\t' << format_real(a.relative_improvement.half_width)
            << '\t' << format_real(a.unique_explanations.mean) << '\t'
            << format_real(a.unique_explanations.half_width) << "\n";
}

inline void write_change_frequency(std::ostream& out, const MetricsReport& report) {
    out << "k\tt\tchange_frequency\n";
    for (std::size_t q = 0; q < report.aggregates.size(); ++q)
        for (std::size_t t = 0; t < report.change_frequency[q].size(); ++t)
            out << report.aggregates[q].k << '\t' << t << '\t' << format_real(report.change_frequency[q][t]) << "\n";
}

// ---------------------------------------------------------------------------
// Run configuration: flat `key = value` text, `#` starts a comment.

inline std::map<std::string, std::string> parse_key_values(std::istream& in) {
    std::map<std::string, std::string> kv;
    std::string line;
    std::size_t line_no = 0;
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw format_error("config line " + std::to_string(line_no) + ": expected key = value");
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

struct RunConfig {
    std::string mode = "synthetic";
    SyntheticSpec synthetic;
    SuiteOptions suite;
    std::string log_path;
    std::string vocab_path;
    std::string output_dir = ".";

    void validate() const {
        if (mode != "synthetic" && mode != "from-log") throw format_error("mode must be synthetic or from-log");
        if (mode == "synthetic") {
            synthetic.validate();
            for (int k : suite.ks)
                if (k < 0 || k > synthetic.horizon) throw format_error("k must lie in [0, T]");
        } else {
            if (!std::filesystem::exists(log_path)) throw format_error("log file not found: " + log_path);
            if (!std::filesystem::exists(vocab_path)) throw format_error("vocabulary not found: " + vocab_path);
        }
        if (suite.d < 1) throw format_error("d must be >= 1");
        if (suite.n_samples < 1) throw format_error("n_samples must be >= 1");
    }
};

inline RunConfig parse_run_config(std::istream& in) {
    const auto kv = parse_key_values(in);
    RunConfig c;
    for (const auto& [key, value] : kv) {
        if (key == "mode") c.mode = value;
        else if (key == "n") c.synthetic.n = int(parse_integer(value));
        else if (key == "m") c.synthetic.m = int(parse_integer(value));
        else if (key == "T" || key == "horizon") c.synthetic.horizon = int(parse_integer(value));
        else if (key == "alpha") c.synthetic.alpha = parse_real(value);
        else if (key == "instances") c.synthetic.n_instances = int(parse_integer(value));
        else if (key == "realizations") c.synthetic.realizations_per_instance = int(parse_integer(value));
        else if (key == "deviation_prob") c.synthetic.deviation_prob = parse_real(value);
        else if (key == "seed") c.synthetic.seed = std::uint64_t(parse_integer(value));
        else if (key == "k") c.suite.ks = split_integers(value);
        else if (key == "d") c.suite.d = int(parse_integer(value));
        else if (key == "n_samples") c.suite.n_samples = int(parse_integer(value));
        else if (key == "threads") c.suite.threads = unsigned(parse_integer(value));
        else if (key == "log") c.log_path = value;
        else if (key == "vocab") c.vocab_path = value;
        else if (key == "output") c.output_dir = value;
        else throw format_error("unknown config key '" + key + "'");
    }
    return c;
}

// ---------------------------------------------------------------------------
// File helpers

inline std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw format_error("cannot open " + path.string());
    return in;
}

inline std::ofstream open_output(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw format_error("cannot write " + path.string());
    return out;
}

/// Machine-readable error record for the CLI.
inline std::string error_record(std::string_view kind, std::string_view message) {
    nlohmann::json j;
    j["error"] = std::string(kind);
    j["message"] = std::string(message);
    return j.dump();
}

} // namespace cfmdp::io
