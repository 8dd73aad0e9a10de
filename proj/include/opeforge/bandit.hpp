#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "opeforge/errors.hpp"
#include "opeforge/numeric.hpp"

namespace opeforge {

using Matrix = std::vector<std::vector<double>>;

inline constexpr double kProbabilitySumTolerance = 1e-9;

enum class NoiseKind { bernoulli, truncated_gaussian };

inline const char* to_string(NoiseKind k) {
    return k == NoiseKind::bernoulli ? "bernoulli" : "truncated_gaussian";
}

// ============================================================================
// Domain types
// ============================================================================

// Finite discrete contextual-bandit environment with a tabular expected
// reward q(x,a). Contexts and actions are the index sets 0..X-1 / 0..A-1.
// Keeping q tabular makes the true value of any policy exactly computable.
struct Environment {
    std::vector<double> context_probs;  // p(x), sums to 1
    Matrix reward_means;                // q(x,a), each in [0, r_max]
    double r_max = 1.0;
    NoiseKind noise = NoiseKind::bernoulli;
    double noise_sigma = 0.1;  // truncated_gaussian only

    int num_contexts() const { return static_cast<int>(reward_means.size()); }
    int num_actions() const {
        return reward_means.empty() ? 0 : static_cast<int>(reward_means.front().size());
    }

    bool operator==(const Environment&) const = default;
};

// Stochastic context -> action-distribution map. Row x is pi(a|x).
struct Policy {
    Matrix probs;
    std::string label;

    int num_contexts() const { return static_cast<int>(probs.size()); }
    int num_actions() const {
        return probs.empty() ? 0 : static_cast<int>(probs.front().size());
    }

    bool operator==(const Policy&) const = default;
};

struct LogRecord {
    int context = 0;
    int action = 0;
    double reward = 0.0;
    double propensity = 0.0;  // pi_b(action|context), exact copy from the policy

    bool operator==(const LogRecord&) const = default;
};

struct LoggedDataset {
    std::vector<LogRecord> records;
    std::string behavior_label;
    std::uint64_t seed = 0;

    std::size_t size() const { return records.size(); }

    bool operator==(const LoggedDataset&) const = default;
};

// ============================================================================
// Construction configs
// ============================================================================

// Environment parameters as they appear in a spec document. Exactly one of
// q / q_seed supplies the reward table; context_probs defaults to uniform.
struct EnvConfig {
    int contexts = 4;
    int actions = 4;
    double r_max = 1.0;
    NoiseKind noise = NoiseKind::bernoulli;
    double noise_sigma = 0.1;
    std::optional<Matrix> q;
    std::optional<std::uint64_t> q_seed;
    std::optional<std::vector<double>> context_probs;

    bool operator==(const EnvConfig&) const = default;
};

enum class PolicyKind { uniform_random, epsilon_greedy, explicit_matrix };

inline const char* to_string(PolicyKind k) {
    switch (k) {
        case PolicyKind::uniform_random: return "uniform_random";
        case PolicyKind::epsilon_greedy: return "epsilon_greedy";
        default: return "explicit";
    }
}

struct PolicyParams {
    PolicyKind kind = PolicyKind::uniform_random;
    double epsilon = 0.1;  // epsilon_greedy only; canonical 0.1 otherwise
    Matrix matrix;         // explicit only; empty otherwise

    bool operator==(const PolicyParams&) const = default;
};

// ============================================================================
// Validation helpers
// ============================================================================

namespace detail {

inline void check_probability_row(const std::vector<double>& row, const std::string& what) {
    double sum = 0.0;
    for (double p : row) {
        if (p < 0.0) throw SpecError(what + " has a negative probability " + format_double(p));
        sum += p;
    }
    if (std::abs(sum - 1.0) > kProbabilitySumTolerance)
        throw SpecError(what + " probabilities sum to " + format_double(sum));
}

inline void check_rectangular(const Matrix& m, int rows, int cols, const std::string& what) {
    if (static_cast<int>(m.size()) != rows)
        throw SpecError(what + " has " + format_int(static_cast<long long>(m.size())) +
                        " rows, expected " + format_int(rows));
    for (const auto& row : m)
        if (static_cast<int>(row.size()) != cols)
            throw SpecError(what + " has a row of width " +
                            format_int(static_cast<long long>(row.size())) + ", expected " +
                            format_int(cols));
}

}  // namespace detail

// ============================================================================
// Operations
// ============================================================================

inline Environment build_environment(const EnvConfig& cfg) {
    if (cfg.contexts < 1) throw SpecError("env.contexts must be >= 1");
    if (cfg.actions < 2) throw SpecError("env.actions must be >= 2");
    if (!(cfg.r_max > 0.0)) throw SpecError("env.r_max must be positive");
    if (cfg.noise == NoiseKind::truncated_gaussian && !(cfg.noise_sigma > 0.0))
        throw SpecError("env.noise_sigma must be positive");
    if (cfg.q.has_value() == cfg.q_seed.has_value())
        throw SpecError("exactly one of env.q and env.q_seed must be given");

    Environment env;
    env.r_max = cfg.r_max;
    env.noise = cfg.noise;
    env.noise_sigma = cfg.noise_sigma;

    if (cfg.q) {
        detail::check_rectangular(*cfg.q, cfg.contexts, cfg.actions, "env.q");
        for (const auto& row : *cfg.q)
            for (double v : row)
                if (v < 0.0 || v > cfg.r_max)
                    throw SpecError("reward mean " + format_double(v) + " out of bounds [0, " +
                                    format_double(cfg.r_max) + "]");
        env.reward_means = *cfg.q;
    } else {
        // Generated table: q(x,a) ~ U[0, r_max], row-major draw order.
        std::mt19937_64 rng(*cfg.q_seed);
        env.reward_means.assign(static_cast<std::size_t>(cfg.contexts),
                                std::vector<double>(static_cast<std::size_t>(cfg.actions), 0.0));
        for (auto& row : env.reward_means)
            for (double& v : row) v = unit_uniform(rng) * cfg.r_max;
    }

    if (cfg.context_probs) {
        if (static_cast<int>(cfg.context_probs->size()) != cfg.contexts)
            throw SpecError("env.context_probs length does not match env.contexts");
        detail::check_probability_row(*cfg.context_probs, "env.context_probs");
        env.context_probs = *cfg.context_probs;
    } else {
        env.context_probs.assign(static_cast<std::size_t>(cfg.contexts),
                                 1.0 / static_cast<double>(cfg.contexts));
    }
    return env;
}

inline Policy make_uniform_policy(const Environment& env) {
    Policy p;
    p.label = "uniform_random";
    const double w = 1.0 / static_cast<double>(env.num_actions());
    p.probs.assign(static_cast<std::size_t>(env.num_contexts()),
                   std::vector<double>(static_cast<std::size_t>(env.num_actions()), w));
    return p;
}

// Greedy action per context is argmax_a q(x,a); ties go to the lowest action
// index so the construction is deterministic.
inline Policy make_epsilon_greedy_policy(const Environment& env, double epsilon) {
    if (epsilon < 0.0 || epsilon > 1.0)
        throw SpecError("epsilon must be in [0, 1], got " + format_double(epsilon));
    Policy p;
    p.label = "epsilon_greedy(" + format_double(epsilon) + ")";
    const int A = env.num_actions();
    const double base = epsilon / static_cast<double>(A);
    for (const auto& qrow : env.reward_means) {
        int greedy = 0;
        for (int a = 1; a < A; ++a)
            if (qrow[static_cast<std::size_t>(a)] > qrow[static_cast<std::size_t>(greedy)])
                greedy = a;
        std::vector<double> row(static_cast<std::size_t>(A), base);
        row[static_cast<std::size_t>(greedy)] = 1.0 - epsilon + base;
        p.probs.push_back(std::move(row));
    }
    return p;
}

inline Policy make_explicit_policy(const Environment& env, const Matrix& probs,
                                   std::string label = "explicit") {
    detail::check_rectangular(probs, env.num_contexts(), env.num_actions(), "policy matrix");
    for (const auto& row : probs) detail::check_probability_row(row, "policy row");
    return Policy{probs, std::move(label)};
}

inline Policy make_policy(const Environment& env, const PolicyParams& params) {
    switch (params.kind) {
        case PolicyKind::uniform_random: return make_uniform_policy(env);
        case PolicyKind::epsilon_greedy: return make_epsilon_greedy_policy(env, params.epsilon);
        default: return make_explicit_policy(env, params.matrix);
    }
}

namespace detail {

inline void check_policy_matches(const Environment& env, const Policy& policy) {
    if (policy.num_contexts() != env.num_contexts() || policy.num_actions() != env.num_actions())
        throw SpecError("policy dimensions (" + format_int(policy.num_contexts()) + "x" +
                        format_int(policy.num_actions()) + ") do not match environment (" +
                        format_int(env.num_contexts()) + "x" + format_int(env.num_actions()) + ")");
}

}  // namespace detail

// V(pi) = sum_x p(x) sum_a pi(a|x) q(x,a), by exact summation over the table.
inline double true_policy_value(const Environment& env, const Policy& policy) {
    detail::check_policy_matches(env, policy);
    double value = 0.0;
    for (int x = 0; x < env.num_contexts(); ++x) {
        double inner = 0.0;
        for (int a = 0; a < env.num_actions(); ++a)
            inner += policy.probs[static_cast<std::size_t>(x)][static_cast<std::size_t>(a)] *
                     env.reward_means[static_cast<std::size_t>(x)][static_cast<std::size_t>(a)];
        value += env.context_probs[static_cast<std::size_t>(x)] * inner;
    }
    return value;
}

// Draws n i.i.d. records from p(x) * pi_b(a|x) * p(r|x,a). A pure function of
// its arguments: one mt19937_64 seeded per call, uniforms consumed in the
// order context, action, reward per record.
inline LoggedDataset sample_log(const Environment& env, const Policy& behavior, long n,
                                std::uint64_t seed) {
    detail::check_policy_matches(env, behavior);
    if (n < 1) throw SpecError("data.n must be >= 1");

    std::mt19937_64 rng(seed);
    LoggedDataset data;
    data.behavior_label = behavior.label;
    data.seed = seed;
    data.records.reserve(static_cast<std::size_t>(n));
    for (long i = 0; i < n; ++i) {
        LogRecord rec;
        rec.context = sample_index(env.context_probs, unit_uniform(rng));
        const auto& row = behavior.probs[static_cast<std::size_t>(rec.context)];
        rec.action = sample_index(row, unit_uniform(rng));
        rec.propensity = row[static_cast<std::size_t>(rec.action)];
        const double q = env.reward_means[static_cast<std::size_t>(rec.context)]
                                         [static_cast<std::size_t>(rec.action)];
        if (env.noise == NoiseKind::bernoulli) {
            rec.reward = unit_uniform(rng) < q / env.r_max ? env.r_max : 0.0;
        } else {
            rec.reward = sample_truncated_gaussian(rng, q, env.noise_sigma, 0.0, env.r_max);
        }
        data.records.push_back(rec);
    }
    return data;
}

// ============================================================================
// Dataset CSV (header `context,action,reward,propensity`)
// ============================================================================

inline std::string dataset_to_csv(const LoggedDataset& data) {
    std::string out = "context,action,reward,propensity\n";
    for (const auto& rec : data.records) {
        out += format_int(rec.context);
        out += ',';
        out += format_int(rec.action);
        out += ',';
        out += format_double(rec.reward);
        out += ',';
        out += format_double(rec.propensity);
        out += '\n';
    }
    return out;
}

inline LoggedDataset dataset_from_csv(const std::string& csv) {
    std::istringstream in(csv);
    std::string line;
    if (!std::getline(in, line) || line != "context,action,reward,propensity")
        throw SpecError("dataset CSV missing header");
    LoggedDataset data;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::array<std::string_view, 4> fields;
        std::string_view rest = line;
        for (int f = 0; f < 4; ++f) {
            auto pos = rest.find(',');
            if (f < 3) {
                if (pos == std::string_view::npos)
                    throw SpecError("dataset CSV row has too few fields", lineno);
                fields[static_cast<std::size_t>(f)] = rest.substr(0, pos);
                rest = rest.substr(pos + 1);
            } else {
                if (pos != std::string_view::npos)
                    throw SpecError("dataset CSV row has too many fields", lineno);
                fields[3] = rest;
            }
        }
        LogRecord rec;
        long long ctx = 0, act = 0;
        if (!try_parse_int(fields[0], ctx) || !try_parse_int(fields[1], act) ||
            !try_parse_double(fields[2], rec.reward) ||
            !try_parse_double(fields[3], rec.propensity))
            throw SpecError("dataset CSV row is not numeric", lineno);
        rec.context = static_cast<int>(ctx);
        rec.action = static_cast<int>(act);
        if (rec.propensity <= 0.0 || rec.propensity > 1.0)
            throw SpecError("propensity must be in (0, 1]", lineno);
        data.records.push_back(rec);
    }
    return data;
}

}  // namespace opeforge
