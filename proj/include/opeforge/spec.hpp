#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "opeforge/bandit.hpp"
#include "opeforge/errors.hpp"
#include "opeforge/estimators.hpp"
#include "opeforge/numeric.hpp"

namespace opeforge {

// ============================================================================
// The experiment spec document
// ============================================================================
// The artifact the optimization loop edits. Line-oriented text, one
// `section.key = value` per line, `#` comments, LF endings. Sections:
// env, behavior, target, data, reward_model, estimators, objective.
// Booleans are true|false, lists comma-separated, matrices semicolon-
// separated rows. Unknown keys are errors, as are keys that do not apply to
// the selected kind (e.g. reward_model.alpha with a kernel model).

struct ExperimentSpec {
    EnvConfig env;
    PolicyParams behavior;                         // default uniform_random
    PolicyParams target{PolicyKind::epsilon_greedy, 0.1, {}};
    long n = 2000;
    std::uint64_t data_seed = 12345;
    RewardModelParams reward_model;
    std::vector<EstimatorKind> estimators = {EstimatorKind::dm, EstimatorKind::ipw,
                                             EstimatorKind::snipw, EstimatorKind::dr};
    double weight_cap = kNoWeightCap;
    Objective objective;

    bool operator==(const ExperimentSpec&) const = default;
};

inline ExperimentSpec default_spec() {
    ExperimentSpec spec;
    spec.env.q_seed = 1;
    return spec;
}

// ============================================================================
// Value parsers
// ============================================================================

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
        s.remove_suffix(1);
    return s;
}

inline double parse_double_value(std::string_view text, const std::string& key, int line) {
    double v;
    if (!try_parse_double(trim(text), v))
        throw SpecError("type mismatch for " + key + ": expected a number, got '" +
                        std::string(trim(text)) + "'", line);
    return v;
}

inline long long parse_int_value(std::string_view text, const std::string& key, int line) {
    long long v;
    if (!try_parse_int(trim(text), v))
        throw SpecError("type mismatch for " + key + ": expected an integer, got '" +
                        std::string(trim(text)) + "'", line);
    return v;
}

inline std::uint64_t parse_seed_value(std::string_view text, const std::string& key, int line) {
    long long v = parse_int_value(text, key, line);
    if (v < 0) throw SpecError(key + " out of range: seeds must be non-negative", line);
    return static_cast<std::uint64_t>(v);
}

inline std::vector<std::string_view> split(std::string_view text, char sep) {
    std::vector<std::string_view> parts;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= text.size(); ++i) {
        if (i == text.size() || text[i] == sep) {
            parts.push_back(text.substr(start, i - start));
            start = i + 1;
        }
    }
    return parts;
}

inline std::vector<double> parse_double_list(std::string_view text, const std::string& key,
                                             int line) {
    std::vector<double> out;
    for (auto part : split(text, ','))
        out.push_back(parse_double_value(part, key, line));
    return out;
}

inline Matrix parse_matrix_value(std::string_view text, const std::string& key, int line) {
    Matrix m;
    for (auto row : split(text, ';'))
        m.push_back(parse_double_list(row, key, line));
    if (m.empty() || m.front().empty())
        throw SpecError("type mismatch for " + key + ": empty matrix", line);
    return m;
}

inline PolicyKind parse_policy_kind(std::string_view text, const std::string& key, int line) {
    auto t = trim(text);
    if (t == "uniform_random") return PolicyKind::uniform_random;
    if (t == "epsilon_greedy") return PolicyKind::epsilon_greedy;
    if (t == "explicit") return PolicyKind::explicit_matrix;
    throw SpecError("type mismatch for " + key + ": unknown policy kind '" + std::string(t) + "'",
                    line);
}

inline EstimatorKind parse_estimator_kind(std::string_view text, const std::string& key,
                                          int line) {
    auto t = trim(text);
    if (t == "dm") return EstimatorKind::dm;
    if (t == "ipw") return EstimatorKind::ipw;
    if (t == "snipw") return EstimatorKind::snipw;
    if (t == "dr") return EstimatorKind::dr;
    throw SpecError("type mismatch for " + key + ": unknown estimator '" + std::string(t) + "'",
                    line);
}

}  // namespace detail

// ============================================================================
// Key registry
// ============================================================================
// One setter per key, shared by the document parser and by programmatic
// assignment (the grid proposer applies schedule entries through the same
// code path the parser uses).

namespace detail {

using KeySetter = std::function<void(ExperimentSpec&, std::string_view value, int line)>;

inline const std::map<std::string, KeySetter>& key_registry() {
    static const std::map<std::string, KeySetter> registry = {
        {"env.contexts",
         [](ExperimentSpec& s, std::string_view v, int line) {
             long long x = parse_int_value(v, "env.contexts", line);
             if (x < 1) throw SpecError("env.contexts out of range: must be >= 1", line);
             s.env.contexts = static_cast<int>(x);
         }},
        {"env.actions",
         [](ExperimentSpec& s, std::string_view v, int line) {
             long long a = parse_int_value(v, "env.actions", line);
             if (a < 2) throw SpecError("env.actions out of range: must be >= 2", line);
             s.env.actions = static_cast<int>(a);
         }},
        {"env.r_max",
         [](ExperimentSpec& s, std::string_view v, int line) {
             double r = parse_double_value(v, "env.r_max", line);
             if (!(r > 0.0)) throw SpecError("env.r_max out of range: must be positive", line);
             s.env.r_max = r;
         }},
        {"env.noise",
         [](ExperimentSpec& s, std::string_view v, int line) {
             auto t = trim(v);
             if (t == "bernoulli") s.env.noise = NoiseKind::bernoulli;
             else if (t == "truncated_gaussian") s.env.noise = NoiseKind::truncated_gaussian;
             else
                 throw SpecError("type mismatch for env.noise: unknown noise kind '" +
                                 std::string(t) + "'", line);
         }},
        {"env.noise_sigma",
         [](ExperimentSpec& s, std::string_view v, int line) {
             double sig = parse_double_value(v, "env.noise_sigma", line);
             if (!(sig > 0.0))
                 throw SpecError("env.noise_sigma out of range: must be positive", line);
             s.env.noise_sigma = sig;
         }},
        {"env.q",
         [](ExperimentSpec& s, std::string_view v, int line) {
             s.env.q = parse_matrix_value(v, "env.q", line);
         }},
        {"env.q_seed",
         [](ExperimentSpec& s, std::string_view v, int line) {
             s.env.q_seed = parse_seed_value(v, "env.q_seed", line);
         }},
        {"env.context_probs",
         [](ExperimentSpec& s, std::string_view v, int line) {
             s.env.context_probs = parse_double_list(v, "env.context_probs", line);
         }},
        {"behavior.kind",
         [](ExperimentSpec& s, std::string_view v, int line) {
             s.behavior.kind = parse_policy_kind(v, "behavior.kind", line);
         }},
        {"behavior.epsilon",
         [](ExperimentSpec& s, std::string_view v, int line) {
             double e = parse_double_value(v, "behavior.epsilon", line);
             if (e < 0.0 || e > 1.0)
                 throw SpecError("behavior.epsilon out of range: must be in [0, 1]", line);
             s.behavior.epsilon = e;
         }},
        {"behavior.matrix",
         [](ExperimentSpec& s, std::string_view v, int line) {
             s.behavior.matrix = parse_matrix_value(v, "behavior.matrix", line);
         }},
        {"target.kind",
         [](ExperimentSpec& s, std::string_view v, int line) {
             s.target.kind = parse_policy_kind(v, "target.kind", line);
         }},
        {"target.epsilon",
         [](ExperimentSpec& s, std::string_view v, int line) {
             double e = parse_double_value(v, "target.epsilon", line);
             if (e < 0.0 || e > 1.0)
                 throw SpecError("target.epsilon out of range: must be in [0, 1]", line);
             s.target.epsilon = e;
         }},
        {"target.matrix",
         [](ExperimentSpec& s, std::string_view v, int line) {
             s.target.matrix = parse_matrix_value(v, "target.matrix", line);
         }},
        {"data.n",
         [](ExperimentSpec& s, std::string_view v, int line) {
             long long n = parse_int_value(v, "data.n", line);
             if (n < 1) throw SpecError("data.n out of range: must be >= 1", line);
             s.n = static_cast<long>(n);
         }},
        {"data.seed",
         [](ExperimentSpec& s, std::string_view v, int line) {
             s.data_seed = parse_seed_value(v, "data.seed", line);
         }},
        {"reward_model.kind",
         [](ExperimentSpec& s, std::string_view v, int line) {
             auto t = trim(v);
             if (t == "tabular") s.reward_model.kind = RewardModelKind::tabular;
             else if (t == "kernel") s.reward_model.kind = RewardModelKind::kernel;
             else
                 throw SpecError("type mismatch for reward_model.kind: unknown kind '" +
                                 std::string(t) + "'", line);
         }},
        {"reward_model.alpha",
         [](ExperimentSpec& s, std::string_view v, int line) {
             double a = parse_double_value(v, "reward_model.alpha", line);
             if (!(a > 0.0))
                 throw SpecError("reward_model.alpha out of range: must be positive", line);
             s.reward_model.alpha = a;
         }},
        {"reward_model.bandwidth",
         [](ExperimentSpec& s, std::string_view v, int line) {
             double h = parse_double_value(v, "reward_model.bandwidth", line);
             if (!(h > 0.0))
                 throw SpecError("reward_model.bandwidth out of range: must be positive", line);
             s.reward_model.bandwidth = h;
         }},
        {"reward_model.learning_rate",
         [](ExperimentSpec& s, std::string_view v, int line) {
             double lr = parse_double_value(v, "reward_model.learning_rate", line);
             if (!(lr > 0.0))
                 throw SpecError("reward_model.learning_rate out of range: must be positive",
                                 line);
             s.reward_model.learning_rate = lr;
         }},
        {"estimators.use",
         [](ExperimentSpec& s, std::string_view v, int line) {
             std::vector<EstimatorKind> kinds;
             for (auto part : split(v, ','))
                 kinds.push_back(parse_estimator_kind(part, "estimators.use", line));
             std::sort(kinds.begin(), kinds.end());
             if (std::adjacent_find(kinds.begin(), kinds.end()) != kinds.end())
                 throw SpecError("estimators.use lists an estimator twice", line);
             s.estimators = std::move(kinds);
         }},
        {"estimators.weight_cap",
         [](ExperimentSpec& s, std::string_view v, int line) {
             double cap = parse_double_value(v, "estimators.weight_cap", line);
             if (!(cap > 0.0))
                 throw SpecError("estimators.weight_cap out of range: must be positive", line);
             s.weight_cap = cap;
         }},
        {"objective.metric",
         [](ExperimentSpec& s, std::string_view v, int line) {
             auto t = trim(v);
             if (t == "relative_ee") s.objective.metric = Metric::relative_ee;
             else if (t == "relative_policy_value")
                 s.objective.metric = Metric::relative_policy_value;
             else
                 throw SpecError("type mismatch for objective.metric: unknown metric '" +
                                 std::string(t) + "'", line);
         }},
        {"objective.estimator",
         [](ExperimentSpec& s, std::string_view v, int line) {
             s.objective.estimator = parse_estimator_kind(v, "objective.estimator", line);
         }},
        {"objective.direction",
         [](ExperimentSpec& s, std::string_view v, int line) {
             auto t = trim(v);
             if (t == "minimize") s.objective.direction = Direction::minimize;
             else if (t == "maximize") s.objective.direction = Direction::maximize;
             else
                 throw SpecError("type mismatch for objective.direction: unknown direction '" +
                                 std::string(t) + "'", line);
         }},
    };
    return registry;
}

}  // namespace detail

// Programmatic single-key assignment; runs through the same setter the
// parser uses, so range checks and messages are identical.
inline void apply_assignment(ExperimentSpec& spec, std::string_view key, std::string_view value) {
    const auto& registry = detail::key_registry();
    auto it = registry.find(std::string(detail::trim(key)));
    if (it == registry.end())
        throw SpecError("unknown key " + std::string(detail::trim(key)));
    it->second(spec, value, 0);
}

// ============================================================================
// Whole-document validation
// ============================================================================
// Cheap: materializes the environment and both policies, which runs every
// dimensional and probability check in bandit.hpp.

inline void validate_spec(const ExperimentSpec& spec) {
    Environment env = build_environment(spec.env);
    make_policy(env, spec.behavior);
    make_policy(env, spec.target);
    if (spec.n < 1) throw SpecError("data.n out of range: must be >= 1");
    if (spec.estimators.empty()) throw SpecError("estimators.use must not be empty");
    if (std::find(spec.estimators.begin(), spec.estimators.end(), spec.objective.estimator) ==
        spec.estimators.end())
        throw SpecError(std::string("objective.estimator ") + to_string(spec.objective.estimator) +
                        " is not in estimators.use");
    if (spec.behavior.kind == PolicyKind::explicit_matrix && spec.behavior.matrix.empty())
        throw SpecError("behavior.matrix is required for an explicit policy");
    if (spec.target.kind == PolicyKind::explicit_matrix && spec.target.matrix.empty())
        throw SpecError("target.matrix is required for an explicit policy");
}

// ============================================================================
// Parser
// ============================================================================

inline ExperimentSpec parse_spec(const std::string& text) {
    ExperimentSpec spec = default_spec();
    spec.env.q_seed.reset();  // only defaulted back in when the document names neither q key

    std::map<std::string, int> seen;  // key -> first line
    int lineno = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t eol = text.find('\n', pos);
        std::string_view line(text.data() + pos,
                              (eol == std::string::npos ? text.size() : eol) - pos);
        pos = eol == std::string::npos ? text.size() + 1 : eol + 1;
        ++lineno;

        if (auto hash = line.find('#'); hash != std::string_view::npos)
            line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;

        auto eq = line.find('=');
        if (eq == std::string_view::npos)
            throw SpecError("syntax error: expected 'section.key = value', got '" +
                            std::string(line) + "'", lineno);
        std::string key(detail::trim(line.substr(0, eq)));
        std::string_view value = detail::trim(line.substr(eq + 1));

        const auto& registry = detail::key_registry();
        auto it = registry.find(key);
        if (it == registry.end()) throw SpecError("unknown key " + key, lineno);
        if (auto [prev, inserted] = seen.emplace(key, lineno); !inserted)
            throw SpecError("duplicate key " + key + " (first set at line " +
                            format_int(prev->second) + ")", lineno);
        it->second(spec, value, lineno);
    }

    auto was_set = [&](const char* key) { return seen.count(key) != 0; };
    auto line_of = [&](const char* key) { return seen.at(key); };

    if (was_set("env.q") && was_set("env.q_seed"))
        throw SpecError("env.q and env.q_seed are mutually exclusive",
                        std::max(line_of("env.q"), line_of("env.q_seed")));
    if (!spec.env.q && !spec.env.q_seed) spec.env.q_seed = 1;

    // Keys must match the selected kind; a stray hyperparameter is the same
    // class of defect as a parameter landed in the wrong constructor.
    auto require_kind = [&](const char* key, bool applicable) {
        if (was_set(key) && !applicable)
            throw SpecError(std::string("key ") + key + " does not apply to the selected kind",
                            line_of(key));
    };
    require_kind("behavior.epsilon", spec.behavior.kind == PolicyKind::epsilon_greedy);
    require_kind("behavior.matrix", spec.behavior.kind == PolicyKind::explicit_matrix);
    require_kind("target.epsilon", spec.target.kind == PolicyKind::epsilon_greedy);
    require_kind("target.matrix", spec.target.kind == PolicyKind::explicit_matrix);
    require_kind("reward_model.alpha", spec.reward_model.kind == RewardModelKind::tabular);
    require_kind("reward_model.bandwidth", spec.reward_model.kind == RewardModelKind::kernel);
    require_kind("reward_model.learning_rate", spec.reward_model.kind == RewardModelKind::kernel);
    require_kind("env.noise_sigma", spec.env.noise == NoiseKind::truncated_gaussian);

    validate_spec(spec);
    return spec;
}

// ============================================================================
// Serializer
// ============================================================================
// Emits sections and keys in one fixed order, values through the exact
// round-trip formatter, LF endings. Two equal specs serialize byte-identically
// and parse back equal.

namespace detail {

inline std::string format_double_list(const std::vector<double>& xs) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ',';
        out += format_double(xs[i]);
    }
    return out;
}

inline std::string format_matrix(const Matrix& m) {
    std::string out;
    for (std::size_t r = 0; r < m.size(); ++r) {
        if (r) out += ';';
        out += format_double_list(m[r]);
    }
    return out;
}

}  // namespace detail

inline std::string serialize_spec(const ExperimentSpec& spec) {
    std::string out;
    auto emit = [&](std::string_view key, const std::string& value) {
        out += key;
        out += " = ";
        out += value;
        out += '\n';
    };

    emit("env.contexts", format_int(spec.env.contexts));
    emit("env.actions", format_int(spec.env.actions));
    emit("env.r_max", format_double(spec.env.r_max));
    emit("env.noise", to_string(spec.env.noise));
    if (spec.env.noise == NoiseKind::truncated_gaussian)
        emit("env.noise_sigma", format_double(spec.env.noise_sigma));
    if (spec.env.q) emit("env.q", detail::format_matrix(*spec.env.q));
    if (spec.env.q_seed) emit("env.q_seed", format_int(static_cast<long long>(*spec.env.q_seed)));
    if (spec.env.context_probs)
        emit("env.context_probs", detail::format_double_list(*spec.env.context_probs));

    emit("behavior.kind", to_string(spec.behavior.kind));
    if (spec.behavior.kind == PolicyKind::epsilon_greedy)
        emit("behavior.epsilon", format_double(spec.behavior.epsilon));
    if (spec.behavior.kind == PolicyKind::explicit_matrix)
        emit("behavior.matrix", detail::format_matrix(spec.behavior.matrix));

    emit("target.kind", to_string(spec.target.kind));
    if (spec.target.kind == PolicyKind::epsilon_greedy)
        emit("target.epsilon", format_double(spec.target.epsilon));
    if (spec.target.kind == PolicyKind::explicit_matrix)
        emit("target.matrix", detail::format_matrix(spec.target.matrix));

    emit("data.n", format_int(spec.n));
    emit("data.seed", format_int(static_cast<long long>(spec.data_seed)));

    emit("reward_model.kind", to_string(spec.reward_model.kind));
    if (spec.reward_model.kind == RewardModelKind::tabular)
        emit("reward_model.alpha", format_double(spec.reward_model.alpha));
    if (spec.reward_model.kind == RewardModelKind::kernel) {
        emit("reward_model.bandwidth", format_double(spec.reward_model.bandwidth));
        emit("reward_model.learning_rate", format_double(spec.reward_model.learning_rate));
    }

    std::string uses;
    for (std::size_t i = 0; i < spec.estimators.size(); ++i) {
        if (i) uses += ',';
        uses += to_string(spec.estimators[i]);
    }
    emit("estimators.use", uses);
    emit("estimators.weight_cap", format_double(spec.weight_cap));

    emit("objective.metric", to_string(spec.objective.metric));
    emit("objective.estimator", to_string(spec.objective.estimator));
    emit("objective.direction", to_string(spec.objective.direction));
    return out;
}

// ============================================================================
// Guardrails
// ============================================================================
// Safety thresholds distilled from failure analysis of estimator
// hyperparameter tuning: kernel bandwidths below 1.0 trigger numerical
// explosions, and learning rates above 3e-4 amplify instability. Findings
// warn by default; strict mode upgrades them to rejections.

inline constexpr double kBandwidthMin = 1.0;
inline constexpr double kLearningRateMax = 3e-4;

enum class GuardrailSeverity { warn, reject };

inline const char* to_string(GuardrailSeverity s) {
    return s == GuardrailSeverity::warn ? "warn" : "reject";
}

struct GuardrailFinding {
    std::string key;    // offending spec field path
    double value;       // offending value
    std::string rule;   // identifier from the registered rule set
    GuardrailSeverity severity;

    bool operator==(const GuardrailFinding&) const = default;
};

// Registered rule identifiers: bandwidth_min, learning_rate_max.
inline std::vector<GuardrailFinding> check_guardrails(const ExperimentSpec& spec,
                                                      bool strict = false) {
    const auto severity = strict ? GuardrailSeverity::reject : GuardrailSeverity::warn;
    std::vector<GuardrailFinding> findings;
    if (spec.reward_model.kind == RewardModelKind::kernel) {
        if (spec.reward_model.bandwidth < kBandwidthMin)
            findings.push_back({"reward_model.bandwidth", spec.reward_model.bandwidth,
                                "bandwidth_min", severity});
        if (spec.reward_model.learning_rate > kLearningRateMax)  // threshold itself is allowed
            findings.push_back({"reward_model.learning_rate", spec.reward_model.learning_rate,
                                "learning_rate_max", severity});
    }
    return findings;
}

}  // namespace opeforge
