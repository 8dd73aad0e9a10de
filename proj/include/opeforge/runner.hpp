#pragma once

#include <cmath>
#include <string>

#include "opeforge/bandit.hpp"
#include "opeforge/cache.hpp"
#include "opeforge/errors.hpp"
#include "opeforge/estimators.hpp"
#include "opeforge/numeric.hpp"
#include "opeforge/spec.hpp"

namespace opeforge {

// ============================================================================
// Spec evaluation
// ============================================================================
// Turns a validated spec into an EstimatorReport. A pure function of the
// spec; the cache only short-circuits recomputation of the dataset, the
// ground truth and the fitted reward model, and every cached payload is an
// exact round-trip serialization, so cache-on and cache-off runs produce
// identical reports.

namespace detail {

// Cache keys describe the realized inputs (the materialized q table, the
// realized policy rows), so e.g. an explicit q and a generated q with equal
// values share entries.
inline std::string describe_env(const Environment& env) {
    std::string s = "X=" + format_int(env.num_contexts()) + ";A=" + format_int(env.num_actions()) +
                    ";r_max=" + format_double(env.r_max) + ";noise=" + to_string(env.noise);
    if (env.noise == NoiseKind::truncated_gaussian)
        s += ";sigma=" + format_double(env.noise_sigma);
    s += ";p=" + format_double_list(env.context_probs);
    s += ";q=" + format_matrix(env.reward_means);
    return s;
}

inline std::string describe_policy(const Policy& policy) {
    return format_matrix(policy.probs);
}

inline std::string describe_reward_model_params(const RewardModelParams& rm) {
    std::string s = std::string("kind=") + to_string(rm.kind);
    if (rm.kind == RewardModelKind::tabular) s += ";alpha=" + format_double(rm.alpha);
    else
        s += ";h=" + format_double(rm.bandwidth) + ";lr=" + format_double(rm.learning_rate);
    return s;
}

}  // namespace detail

inline double extract_objective(const std::map<EstimatorKind, EstimatorResult>& results,
                                double ground_truth, const Objective& objective) {
    auto it = results.find(objective.estimator);
    if (it == results.end())
        throw EvalError(std::string("objective estimator ") + to_string(objective.estimator) +
                        " was not computed");
    if (objective.metric == Metric::relative_ee) return it->second.relative_ee;
    if (ground_truth == 0.0)
        throw EvalError("relative_policy_value undefined: ground truth is zero");
    return it->second.estimate / ground_truth;
}

inline EstimatorReport run_experiment(const ExperimentSpec& spec, ArtifactCache* cache = nullptr) {
    validate_spec(spec);

    const Environment env = build_environment(spec.env);
    const Policy behavior = make_policy(env, spec.behavior);
    const Policy target = make_policy(env, spec.target);

    const std::string env_key = detail::describe_env(env);
    const std::string dataset_key = env_key + "|b=" + detail::describe_policy(behavior) +
                                    "|n=" + format_int(spec.n) +
                                    "|seed=" + format_int(static_cast<long long>(spec.data_seed));

    LoggedDataset data;
    if (cache) {
        const std::string csv = cache->get_or_compute("dataset", dataset_key, [&] {
            return dataset_to_csv(sample_log(env, behavior, spec.n, spec.data_seed));
        });
        data = dataset_from_csv(csv);
    } else {
        data = sample_log(env, behavior, spec.n, spec.data_seed);
    }

    double ground_truth;
    if (cache) {
        const std::string truth_key = env_key + "|t=" + detail::describe_policy(target);
        const std::string payload = cache->get_or_compute(
            "truth", truth_key, [&] { return format_double(true_policy_value(env, target)); });
        if (!try_parse_double(payload, ground_truth))
            throw EvalError("unreadable cached ground truth");
    } else {
        ground_truth = true_policy_value(env, target);
    }

    const bool needs_model =
        std::find(spec.estimators.begin(), spec.estimators.end(), EstimatorKind::dm) !=
            spec.estimators.end() ||
        std::find(spec.estimators.begin(), spec.estimators.end(), EstimatorKind::dr) !=
            spec.estimators.end();

    RewardModel model;
    if (needs_model) {
        if (cache) {
            const std::string model_key =
                dataset_key + "|rm=" + detail::describe_reward_model_params(spec.reward_model);
            const std::string payload = cache->get_or_compute("model", model_key, [&] {
                RewardModel m = fit_reward_model(data, env.num_contexts(), env.num_actions(),
                                                 env.r_max, spec.reward_model);
                return detail::format_matrix(m.table);
            });
            model.kind = spec.reward_model.kind;
            model.table = detail::parse_matrix_value(payload, "cached model", 0);
        } else {
            model = fit_reward_model(data, env.num_contexts(), env.num_actions(), env.r_max,
                                     spec.reward_model);
        }
    }

    EstimatorReport report;
    report.ground_truth = ground_truth;
    report.objective = spec.objective;
    for (EstimatorKind kind : spec.estimators) {
        double estimate;
        switch (kind) {
            case EstimatorKind::dm: estimate = estimate_dm(data, target, model); break;
            case EstimatorKind::ipw: estimate = estimate_ipw(data, target, spec.weight_cap); break;
            case EstimatorKind::snipw:
                estimate = estimate_snipw(data, target, spec.weight_cap);
                break;
            default: estimate = estimate_dr(data, target, model, spec.weight_cap); break;
        }
        report.results[kind] = {estimate, relative_estimation_error(estimate, ground_truth)};
    }
    report.objective_value = extract_objective(report.results, ground_truth, spec.objective);
    if (!std::isfinite(report.objective_value))
        throw EvalError("objective value is not finite: " + format_double(report.objective_value));
    return report;
}

}  // namespace opeforge
