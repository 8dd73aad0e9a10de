#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "opeforge/bandit.hpp"
#include "opeforge/errors.hpp"
#include "opeforge/numeric.hpp"

namespace opeforge {

// ============================================================================
// Estimator selection / objective
// ============================================================================

enum class EstimatorKind { dm, ipw, snipw, dr };

inline const char* to_string(EstimatorKind k) {
    switch (k) {
        case EstimatorKind::dm: return "dm";
        case EstimatorKind::ipw: return "ipw";
        case EstimatorKind::snipw: return "snipw";
        default: return "dr";
    }
}

enum class Metric { relative_ee, relative_policy_value };

inline const char* to_string(Metric m) {
    return m == Metric::relative_ee ? "relative_ee" : "relative_policy_value";
}

enum class Direction { minimize, maximize };

inline const char* to_string(Direction d) {
    return d == Direction::minimize ? "minimize" : "maximize";
}

// The scalar the optimization loop steers by: one metric of one estimator,
// with an explicit improvement direction.
struct Objective {
    Metric metric = Metric::relative_ee;
    EstimatorKind estimator = EstimatorKind::dr;
    Direction direction = Direction::minimize;

    bool operator==(const Objective&) const = default;
};

// ============================================================================
// Reward model
// ============================================================================

enum class RewardModelKind { tabular, kernel };

inline const char* to_string(RewardModelKind k) {
    return k == RewardModelKind::tabular ? "tabular" : "kernel";
}

struct RewardModelParams {
    RewardModelKind kind = RewardModelKind::tabular;
    double alpha = 1.0;          // tabular smoothing weight
    double bandwidth = 1.0;      // kernel width h over context indices
    double learning_rate = 1e-4; // kernel gradient step size

    bool operator==(const RewardModelParams&) const = default;
};

struct RewardModel {
    RewardModelKind kind = RewardModelKind::tabular;
    Matrix table;  // fitted q_hat(x,a), each in [0, r_max]

    double at(int x, int a) const {
        return table[static_cast<std::size_t>(x)][static_cast<std::size_t>(a)];
    }
};

// Number of gradient steps the kernel fit always runs; fixed so fitting is a
// pure function of (data, dims, params).
inline constexpr int kKernelFitIterations = 200;

// Tabular: q_hat(x,a) = (sum of rewards at (x,a) + alpha * prior) / (count + alpha)
// with prior = r_max / 2, so empty cells sit exactly at the prior mean.
//
// Kernel: per (x,a), gradient descent on the context-similarity-weighted
// squared loss 1/2 * sum_i K(x, x_i) (theta - r_i)^2 over records with
// action a, where K(x,x') = exp(-(x-x')^2 / (2 h^2)) on context indices.
// Initialized at the prior, fixed iteration budget, final value clamped to
// [0, r_max]. An oversized learning rate makes the iteration diverge before
// the clamp; that is the instability the bandwidth/learning-rate guardrails
// flag.
inline RewardModel fit_reward_model(const LoggedDataset& data, int contexts, int actions,
                                    double r_max, const RewardModelParams& params) {
    if (data.records.empty()) throw SpecError("cannot fit a reward model on an empty dataset");
    const double prior = r_max / 2.0;

    RewardModel model;
    model.kind = params.kind;
    model.table.assign(static_cast<std::size_t>(contexts),
                       std::vector<double>(static_cast<std::size_t>(actions), prior));

    if (params.kind == RewardModelKind::tabular) {
        if (!(params.alpha > 0.0)) throw SpecError("reward_model.alpha must be positive");
        Matrix sums(static_cast<std::size_t>(contexts),
                    std::vector<double>(static_cast<std::size_t>(actions), 0.0));
        Matrix counts = sums;
        for (const auto& rec : data.records) {
            sums[static_cast<std::size_t>(rec.context)][static_cast<std::size_t>(rec.action)] +=
                rec.reward;
            counts[static_cast<std::size_t>(rec.context)][static_cast<std::size_t>(rec.action)] +=
                1.0;
        }
        for (int x = 0; x < contexts; ++x)
            for (int a = 0; a < actions; ++a) {
                const auto xi = static_cast<std::size_t>(x);
                const auto ai = static_cast<std::size_t>(a);
                model.table[xi][ai] =
                    (sums[xi][ai] + params.alpha * prior) / (counts[xi][ai] + params.alpha);
            }
        return model;
    }

    if (!(params.bandwidth > 0.0)) throw SpecError("reward_model.bandwidth must be positive");
    if (!(params.learning_rate > 0.0))
        throw SpecError("reward_model.learning_rate must be positive");

    const double inv2h2 = 1.0 / (2.0 * params.bandwidth * params.bandwidth);
    for (int x = 0; x < contexts; ++x) {
        for (int a = 0; a < actions; ++a) {
            // The loss is quadratic in theta, so each step only needs the
            // weight mass W and weighted reward sum S.
            double weight_mass = 0.0, weighted_rewards = 0.0;
            for (const auto& rec : data.records) {
                if (rec.action != a) continue;
                const double d = static_cast<double>(rec.context - x);
                const double w = std::exp(-d * d * inv2h2);
                weight_mass += w;
                weighted_rewards += w * rec.reward;
            }
            double theta = prior;
            for (int t = 0; t < kKernelFitIterations; ++t)
                theta -= params.learning_rate * (weight_mass * theta - weighted_rewards);
            if (!std::isfinite(theta)) theta = theta > 0.0 ? r_max : 0.0;
            model.table[static_cast<std::size_t>(x)][static_cast<std::size_t>(a)] =
                std::clamp(theta, 0.0, r_max);
        }
    }
    return model;
}

// ============================================================================
// Estimators
// ============================================================================

inline constexpr double kNoWeightCap = std::numeric_limits<double>::infinity();

namespace detail {

inline double importance_ratio(const LogRecord& rec, const Policy& target, double weight_cap) {
    if (!(rec.propensity > 0.0))
        throw EvalError("zero propensity in logged record");
    const double rho = target.probs[static_cast<std::size_t>(rec.context)]
                                   [static_cast<std::size_t>(rec.action)] /
                       rec.propensity;
    return std::min(rho, weight_cap);
}

inline void check_nonempty(const LoggedDataset& data) {
    if (data.records.empty()) throw EvalError("empty dataset");
}

}  // namespace detail

// DM: (1/n) sum_i sum_a pi_e(a|x_i) q_hat(x_i, a)
inline double estimate_dm(const LoggedDataset& data, const Policy& target,
                          const RewardModel& model) {
    detail::check_nonempty(data);
    double total = 0.0;
    for (const auto& rec : data.records) {
        const auto& row = target.probs[static_cast<std::size_t>(rec.context)];
        double inner = 0.0;
        for (std::size_t a = 0; a < row.size(); ++a)
            inner += row[a] * model.table[static_cast<std::size_t>(rec.context)][a];
        total += inner;
    }
    return total / static_cast<double>(data.records.size());
}

// IPW: (1/n) sum_i rho(x_i, a_i) r_i with the logged propensities.
inline double estimate_ipw(const LoggedDataset& data, const Policy& target,
                           double weight_cap = kNoWeightCap) {
    detail::check_nonempty(data);
    double total = 0.0;
    for (const auto& rec : data.records)
        total += detail::importance_ratio(rec, target, weight_cap) * rec.reward;
    return total / static_cast<double>(data.records.size());
}

// SNIPW: (sum_i rho_i r_i) / (sum_i rho_i). Always inside [min r, max r].
inline double estimate_snipw(const LoggedDataset& data, const Policy& target,
                             double weight_cap = kNoWeightCap) {
    detail::check_nonempty(data);
    double num = 0.0, denom = 0.0;
    for (const auto& rec : data.records) {
        const double rho = detail::importance_ratio(rec, target, weight_cap);
        num += rho * rec.reward;
        denom += rho;
    }
    if (!(denom > 0.0)) throw EvalError("degenerate self-normalization: all weights are zero");
    return num / denom;
}

// DR: (1/n) sum_i [ sum_a pi_e(a|x_i) q_hat(x_i,a) + rho_i (r_i - q_hat(x_i,a_i)) ]
inline double estimate_dr(const LoggedDataset& data, const Policy& target,
                          const RewardModel& model, double weight_cap = kNoWeightCap) {
    detail::check_nonempty(data);
    double total = 0.0;
    for (const auto& rec : data.records) {
        const auto& row = target.probs[static_cast<std::size_t>(rec.context)];
        double direct = 0.0;
        for (std::size_t a = 0; a < row.size(); ++a)
            direct += row[a] * model.table[static_cast<std::size_t>(rec.context)][a];
        const double rho = detail::importance_ratio(rec, target, weight_cap);
        total += direct + rho * (rec.reward - model.at(rec.context, rec.action));
    }
    return total / static_cast<double>(data.records.size());
}

// |estimate - truth| / |truth|; undefined at truth = 0.
inline double relative_estimation_error(double estimate, double ground_truth) {
    if (ground_truth == 0.0) throw EvalError("undefined relative error: ground truth is zero");
    return std::abs(estimate - ground_truth) / std::abs(ground_truth);
}

// ============================================================================
// MSE of an estimator, by replication
// ============================================================================

struct MseResult {
    double mse = 0.0;
    double stderror = 0.0;  // standard error of the MSE point estimate
};

// Replication k draws its log with seed base_seed + k; squared deviations are
// accumulated in replication order, so the result is deterministic.
inline MseResult mse_of_estimator(const std::function<double(const LoggedDataset&)>& estimator,
                                  const Environment& env, const Policy& behavior,
                                  const Policy& target, long n, int replications,
                                  std::uint64_t base_seed) {
    if (replications < 2) throw SpecError("replications too small: need at least 2");
    const double truth = true_policy_value(env, target);
    std::vector<double> sq_devs;
    sq_devs.reserve(static_cast<std::size_t>(replications));
    for (int k = 0; k < replications; ++k) {
        const LoggedDataset data =
            sample_log(env, behavior, n, base_seed + static_cast<std::uint64_t>(k));
        double estimate;
        try {
            estimate = estimator(data);
        } catch (const Error& e) {
            throw EvalError("replication " + format_int(k) + " aborted: " + e.what());
        }
        const double dev = truth - estimate;
        sq_devs.push_back(dev * dev);
    }
    MseResult out;
    for (double d : sq_devs) out.mse += d;
    out.mse /= static_cast<double>(replications);
    double ss = 0.0;
    for (double d : sq_devs) ss += (d - out.mse) * (d - out.mse);
    out.stderror = std::sqrt(ss / static_cast<double>(replications - 1) /
                             static_cast<double>(replications));
    return out;
}

// Convenience form for the named estimators. Model-based estimators refit
// their reward model on each replication's own log.
inline MseResult mse_of_estimator(EstimatorKind kind, const Environment& env,
                                  const Policy& behavior, const Policy& target,
                                  const RewardModelParams& rm, double weight_cap, long n,
                                  int replications, std::uint64_t base_seed) {
    auto fn = [&](const LoggedDataset& data) -> double {
        switch (kind) {
            case EstimatorKind::ipw: return estimate_ipw(data, target, weight_cap);
            case EstimatorKind::snipw: return estimate_snipw(data, target, weight_cap);
            case EstimatorKind::dm: {
                RewardModel model =
                    fit_reward_model(data, env.num_contexts(), env.num_actions(), env.r_max, rm);
                return estimate_dm(data, target, model);
            }
            default: {
                RewardModel model =
                    fit_reward_model(data, env.num_contexts(), env.num_actions(), env.r_max, rm);
                return estimate_dr(data, target, model, weight_cap);
            }
        }
    };
    return mse_of_estimator(fn, env, behavior, target, n, replications, base_seed);
}

// ============================================================================
// Report
// ============================================================================

struct EstimatorResult {
    double estimate = 0.0;
    double relative_ee = 0.0;

    bool operator==(const EstimatorResult&) const = default;
};

struct EstimatorReport {
    std::map<EstimatorKind, EstimatorResult> results;  // canonical dm,ipw,snipw,dr order
    double ground_truth = 0.0;
    Objective objective;
    double objective_value = 0.0;

    bool operator==(const EstimatorReport&) const = default;
};

// CSV rows `estimator,estimate,relative_ee,ground_truth`, then one summary
// line carrying the objective value:
//   objective,<value>,<metric>:<estimator>,<direction>
inline std::string report_to_csv(const EstimatorReport& report) {
    std::string out = "estimator,estimate,relative_ee,ground_truth\n";
    for (const auto& [kind, res] : report.results) {
        out += to_string(kind);
        out += ',';
        out += format_double(res.estimate);
        out += ',';
        out += format_double(res.relative_ee);
        out += ',';
        out += format_double(report.ground_truth);
        out += '\n';
    }
    out += "objective,";
    out += format_double(report.objective_value);
    out += ',';
    out += to_string(report.objective.metric);
    out += ':';
    out += to_string(report.objective.estimator);
    out += ',';
    out += to_string(report.objective.direction);
    out += '\n';
    return out;
}

}  // namespace opeforge
