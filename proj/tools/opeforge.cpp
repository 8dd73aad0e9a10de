// opeforge - command-line harness for off-policy-evaluation experiments and
// the two-stage spec-optimization loop.
//
// Subcommands:
//   generate-data   materialize a spec's logged dataset as CSV
//   evaluate        run the estimators for one spec, print/write the report
//   optimize        run the iterative optimization loop into a workdir
//   batch           execute a scenarios x modes x proposers x repeats plan
//   report          recompute the summary CSV from a per-run CSV
//
// Exit codes: 0 success, 2 invalid input, 3 run failure, 4 infrastructure.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "opeforge/batch.hpp"
#include "opeforge/loop.hpp"
#include "opeforge/runner.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalidInput = 2;
constexpr int kExitRunFailure = 3;
constexpr int kExitInfrastructure = 4;

int exit_code_for(opeforge::FailureKind kind) {
    switch (kind) {
        case opeforge::FailureKind::syntax_code_error: return kExitInvalidInput;
        case opeforge::FailureKind::infrastructure: return kExitInfrastructure;
        default: return kExitRunFailure;
    }
}

int fail_with(const std::exception& e) {
    const auto failure = opeforge::classify_exception(e);
    std::cerr << opeforge::format_failure_line(failure) << "\n";
    return exit_code_for(failure.kind);
}

void print_report(const opeforge::EstimatorReport& report) {
    std::cout << "ground_truth=" << opeforge::format_double(report.ground_truth) << "\n";
    for (const auto& [kind, res] : report.results)
        std::cout << to_string(kind) << " estimate=" << opeforge::format_double(res.estimate)
                  << " relative_ee=" << opeforge::format_double(res.relative_ee) << "\n";
    std::cout << "objective=" << to_string(report.objective.metric) << ":"
              << to_string(report.objective.estimator)
              << " direction=" << to_string(report.objective.direction)
              << " value=" << opeforge::format_double(report.objective_value) << "\n";
}

opeforge::Objective parse_objective_flag(const std::string& text) {
    const auto parts = opeforge::detail::split(text, ':');
    if (parts.size() != 3)
        throw opeforge::SpecError(
            "--objective expects <metric>:<estimator>:<direction>, e.g. relative_ee:dr:minimize");
    opeforge::ExperimentSpec scratch;
    opeforge::apply_assignment(scratch, "objective.metric", parts[0]);
    opeforge::apply_assignment(scratch, "objective.estimator", parts[1]);
    opeforge::apply_assignment(scratch, "objective.direction", parts[2]);
    return scratch.objective;
}

struct OptimizeArgs {
    std::string spec_path;
    std::string workdir;
    int iterations = 7;
    std::string mode = "whole_code";
    std::string proposer = "random_perturb";
    std::string objective;
    double extreme_threshold = opeforge::kExtremeThreshold;
    bool strict_guardrails = false;
    std::optional<std::uint64_t> seed;
    int fuzz = opeforge::kDefaultFuzz;
    int window = opeforge::kDefaultSearchWindow;
    std::string cache_dir;
    std::string analyzer_prompt;
    std::string coder_prompt;
};

int run_optimize(const OptimizeArgs& args) {
    std::string original_text = opeforge::read_text_file(args.spec_path);
    if (!args.objective.empty()) {
        // The override edits the working copy of the artifact before the run.
        opeforge::ExperimentSpec spec = opeforge::parse_spec(original_text);
        spec.objective = parse_objective_flag(args.objective);
        opeforge::validate_spec(spec);
        original_text = opeforge::serialize_spec(spec);
    }

    opeforge::ProposerBinding binding = opeforge::parse_proposer(args.proposer);
    if (args.seed && binding.kind == opeforge::ProposerBinding::Kind::random_perturb)
        binding.seed = *args.seed;
    if (!args.analyzer_prompt.empty())
        binding.analyzer_template = opeforge::read_text_file(args.analyzer_prompt);
    if (!args.coder_prompt.empty())
        binding.coder_template = opeforge::read_text_file(args.coder_prompt);
    auto proposer = opeforge::make_proposer(binding);

    const opeforge::ModeKind kind = opeforge::parse_mode_kind(args.mode);
    opeforge::OptimizationConfig cfg;
    cfg.iterations = args.iterations;
    cfg.mode = kind == opeforge::ModeKind::agent_applies
                   ? opeforge::ModificationMode::agent_applies(args.fuzz, args.window)
                   : opeforge::ModificationMode{kind, 0, args.window};
    cfg.extreme_threshold = args.extreme_threshold;
    cfg.strict_guardrails = args.strict_guardrails;

    std::optional<opeforge::ArtifactCache> cache;
    if (!args.cache_dir.empty()) {
        cache.emplace(args.cache_dir);
        cfg.cache = &*cache;
    }

    const auto result =
        opeforge::run_optimization_on_text(original_text, *proposer, cfg, args.workdir);
    if (!result.baseline_ok) {
        std::cerr << opeforge::format_failure_line(result.baseline_failure) << "\n";
        return exit_code_for(result.baseline_failure.kind);
    }

    std::cout << "BASELINE objective=" << opeforge::format_double(result.baseline.objective_value)
              << "\n";
    for (const auto& rec : result.iterations) {
        if (rec.success)
            std::cout << "ITER " << rec.index << " ok objective="
                      << opeforge::format_double(rec.objective_value) << " pct="
                      << opeforge::format_double(opeforge::percentage_change(
                             result.baseline.objective_value, rec.objective_value))
                      << "\n";
        else
            std::cout << "ITER " << rec.index << " fail ("
                      << to_string(rec.failure.kind) << ": " << rec.failure.detail << ")\n";
    }
    std::cout << "BEST index=" << result.best_index
              << " objective=" << opeforge::format_double(result.best_objective)
              << " pct=" << opeforge::format_double(result.pct)
              << " class=" << to_string(result.outcome) << "\n";
    std::cout << "workdir: " << args.workdir << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"off-policy-evaluation optimization harness"};
    app.require_subcommand(1);

    // ---- generate-data ----
    std::string gen_spec, gen_out = "dataset.csv";
    auto* gen = app.add_subcommand("generate-data", "materialize a spec's dataset as CSV");
    gen->add_option("spec", gen_spec, "spec file")->required();
    gen->add_option("--out", gen_out, "output CSV path");

    // ---- evaluate ----
    std::string eval_spec, eval_out, eval_cache;
    auto* eval = app.add_subcommand("evaluate", "evaluate one spec and report estimators");
    eval->add_option("spec", eval_spec, "spec file")->required();
    eval->add_option("--out", eval_out, "write the report CSV here");
    eval->add_option("--cache", eval_cache, "artifact cache directory");

    // ---- optimize ----
    OptimizeArgs opt;
    auto* optimize = app.add_subcommand("optimize", "run the iterative optimization loop");
    optimize->add_option("spec", opt.spec_path, "spec file")->required();
    optimize->add_option("--workdir", opt.workdir, "run directory")->required();
    optimize->add_option("--iterations", opt.iterations, "iteration count (default 7)");
    optimize->add_option("--mode", opt.mode, "whole_code | manual_patch | agent_applies");
    optimize->add_option("--proposer", opt.proposer,
                         "null | random_perturb[(seed=..,scale=..)] | grid(file=..) | llm[(url=..)]");
    optimize->add_option("--objective", opt.objective,
                         "override objective as <metric>:<estimator>:<direction>");
    optimize->add_option("--extreme-threshold", opt.extreme_threshold,
                         "|pct| beyond this classifies as extreme");
    optimize->add_flag("--strict-guardrails", opt.strict_guardrails,
                       "reject guardrail violations instead of warning");
    std::uint64_t opt_seed = 0;
    auto* seed_opt = optimize->add_option("--seed", opt_seed, "random_perturb seed");
    optimize->add_option("--fuzz", opt.fuzz, "agent_applies fuzz (default 2)");
    optimize->add_option("--window", opt.window, "agent_applies search window (default 20)");
    optimize->add_option("--cache", opt.cache_dir, "artifact cache directory");
    optimize->add_option("--analyzer-prompt", opt.analyzer_prompt, "analyzer template file");
    optimize->add_option("--coder-prompt", opt.coder_prompt, "coder template file");

    // ---- batch ----
    std::string batch_plan_path, batch_runs_out, batch_summary_out;
    int batch_jobs = 0;
    auto* batch = app.add_subcommand("batch", "run a scenarios x modes x proposers plan");
    batch->add_option("plan", batch_plan_path, "plan file")->required();
    batch->add_option("--runs-csv", batch_runs_out, "per-run CSV path (default workroot/runs.csv)");
    batch->add_option("--summary-csv", batch_summary_out,
                      "summary CSV path (default workroot/summary.csv)");
    auto* jobs_opt = batch->add_option("--jobs", batch_jobs, "parallel run limit (overrides plan)");

    // ---- report ----
    std::string report_runs, report_out;
    auto* report = app.add_subcommand("report", "aggregate a per-run CSV into a summary");
    report->add_option("runs", report_runs, "per-run CSV file")->required();
    report->add_option("--out", report_out, "write the summary CSV here");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            const auto spec = opeforge::parse_spec(opeforge::read_text_file(gen_spec));
            const auto env = opeforge::build_environment(spec.env);
            const auto behavior = opeforge::make_policy(env, spec.behavior);
            const auto target = opeforge::make_policy(env, spec.target);
            const auto data = opeforge::sample_log(env, behavior, spec.n, spec.data_seed);
            opeforge::write_text_file(gen_out, opeforge::dataset_to_csv(data));
            std::cout << "rows=" << data.size() << "\n";
            std::cout << "ground_truth="
                      << opeforge::format_double(opeforge::true_policy_value(env, target)) << "\n";
            std::cout << "wrote " << gen_out << "\n";
            return kExitOk;
        }

        if (*eval) {
            const auto spec = opeforge::parse_spec(opeforge::read_text_file(eval_spec));
            std::optional<opeforge::ArtifactCache> cache;
            if (!eval_cache.empty()) cache.emplace(eval_cache);
            const auto rep = opeforge::run_experiment(spec, cache ? &*cache : nullptr);
            print_report(rep);
            if (!eval_out.empty()) {
                opeforge::write_text_file(eval_out, opeforge::report_to_csv(rep));
                std::cout << "wrote " << eval_out << "\n";
            }
            return kExitOk;
        }

        if (*optimize) {
            if (seed_opt->count() > 0) opt.seed = opt_seed;
            return run_optimize(opt);
        }

        if (*batch) {
            auto plan = opeforge::parse_batch_plan(opeforge::read_text_file(batch_plan_path));
            if (jobs_opt->count() > 0) {
                if (batch_jobs < 1) throw opeforge::SpecError("--jobs must be >= 1");
                plan.jobs = batch_jobs;
            }
            const auto rows = opeforge::run_batch(plan);
            std::filesystem::create_directories(plan.workroot);
            const auto runs_path = batch_runs_out.empty()
                                       ? (plan.workroot / "runs.csv").string()
                                       : batch_runs_out;
            const auto summary_path = batch_summary_out.empty()
                                          ? (plan.workroot / "summary.csv").string()
                                          : batch_summary_out;
            opeforge::write_text_file(runs_path, opeforge::runs_to_csv(rows));
            const auto summary = opeforge::summarize_runs(rows);
            opeforge::write_text_file(summary_path, opeforge::summary_to_csv(summary));
            std::cout << opeforge::summary_to_csv(summary);
            std::cout << "wrote " << runs_path << " and " << summary_path << "\n";
            return kExitOk;
        }

        if (*report) {
            const auto rows = opeforge::parse_runs_csv(opeforge::read_text_file(report_runs));
            const auto summary = opeforge::summarize_runs(rows);
            std::cout << opeforge::summary_to_csv(summary);
            if (!report_out.empty()) {
                opeforge::write_text_file(report_out, opeforge::summary_to_csv(summary));
                std::cout << "wrote " << report_out << "\n";
            }
            return kExitOk;
        }
    } catch (const std::exception& e) {
        return fail_with(e);
    }
    return kExitOk;
}
