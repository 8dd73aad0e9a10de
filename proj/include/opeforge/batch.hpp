#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "opeforge/cache.hpp"
#include "opeforge/errors.hpp"
#include "opeforge/loop.hpp"
#include "opeforge/numeric.hpp"

namespace opeforge {

// ============================================================================
// Batch plans
// ============================================================================
// A plan is the cross product scenarios x modes x proposers x repeats. Plan
// files use the same lexical rules as spec documents but with flat keys.

struct BatchPlan {
    std::vector<std::string> scenarios;        // spec file paths
    std::vector<ModificationMode> modes;
    std::vector<ProposerBinding> proposers;
    int repeats = 1;
    std::uint64_t base_seed = 0;
    std::filesystem::path workroot = "runs";
    int iterations = 7;
    int jobs = 1;
    double extreme_threshold = kExtremeThreshold;
    bool strict_guardrails = false;
    std::optional<std::filesystem::path> cache_dir;
    int fuzz = kDefaultFuzz;     // applied to agent_applies modes
    int window = kDefaultSearchWindow;

    std::size_t total_runs() const {
        return scenarios.size() * modes.size() * proposers.size() *
               static_cast<std::size_t>(repeats);
    }
};

inline BatchPlan parse_batch_plan(const std::string& text) {
    BatchPlan plan;
    std::vector<std::string> mode_names = {"whole_code"};
    bool have_scenarios = false, have_proposers = false;

    int lineno = 0;
    std::size_t pos = 0;
    std::map<std::string, int> seen;
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
            throw SpecError("syntax error in plan: expected 'key = value'", lineno);
        const std::string key(detail::trim(line.substr(0, eq)));
        const std::string value(detail::trim(line.substr(eq + 1)));
        if (auto [it, inserted] = seen.emplace(key, lineno); !inserted)
            throw SpecError("duplicate plan key " + key, lineno);

        if (key == "scenarios") {
            for (auto part : detail::split(value, ','))
                if (!detail::trim(part).empty())
                    plan.scenarios.emplace_back(detail::trim(part));
            have_scenarios = true;
        } else if (key == "modes") {
            mode_names.clear();
            for (auto part : detail::split(value, ','))
                mode_names.emplace_back(detail::trim(part));
        } else if (key == "proposers") {
            for (auto part : detail::split(value, ','))
                plan.proposers.push_back(parse_proposer(std::string(detail::trim(part))));
            have_proposers = true;
        } else if (key == "repeats") {
            plan.repeats = static_cast<int>(detail::parse_int_value(value, key, lineno));
            if (plan.repeats < 1) throw SpecError("repeats out of range: must be >= 1", lineno);
        } else if (key == "base_seed") {
            plan.base_seed = detail::parse_seed_value(value, key, lineno);
        } else if (key == "workroot") {
            plan.workroot = value;
        } else if (key == "iterations") {
            plan.iterations = static_cast<int>(detail::parse_int_value(value, key, lineno));
            if (plan.iterations < 1)
                throw SpecError("iterations out of range: must be >= 1", lineno);
        } else if (key == "jobs") {
            plan.jobs = static_cast<int>(detail::parse_int_value(value, key, lineno));
            if (plan.jobs < 1) throw SpecError("jobs out of range: must be >= 1", lineno);
        } else if (key == "extreme_threshold") {
            plan.extreme_threshold = detail::parse_double_value(value, key, lineno);
        } else if (key == "strict_guardrails") {
            if (value == "true") plan.strict_guardrails = true;
            else if (value == "false") plan.strict_guardrails = false;
            else throw SpecError("type mismatch for strict_guardrails: expected true|false",
                                 lineno);
        } else if (key == "cache_dir") {
            plan.cache_dir = value;
        } else if (key == "fuzz") {
            plan.fuzz = static_cast<int>(detail::parse_int_value(value, key, lineno));
            if (plan.fuzz < 0) throw SpecError("fuzz out of range: must be >= 0", lineno);
        } else if (key == "window") {
            plan.window = static_cast<int>(detail::parse_int_value(value, key, lineno));
            if (plan.window < 0) throw SpecError("window out of range: must be >= 0", lineno);
        } else {
            throw SpecError("unknown plan key " + key, lineno);
        }
    }

    if (!have_scenarios || plan.scenarios.empty())
        throw SpecError("plan must list at least one scenario");
    if (!have_proposers || plan.proposers.empty())
        throw SpecError("plan must list at least one proposer");
    for (const auto& name : mode_names) {
        const ModeKind kind = parse_mode_kind(name);
        plan.modes.push_back(kind == ModeKind::agent_applies
                                 ? ModificationMode::agent_applies(plan.fuzz, plan.window)
                                 : ModificationMode{kind, 0, plan.window});
    }
    return plan;
}

// ============================================================================
// Per-run rows
// ============================================================================
// CSV header: scenario,mode,proposer,repeat,status,pct,class,best_index,runtime_secs
// For ok runs `class` is the outcome class; for failed runs it is the failure
// class, which is what the summary's failure histogram counts. pct and
// best_index are empty for failed runs. runtime_secs is wall clock and is
// excluded from determinism comparisons.

struct RunRow {
    std::string scenario;
    std::string mode;
    std::string proposer;
    int repeat = 0;
    bool ok = false;
    std::optional<double> pct;
    std::string run_class;  // OutcomeClass name or FailureKind name
    std::optional<int> best_index;
    double runtime_secs = 0.0;
};

inline constexpr std::string_view kRunsCsvHeader =
    "scenario,mode,proposer,repeat,status,pct,class,best_index,runtime_secs";

inline std::string runs_to_csv(const std::vector<RunRow>& rows) {
    std::string out = std::string(kRunsCsvHeader) + "\n";
    for (const auto& row : rows) {
        out += row.scenario + ',' + row.mode + ',' + row.proposer + ',' + format_int(row.repeat) +
               ',' + (row.ok ? "ok" : "failed") + ',' +
               (row.pct ? format_double(*row.pct) : "") + ',' + row.run_class + ',' +
               (row.best_index ? format_int(*row.best_index) : "") + ',' +
               format_double(row.runtime_secs) + '\n';
    }
    return out;
}

inline std::vector<RunRow> parse_runs_csv(const std::string& csv) {
    const auto lines = split_lines_keep_ends(csv);
    if (lines.empty() || detail::strip_eol(lines[0]) != kRunsCsvHeader)
        throw SpecError("run CSV missing header");
    std::vector<RunRow> rows;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const std::string line = detail::strip_eol(lines[i]);
        if (line.empty()) continue;
        const auto fields = detail::split(line, ',');
        if (fields.size() != 9)
            throw SpecError("run CSV row has " + format_int(static_cast<long long>(fields.size())) +
                            " fields, expected 9", static_cast<int>(i + 1));
        RunRow row;
        row.scenario = std::string(fields[0]);
        row.mode = std::string(fields[1]);
        row.proposer = std::string(fields[2]);
        row.repeat = static_cast<int>(detail::parse_int_value(fields[3], "repeat",
                                                              static_cast<int>(i + 1)));
        if (fields[4] == "ok") row.ok = true;
        else if (fields[4] == "failed") row.ok = false;
        else throw SpecError("run CSV status must be ok|failed", static_cast<int>(i + 1));
        if (!fields[5].empty())
            row.pct = detail::parse_double_value(fields[5], "pct", static_cast<int>(i + 1));
        row.run_class = std::string(fields[6]);
        if (!fields[7].empty())
            row.best_index = static_cast<int>(
                detail::parse_int_value(fields[7], "best_index", static_cast<int>(i + 1)));
        row.runtime_secs =
            detail::parse_double_value(fields[8], "runtime_secs", static_cast<int>(i + 1));
        rows.push_back(std::move(row));
    }
    return rows;
}

// ============================================================================
// Batch execution
// ============================================================================

namespace detail {

inline std::string scenario_stem(const std::string& path) {
    return std::filesystem::path(path).stem().string();
}

inline RunRow execute_one_run(const std::string& scenario, const ModificationMode& mode,
                              const ProposerBinding& binding, int repeat, std::uint64_t run_seed,
                              const OptimizationConfig& base_cfg,
                              const std::filesystem::path& workdir) {
    RunRow row;
    row.scenario = scenario;
    row.mode = to_string(mode.kind);
    row.proposer = to_string(binding.kind);
    row.repeat = repeat;

    const auto start = std::chrono::steady_clock::now();
    try {
        ProposerBinding seeded = binding;
        if (seeded.kind == ProposerBinding::Kind::random_perturb) seeded.seed += run_seed;
        auto proposer = make_proposer(seeded);
        OptimizationConfig cfg = base_cfg;
        cfg.mode = mode;
        const OptimizationResult result = run_optimization(scenario, *proposer, cfg, workdir);
        if (result.baseline_ok) {
            row.ok = true;
            row.pct = result.pct;
            row.run_class = to_string(result.outcome);
            row.best_index = result.best_index;
        } else {
            row.ok = false;
            row.run_class = to_string(result.baseline_failure.kind);
        }
    } catch (const std::exception& e) {
        row.ok = false;
        row.run_class = to_string(classify_exception(e).kind);
    }
    row.runtime_secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return row;
}

}  // namespace detail

// Executes every run of the plan; individual run failures become failed rows
// and never abort the batch. Runs execute concurrently up to plan.jobs, each
// in its own workdir; rows come back in plan order regardless of scheduling.
inline std::vector<RunRow> run_batch(const BatchPlan& plan) {
    struct PendingRun {
        std::string scenario;
        ModificationMode mode;
        const ProposerBinding* binding;
        int repeat;
        std::uint64_t run_seed;
        std::filesystem::path workdir;
    };

    std::vector<PendingRun> pending;
    std::size_t index = 0;
    for (const auto& scenario : plan.scenarios)
        for (const auto& mode : plan.modes)
            for (const auto& binding : plan.proposers)
                for (int rep = 0; rep < plan.repeats; ++rep) {
                    PendingRun run;
                    run.scenario = scenario;
                    run.mode = mode;
                    run.binding = &binding;
                    run.repeat = rep;
                    run.run_seed = plan.base_seed + index;
                    run.workdir = plan.workroot /
                                  (format_int(static_cast<long long>(index)) + "_" +
                                   detail::scenario_stem(scenario) + "_" + to_string(mode.kind) +
                                   "_" + to_string(binding.kind) + "_r" + format_int(rep));
                    pending.push_back(std::move(run));
                    ++index;
                }

    std::optional<ArtifactCache> cache;
    if (plan.cache_dir) cache.emplace(*plan.cache_dir);

    OptimizationConfig base_cfg;
    base_cfg.iterations = plan.iterations;
    base_cfg.extreme_threshold = plan.extreme_threshold;
    base_cfg.strict_guardrails = plan.strict_guardrails;
    base_cfg.cache = cache ? &*cache : nullptr;

    std::vector<RunRow> rows(pending.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= pending.size()) return;
            const auto& run = pending[i];
            rows[i] = detail::execute_one_run(run.scenario, run.mode, *run.binding, run.repeat,
                                              run.run_seed, base_cfg, run.workdir);
        }
    };

    const int jobs = std::min<int>(plan.jobs, static_cast<int>(pending.size()));
    if (jobs <= 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        threads.reserve(static_cast<std::size_t>(jobs));
        for (int t = 0; t < jobs; ++t) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }
    return rows;
}

// ============================================================================
// Summary aggregation
// ============================================================================
// Grouped per (proposer, mode). Outcome proportions cover all runs in the
// group (and sum to 1); improvement statistics cover positive outcomes only,
// reported as |pct| so minimize- and maximize-objective runs aggregate on the
// same footing. No positives means the statistics are absent, not zero. The
// median of an even count takes the lower middle element.

struct GroupSummary {
    std::string proposer;
    std::string mode;
    int runs = 0;
    double success_rate = 0.0;
    double prop_positive = 0.0, prop_zero = 0.0, prop_negative = 0.0, prop_extreme = 0.0,
           prop_failed = 0.0;
    std::optional<double> avg_improvement;
    std::optional<double> median_improvement;
    int fail_syntax_code_error = 0;
    int fail_file_corruption = 0;
    int fail_infrastructure = 0;
    int fail_runtime_incompat = 0;
};

inline std::vector<GroupSummary> summarize_runs(const std::vector<RunRow>& rows) {
    std::map<std::pair<std::string, std::string>, std::vector<const RunRow*>> groups;
    for (const auto& row : rows) groups[{row.proposer, row.mode}].push_back(&row);

    std::vector<GroupSummary> out;
    for (const auto& [key, members] : groups) {
        GroupSummary g;
        g.proposer = key.first;
        g.mode = key.second;
        g.runs = static_cast<int>(members.size());

        int ok = 0, positive = 0, zero = 0, negative = 0, extreme = 0, failed = 0;
        std::vector<double> improvements;
        for (const RunRow* row : members) {
            if (!row->ok) {
                ++failed;
                if (row->run_class == "syntax_code_error") ++g.fail_syntax_code_error;
                else if (row->run_class == "file_corruption") ++g.fail_file_corruption;
                else if (row->run_class == "infrastructure") ++g.fail_infrastructure;
                else ++g.fail_runtime_incompat;
                continue;
            }
            ++ok;
            if (row->run_class == "positive") {
                ++positive;
                if (row->pct) improvements.push_back(std::abs(*row->pct));
            } else if (row->run_class == "zero") {
                ++zero;
            } else if (row->run_class == "negative") {
                ++negative;
            } else if (row->run_class == "extreme") {
                ++extreme;
            } else {
                throw SpecError("unknown outcome class '" + row->run_class + "' in run rows");
            }
        }

        const double total = static_cast<double>(g.runs);
        g.success_rate = static_cast<double>(ok) / total;
        g.prop_positive = static_cast<double>(positive) / total;
        g.prop_zero = static_cast<double>(zero) / total;
        g.prop_negative = static_cast<double>(negative) / total;
        g.prop_extreme = static_cast<double>(extreme) / total;
        g.prop_failed = static_cast<double>(failed) / total;

        if (!improvements.empty()) {
            double sum = 0.0;
            for (double v : improvements) sum += v;
            g.avg_improvement = sum / static_cast<double>(improvements.size());
            std::sort(improvements.begin(), improvements.end());
            g.median_improvement = improvements[(improvements.size() - 1) / 2];
        }
        out.push_back(std::move(g));
    }
    return out;
}

inline constexpr std::string_view kSummaryCsvHeader =
    "proposer,mode,runs,success_rate,prop_positive,prop_zero,prop_negative,prop_extreme,"
    "prop_failed,avg_improvement,median_improvement,fail_syntax_code_error,fail_file_corruption,"
    "fail_infrastructure,fail_runtime_incompat";

inline std::string summary_to_csv(const std::vector<GroupSummary>& groups) {
    std::string out = std::string(kSummaryCsvHeader) + "\n";
    for (const auto& g : groups) {
        out += g.proposer + ',' + g.mode + ',' + format_int(g.runs) + ',' +
               format_double(g.success_rate) + ',' + format_double(g.prop_positive) + ',' +
               format_double(g.prop_zero) + ',' + format_double(g.prop_negative) + ',' +
               format_double(g.prop_extreme) + ',' + format_double(g.prop_failed) + ',' +
               (g.avg_improvement ? format_double(*g.avg_improvement) : "") + ',' +
               (g.median_improvement ? format_double(*g.median_improvement) : "") + ',' +
               format_int(g.fail_syntax_code_error) + ',' + format_int(g.fail_file_corruption) +
               ',' + format_int(g.fail_infrastructure) + ',' +
               format_int(g.fail_runtime_incompat) + '\n';
    }
    return out;
}

}  // namespace opeforge
