#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "opeforge/errors.hpp"
#include "opeforge/llm.hpp"
#include "opeforge/numeric.hpp"
#include "opeforge/patch.hpp"
#include "opeforge/runner.hpp"
#include "opeforge/spec.hpp"

namespace opeforge {

// ============================================================================
// Small file helpers
// ============================================================================

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw TransportError("cannot read " + path.string());
    std::string out((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return out;
}

inline void write_text_file(const std::filesystem::path& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw TransportError("cannot write " + path.string());
}

// ============================================================================
// Modification modes
// ============================================================================

enum class ModeKind { whole_code, manual_patch, agent_applies };

inline const char* to_string(ModeKind k) {
    switch (k) {
        case ModeKind::whole_code: return "whole_code";
        case ModeKind::manual_patch: return "manual_patch";
        default: return "agent_applies";
    }
}

inline ModeKind parse_mode_kind(std::string_view text) {
    if (text == "whole_code") return ModeKind::whole_code;
    if (text == "manual_patch") return ModeKind::manual_patch;
    if (text == "agent_applies") return ModeKind::agent_applies;
    throw SpecError("unknown modification mode '" + std::string(text) + "'");
}

// whole_code replaces the document (after the corruption check), manual_patch
// applies a unified diff with zero fuzz, agent_applies locates hunks with a
// search window and bounded fuzz. fuzz is meaningful for agent_applies only.
struct ModificationMode {
    ModeKind kind = ModeKind::whole_code;
    int fuzz = 0;
    int window = kDefaultSearchWindow;

    static ModificationMode whole_code() { return {ModeKind::whole_code, 0, kDefaultSearchWindow}; }
    static ModificationMode manual_patch() {
        return {ModeKind::manual_patch, 0, kDefaultSearchWindow};
    }
    static ModificationMode agent_applies(int fuzz = kDefaultFuzz,
                                          int window = kDefaultSearchWindow) {
        return {ModeKind::agent_applies, fuzz, window};
    }

    bool operator==(const ModificationMode&) const = default;
};

inline void validate_mode(const ModificationMode& mode) {
    if (mode.kind != ModeKind::agent_applies && mode.fuzz != 0)
        throw SpecError("fuzz applies to agent_applies mode only");
    if (mode.fuzz < 0 || mode.window < 0)
        throw SpecError("fuzz and window must be non-negative");
}

inline std::string apply_modification(const ModificationMode& mode, const std::string& artifact,
                                      const std::string& original) {
    switch (mode.kind) {
        case ModeKind::whole_code: return accept_whole(artifact);
        case ModeKind::manual_patch: return apply_strict(parse_diff(artifact), original);
        default: return apply_fuzzy(parse_diff(artifact), original, mode.fuzz, mode.window).text;
    }
}

// ============================================================================
// Proposers
// ============================================================================
// A proposer plays the analyzer/coder pair: given the ORIGINAL spec and the
// baseline report (never any prior iteration), it returns modification
// instructions plus the concrete artifact for the active mode. Keeping every
// iteration anchored to the original avoids compounding drift across rounds.

struct Proposal {
    std::string instructions;  // contents of instruction_<i>.md
    std::string artifact;      // whole document or unified-diff text, per mode
};

struct ProposerContext {
    std::string original_spec_text;
    EstimatorReport baseline;
    std::string baseline_report_csv;
    int iteration = 1;  // 1-based
    ModificationMode mode;
};

class Proposer {
public:
    virtual ~Proposer() = default;
    virtual std::string name() const = 0;
    virtual Proposal propose(const ProposerContext& ctx) = 0;
};

namespace detail {

inline std::string artifact_for_mode(const ModificationMode& mode, const std::string& original,
                                     const std::string& modified) {
    if (mode.kind == ModeKind::whole_code) return modified;
    return diff_to_text(diff(original, modified, "a/spec.spec", "b/spec.spec"));
}

}  // namespace detail

// Identity proposer: every iteration re-submits the unchanged document.
class NullProposer final : public Proposer {
public:
    std::string name() const override { return "null"; }

    Proposal propose(const ProposerContext& ctx) override {
        Proposal p;
        p.instructions = "No changes; re-evaluate the baseline configuration as-is.\n";
        p.artifact = ctx.mode.kind == ModeKind::whole_code ? ctx.original_spec_text : "";
        return p;
    }
};

// Clamp ranges for perturbed hyperparameters. The defaults coincide with the
// guardrail thresholds, so perturbed candidates always pass strict checks.
struct PerturbBounds {
    double alpha_min = 1e-9, alpha_max = 1e9;
    double bandwidth_min = kBandwidthMin, bandwidth_max = 1e6;
    double learning_rate_min = 1e-12, learning_rate_max = kLearningRateMax;
    double weight_cap_min = 1e-9, weight_cap_max = 1e12;
};

// Multiplies tunable hyperparameters by log-uniform factors in [1/scale,
// scale], clamped to guardrail-safe bounds, so every candidate it emits
// parses and passes strict guardrails. Iteration i derives its generator
// from seed + i and the original spec only.
class RandomPerturbProposer final : public Proposer {
public:
    explicit RandomPerturbProposer(std::uint64_t seed, double scale = 2.0,
                                   PerturbBounds bounds = PerturbBounds())
        : seed_(seed), scale_(scale), bounds_(bounds) {
        if (!(scale_ > 1.0)) throw SpecError("perturbation scale must be > 1");
    }

    std::string name() const override { return "random_perturb"; }

    Proposal propose(const ProposerContext& ctx) override {
        ExperimentSpec spec = parse_spec(ctx.original_spec_text);
        std::mt19937_64 rng(seed_ + static_cast<std::uint64_t>(ctx.iteration));

        std::string notes;
        auto perturb = [&](const char* key, double& value, double lo, double hi) {
            const double u = unit_uniform(rng);
            const double factor = std::exp((2.0 * u - 1.0) * std::log(scale_));
            const double old_value = value;
            value = std::clamp(value * factor, lo, hi);
            notes += "- Set " + std::string(key) + " = " + format_double(value) + " (was " +
                     format_double(old_value) + ")\n";
        };

        if (spec.reward_model.kind == RewardModelKind::tabular) {
            perturb("reward_model.alpha", spec.reward_model.alpha, bounds_.alpha_min,
                    bounds_.alpha_max);
        } else {
            perturb("reward_model.bandwidth", spec.reward_model.bandwidth, bounds_.bandwidth_min,
                    bounds_.bandwidth_max);
            perturb("reward_model.learning_rate", spec.reward_model.learning_rate,
                    bounds_.learning_rate_min, bounds_.learning_rate_max);
        }
        if (std::isfinite(spec.weight_cap))
            perturb("estimators.weight_cap", spec.weight_cap, bounds_.weight_cap_min,
                    bounds_.weight_cap_max);

        Proposal p;
        p.instructions = "Hyperparameter perturbation for iteration " +
                         format_int(ctx.iteration) + ":\n\n" + notes;
        p.artifact = detail::artifact_for_mode(ctx.mode, ctx.original_spec_text,
                                               serialize_spec(spec));
        return p;
    }

private:
    std::uint64_t seed_;
    double scale_;
    PerturbBounds bounds_;
};

// Walks a fixed schedule of assignment sets; entry i-1 serves iteration i
// (cycling). Each entry is `section.key=value` pairs separated by ';'.
class GridProposer final : public Proposer {
public:
    explicit GridProposer(std::vector<std::string> schedule) : schedule_(std::move(schedule)) {
        if (schedule_.empty()) throw SpecError("grid schedule must not be empty");
    }

    std::string name() const override { return "grid"; }

    Proposal propose(const ProposerContext& ctx) override {
        const std::string& entry =
            schedule_[static_cast<std::size_t>(ctx.iteration - 1) % schedule_.size()];
        ExperimentSpec spec = parse_spec(ctx.original_spec_text);

        std::string notes;
        for (auto assign : detail::split(entry, ';')) {
            assign = detail::trim(assign);
            if (assign.empty()) continue;
            auto eq = assign.find('=');
            if (eq == std::string_view::npos)
                throw SpecError("grid entry is not key=value: '" + std::string(assign) + "'");
            apply_assignment(spec, assign.substr(0, eq), assign.substr(eq + 1));
            notes += "- Set " + std::string(detail::trim(assign.substr(0, eq))) + " = " +
                     std::string(detail::trim(assign.substr(eq + 1))) + "\n";
        }
        validate_spec(spec);

        Proposal p;
        p.instructions = "Scheduled configuration for iteration " + format_int(ctx.iteration) +
                         ":\n\n" + notes;
        p.artifact = detail::artifact_for_mode(ctx.mode, ctx.original_spec_text,
                                               serialize_spec(spec));
        return p;
    }

private:
    std::vector<std::string> schedule_;
};

// ============================================================================
// LLM proposer (analyzer + coder roles)
// ============================================================================

// Default role prompts. Editable copies ship under prompts/; placeholders
// {SPEC}, {BASELINE_REPORT}, {MODE} and (coder only) {INSTRUCTIONS} are
// substituted before the request goes out.
inline constexpr std::string_view kDefaultAnalyzerTemplate =
    R"(You are the analyzer in a two-stage optimization loop for an off-policy evaluation experiment.

The experiment is fully described by the spec document below; the baseline evaluation report follows it. The report's objective line names the metric being optimized and whether lower or higher is better.

Study both, then write concrete modification instructions for a separate coder. Keep changes small and safe: tune numeric hyperparameters (reward-model smoothing, kernel bandwidth, learning rate, weight cap) or switch among existing options. Keep any kernel bandwidth at or above 1.0 and any learning rate at or below 3e-4. Do not invent new keys and do not restructure the document.

Spec document:
{SPEC}

Baseline report (CSV):
{BASELINE_REPORT}

The coder will apply your instructions in {MODE} mode. Reply with the instructions only.
)";

inline constexpr std::string_view kDefaultCoderTemplate =
    R"(You are the coder in a two-stage optimization loop. Apply the instructions to the spec document.

Reply format for mode {MODE}:
- whole_code: the complete revised spec document, nothing else.
- manual_patch or agent_applies: a unified diff against the original document, nothing else.

Never mix formats: a whole_code reply must not contain diff headers or hunk markers.

Original spec document:
{SPEC}

Instructions:
{INSTRUCTIONS}
)";

// Single-pass placeholder substitution; replacement text is never re-scanned.
inline std::string render_prompt(std::string_view tmpl,
                                 const std::map<std::string, std::string>& values) {
    std::string out;
    out.reserve(tmpl.size());
    std::size_t pos = 0;
    while (pos < tmpl.size()) {
        auto open = tmpl.find('{', pos);
        if (open == std::string_view::npos) {
            out += tmpl.substr(pos);
            break;
        }
        auto close = tmpl.find('}', open);
        std::map<std::string, std::string>::const_iterator it;
        if (close != std::string_view::npos &&
            (it = values.find(std::string(tmpl.substr(open + 1, close - open - 1)))) !=
                values.end()) {
            out += tmpl.substr(pos, open - pos);
            out += it->second;
            pos = close + 1;
        } else {
            out += tmpl.substr(pos, open - pos + 1);
            pos = open + 1;
        }
    }
    return out;
}

class LlmProposer final : public Proposer {
public:
    LlmProposer(ChatEndpoint endpoint,
                std::string analyzer_template = std::string(kDefaultAnalyzerTemplate),
                std::string coder_template = std::string(kDefaultCoderTemplate))
        : endpoint_(std::move(endpoint)),
          analyzer_template_(std::move(analyzer_template)),
          coder_template_(std::move(coder_template)) {}

    std::string name() const override { return "llm"; }

    static std::string render_analyzer_prompt(std::string_view tmpl, const ProposerContext& ctx) {
        return render_prompt(tmpl, {{"SPEC", ctx.original_spec_text},
                                    {"BASELINE_REPORT", ctx.baseline_report_csv},
                                    {"MODE", to_string(ctx.mode.kind)}});
    }

    static std::string render_coder_prompt(std::string_view tmpl, const ProposerContext& ctx,
                                           const std::string& instructions) {
        return render_prompt(tmpl, {{"SPEC", ctx.original_spec_text},
                                    {"BASELINE_REPORT", ctx.baseline_report_csv},
                                    {"MODE", to_string(ctx.mode.kind)},
                                    {"INSTRUCTIONS", instructions}});
    }

    // Two chat requests: the analyzer writes the instruction file, the coder
    // (seeded with that instruction text) produces the artifact. Responses
    // are returned verbatim; the patch engine decides whether they apply.
    Proposal propose(const ProposerContext& ctx) override {
        Proposal p;
        p.instructions =
            chat_completion(endpoint_, "", render_analyzer_prompt(analyzer_template_, ctx));
        if (detail::trim(p.instructions).empty())
            throw SpecError("empty response from analyzer");
        p.artifact = chat_completion(
            endpoint_, "", render_coder_prompt(coder_template_, ctx, p.instructions));
        if (detail::trim(p.artifact).empty()) throw SpecError("empty response from coder");
        return p;
    }

private:
    ChatEndpoint endpoint_;
    std::string analyzer_template_;
    std::string coder_template_;
};

// ============================================================================
// Proposer bindings (configuration-level description)
// ============================================================================

struct ProposerBinding {
    enum class Kind { null, random_perturb, grid, llm };

    Kind kind = Kind::null;
    std::uint64_t seed = 0;   // random_perturb
    double scale = 2.0;       // random_perturb
    std::vector<std::string> grid_schedule;
    ChatEndpoint endpoint;    // llm; empty url means "take from environment"
    std::string analyzer_template;  // llm; empty means built-in default
    std::string coder_template;
};

inline const char* to_string(ProposerBinding::Kind k) {
    switch (k) {
        case ProposerBinding::Kind::null: return "null";
        case ProposerBinding::Kind::random_perturb: return "random_perturb";
        case ProposerBinding::Kind::grid: return "grid";
        default: return "llm";
    }
}

// Descriptor grammar: `name` or `name(key=value,key=value)`. Recognized
// arguments: seed, scale (random_perturb); file (grid, one schedule entry
// per line); url, model (llm).
inline ProposerBinding parse_proposer(const std::string& descriptor) {
    std::string_view text = detail::trim(descriptor);
    std::string_view name = text;
    std::string_view args;
    if (auto open = text.find('('); open != std::string_view::npos) {
        if (text.back() != ')')
            throw SpecError("malformed proposer descriptor '" + descriptor + "'");
        name = detail::trim(text.substr(0, open));
        args = text.substr(open + 1, text.size() - open - 2);
    }

    ProposerBinding binding;
    if (name == "null") binding.kind = ProposerBinding::Kind::null;
    else if (name == "random_perturb") binding.kind = ProposerBinding::Kind::random_perturb;
    else if (name == "grid") binding.kind = ProposerBinding::Kind::grid;
    else if (name == "llm") binding.kind = ProposerBinding::Kind::llm;
    else
        throw SpecError("unknown proposer '" + std::string(name) + "'");

    for (auto part : detail::split(args, ',')) {
        part = detail::trim(part);
        if (part.empty()) continue;
        auto eq = part.find('=');
        if (eq == std::string_view::npos)
            throw SpecError("malformed proposer argument '" + std::string(part) + "'");
        const std::string key(detail::trim(part.substr(0, eq)));
        const std::string value(detail::trim(part.substr(eq + 1)));
        if (key == "seed" && binding.kind == ProposerBinding::Kind::random_perturb) {
            binding.seed = detail::parse_seed_value(value, "seed", 0);
        } else if (key == "scale" && binding.kind == ProposerBinding::Kind::random_perturb) {
            binding.scale = detail::parse_double_value(value, "scale", 0);
        } else if (key == "file" && binding.kind == ProposerBinding::Kind::grid) {
            for (const auto& raw : split_lines_keep_ends(read_text_file(value))) {
                const std::string entry = detail::strip_eol(raw);
                if (!detail::trim(entry).empty()) binding.grid_schedule.emplace_back(entry);
            }
        } else if (key == "url" && binding.kind == ProposerBinding::Kind::llm) {
            binding.endpoint.url = value;
        } else if (key == "model" && binding.kind == ProposerBinding::Kind::llm) {
            binding.endpoint.model = value;
        } else {
            throw SpecError("unknown proposer argument '" + key + "' for " + std::string(name));
        }
    }
    return binding;
}

inline std::unique_ptr<Proposer> make_proposer(const ProposerBinding& binding) {
    switch (binding.kind) {
        case ProposerBinding::Kind::null: return std::make_unique<NullProposer>();
        case ProposerBinding::Kind::random_perturb:
            return std::make_unique<RandomPerturbProposer>(binding.seed, binding.scale);
        case ProposerBinding::Kind::grid:
            return std::make_unique<GridProposer>(binding.grid_schedule);
        default: {
            // Environment supplies the defaults; descriptor arguments win.
            ChatEndpoint ep = endpoint_from_env();
            if (!binding.endpoint.url.empty()) ep.url = binding.endpoint.url;
            if (!binding.endpoint.model.empty()) ep.model = binding.endpoint.model;
            return std::make_unique<LlmProposer>(
                std::move(ep),
                binding.analyzer_template.empty() ? std::string(kDefaultAnalyzerTemplate)
                                                  : binding.analyzer_template,
                binding.coder_template.empty() ? std::string(kDefaultCoderTemplate)
                                               : binding.coder_template);
        }
    }
}

// ============================================================================
// Selection and outcome methodology
// ============================================================================

enum class OutcomeClass { positive, zero, negative, extreme, failed };

inline const char* to_string(OutcomeClass c) {
    switch (c) {
        case OutcomeClass::positive: return "positive";
        case OutcomeClass::zero: return "zero";
        case OutcomeClass::negative: return "negative";
        case OutcomeClass::extreme: return "extreme";
        default: return "failed";
    }
}

// Index of the optimal objective among {baseline} and all successful
// iterations; 0 denotes the baseline. Ties break toward the lowest index, so
// the baseline is preferred over any iteration that merely matches it.
inline int select_best(double baseline_value,
                       const std::vector<std::optional<double>>& iteration_objectives,
                       Direction direction) {
    int best_index = 0;
    double best_value = baseline_value;
    for (std::size_t i = 0; i < iteration_objectives.size(); ++i) {
        if (!iteration_objectives[i]) continue;
        const double v = *iteration_objectives[i];
        const bool better =
            direction == Direction::minimize ? v < best_value : v > best_value;
        if (better) {
            best_index = static_cast<int>(i) + 1;
            best_value = v;
        }
    }
    return best_index;
}

// ((best - baseline) / baseline) * 100, with exactly 0.0 at a zero baseline.
inline double percentage_change(double baseline_value, double best_value) {
    if (baseline_value == 0.0) return 0.0;
    return (best_value - baseline_value) / baseline_value * 100.0;
}

inline constexpr double kExtremeThreshold = 9999.0;

// |pct| beyond the threshold flags a parameter explosion rather than a
// genuine result. Otherwise the sign is read under the objective direction:
// a drop is an improvement when minimizing, a rise when maximizing.
inline OutcomeClass classify_outcome(double pct, Direction direction,
                                     double extreme_threshold = kExtremeThreshold) {
    if (std::abs(pct) > extreme_threshold) return OutcomeClass::extreme;
    if (pct == 0.0) return OutcomeClass::zero;
    const bool improved = direction == Direction::minimize ? pct < 0.0 : pct > 0.0;
    return improved ? OutcomeClass::positive : OutcomeClass::negative;
}

// ============================================================================
// The optimization run
// ============================================================================

struct IterationRecord {
    int index = 0;  // 1..n
    std::string instructions;
    std::string proposal;
    ModificationMode mode;
    bool success = false;
    EstimatorReport report;      // success only
    double objective_value = 0;  // success only
    FailureClass failure;        // failure only
    std::vector<std::filesystem::path> files;
};

struct OptimizationResult {
    bool baseline_ok = false;
    EstimatorReport baseline;
    FailureClass baseline_failure;  // when !baseline_ok
    std::vector<IterationRecord> iterations;
    int best_index = 0;  // 0 = baseline
    double best_objective = 0.0;
    double pct = 0.0;
    OutcomeClass outcome = OutcomeClass::failed;
};

struct OptimizationConfig {
    int iterations = 7;  // the typical n
    ModificationMode mode = ModificationMode::whole_code();
    double extreme_threshold = kExtremeThreshold;
    bool strict_guardrails = false;
    ArtifactCache* cache = nullptr;
};

namespace detail {

// result.txt is append-only within a run; every write goes straight through.
class ResultLog {
public:
    explicit ResultLog(const std::filesystem::path& path)
        : out_(path, std::ios::binary | std::ios::app) {
        if (!out_) throw TransportError("cannot open " + path.string());
    }

    void line(const std::string& text) {
        out_ << text << '\n';
        out_.flush();
    }

private:
    std::ofstream out_;
};

}  // namespace detail

// Runs the full two-stage protocol in `workdir`:
//   spec.spec            byte copy of the original artifact
//   instruction_<i>.md   analyzer output (or the failure note) per iteration
//   candidate_<i>.spec   modified artifact, absent when the modifier failed
//   report_<i>.csv       estimator report per successful evaluation (0 = baseline)
//   result.txt           append-only run log
// Every iteration proposes against the ORIGINAL spec and the baseline report;
// prior iterations are never fed back. Iteration failures are recorded and
// the loop continues; only a baseline failure marks the run itself failed.
inline OptimizationResult run_optimization_on_text(const std::string& original_text,
                                                   Proposer& proposer,
                                                   const OptimizationConfig& cfg,
                                                   const std::filesystem::path& workdir) {
    if (cfg.iterations < 1) throw SpecError("iterations must be >= 1");
    validate_mode(cfg.mode);
    std::filesystem::create_directories(workdir);
    if (std::filesystem::exists(workdir / "result.txt"))
        throw SpecError("workdir already contains a run: " + (workdir / "result.txt").string());

    write_text_file(workdir / "spec.spec", original_text);
    detail::ResultLog log(workdir / "result.txt");

    OptimizationResult result;

    ExperimentSpec original_spec;
    try {
        original_spec = parse_spec(original_text);
        const auto findings = check_guardrails(original_spec, cfg.strict_guardrails);
        for (const auto& finding : findings)
            log.line("WARN guardrail " + finding.rule + " " + finding.key + "=" +
                     format_double(finding.value));
        if (cfg.strict_guardrails && !findings.empty())
            throw EvalError("guardrail rejection: " + findings.front().rule + " " +
                            findings.front().key + "=" + format_double(findings.front().value));
        result.baseline = run_experiment(original_spec, cfg.cache);
        result.baseline_ok = true;
    } catch (const std::exception& e) {
        result.baseline_failure = classify_exception(e);
        log.line(format_failure_line(result.baseline_failure));
        result.outcome = OutcomeClass::failed;
        return result;
    }
    write_text_file(workdir / "report_0.csv", report_to_csv(result.baseline));
    const double baseline_objective = result.baseline.objective_value;
    log.line("BASELINE objective=" + format_double(baseline_objective));

    ProposerContext ctx;
    ctx.original_spec_text = original_text;
    ctx.baseline = result.baseline;
    ctx.baseline_report_csv = report_to_csv(result.baseline);
    ctx.mode = cfg.mode;

    const Direction direction = result.baseline.objective.direction;

    for (int i = 1; i <= cfg.iterations; ++i) {
        ctx.iteration = i;
        const auto instruction_path = workdir / ("instruction_" + format_int(i) + ".md");
        const auto candidate_path = workdir / ("candidate_" + format_int(i) + ".spec");

        IterationRecord rec;
        rec.index = i;
        rec.mode = cfg.mode;
        bool instructions_written = false;
        try {
            Proposal proposal = proposer.propose(ctx);
            rec.instructions = proposal.instructions;
            rec.proposal = proposal.artifact;
            write_text_file(instruction_path, proposal.instructions);
            instructions_written = true;
            rec.files.push_back(instruction_path);

            const std::string candidate_text =
                apply_modification(cfg.mode, proposal.artifact, original_text);
            write_text_file(candidate_path, candidate_text);
            rec.files.push_back(candidate_path);

            const ExperimentSpec candidate = parse_spec(candidate_text);
            const auto findings = check_guardrails(candidate, cfg.strict_guardrails);
            for (const auto& finding : findings)
                log.line("WARN guardrail " + finding.rule + " " + finding.key + "=" +
                         format_double(finding.value));
            if (cfg.strict_guardrails && !findings.empty())
                throw EvalError("guardrail rejection: " + findings.front().rule + " " +
                                findings.front().key + "=" +
                                format_double(findings.front().value));

            rec.report = run_experiment(candidate, cfg.cache);
            rec.objective_value = rec.report.objective_value;
            rec.success = true;
            const auto report_path = workdir / ("report_" + format_int(i) + ".csv");
            write_text_file(report_path, report_to_csv(rec.report));
            rec.files.push_back(report_path);
            log.line("ITER " + format_int(i) + " ok objective=" +
                     format_double(rec.objective_value) + " pct=" +
                     format_double(percentage_change(baseline_objective, rec.objective_value)));
        } catch (const std::exception& e) {
            rec.success = false;
            rec.failure = classify_exception(e);
            if (!instructions_written) {
                write_text_file(instruction_path,
                                "Proposer failed: " + rec.failure.detail + "\n");
                rec.files.push_back(instruction_path);
            }
            log.line("ITER " + format_int(i) + " fail");
            log.line(format_failure_line(rec.failure));
        }
        result.iterations.push_back(std::move(rec));
    }

    std::vector<std::optional<double>> objectives;
    objectives.reserve(result.iterations.size());
    for (const auto& rec : result.iterations)
        objectives.push_back(rec.success ? std::optional<double>(rec.objective_value)
                                         : std::nullopt);
    result.best_index = select_best(baseline_objective, objectives, direction);
    result.best_objective = result.best_index == 0
                                ? baseline_objective
                                : *objectives[static_cast<std::size_t>(result.best_index - 1)];
    result.pct = percentage_change(baseline_objective, result.best_objective);
    result.outcome = classify_outcome(result.pct, direction, cfg.extreme_threshold);
    log.line("BEST index=" + format_int(result.best_index) + " pct=" + format_double(result.pct) +
             " class=" + to_string(result.outcome));
    return result;
}

inline OptimizationResult run_optimization(const std::filesystem::path& spec_path,
                                           Proposer& proposer, const OptimizationConfig& cfg,
                                           const std::filesystem::path& workdir) {
    return run_optimization_on_text(read_text_file(spec_path), proposer, cfg, workdir);
}

}  // namespace opeforge
