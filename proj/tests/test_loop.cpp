#include <catch2/catch_amalgamated.hpp>

#include <httplib.h>

#include <atomic>
#include <filesystem>
#include <map>
#include <thread>

#include "opeforge/loop.hpp"
#include "test_util.hpp"

using namespace opeforge;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("opeforge_" + name);
    fs::remove_all(dir);
    return dir;
}

std::map<fs::path, std::string> snapshot_files(const fs::path& dir) {
    std::map<fs::path, std::string> out;
    for (const auto& entry : fs::recursive_directory_iterator(dir))
        if (entry.is_regular_file())
            out[fs::relative(entry.path(), dir)] = read_text_file(entry.path());
    return out;
}

fs::path write_default_spec(const std::string& name) {
    const fs::path path = fs::temp_directory_path() / name;
    write_text_file(path, serialize_spec(default_spec()));
    return path;
}

// Proposer that replays canned artifacts, for failure-path tests.
class StubProposer final : public Proposer {
public:
    explicit StubProposer(std::string artifact) : artifact_(std::move(artifact)) {}
    std::string name() const override { return "stub"; }
    Proposal propose(const ProposerContext&) override {
        return {"stub instructions\n", artifact_};
    }

private:
    std::string artifact_;
};

// Loopback chat server; every completion returns `content`.
class StubLlmServer {
public:
    explicit StubLlmServer(std::string content, double delay_secs = 0.0)
        : content_(std::move(content)), delay_secs_(delay_secs) {
        server_.Post("/v1/chat/completions", [this](const httplib::Request&,
                                                    httplib::Response& res) {
            ++hits_;
            if (delay_secs_ > 0.0)
                std::this_thread::sleep_for(std::chrono::duration<double>(delay_secs_));
            nlohmann::json body = {
                {"choices", {{{"message", {{"role", "assistant"}, {"content", content_}}}}}}};
            res.set_content(body.dump(), "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }

    ~StubLlmServer() {
        server_.stop();
        thread_.join();
    }

    std::string url() const {
        return "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions";
    }

    int hits() const { return hits_; }

private:
    httplib::Server server_;
    std::string content_;
    double delay_secs_;
    int port_ = 0;
    std::atomic<int> hits_{0};
    std::thread thread_;
};

}  // namespace

// ---------------------------------------------------------------------------
// Selection and outcome methodology
// ---------------------------------------------------------------------------

TEST_CASE("select_best follows argmin with lowest-index tie-breaking") {
    using Opt = std::optional<double>;
    CHECK(select_best(0.20, {Opt{0.25}, Opt{0.10}, Opt{0.10}}, Direction::minimize) == 2);
    CHECK(select_best(0.20, {Opt{}, Opt{}, Opt{}}, Direction::minimize) == 0);
    CHECK(select_best(1.0, {Opt{1.0}}, Direction::maximize) == 0);
    CHECK(select_best(0.5, {}, Direction::minimize) == 0);
}

TEST_CASE("select_best agrees with an exhaustive scan on 1000 random instances") {
    std::mt19937_64 rng(20240815);
    for (int trial = 0; trial < 1000; ++trial) {
        const double baseline = testutil::rand_unit(rng);
        std::vector<std::optional<double>> iters;
        const int n = testutil::rand_int(rng, 0, 9);
        for (int i = 0; i < n; ++i) {
            if (rng() % 4 == 0) iters.emplace_back();
            else if (rng() % 3 == 0) iters.emplace_back(baseline);  // deliberate ties
            else iters.emplace_back(testutil::rand_unit(rng));
        }
        const Direction dir = rng() % 2 ? Direction::minimize : Direction::maximize;

        // Exhaustive oracle over the candidate list {baseline} + successes.
        int expect = 0;
        double best = baseline;
        for (int i = 0; i < n; ++i) {
            if (!iters[static_cast<std::size_t>(i)]) continue;
            const double v = *iters[static_cast<std::size_t>(i)];
            if (dir == Direction::minimize ? v < best : v > best) {
                best = v;
                expect = i + 1;
            }
        }
        CHECK(select_best(baseline, iters, dir) == expect);

        // Never-worse guarantee.
        const int got = select_best(baseline, iters, dir);
        const double chosen = got == 0 ? baseline : *iters[static_cast<std::size_t>(got - 1)];
        if (dir == Direction::minimize) CHECK(chosen <= baseline);
        else CHECK(chosen >= baseline);
    }
}

TEST_CASE("percentage_change is exact on the methodology cases") {
    CHECK(percentage_change(0.2, 0.1) == -50.0);
    CHECK(percentage_change(0.0, 0.7) == 0.0);  // zero-baseline rule
    CHECK_THAT(percentage_change(0.001, 1.0), WithinAbs(99900.0, 1e-6));
}

TEST_CASE("classify_outcome applies the extreme threshold and direction signs") {
    CHECK(classify_outcome(-45.5, Direction::minimize) == OutcomeClass::positive);
    CHECK(classify_outcome(99900.0, Direction::minimize) == OutcomeClass::extreme);
    CHECK(classify_outcome(99900.0, Direction::maximize) == OutcomeClass::extreme);
    CHECK(classify_outcome(2042.6, Direction::minimize) == OutcomeClass::negative);
    CHECK(classify_outcome(0.0, Direction::minimize) == OutcomeClass::zero);
    CHECK(classify_outcome(9999.0, Direction::minimize) == OutcomeClass::negative);  // exclusive
    CHECK(classify_outcome(-10000.0, Direction::maximize) == OutcomeClass::extreme);
}

TEST_CASE("classify_outcome is direction symmetric away from zero and extremes") {
    std::mt19937_64 rng(9);
    for (int i = 0; i < 200; ++i) {
        const double pct = (testutil::rand_unit(rng) * 2.0 - 1.0) * 9000.0;
        if (pct == 0.0) continue;
        CHECK(classify_outcome(pct, Direction::minimize) ==
              classify_outcome(-pct, Direction::maximize));
    }
}

// ---------------------------------------------------------------------------
// Modes and prompts
// ---------------------------------------------------------------------------

TEST_CASE("fuzz is rejected outside agent_applies mode") {
    ModificationMode mode = ModificationMode::manual_patch();
    mode.fuzz = 2;
    CHECK_THROWS_WITH(validate_mode(mode), ContainsSubstring("agent_applies"));
    CHECK_NOTHROW(validate_mode(ModificationMode::agent_applies(2)));
}

TEST_CASE("prompt rendering substitutes placeholders exactly once") {
    const std::string out = render_prompt("a {X} b {Y} c {Z}", {{"X", "1"}, {"Y", "{X}"}});
    CHECK(out == "a 1 b {X} c {Z}");
}

TEST_CASE("proposer descriptors parse") {
    CHECK(parse_proposer("null").kind == ProposerBinding::Kind::null);
    const auto rp = parse_proposer("random_perturb(seed=9,scale=3)");
    CHECK(rp.kind == ProposerBinding::Kind::random_perturb);
    CHECK(rp.seed == 9);
    CHECK(rp.scale == 3.0);
    const auto llm = parse_proposer("llm(url=http://127.0.0.1:1/v1,model=m)");
    CHECK(llm.endpoint.url == "http://127.0.0.1:1/v1");
    CHECK(llm.endpoint.model == "m");
    CHECK_THROWS_AS(parse_proposer("warp_drive"), SpecError);
    CHECK_THROWS_AS(parse_proposer("null(seed=1)"), SpecError);
}

// ---------------------------------------------------------------------------
// run_optimization
// ---------------------------------------------------------------------------

TEST_CASE("the identity proposer yields seven zero iterations and the baseline wins") {
    const fs::path spec_path = write_default_spec("loop_null.spec");
    const fs::path workdir = fresh_dir("loop_null");
    NullProposer proposer;
    const OptimizationResult result =
        run_optimization(spec_path, proposer, OptimizationConfig{}, workdir);

    REQUIRE(result.baseline_ok);
    REQUIRE(result.iterations.size() == 7);  // default n
    for (const auto& rec : result.iterations) {
        REQUIRE(rec.success);
        CHECK(rec.objective_value == result.baseline.objective_value);
    }
    CHECK(result.best_index == 0);
    CHECK(result.pct == 0.0);
    CHECK(result.outcome == OutcomeClass::zero);

    for (int i = 1; i <= 7; ++i) {
        CHECK(fs::exists(workdir / ("instruction_" + std::to_string(i) + ".md")));
        CHECK(fs::exists(workdir / ("candidate_" + std::to_string(i) + ".spec")));
    }
    const std::string log = read_text_file(workdir / "result.txt");
    CHECK_THAT(log, ContainsSubstring("BASELINE objective="));
    CHECK_THAT(log, ContainsSubstring("ITER 7 ok"));
    CHECK_THAT(log, ContainsSubstring("BEST index=0 pct=0 class=zero"));
}

TEST_CASE("random_perturb runs are reproducible byte for byte") {
    const fs::path spec_path = write_default_spec("loop_perturb.spec");
    OptimizationConfig cfg;
    cfg.iterations = 5;

    const fs::path dir_a = fresh_dir("loop_perturb_a");
    const fs::path dir_b = fresh_dir("loop_perturb_b");
    RandomPerturbProposer p1(11), p2(11);
    const OptimizationResult a = run_optimization(spec_path, p1, cfg, dir_a);
    const OptimizationResult b = run_optimization(spec_path, p2, cfg, dir_b);

    CHECK(a.best_index == b.best_index);
    CHECK(a.pct == b.pct);
    CHECK(snapshot_files(dir_a) == snapshot_files(dir_b));

    // Every candidate parses and passes strict guardrails.
    for (int i = 1; i <= cfg.iterations; ++i) {
        const ExperimentSpec cand =
            parse_spec(read_text_file(dir_a / ("candidate_" + std::to_string(i) + ".spec")));
        CHECK(check_guardrails(cand, true).empty());
    }

    // A different seed produces different candidates.
    const fs::path dir_c = fresh_dir("loop_perturb_c");
    RandomPerturbProposer p3(12);
    run_optimization(spec_path, p3, cfg, dir_c);
    CHECK(read_text_file(dir_a / "candidate_1.spec") !=
          read_text_file(dir_c / "candidate_1.spec"));
}

TEST_CASE("proposals are a pure function of (original, baseline, iteration)") {
    const std::string original = serialize_spec(default_spec());
    const EstimatorReport baseline = run_experiment(default_spec());

    auto context_for = [&](int i) {
        ProposerContext ctx;
        ctx.original_spec_text = original;
        ctx.baseline = baseline;
        ctx.baseline_report_csv = report_to_csv(baseline);
        ctx.iteration = i;
        ctx.mode = ModificationMode::whole_code();
        return ctx;
    };

    RandomPerturbProposer forward(3), shuffled(3);
    std::map<int, Proposal> in_order, out_of_order;
    for (int i : {1, 2, 3, 4}) in_order[i] = forward.propose(context_for(i));
    for (int i : {4, 2, 1, 3}) out_of_order[i] = shuffled.propose(context_for(i));
    for (int i : {1, 2, 3, 4}) {
        CHECK(in_order[i].instructions == out_of_order[i].instructions);
        CHECK(in_order[i].artifact == out_of_order[i].artifact);
    }

    // The rendered LLM request inputs are equally order-independent.
    const std::string prompt3a =
        LlmProposer::render_analyzer_prompt(kDefaultAnalyzerTemplate, context_for(3));
    const std::string prompt3b =
        LlmProposer::render_analyzer_prompt(kDefaultAnalyzerTemplate, context_for(3));
    CHECK(prompt3a == prompt3b);
    CHECK_THAT(prompt3a, ContainsSubstring(original));
}

TEST_CASE("patch modes drive the full loop end to end") {
    const fs::path spec_path = write_default_spec("loop_patch.spec");
    for (ModeKind kind : {ModeKind::manual_patch, ModeKind::agent_applies}) {
        OptimizationConfig cfg;
        cfg.iterations = 3;
        cfg.mode = kind == ModeKind::agent_applies ? ModificationMode::agent_applies()
                                                   : ModificationMode::manual_patch();
        const fs::path workdir = fresh_dir(std::string("loop_mode_") + to_string(kind));
        RandomPerturbProposer proposer(21);
        const OptimizationResult result = run_optimization(spec_path, proposer, cfg, workdir);
        REQUIRE(result.baseline_ok);
        for (const auto& rec : result.iterations) {
            INFO("mode " << to_string(kind) << " iteration " << rec.index);
            CHECK(rec.success);
        }
    }
}

TEST_CASE("a context-mismatched diff fails the iteration but not the run") {
    const fs::path spec_path = write_default_spec("loop_badpatch.spec");
    const std::string bogus =
        "--- a/spec.spec\n"
        "+++ b/spec.spec\n"
        "@@ -1,1 +1,1 @@\n"
        "-this line is not in the spec\n"
        "+data.n = 100\n";
    StubProposer proposer(bogus);
    OptimizationConfig cfg;
    cfg.iterations = 2;
    cfg.mode = ModificationMode::manual_patch();
    const fs::path workdir = fresh_dir("loop_badpatch");
    const OptimizationResult result = run_optimization(spec_path, proposer, cfg, workdir);

    REQUIRE(result.baseline_ok);
    CHECK(result.outcome == OutcomeClass::zero);  // baseline fallback
    CHECK(result.best_index == 0);
    for (const auto& rec : result.iterations) {
        REQUIRE_FALSE(rec.success);
        CHECK(rec.failure.kind == FailureKind::syntax_code_error);
        CHECK_FALSE(fs::exists(workdir / ("candidate_" + std::to_string(rec.index) + ".spec")));
        CHECK(fs::exists(workdir / ("instruction_" + std::to_string(rec.index) + ".md")));
    }
    CHECK_THAT(read_text_file(workdir / "result.txt"),
               ContainsSubstring("FAIL syntax_code_error"));
}

TEST_CASE("whole_code proposals containing diff syntax are classified as corruption") {
    const fs::path spec_path = write_default_spec("loop_corrupt.spec");
    StubProposer proposer("--- a/main.py\n+++ b/main.py\n@@ -1,1 +1,1 @@\n-x\n+y\n");
    OptimizationConfig cfg;
    cfg.iterations = 1;
    const fs::path workdir = fresh_dir("loop_corrupt");
    const OptimizationResult result = run_optimization(spec_path, proposer, cfg, workdir);
    REQUIRE(result.baseline_ok);
    REQUIRE(result.iterations.size() == 1);
    CHECK_FALSE(result.iterations[0].success);
    CHECK(result.iterations[0].failure.kind == FailureKind::file_corruption);
}

TEST_CASE("an invalid candidate spec is a syntax_code_error iteration") {
    const fs::path spec_path = write_default_spec("loop_badspec.spec");
    StubProposer proposer("reward_model.gamma = 0.99\n");
    OptimizationConfig cfg;
    cfg.iterations = 1;
    const fs::path workdir = fresh_dir("loop_badspec");
    const OptimizationResult result = run_optimization(spec_path, proposer, cfg, workdir);
    REQUIRE(result.iterations.size() == 1);
    CHECK(result.iterations[0].failure.kind == FailureKind::syntax_code_error);
    CHECK_THAT(result.iterations[0].failure.detail,
               ContainsSubstring("unknown key reward_model.gamma"));
}

TEST_CASE("strict guardrails reject an unsafe baseline as a failed run") {
    ExperimentSpec spec = default_spec();
    spec.reward_model.kind = RewardModelKind::kernel;
    spec.reward_model.bandwidth = 0.4;
    const fs::path spec_path = fs::temp_directory_path() / "loop_guardrail.spec";
    write_text_file(spec_path, serialize_spec(spec));

    NullProposer proposer;
    OptimizationConfig cfg;
    cfg.strict_guardrails = true;
    const fs::path workdir = fresh_dir("loop_guardrail");
    const OptimizationResult result = run_optimization(spec_path, proposer, cfg, workdir);
    CHECK_FALSE(result.baseline_ok);
    CHECK(result.outcome == OutcomeClass::failed);
    CHECK(result.baseline_failure.kind == FailureKind::runtime_incompat);
    CHECK_THAT(read_text_file(workdir / "result.txt"),
               ContainsSubstring("WARN guardrail bandwidth_min"));

    // Same spec without strict mode: warned, but the run proceeds.
    const fs::path workdir2 = fresh_dir("loop_guardrail_warn");
    cfg.strict_guardrails = false;
    const OptimizationResult relaxed = run_optimization(spec_path, proposer, cfg, workdir2);
    CHECK(relaxed.baseline_ok);
}

TEST_CASE("a workdir that already holds a run is refused") {
    const fs::path spec_path = write_default_spec("loop_reuse.spec");
    const fs::path workdir = fresh_dir("loop_reuse");
    NullProposer proposer;
    OptimizationConfig cfg;
    cfg.iterations = 1;
    run_optimization(spec_path, proposer, cfg, workdir);
    CHECK_THROWS_WITH(run_optimization(spec_path, proposer, cfg, workdir),
                      ContainsSubstring("already contains a run"));
}

TEST_CASE("grid proposers walk their schedule and cycle") {
    const fs::path spec_path = write_default_spec("loop_grid.spec");
    GridProposer proposer({"reward_model.alpha=0.5", "reward_model.alpha=2;data.n=500"});
    OptimizationConfig cfg;
    cfg.iterations = 3;
    const fs::path workdir = fresh_dir("loop_grid");
    const OptimizationResult result = run_optimization(spec_path, proposer, cfg, workdir);
    REQUIRE(result.baseline_ok);
    REQUIRE(result.iterations.size() == 3);
    const ExperimentSpec c1 = parse_spec(read_text_file(workdir / "candidate_1.spec"));
    const ExperimentSpec c2 = parse_spec(read_text_file(workdir / "candidate_2.spec"));
    const ExperimentSpec c3 = parse_spec(read_text_file(workdir / "candidate_3.spec"));
    CHECK(c1.reward_model.alpha == 0.5);
    CHECK(c2.reward_model.alpha == 2.0);
    CHECK(c2.n == 500);
    CHECK(c3 == c1);  // schedule cycles
}

// ---------------------------------------------------------------------------
// LLM plumbing
// ---------------------------------------------------------------------------

TEST_CASE("a loopback endpoint that echoes a valid spec completes an iteration") {
    ExperimentSpec improved = default_spec();
    improved.reward_model.alpha = 0.5;
    StubLlmServer server(serialize_spec(improved));

    ChatEndpoint endpoint;
    endpoint.url = server.url();
    endpoint.timeout_secs = 10;
    endpoint.backoff_base_secs = 0.01;
    LlmProposer proposer(endpoint);

    const fs::path spec_path = write_default_spec("loop_llm.spec");
    OptimizationConfig cfg;
    cfg.iterations = 1;
    const fs::path workdir = fresh_dir("loop_llm");
    const OptimizationResult result = run_optimization(spec_path, proposer, cfg, workdir);
    REQUIRE(result.baseline_ok);
    REQUIRE(result.iterations.size() == 1);
    CHECK(result.iterations[0].success);
    CHECK(server.hits() == 2);  // analyzer + coder
    CHECK(parse_spec(read_text_file(workdir / "candidate_1.spec")).reward_model.alpha == 0.5);
}

TEST_CASE("an unreachable endpoint classifies as infrastructure") {
    ChatEndpoint endpoint;
    endpoint.url = "http://127.0.0.1:9/v1/chat/completions";  // discard port, nothing listens
    endpoint.timeout_secs = 1;
    endpoint.max_retries = 1;
    endpoint.backoff_base_secs = 0.01;
    LlmProposer proposer(endpoint);

    const fs::path spec_path = write_default_spec("loop_llm_down.spec");
    OptimizationConfig cfg;
    cfg.iterations = 1;
    const fs::path workdir = fresh_dir("loop_llm_down");
    const OptimizationResult result = run_optimization(spec_path, proposer, cfg, workdir);
    REQUIRE(result.baseline_ok);
    REQUIRE_FALSE(result.iterations[0].success);
    CHECK(result.iterations[0].failure.kind == FailureKind::infrastructure);
    // The instruction file still exists and carries the failure note.
    CHECK_THAT(read_text_file(workdir / "instruction_1.md"),
               ContainsSubstring("Proposer failed"));
}

TEST_CASE("a coder reply full of diff syntax fails whole_code mode as corruption") {
    StubLlmServer server("--- a/spec.spec\n+++ b/spec.spec\n@@ -1,1 +1,1 @@\n-a\n+b\n");
    ChatEndpoint endpoint;
    endpoint.url = server.url();
    endpoint.backoff_base_secs = 0.01;
    LlmProposer proposer(endpoint);

    const fs::path spec_path = write_default_spec("loop_llm_corrupt.spec");
    OptimizationConfig cfg;
    cfg.iterations = 1;
    const fs::path workdir = fresh_dir("loop_llm_corrupt");
    const OptimizationResult result = run_optimization(spec_path, proposer, cfg, workdir);
    REQUIRE(result.baseline_ok);
    REQUIRE_FALSE(result.iterations[0].success);
    CHECK(result.iterations[0].failure.kind == FailureKind::file_corruption);
}

TEST_CASE("endpoint configuration comes from the documented environment variables") {
    setenv("OPEFORGE_LLM_URL", "http://example.invalid/v1/chat/completions", 1);
    setenv("OPEFORGE_LLM_KEY", "secret", 1);
    setenv("OPEFORGE_LLM_TIMEOUT_SECS", "30", 1);
    const ChatEndpoint ep = endpoint_from_env();
    CHECK(ep.url == "http://example.invalid/v1/chat/completions");
    CHECK(ep.api_key == "secret");
    CHECK(ep.timeout_secs == 30.0);

    setenv("OPEFORGE_LLM_TIMEOUT_SECS", "sideways", 1);
    CHECK_THROWS_AS(endpoint_from_env(), SpecError);

    unsetenv("OPEFORGE_LLM_URL");
    unsetenv("OPEFORGE_LLM_KEY");
    unsetenv("OPEFORGE_LLM_TIMEOUT_SECS");
    CHECK(endpoint_from_env().timeout_secs == 600.0);  // documented default
    CHECK(endpoint_from_env().url.empty());
}

TEST_CASE("an empty completion is a syntax_code_error") {
    StubLlmServer server("");
    ChatEndpoint endpoint;
    endpoint.url = server.url();
    endpoint.backoff_base_secs = 0.01;
    LlmProposer proposer(endpoint);

    ProposerContext ctx;
    ctx.original_spec_text = serialize_spec(default_spec());
    ctx.baseline = run_experiment(default_spec());
    ctx.baseline_report_csv = report_to_csv(ctx.baseline);
    ctx.iteration = 1;
    ctx.mode = ModificationMode::whole_code();
    try {
        proposer.propose(ctx);
        FAIL("expected an empty-response failure");
    } catch (const std::exception& e) {
        CHECK(classify_exception(e).kind == FailureKind::syntax_code_error);
    }
}
