#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "opeforge/bandit.hpp"
#include "test_util.hpp"

using namespace opeforge;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;

namespace {

EnvConfig tiny_env_config() {
    EnvConfig cfg;
    cfg.contexts = 1;
    cfg.actions = 2;
    cfg.r_max = 1.0;
    cfg.q = Matrix{{0.2, 0.8}};
    return cfg;
}

}  // namespace

TEST_CASE("build_environment accepts the smallest legal instance") {
    const Environment env = build_environment(tiny_env_config());
    CHECK(env.num_contexts() == 1);
    CHECK(env.num_actions() == 2);
    CHECK(env.context_probs == std::vector<double>{1.0});
}

TEST_CASE("build_environment rejects an unnormalized context distribution") {
    EnvConfig cfg = tiny_env_config();
    cfg.context_probs = std::vector<double>{0.5, 0.6};
    cfg.contexts = 2;
    cfg.q = Matrix{{0.2, 0.8}, {0.2, 0.8}};
    CHECK_THROWS_WITH(build_environment(cfg), ContainsSubstring("sum to 1.1"));
}

TEST_CASE("build_environment rejects a reward mean above r_max") {
    EnvConfig cfg = tiny_env_config();
    cfg.q = Matrix{{0.2, 1.5}};
    CHECK_THROWS_WITH(build_environment(cfg), ContainsSubstring("reward mean"));
}

TEST_CASE("build_environment rejects degenerate dimensions") {
    EnvConfig cfg = tiny_env_config();
    cfg.actions = 1;
    cfg.q = Matrix{{0.2}};
    CHECK_THROWS_AS(build_environment(cfg), SpecError);
    cfg = tiny_env_config();
    cfg.q = Matrix{{0.2, 0.8}, {0.1, 0.1}};  // wrong row count
    CHECK_THROWS_WITH(build_environment(cfg), ContainsSubstring("rows"));
}

TEST_CASE("generated q tables are deterministic in the seed") {
    EnvConfig cfg;
    cfg.contexts = 3;
    cfg.actions = 4;
    cfg.q_seed = 99;
    const Environment a = build_environment(cfg);
    const Environment b = build_environment(cfg);
    CHECK(a == b);
    cfg.q_seed = 100;
    CHECK(build_environment(cfg).reward_means != a.reward_means);
}

TEST_CASE("uniform policy spreads mass evenly") {
    EnvConfig cfg;
    cfg.contexts = 2;
    cfg.actions = 4;
    cfg.q_seed = 1;
    const Environment env = build_environment(cfg);
    const Policy p = make_uniform_policy(env);
    for (const auto& row : p.probs)
        for (double v : row) CHECK(v == 0.25);
}

TEST_CASE("epsilon-greedy at epsilon=0 is the deterministic argmax policy") {
    const Environment env = build_environment(tiny_env_config());
    const Policy p = make_epsilon_greedy_policy(env, 0.0);
    CHECK(p.probs == Matrix{{0.0, 1.0}});
}

TEST_CASE("epsilon-greedy formula: eps=0.2 on q=[0.2,0.8] gives [0.1,0.9]") {
    const Environment env = build_environment(tiny_env_config());
    const Policy p = make_epsilon_greedy_policy(env, 0.2);
    CHECK_THAT(p.probs[0][0], WithinAbs(0.1, 1e-15));
    CHECK_THAT(p.probs[0][1], WithinAbs(0.9, 1e-15));
}

TEST_CASE("epsilon-greedy ties break toward the lowest action index") {
    EnvConfig cfg = tiny_env_config();
    cfg.actions = 3;
    cfg.q = Matrix{{0.8, 0.8, 0.1}};
    const Environment env = build_environment(cfg);
    const Policy p = make_epsilon_greedy_policy(env, 0.0);
    CHECK(p.probs[0][0] == 1.0);
}

TEST_CASE("epsilon outside [0,1] is rejected") {
    const Environment env = build_environment(tiny_env_config());
    CHECK_THROWS_AS(make_epsilon_greedy_policy(env, -0.1), SpecError);
    CHECK_THROWS_AS(make_epsilon_greedy_policy(env, 1.1), SpecError);
}

TEST_CASE("explicit policies must satisfy the row invariants") {
    const Environment env = build_environment(tiny_env_config());
    CHECK_THROWS_AS(make_explicit_policy(env, Matrix{{0.5, 0.6}}), SpecError);
    CHECK_THROWS_AS(make_explicit_policy(env, Matrix{{1.2, -0.2}}), SpecError);
}

TEST_CASE("true_policy_value on hand-computed cases") {
    const Environment env = build_environment(tiny_env_config());
    CHECK_THAT(true_policy_value(env, make_uniform_policy(env)), WithinAbs(0.5, 1e-15));
    CHECK_THAT(true_policy_value(env, make_epsilon_greedy_policy(env, 0.0)),
               WithinAbs(0.8, 1e-15));

    EnvConfig cfg;
    cfg.contexts = 2;
    cfg.actions = 2;
    cfg.q = Matrix{{0.1, 0.9}, {0.4, 0.6}};
    cfg.context_probs = std::vector<double>{0.25, 0.75};
    const Environment env2 = build_environment(cfg);
    const Policy pi = make_explicit_policy(env2, Matrix{{0.5, 0.5}, {0.2, 0.8}});
    CHECK_THAT(true_policy_value(env2, pi), WithinAbs(0.545, 1e-12));
}

TEST_CASE("true_policy_value rejects mismatched dimensions") {
    const Environment env = build_environment(tiny_env_config());
    Policy wrong;
    wrong.probs = Matrix{{0.5, 0.25, 0.25}};
    CHECK_THROWS_AS(true_policy_value(env, wrong), SpecError);
}

TEST_CASE("true_policy_value matches the brute-force oracle on random environments") {
    std::mt19937_64 rng(20240811);
    for (int i = 0; i < 50; ++i) {
        const Environment env = testutil::random_environment(rng);
        const Policy pi = testutil::random_policy(rng, env);
        CHECK_THAT(true_policy_value(env, pi),
                   WithinAbs(testutil::oracle_policy_value(env, pi), 1e-12));
    }
}

TEST_CASE("sample_log is a pure function of its arguments") {
    const Environment env = build_environment(tiny_env_config());
    const Policy b = make_uniform_policy(env);
    CHECK(sample_log(env, b, 10, 7) == sample_log(env, b, 10, 7));
    CHECK(sample_log(env, b, 10, 7) != sample_log(env, b, 10, 8));
}

TEST_CASE("zero-probability actions never appear in the log") {
    const Environment env = build_environment(tiny_env_config());
    const Policy b = make_explicit_policy(env, Matrix{{1.0, 0.0}});
    const LoggedDataset data = sample_log(env, b, 500, 3);
    for (const auto& rec : data.records) CHECK(rec.action == 0);
}

TEST_CASE("empirical action frequencies approach the behavior policy") {
    const Environment env = build_environment(tiny_env_config());
    const Policy b = make_uniform_policy(env);
    const LoggedDataset data = sample_log(env, b, 100000, 11);
    long count0 = 0;
    for (const auto& rec : data.records) count0 += rec.action == 0 ? 1 : 0;
    const double freq = static_cast<double>(count0) / 100000.0;
    CHECK_THAT(freq, WithinAbs(0.5, 0.01));
}

TEST_CASE("stored propensities equal the behavior policy exactly") {
    std::mt19937_64 rng(5);
    const Environment env = testutil::random_environment(rng);
    const Policy b = testutil::random_policy(rng, env);
    const LoggedDataset data = sample_log(env, b, 300, 17);
    for (const auto& rec : data.records) {
        CHECK(rec.propensity ==
              b.probs[static_cast<std::size_t>(rec.context)][static_cast<std::size_t>(rec.action)]);
    }
}

TEST_CASE("bernoulli rewards take only the values 0 and r_max and have mean q") {
    EnvConfig cfg = tiny_env_config();
    cfg.r_max = 2.0;
    cfg.q = Matrix{{0.5, 1.5}};
    const Environment env = build_environment(cfg);
    const Policy b = make_uniform_policy(env);
    const LoggedDataset data = sample_log(env, b, 50000, 23);
    double sum1 = 0.0;
    long n1 = 0;
    for (const auto& rec : data.records) {
        CHECK((rec.reward == 0.0 || rec.reward == 2.0));
        if (rec.action == 1) {
            sum1 += rec.reward;
            ++n1;
        }
    }
    CHECK_THAT(sum1 / static_cast<double>(n1), WithinAbs(1.5, 0.03));
}

TEST_CASE("truncated-gaussian rewards stay inside [0, r_max]") {
    EnvConfig cfg = tiny_env_config();
    cfg.noise = NoiseKind::truncated_gaussian;
    cfg.noise_sigma = 0.4;
    const Environment env = build_environment(cfg);
    const LoggedDataset data = sample_log(env, make_uniform_policy(env), 5000, 29);
    for (const auto& rec : data.records) {
        CHECK(rec.reward >= 0.0);
        CHECK(rec.reward <= 1.0);
    }
}

TEST_CASE("sample_log rejects n < 1") {
    const Environment env = build_environment(tiny_env_config());
    CHECK_THROWS_AS(sample_log(env, make_uniform_policy(env), 0, 1), SpecError);
}

TEST_CASE("dataset CSV round-trips records exactly") {
    std::mt19937_64 rng(31);
    const Environment env = testutil::random_environment(rng);
    const Policy b = testutil::random_policy(rng, env);
    const LoggedDataset data = sample_log(env, b, 200, 37);
    const LoggedDataset back = dataset_from_csv(dataset_to_csv(data));
    CHECK(back.records == data.records);
}

TEST_CASE("dataset CSV parser rejects damaged input") {
    CHECK_THROWS_WITH(dataset_from_csv("nope\n"), ContainsSubstring("header"));
    CHECK_THROWS_AS(dataset_from_csv("context,action,reward,propensity\n0,1,0.5\n"), SpecError);
    CHECK_THROWS_WITH(dataset_from_csv("context,action,reward,propensity\n0,1,0.5,0\n"),
                      ContainsSubstring("propensity"));
}
