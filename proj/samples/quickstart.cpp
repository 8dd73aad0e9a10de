// Build a tiny environment, log data under a uniform behavior policy, and
// compare every estimator against the exactly computed policy value.

#include <iostream>

#include "opeforge/runner.hpp"

int main() {
    using namespace opeforge;

    EnvConfig cfg;
    cfg.contexts = 3;
    cfg.actions = 4;
    cfg.q_seed = 7;
    const Environment env = build_environment(cfg);

    const Policy behavior = make_uniform_policy(env);
    const Policy target = make_epsilon_greedy_policy(env, 0.1);
    const double truth = true_policy_value(env, target);

    const LoggedDataset data = sample_log(env, behavior, 5000, 42);
    const RewardModel model = fit_reward_model(data, env.num_contexts(), env.num_actions(),
                                               env.r_max, RewardModelParams{});

    std::cout << "true value        " << truth << "\n";
    std::cout << "direct method     " << estimate_dm(data, target, model) << "\n";
    std::cout << "ipw               " << estimate_ipw(data, target) << "\n";
    std::cout << "self-normalized   " << estimate_snipw(data, target) << "\n";
    std::cout << "doubly robust     " << estimate_dr(data, target, model) << "\n";
    return 0;
}
