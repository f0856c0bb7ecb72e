#include <gtest/gtest.h>

#include <cmath>

#include "hoe/trainer.hpp"

#include "gradcheck.hpp"

using namespace hoe;

namespace {

TokenTradeEnv canonical() { return make_env(EnvSpec{}); }

PpoConfig single_cfg(std::uint64_t seed) {
    PpoConfig c;
    c.seed = seed;
    c.kl_coef = 0.3;
    c.total_iterations = 150;
    return c;
}

} // namespace

TEST(GradCheck, DenseTrunkAndCritic) {
    const auto r = testing_support::dense_gradcheck(3);
    EXPECT_LT(r.trunk, 1e-3);
    EXPECT_LT(r.critic, 1e-3);
}

TEST(GradCheck, RouterAndCritic) {
    const auto r = testing_support::router_gradcheck(4);
    EXPECT_LT(r.router, 1e-3);
    EXPECT_LT(r.critic, 1e-3);
}

TEST(Collect, ShapesAndDeterminism) {
    const auto env = canonical();
    RngStream init(1);
    DenseLearner learner(make_policy(env.obs_dim(), {8}, env.vocab(), 2, init));
    RngStream a(5), b(5);
    const auto ra = collect_rollout(learner, env, 3, a);
    const auto rb = collect_rollout(learner, env, 3, b);
    EXPECT_EQ(ra.batch.steps(), 30u);
    EXPECT_EQ(ra.batch.episode_ends, (std::vector<std::size_t>{10, 20, 30}));
    EXPECT_EQ(ra.batch.actions, rb.batch.actions);
    double total0 = 0.0;
    for (std::size_t t = 0; t < 30; ++t) total0 += ra.env_rewards[2 * t];
    EXPECT_NEAR(ra.mean_returns[0], total0 / 3.0, 1e-12);
}

TEST(SingleObjective, GreedyPicksOwnToken) {
    const auto env = canonical();
    RngStream rng(1);
    const auto base = make_policy(env.obs_dim(), {32, 32}, env.vocab(), 2, rng);
    for (std::size_t i = 0; i < 2; ++i) {
        const auto res = train_single_objective(base, i, env, single_cfg(11 + i));
        const auto policy = dense_policy(res.net);
        for (std::size_t s = 0; s < env.obs_dim(); ++s) EXPECT_EQ(greedy_action(policy(env.observe(s))), i);
        EXPECT_NEAR(evaluate_greedy(env, policy)[i], 10.0, 1e-12);
    }
}

TEST(SingleObjective, BiasesStayFrozen) {
    const auto env = canonical();
    RngStream rng(2);
    auto base = make_policy(env.obs_dim(), {8, 8}, env.vocab(), 2, rng);
    auto cfg = single_cfg(1);
    cfg.total_iterations = 3;
    const auto res = train_single_objective(base, 0, env, cfg);
    for (std::size_t l = 0; l < base.layers.size(); ++l) EXPECT_EQ(res.net.layers[l].bias, base.layers[l].bias);
    EXPECT_FALSE(res.net.layers[0].w_pre == base.layers[0].w_pre);
}

namespace {

struct RouterFixture {
    TokenTradeEnv env = canonical();
    HoeModel model;

    RouterFixture() {
        RngStream rng(3);
        const auto base = make_policy(env.obs_dim(), {32, 32}, env.vocab(), 2, rng);
        std::vector<LoraExpert> lora;
        TaskSvdOptions opt;
        opt.rank = 4;
        opt.clamp_rank = true;
        for (std::size_t i = 0; i < 2; ++i) {
            const auto res = train_single_objective(base, i, env, single_cfg(21 + i));
            lora.push_back(task_svd(objective_vector(res.net.weight_map(), base.weight_map()), opt, one_hot(2, i),
                                    "e" + std::to_string(i)));
        }
        model = assemble(base, lora, {});
    }
};

} // namespace

TEST(Router, ZeroIterationsKeepsInitialisation) {
    RouterFixture f;
    PpoConfig cfg;
    cfg.total_iterations = 0;
    cfg.seed = 9;
    const auto z = default_z_star(f.env);
    const auto res = train_router(f.model, Preference({0.5, 0.5}), f.env, cfg, OmdState::uniform(2, 0.1, z), "r");
    RngStream init(9, 0xA11CE);
    const auto fresh = make_router("r", Preference({0.5, 0.5}), res.router.assigned, f.model.base, init);
    for (const auto& [path, l] : fresh.modules) {
        EXPECT_EQ(res.router.modules.at(path).weight, l.weight);
        EXPECT_EQ(res.router.modules.at(path).bias, l.bias);
    }
    EXPECT_TRUE(res.log.rows.empty());
}

TEST(Router, OneHotPreferenceSelectsSpecialist) {
    RouterFixture f;
    PpoConfig cfg;
    cfg.seed = 4;
    cfg.learning_rate = 0.03;
    const auto z = default_z_star(f.env);
    const auto res = train_router(f.model, Preference({1.0, 0.0}), f.env, cfg, OmdState::uniform(2, 0.1, z), "r");
    const auto policy = router_policy(f.model, res.router);
    for (std::size_t s = 0; s < f.env.obs_dim(); ++s) EXPECT_EQ(greedy_action(policy(f.env.observe(s))), 0u);
    EXPECT_NEAR(evaluate_greedy(f.env, policy)[0], 10.0, 1e-12);
    // LoRA experts are untouched.
    EXPECT_EQ(f.model.lora.size(), 2u);
}

TEST(Router, LogRecordsEveryIteration) {
    RouterFixture f;
    PpoConfig cfg;
    cfg.total_iterations = 4;
    const auto z = default_z_star(f.env);
    const auto res = train_router(f.model, Preference({0.5, 0.5}), f.env, cfg, OmdState::uniform(2, 0.1, z), "r");
    ASSERT_EQ(res.log.rows.size(), 4u);
    const auto jsonl = res.log.to_jsonl();
    EXPECT_EQ(std::count(jsonl.begin(), jsonl.end(), '\n'), 4);
    EXPECT_EQ(res.omd.step, 4u);
    for (const auto& row : res.log.rows) EXPECT_NEAR(row.w[0] + row.w[1], 1.0, 1e-12);
}

TEST(ExpectedReturn, MatchesSamplingAverage) {
    const auto env = canonical();
    RngStream rng(8);
    const auto net = make_policy(env.obs_dim(), {8}, env.vocab(), 2, rng, 1.0);
    const auto policy = dense_policy(net);
    const auto exact = expected_return(env, policy);
    RngStream s(9);
    const auto mc = evaluate_sampled(env, policy, 20000, s);
    for (int i = 0; i < 2; ++i) EXPECT_NEAR(mc[i], exact[i], 0.05);
}

TEST(Config, RejectsBadValues) {
    PpoConfig c;
    c.clip_ratio = 0.0;
    EXPECT_THROW(c.validate(), error);
    c = PpoConfig{};
    c.gamma = 1.5;
    EXPECT_THROW(c.validate(), error);
}
