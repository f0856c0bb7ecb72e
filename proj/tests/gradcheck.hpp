#pragma once

// Central finite-difference checks of the clipped PPO surrogate against the
// analytic gradients accumulated by the learners.

#include <cmath>
#include <vector>

#include "hoe/trainer.hpp"

namespace testing_support {

using namespace hoe;

struct GradCheckResult {
    double trunk = 0.0;   // worst relative error over trunk weight groups
    double router = 0.0;  // worst relative error over router weight groups
    double critic = 0.0;  // value heads
};

/// A rollout whose stored log-probabilities are jittered so that the ratios
/// spread over both sides of one but stay clear of the clip boundary.
template <class Learner>
std::pair<TrajectoryBatch, std::vector<double>> gradcheck_batch(const Learner& learner, const TokenTradeEnv& env,
                                                                 std::uint64_t seed) {
    RngStream rng(seed, 77);
    auto roll = collect_rollout(learner, env, 4, rng);
    for (auto& lp : roll.batch.logprobs) lp += 0.1 * (rng.uniform() - 0.5);
    auto batch = gae_per_objective(std::move(roll.batch), 0.95, 1.0, true);
    std::vector<double> adv = mixed_advantage(batch.advantages, batch.objectives, std::vector<double>{0.3, 0.7});
    return {std::move(batch), std::move(adv)};
}

/// Relative error ||analytic - numeric|| / max(||numeric||, ||analytic||) per
/// parameter group, numeric gradients from central differences on the loss.
template <class Learner>
std::vector<double> group_errors(Learner& learner, const TrajectoryBatch& batch, const std::vector<double>& adv,
                                 const PpoConfig& cfg) {
    std::vector<std::size_t> all(batch.steps());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    learner.zero_grad();
    ppo_loss(learner, batch, adv, all, cfg, true);
    const auto params = learner.parameters();
    std::vector<std::vector<double>> analytic;
    for (const auto& g : learner.gradients()) analytic.emplace_back(g.begin(), g.end());

    std::vector<double> errors;
    for (std::size_t k = 0; k < params.size(); ++k) {
        double diff2 = 0.0, num2 = 0.0, ana2 = 0.0;
        for (std::size_t i = 0; i < params[k].size(); ++i) {
            float& p = params[k][i];
            const float saved = p;
            const float up = saved + 1e-2f, down = saved - 1e-2f;
            p = up;
            const double lu = ppo_loss(learner, batch, adv, all, cfg, false);
            p = down;
            const double ld = ppo_loss(learner, batch, adv, all, cfg, false);
            p = saved;
            const double numeric = (lu - ld) / (static_cast<double>(up) - static_cast<double>(down));
            const double a = analytic[k][i];
            diff2 += (a - numeric) * (a - numeric);
            num2 += numeric * numeric;
            ana2 += a * a;
        }
        const double scale = std::max(std::sqrt(std::max(num2, ana2)), 1e-12);
        errors.push_back(std::sqrt(diff2) / scale);
    }
    return errors;
}

// The critic loss is stopped at the value heads, so trunk and router groups are
// checked against the policy terms alone and the heads against the full loss.
inline PpoConfig gradcheck_config(double value_coef) {
    PpoConfig cfg;
    cfg.entropy_coef = 0.01;
    cfg.value_coef = value_coef;
    return cfg;
}

/// Dense path on a 2-hidden-layer toy net: every trunk matrix plus the critic heads.
inline GradCheckResult dense_gradcheck(std::uint64_t seed) {
    const auto env = make_env(EnvSpec{});
    RngStream rng(seed);
    auto net = make_policy(env.obs_dim(), {5, 4}, env.vocab(), 2, rng, 0.5);
    for (auto& v : net.value_w.data()) v = static_cast<float>(0.3 * rng.normal());
    DenseLearner learner(net);
    const auto [batch, adv] = gradcheck_batch(learner, env, seed);
    const auto policy = group_errors(learner, batch, adv, gradcheck_config(0.0));
    const auto full = group_errors(learner, batch, adv, gradcheck_config(0.5));
    GradCheckResult r;
    const std::size_t layers = learner.net.layers.size();
    for (std::size_t k = 0; k < layers; ++k) r.trunk = std::max(r.trunk, policy[k]);
    for (std::size_t k = layers; k < full.size(); ++k) r.critic = std::max(r.critic, full[k]);
    return r;
}

/// Router path: two random LoRA experts on a frozen toy net.
inline GradCheckResult router_gradcheck(std::uint64_t seed) {
    const auto env = make_env(EnvSpec{});
    RngStream rng(seed);
    auto net = make_policy(env.obs_dim(), {5, 4}, env.vocab(), 2, rng, 0.5);
    std::vector<std::string> ids;
    for (int e = 0; e < 2; ++e) {
        ObjectiveVector tau;
        for (const auto& l : net.layers) tau.deltas.emplace(l.module_path, random_matrix(l.d_out(), l.d_in(), rng, 0.7));
        TaskSvdOptions opt;
        opt.rank = 2;
        const auto expert = task_svd(tau, opt, one_hot(2, e), "e" + std::to_string(e));
        net.attach(expert);
        ids.push_back(expert.id);
    }
    for (auto& v : net.value_w.data()) v = static_cast<float>(0.3 * rng.normal());
    auto router = make_router("r", Preference({0.5, 0.5}), ids, net.without_experts(), rng, 0.5);
    RouterLearner learner(net, router);
    const auto [batch, adv] = gradcheck_batch(learner, env, seed);
    const auto policy = group_errors(learner, batch, adv, gradcheck_config(0.0));
    const auto full = group_errors(learner, batch, adv, gradcheck_config(0.5));
    GradCheckResult r;
    const std::size_t router_groups = 2 * learner.mixer.paths.size();
    for (std::size_t k = 0; k < router_groups; ++k) r.router = std::max(r.router, policy[k]);
    for (std::size_t k = router_groups; k < full.size(); ++k) r.critic = std::max(r.critic, full[k]);
    return r;
}

} // namespace testing_support
