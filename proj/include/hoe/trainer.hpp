#pragma once

// Mixed-advantage PPO. The same loop trains dense policies (single-objective
// experts, per-preference baselines) and router experts on top of frozen LoRA
// experts; with Tchebycheff scalarisation the objective weights follow the
// online-mirror-descent update each iteration.

#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hoe/hoe_router.hpp"
#include "hoe/morl.hpp"
#include "hoe/policy.hpp"

namespace hoe {

struct PpoConfig {
    double clip_ratio = 0.2;
    std::size_t epochs_per_batch = 4;
    std::size_t batch_episodes = 64;
    std::size_t minibatches = 4;
    double learning_rate = 0.01;
    double gae_lambda = 0.95;
    double gamma = 1.0;
    double entropy_coef = 0.0;
    double value_coef = 0.5;
    double kl_coef = 0.0;  // penalty towards a frozen reference policy
    double max_grad_norm = 1.0;
    std::size_t total_iterations = 75;
    std::uint64_t seed = 0;

    void validate() const {
        require(clip_ratio > 0.0 && clip_ratio < 1.0, errc::invalid_config, "clip_ratio must lie in (0, 1)");
        require(gamma > 0.0 && gamma <= 1.0, errc::invalid_config, "gamma must lie in (0, 1]");
        require(gae_lambda >= 0.0 && gae_lambda <= 1.0, errc::invalid_config, "gae_lambda must lie in [0, 1]");
        require(batch_episodes >= 1 && epochs_per_batch >= 1 && minibatches >= 1, errc::invalid_config,
                "batch sizes must be positive");
        require(learning_rate > 0.0, errc::invalid_config, "learning_rate must be positive");
    }
};

enum class Scalarization { linear, stch };

inline std::string to_string(Scalarization s) { return s == Scalarization::linear ? "linear" : "stch"; }

struct TrainLogRow {
    std::size_t iteration = 0;
    std::vector<double> mean_rewards;
    std::vector<double> w;
    double tch = 0.0;
    double linear = 0.0;
};

struct TrainingLog {
    std::vector<TrainLogRow> rows;

    /// One JSON object per line.
    std::string to_jsonl() const {
        std::ostringstream os;
        os.precision(9);
        auto list = [&](const std::vector<double>& v) {
            os << '[';
            for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
            os << ']';
        };
        for (const auto& r : rows) {
            os << "{\"iteration\":" << r.iteration << ",\"mean_rewards\":";
            list(r.mean_rewards);
            os << ",\"w\":";
            list(r.w);
            os << ",\"tch\":" << r.tch << ",\"linear\":" << r.linear << "}\n";
        }
        return os.str();
    }
};

// ---------------------------------------------------------------------------
// Adam

class Adam {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(const std::vector<std::span<float>>& params, const std::vector<std::span<double>>& grads,
              double max_grad_norm) {
        if (m_.empty()) {
            for (const auto& p : params) {
                m_.emplace_back(p.size(), 0.0);
                v_.emplace_back(p.size(), 0.0);
            }
        }
        double norm2 = 0.0;
        for (const auto& g : grads)
            for (double x : g) norm2 += x * x;
        require(std::isfinite(norm2), errc::training_diverged, "non-finite gradient");
        const double norm = std::sqrt(norm2);
        const double clip = max_grad_norm > 0.0 && norm > max_grad_norm ? max_grad_norm / norm : 1.0;
        ++t_;
        const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t k = 0; k < params.size(); ++k) {
            auto& m = m_[k];
            auto& v = v_[k];
            for (std::size_t i = 0; i < params[k].size(); ++i) {
                const double g = grads[k][i] * clip;
                m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
                v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
                const double update = lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
                params[k][i] = static_cast<float>(params[k][i] - update);
            }
        }
    }

private:
    double lr_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

// ---------------------------------------------------------------------------
// Learners: what gets optimised and how gradients reach it.

/// Trains the trunk weight matrices and the value heads; biases stay frozen so
/// that weight deltas fully describe the finetune.
struct DenseLearner {
    PolicyNetwork net;
    NoMixer mixer;
    DenseGrads grads;

    explicit DenseLearner(PolicyNetwork network) : net(std::move(network)), grads(net) {}

    ForwardTrace run(std::span<const double> obs) const { return forward(net, obs, mixer); }
    void accumulate(const ForwardTrace& t, std::span<const double> d_logits, std::span<const double> d_values) {
        backward(net, t, d_logits, d_values, mixer, &grads);
    }
    std::vector<std::span<float>> parameters() {
        std::vector<std::span<float>> out;
        for (auto& l : net.layers) out.push_back(l.w_pre.data());
        out.push_back(net.value_w.data());
        out.push_back(net.value_b);
        return out;
    }
    std::vector<std::span<double>> gradients() {
        std::vector<std::span<double>> out;
        for (auto& g : grads.w) out.push_back(g);
        out.push_back(grads.value_w);
        out.push_back(grads.value_b);
        return out;
    }
    void zero_grad() { grads = DenseGrads(net); }
};

/// Softmax router over the experts attached to each layer, with gradients.
struct RouterTrainMixer {
    RouterExpert router;
    std::vector<std::string> paths;  // layer index -> module path
    std::vector<std::vector<double>> grad_w, grad_b;

    std::vector<double> omega(std::size_t layer, std::span<const double> x) const {
        return softmax(router_scores(router, paths[layer], x));
    }

    void backprop(std::size_t layer, std::span<const double> x, std::span<const double> d_omega, std::span<double> d_x) {
        const auto& rl = router.modules.at(paths[layer]);
        const auto p = omega(layer, x);
        double dot = 0.0;
        for (std::size_t k = 0; k < p.size(); ++k) dot += p[k] * d_omega[k];
        std::vector<double> ds(p.size());
        for (std::size_t k = 0; k < p.size(); ++k) ds[k] = p[k] * (d_omega[k] - dot);
        auto& gw = grad_w[layer];
        for (std::size_t k = 0; k < ds.size(); ++k) {
            for (std::size_t c = 0; c < x.size(); ++c) gw[k * x.size() + c] += ds[k] * x[c];
            grad_b[layer][k] += ds[k];
        }
        const auto back = matvec_transposed(rl.weight, ds);
        for (std::size_t c = 0; c < d_x.size(); ++c) d_x[c] += back[c];
    }

    void zero_grad() {
        grad_w.clear();
        grad_b.clear();
        for (const auto& p : paths) {
            grad_w.emplace_back(router.modules.at(p).weight.size(), 0.0);
            grad_b.emplace_back(router.modules.at(p).bias.size(), 0.0);
        }
    }
};

/// Trains one router expert plus fresh value heads; the attached LoRA experts and
/// the trunk are read-only.
struct RouterLearner {
    PolicyNetwork net;  // base with the router's assigned experts attached in order
    RouterTrainMixer mixer;
    DenseGrads grads;

    RouterLearner(PolicyNetwork network, RouterExpert router) : net(std::move(network)), grads(net) {
        for (const auto& l : net.layers) mixer.paths.push_back(l.module_path);
        mixer.router = std::move(router);
        mixer.zero_grad();
        grads.trunk = false;
    }

    ForwardTrace run(std::span<const double> obs) const { return forward(net, obs, mixer); }
    void accumulate(const ForwardTrace& t, std::span<const double> d_logits, std::span<const double> d_values) {
        backward(net, t, d_logits, d_values, mixer, &grads);
    }
    std::vector<std::span<float>> parameters() {
        std::vector<std::span<float>> out;
        for (const auto& p : mixer.paths) {
            auto& rl = mixer.router.modules.at(p);
            out.push_back(rl.weight.data());
            out.push_back(rl.bias);
        }
        out.push_back(net.value_w.data());
        out.push_back(net.value_b);
        return out;
    }
    std::vector<std::span<double>> gradients() {
        std::vector<std::span<double>> out;
        for (std::size_t l = 0; l < mixer.paths.size(); ++l) {
            out.push_back(mixer.grad_w[l]);
            out.push_back(mixer.grad_b[l]);
        }
        out.push_back(grads.value_w);
        out.push_back(grads.value_b);
        return out;
    }
    void zero_grad() {
        grads = DenseGrads(net);
        grads.trunk = false;
        mixer.zero_grad();
    }
};

// ---------------------------------------------------------------------------
// Rollouts

struct Rollout {
    TrajectoryBatch batch;           // rewards here include any KL shaping
    std::vector<double> env_rewards;  // steps x N, unshaped
    std::vector<double> mean_returns; // per objective, averaged over episodes
};

using LogitFn = std::function<std::vector<double>(std::span<const double>)>;

template <class Learner>
Rollout collect_rollout(const Learner& learner, const TokenTradeEnv& env, std::size_t episodes, RngStream& rng,
                        double kl_coef = 0.0, const PolicyNetwork* reference = nullptr) {
    const std::size_t n = env.objectives();
    Rollout out;
    out.batch.objectives = n;
    out.mean_returns.assign(n, 0.0);
    for (std::size_t ep = 0; ep < episodes; ++ep) {
        std::size_t state = env.start_state();
        for (std::size_t t = 0; t < env.horizon(); ++t) {
            auto obs = env.observe(state);
            const auto trace = learner.run(obs);
            require(trace.values.size() == n, errc::invalid_input, "value heads do not match the objective count");
            const auto logp = log_softmax(trace.logits);
            const auto probs = softmax(trace.logits);
            const auto action = sample_categorical(probs, rng);
            const auto r = env.reward(action);
            double penalty = 0.0;
            if (kl_coef > 0.0 && reference != nullptr) {
                const auto ref = log_softmax(forward(*reference, obs, NoMixer{}).logits);
                penalty = kl_coef * (logp[action] - ref[action]);
            }
            for (std::size_t i = 0; i < n; ++i) {
                out.env_rewards.push_back(r[i]);
                out.batch.rewards.push_back(r[i] - penalty);
                out.batch.values.push_back(trace.values[i]);
                out.mean_returns[i] += r[i];
            }
            out.batch.observations.push_back(std::move(obs));
            out.batch.actions.push_back(action);
            out.batch.logprobs.push_back(logp[action]);
            state = action;
        }
        out.batch.episode_ends.push_back(out.batch.steps());
    }
    for (auto& m : out.mean_returns) m /= static_cast<double>(episodes);
    return out;
}

// ---------------------------------------------------------------------------
// Clipped surrogate

/// Mean over `indices` of the clipped PPO loss plus value and entropy terms.
/// Accumulates gradients into the learner when `accumulate` is set.
template <class Learner>
double ppo_loss(Learner& learner, const TrajectoryBatch& batch, std::span<const double> advantage,
                std::span<const std::size_t> indices, const PpoConfig& cfg, bool accumulate) {
    const double inv = 1.0 / static_cast<double>(indices.size());
    const std::size_t n = batch.objectives;
    double loss = 0.0;
    for (std::size_t idx : indices) {
        const auto trace = learner.run(batch.observations[idx]);
        const auto logp = log_softmax(trace.logits);
        const auto probs = softmax(trace.logits);
        const std::size_t a = batch.actions[idx];
        const double ratio = std::exp(logp[a] - batch.logprobs[idx]);
        const double adv = advantage[idx];
        const double clipped = std::clamp(ratio, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio);
        const double unclipped_term = ratio * adv;
        const double clipped_term = clipped * adv;
        const bool use_unclipped = unclipped_term <= clipped_term;
        loss -= inv * std::min(unclipped_term, clipped_term);

        double entropy = 0.0;
        for (std::size_t k = 0; k < probs.size(); ++k)
            if (probs[k] > 0.0) entropy -= probs[k] * logp[k];
        loss -= inv * cfg.entropy_coef * entropy;

        std::vector<double> d_values(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const double err = trace.values[i] - batch.returns[idx * n + i];
            loss += inv * cfg.value_coef * 0.5 * err * err;
            d_values[i] = inv * cfg.value_coef * err;
        }
        if (!accumulate) continue;

        std::vector<double> d_logits(probs.size(), 0.0);
        if (use_unclipped) {
            // d(-ratio*adv)/dlogits = -adv * ratio * (onehot(a) - probs)
            const double coef = -inv * adv * ratio;
            for (std::size_t k = 0; k < probs.size(); ++k) d_logits[k] += coef * ((k == a ? 1.0 : 0.0) - probs[k]);
        }
        if (cfg.entropy_coef != 0.0) {
            // dH/dlogit_k = -p_k (log p_k + H)
            for (std::size_t k = 0; k < probs.size(); ++k)
                d_logits[k] -= inv * cfg.entropy_coef * (-probs[k] * (logp[k] + entropy));
        }
        learner.accumulate(trace, d_logits, d_values);
    }
    require(std::isfinite(loss), errc::training_diverged, "non-finite PPO loss");
    return loss;
}

struct PpoTarget {
    Preference lambda;
    Scalarization scalarization = Scalarization::linear;
    std::optional<OmdState> omd;  // required for stch
    std::vector<double> z_star;   // used for logging the TCH value
};

/// Runs cfg.total_iterations PPO iterations on `learner` and returns the log.
/// For STCH targets the OMD state in `target` is advanced in place.
template <class Learner>
TrainingLog run_ppo(Learner& learner, const TokenTradeEnv& env, PpoTarget& target, const PpoConfig& cfg,
                    const PolicyNetwork* reference = nullptr) {
    cfg.validate();
    const std::size_t n = env.objectives();
    require(target.lambda.size() == n, errc::invalid_input, "preference dimension does not match the environment");
    if (target.scalarization == Scalarization::stch)
        require(target.omd.has_value(), errc::invalid_input, "stch training needs an OMD state");
    if (target.z_star.empty()) target.z_star = target.omd ? target.omd->z_star : std::vector<double>(n, 0.0);

    Adam optimizer(cfg.learning_rate);
    RngStream rng(cfg.seed, 0x5050);
    TrainingLog log;
    for (std::size_t iter = 0; iter < cfg.total_iterations; ++iter) {
        Rollout roll = collect_rollout(learner, env, cfg.batch_episodes, rng, cfg.kl_coef, reference);
        TrajectoryBatch batch = gae_per_objective(std::move(roll.batch), cfg.gae_lambda, cfg.gamma, true);

        std::vector<double> w;
        if (target.scalarization == Scalarization::stch) {
            auto& omd = *target.omd;
            omd = omd_update(omd, target.lambda, roll.mean_returns);
            for (double x : omd.log_w) {
                if (std::abs(x) > 50.0) {
                    omd.alpha *= 0.5;
                    for (auto& y : omd.log_w) y = std::clamp(y, -50.0, 50.0);
                    break;
                }
            }
            w = omd.mixture(target.lambda, roll.mean_returns);
        } else {
            w = target.lambda.vec();
        }
        std::vector<double> advantage;
        if (target.scalarization == Scalarization::stch && target.omd->smooth_current) {
            // Each episode is weighted by the indicator of its own returns.
            std::size_t begin = 0;
            for (std::size_t end : batch.episode_ends) {
                std::vector<double> ret(n, 0.0);
                for (std::size_t t = begin; t < end; ++t)
                    for (std::size_t i = 0; i < n; ++i) ret[i] += roll.env_rewards[t * n + i];
                const auto we = target.omd->mixture(target.lambda, ret);
                for (std::size_t t = begin; t < end; ++t) {
                    double a = 0.0;
                    for (std::size_t i = 0; i < n; ++i) a += we[i] * batch.advantages[t * n + i];
                    advantage.push_back(a);
                }
                begin = end;
            }
        } else {
            advantage = mixed_advantage(batch.advantages, n, w);
        }

        std::vector<std::size_t> order(batch.steps());
        std::iota(order.begin(), order.end(), 0);
        const std::size_t mb = std::max<std::size_t>(1, std::min(cfg.minibatches, order.size()));
        for (std::size_t epoch = 0; epoch < cfg.epochs_per_batch; ++epoch) {
            for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.next_u64() % i]);
            for (std::size_t m = 0; m < mb; ++m) {
                const std::size_t begin = m * order.size() / mb;
                const std::size_t end = (m + 1) * order.size() / mb;
                learner.zero_grad();
                ppo_loss(learner, batch, advantage, std::span<const std::size_t>(order).subspan(begin, end - begin), cfg,
                         true);
                optimizer.step(learner.parameters(), learner.gradients(), cfg.max_grad_norm);
            }
        }

        TrainLogRow row;
        row.iteration = iter;
        row.mean_rewards = roll.mean_returns;
        row.w = w;
        row.tch = tch_value(roll.mean_returns, target.lambda, target.z_star);
        row.linear = linear_scalarize(roll.mean_returns, target.lambda);
        log.rows.push_back(std::move(row));
    }
    return log;
}

// ---------------------------------------------------------------------------
// Entry points

struct DenseTrainResult {
    PolicyNetwork net;
    TrainingLog log;
    std::optional<OmdState> omd;
};

/// Dense PPO from `base` toward `lambda`; the base doubles as the KL reference.
inline DenseTrainResult train_dense(const PolicyNetwork& base, const Preference& lambda, const TokenTradeEnv& env,
                                    const PpoConfig& cfg, Scalarization scalarization = Scalarization::linear,
                                    std::optional<OmdState> omd = std::nullopt) {
    require(base.objective_count() == env.objectives(), errc::invalid_input,
            "base network value heads do not match the environment");
    DenseLearner learner(base.without_experts());
    learner.net.value_w = Matrix(base.value_w.rows(), base.value_w.cols());
    std::fill(learner.net.value_b.begin(), learner.net.value_b.end(), 0.0f);
    PpoTarget target{lambda, scalarization, std::move(omd), {}};
    if (target.omd) target.z_star = target.omd->z_star;
    const PolicyNetwork reference = base.without_experts();
    auto log = run_ppo(learner, env, target, cfg, cfg.kl_coef > 0.0 ? &reference : nullptr);
    return {std::move(learner.net), std::move(log), std::move(target.omd)};
}

inline Preference one_hot(std::size_t n, std::size_t i) {
    require(i < n, errc::invalid_input, "objective index " + std::to_string(i) + " out of range");
    std::vector<double> w(n, 0.0);
    w[i] = 1.0;
    return Preference(std::move(w));
}

inline DenseTrainResult train_single_objective(const PolicyNetwork& base, std::size_t objective,
                                               const TokenTradeEnv& env, const PpoConfig& cfg) {
    return train_dense(base, one_hot(env.objectives(), objective), env, cfg);
}

/// The N LoRA experts nearest to `lambda`, in routing order.
inline std::vector<std::string> nearest_lora_ids(const HoeModel& model, const Preference& lambda) {
    std::vector<Preference> prefs;
    for (const auto& e : model.lora) prefs.push_back(e.preference);
    const auto idx = nearest_experts(lambda, prefs, std::min(model.objectives(), prefs.size()));
    std::vector<std::string> ids;
    for (auto i : idx) ids.push_back(model.lora[i].id);
    return ids;
}

struct RouterTrainResult {
    RouterExpert router;
    TrainingLog log;
    OmdState omd;
};

inline RouterTrainResult train_router(const HoeModel& model, const Preference& lambda, const TokenTradeEnv& env,
                                      const PpoConfig& cfg, OmdState omd, std::string id,
                                      Scalarization scalarization = Scalarization::stch) {
    require(!model.lora.empty(), errc::empty_registry, "router training needs LoRA experts");
    require(lambda.size() == model.objectives(), errc::invalid_input, "preference dimension mismatch");
    const auto assigned = nearest_lora_ids(model, lambda);
    PolicyNetwork net = model.base;
    for (const auto& aid : assigned) net.attach(model.lora[model.lora_index(aid)]);
    net.value_w = Matrix(env.objectives(), net.hidden_width());
    net.value_b.assign(env.objectives(), 0.0f);
    RngStream init_rng(cfg.seed, 0xA11CE);
    RouterLearner learner(std::move(net), make_router(std::move(id), lambda, assigned, model.base, init_rng));
    PpoTarget target{lambda, scalarization, omd, omd.z_star};
    PpoConfig router_cfg = cfg;
    router_cfg.kl_coef = 0.0;
    auto log = run_ppo(learner, env, target, router_cfg);
    return {std::move(learner.mixer.router), std::move(log), std::move(*target.omd)};
}

// ---------------------------------------------------------------------------
// Evaluation

/// Mean per-objective return of greedy (argmax) rollouts.
inline std::vector<double> evaluate_greedy(const TokenTradeEnv& env, const LogitFn& policy, std::size_t episodes = 1) {
    std::vector<double> total(env.objectives(), 0.0);
    for (std::size_t ep = 0; ep < episodes; ++ep) {
        std::size_t state = env.start_state();
        for (std::size_t t = 0; t < env.horizon(); ++t) {
            const auto a = greedy_action(policy(env.observe(state)));
            for (std::size_t i = 0; i < env.objectives(); ++i) total[i] += env.reward(a)[i];
            state = a;
        }
    }
    for (auto& x : total) x /= static_cast<double>(episodes);
    return total;
}

/// Mean per-objective return of sampled rollouts.
inline std::vector<double> evaluate_sampled(const TokenTradeEnv& env, const LogitFn& policy, std::size_t episodes,
                                            RngStream& rng) {
    std::vector<double> total(env.objectives(), 0.0);
    for (std::size_t ep = 0; ep < episodes; ++ep) {
        std::size_t state = env.start_state();
        for (std::size_t t = 0; t < env.horizon(); ++t) {
            const auto a = sample_action(policy(env.observe(state)), rng).action;
            for (std::size_t i = 0; i < env.objectives(); ++i) total[i] += env.reward(a)[i];
            state = a;
        }
    }
    for (auto& x : total) x /= static_cast<double>(episodes);
    return total;
}

/// Exact per-objective expected return of the sampling policy, by propagating
/// the distribution over states (previous tokens) through the horizon.
inline std::vector<double> expected_return(const TokenTradeEnv& env, const LogitFn& policy) {
    std::vector<std::vector<double>> probs(env.obs_dim());
    for (std::size_t s = 0; s < env.obs_dim(); ++s) probs[s] = softmax(policy(env.observe(s)));
    std::vector<double> state(env.obs_dim(), 0.0), total(env.objectives(), 0.0);
    state[env.start_state()] = 1.0;
    for (std::size_t t = 0; t < env.horizon(); ++t) {
        std::vector<double> next(env.obs_dim(), 0.0);
        for (std::size_t s = 0; s < env.obs_dim(); ++s) {
            if (state[s] == 0.0) continue;
            for (std::size_t a = 0; a < env.vocab(); ++a) {
                const double mass = state[s] * probs[s][a];
                next[a] += mass;
                for (std::size_t i = 0; i < env.objectives(); ++i) total[i] += mass * env.reward(a)[i];
            }
        }
        state = std::move(next);
    }
    return total;
}

inline LogitFn dense_policy(const PolicyNetwork& net) {
    return [net](std::span<const double> obs) { return forward(net, obs, NoMixer{}).logits; };
}

inline LogitFn hoe_policy(const HoeModel& model, const Preference& user) {
    auto assignment = route(model, user);
    return [&model, assignment](std::span<const double> obs) {
        return forward(model.plugged, obs, RoutedMixer{&model, assignment}).logits;
    };
}

/// A router evaluated on its own assigned experts (routing mass one-hot on it).
inline LogitFn router_policy(const HoeModel& model, const RouterExpert& router) {
    PolicyNetwork net = model.base;
    for (const auto& aid : router.assigned) net.attach(model.lora[model.lora_index(aid)]);
    RouterTrainMixer mixer;
    for (const auto& l : net.layers) mixer.paths.push_back(l.module_path);
    mixer.router = router;
    return [net, mixer](std::span<const double> obs) { return forward(net, obs, mixer).logits; };
}

} // namespace hoe
