#pragma once

// Synthetic multi-objective token environment with brute-force oracles, and the
// scalarisation machinery: linear, Tchebycheff, smooth Tchebycheff and the
// online-mirror-descent update of the objective weights.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "hoe/numkernel.hpp"
#include "hoe/simplex.hpp"

namespace hoe {

enum class FrontierShape { convex, nonconvex };

inline std::string to_string(FrontierShape s) { return s == FrontierShape::convex ? "convex" : "nonconvex"; }

inline FrontierShape frontier_shape_from(const std::string& s) {
    if (s == "convex") return FrontierShape::convex;
    if (s == "nonconvex") return FrontierShape::nonconvex;
    fail(errc::invalid_config, "unknown frontier shape '" + s + "'");
}

struct EnvSpec {
    std::size_t vocab = 3;
    std::size_t objectives = 2;
    std::size_t horizon = 10;
    FrontierShape shape = FrontierShape::convex;
    std::uint64_t seed = 0;
};

/// Each step emits one token and collects that token's reward row. The state is
/// the one-hot of the previous token; a dedicated start symbol opens each episode.
class TokenTradeEnv {
public:
    TokenTradeEnv(std::size_t vocab, std::size_t objectives, std::size_t horizon, std::vector<double> reward_table)
        : vocab_(vocab), objectives_(objectives), horizon_(horizon), table_(std::move(reward_table)) {
        require(vocab >= 1 && objectives >= 1 && horizon >= 1, errc::invalid_input, "environment sizes must be positive");
        require(table_.size() == vocab * objectives, errc::invalid_input, "reward table has the wrong size");
        for (double v : table_) require(std::isfinite(v), errc::invalid_input, "reward table must be finite");
    }

    std::size_t vocab() const noexcept { return vocab_; }
    std::size_t objectives() const noexcept { return objectives_; }
    std::size_t horizon() const noexcept { return horizon_; }
    std::size_t obs_dim() const noexcept { return vocab_ + 1; }
    std::size_t start_state() const noexcept { return vocab_; }

    std::span<const double> reward(std::size_t token) const { return {table_.data() + token * objectives_, objectives_}; }
    const std::vector<double>& reward_table() const noexcept { return table_; }

    std::vector<double> observe(std::size_t state) const {
        std::vector<double> obs(obs_dim(), 0.0);
        obs[state] = 1.0;
        return obs;
    }

private:
    std::size_t vocab_, objectives_, horizon_;
    std::vector<double> table_;
};

/// Tokens 0..N-1 each maximise one objective and score zero elsewhere; token N is
/// a balanced compromise lying outside (convex) or inside (nonconvex) the hull of
/// the specialists; any further tokens are seeded random trade-offs.
inline TokenTradeEnv make_env(const EnvSpec& spec) {
    require(spec.objectives >= 1, errc::invalid_input, "need at least one objective");
    require(spec.vocab >= spec.objectives + 1, errc::invalid_input, "vocab must be at least objectives + 1");
    const std::size_t v = spec.vocab, n = spec.objectives;
    std::vector<double> table(v * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) table[i * n + i] = 1.0;
    const double balanced_total = spec.shape == FrontierShape::convex ? 1.2 : 0.8;
    for (std::size_t i = 0; i < n; ++i) table[n * n + i] = n == 1 ? 0.6 : balanced_total / static_cast<double>(n);
    RngStream rng(spec.seed, 0xE9);
    for (std::size_t t = n + 1; t < v; ++t) {
        std::vector<double> dir(n);
        double total = 0.0;
        for (auto& d : dir) {
            d = -std::log(std::max(rng.uniform(), 1e-12));
            total += d;
        }
        const double lo = spec.shape == FrontierShape::convex ? 0.7 : 0.4;
        const double scale = lo + 0.3 * rng.uniform();
        for (std::size_t i = 0; i < n; ++i) table[t * n + i] = scale * dir[i] / total;
    }
    return TokenTradeEnv(v, n, spec.horizon, std::move(table));
}

/// Best attainable return of each objective on its own.
inline std::vector<double> ideal_point(const TokenTradeEnv& env) {
    std::vector<double> z(env.objectives(), -std::numeric_limits<double>::infinity());
    for (std::size_t t = 0; t < env.vocab(); ++t)
        for (std::size_t i = 0; i < env.objectives(); ++i) z[i] = std::max(z[i], env.reward(t)[i]);
    for (auto& x : z) x *= static_cast<double>(env.horizon());
    return z;
}

/// Ideal point shifted up by `margin`, so every Tchebycheff gap stays positive.
inline std::vector<double> default_z_star(const TokenTradeEnv& env, double margin = 0.1) {
    auto z = ideal_point(env);
    for (auto& x : z) x += margin;
    return z;
}

// ---------------------------------------------------------------------------
// Scalarisation

inline double linear_scalarize(std::span<const double> rewards, const Preference& lambda) {
    require(rewards.size() == lambda.size(), errc::invalid_input, "linear_scalarize: dimension mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < rewards.size(); ++i) acc += lambda[i] * rewards[i];
    return acc;
}

/// min over objectives with positive weight of lambda_i * (R_i - z*_i).
inline double tch_value(std::span<const double> rewards, const Preference& lambda, std::span<const double> z_star) {
    require(rewards.size() == lambda.size() && z_star.size() == lambda.size(), errc::invalid_input,
            "tch_value: dimension mismatch");
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < rewards.size(); ++i) {
        if (lambda[i] <= 0.0) continue;
        best = std::min(best, lambda[i] * (rewards[i] - z_star[i]));
    }
    return best;
}

/// Smoothed indicator: softmax_i(lambda_i * (z*_i - R_i) / mu).
inline std::vector<double> stch_weights(std::span<const double> rewards, const Preference& lambda,
                                        std::span<const double> z_star, double mu) {
    require(mu > 0.0, errc::invalid_input, "smoothing mu must be positive");
    require(rewards.size() == lambda.size() && z_star.size() == lambda.size(), errc::invalid_input,
            "stch_weights: dimension mismatch");
    std::vector<double> gaps(rewards.size());
    for (std::size_t i = 0; i < gaps.size(); ++i) gaps[i] = lambda[i] * (z_star[i] - rewards[i]);
    return softmax(gaps, mu);
}

struct OmdState {
    std::vector<double> log_w;  // normalised so that exp(log_w) sums to one
    double alpha = 0.1;
    std::vector<double> z_star;
    double smoothing_mu = 1.0;
    bool robbins_monro = false;  // alpha / t step schedule
    bool lambda_in_update = true;  // false: lambda multiplies w in the advantage mix instead
    bool smooth_current = true;
    std::size_t step = 0;

    static OmdState uniform(std::size_t n, double alpha, std::vector<double> z_star) {
        OmdState s;
        s.log_w.assign(n, -std::log(static_cast<double>(n)));
        s.alpha = alpha;
        s.z_star = std::move(z_star);
        return s;
    }

    std::vector<double> weights() const {
        std::vector<double> w(log_w.size());
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::exp(log_w[i]);
        return w;
    }

    /// Weights used to combine per-objective advantages: the accumulated OMD
    /// weights, multiplied by the smoothed indicator of the current batch when
    /// `smooth_current` is set, renormalised.
    std::vector<double> mixture(const Preference& lambda, std::span<const double> mean_rewards = {}) const {
        std::vector<double> scores = log_w;
        if (smooth_current && !mean_rewards.empty()) {
            require(mean_rewards.size() == scores.size(), errc::invalid_input, "mixture: dimension mismatch");
            for (std::size_t i = 0; i < scores.size(); ++i)
                scores[i] += lambda[i] * (z_star[i] - mean_rewards[i]) / smoothing_mu;
        }
        auto w = softmax(scores);
        if (lambda_in_update) return w;
        double total = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) total += (w[i] *= lambda[i]);
        if (total > 0.0)
            for (auto& x : w) x /= total;
        return w;
    }
};

/// log w_i += alpha * lambda_i * (z*_i - R_i), then renormalise onto the simplex.
inline OmdState omd_update(OmdState state, const Preference& lambda, std::span<const double> mean_rewards) {
    const std::size_t n = state.log_w.size();
    require(lambda.size() == n && mean_rewards.size() == n && state.z_star.size() == n, errc::invalid_input,
            "omd_update: dimension mismatch");
    for (double r : mean_rewards) require(std::isfinite(r), errc::training_diverged, "non-finite reward in OMD update");
    ++state.step;
    const double rate = state.robbins_monro ? state.alpha / static_cast<double>(state.step) : state.alpha;
    for (std::size_t i = 0; i < n; ++i) {
        const double gap = state.z_star[i] - mean_rewards[i];
        state.log_w[i] += rate * (state.lambda_in_update ? lambda[i] : 1.0) * gap;
    }
    const double top = *std::max_element(state.log_w.begin(), state.log_w.end());
    double total = 0.0;
    for (double x : state.log_w) total += std::exp(x - top);
    const double lse = top + std::log(total);
    for (auto& x : state.log_w) x -= lse;
    for (std::size_t i = 0; i < n; ++i) state.z_star[i] = std::max(state.z_star[i], mean_rewards[i]);
    return state;
}

/// Per-step sum_i w_i * A_i for a steps x N advantage table.
inline std::vector<double> mixed_advantage(std::span<const double> advantages, std::size_t objectives,
                                           std::span<const double> w) {
    require(w.size() == objectives && objectives > 0 && advantages.size() % objectives == 0, errc::invalid_input,
            "mixed_advantage: dimension mismatch");
    const std::size_t steps = advantages.size() / objectives;
    std::vector<double> out(steps, 0.0);
    for (std::size_t t = 0; t < steps; ++t)
        for (std::size_t i = 0; i < objectives; ++i) out[t] += w[i] * advantages[t * objectives + i];
    return out;
}

// ---------------------------------------------------------------------------
// Brute-force oracle over stationary per-step action distributions

enum class ScalarizerKind { linear, tch };

struct OracleResult {
    double value = 0.0;
    std::vector<double> distribution;  // over tokens
    std::vector<double> returns;       // per-objective episode return
};

namespace detail {

template <class Visit>
void for_each_distribution(std::size_t vocab, long divisions, Visit&& visit) {
    std::vector<long> counts(vocab, 0);
    std::vector<double> p(vocab);
    auto recurse = [&](auto&& self, std::size_t dim, long remaining) -> void {
        if (dim + 1 == vocab) {
            counts[dim] = remaining;
            for (std::size_t i = 0; i < vocab; ++i) p[i] = static_cast<double>(counts[i]) / static_cast<double>(divisions);
            visit(std::span<const double>(p));
            return;
        }
        for (long c = 0; c <= remaining; ++c) {
            counts[dim] = c;
            self(self, dim + 1, remaining - c);
        }
    };
    recurse(recurse, 0, divisions);
}

} // namespace detail

inline std::vector<double> expected_returns(const TokenTradeEnv& env, std::span<const double> distribution) {
    std::vector<double> r(env.objectives(), 0.0);
    for (std::size_t t = 0; t < env.vocab(); ++t)
        for (std::size_t i = 0; i < env.objectives(); ++i)
            r[i] += distribution[t] * env.reward(t)[i] * static_cast<double>(env.horizon());
    return r;
}

/// Best (or worst) scalarised expected return over per-step token distributions
/// on a lattice of the given resolution. Exact for linear scalarisation because
/// the optimum sits on a vertex, which the lattice contains.
inline OracleResult oracle_search(const TokenTradeEnv& env, const Preference& lambda, ScalarizerKind kind,
                                  std::span<const double> z_star, bool maximise = true, double resolution = 1e-2) {
    require(lambda.size() == env.objectives(), errc::invalid_input, "oracle: preference dimension mismatch");
    require(env.vocab() <= 6, errc::invalid_input, "oracle enumeration limited to vocab <= 6");
    const long divisions = std::lround(1.0 / resolution);
    OracleResult best;
    best.value = maximise ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity();
    detail::for_each_distribution(env.vocab(), divisions, [&](std::span<const double> p) {
        const auto r = expected_returns(env, p);
        const double v = kind == ScalarizerKind::linear ? linear_scalarize(r, lambda) : tch_value(r, lambda, z_star);
        if (maximise ? v > best.value + 1e-12 : v < best.value - 1e-12) {
            best.value = v;
            best.distribution.assign(p.begin(), p.end());
            best.returns = r;
        }
    });
    return best;
}

inline double oracle_best(const TokenTradeEnv& env, const Preference& lambda, ScalarizerKind kind,
                          std::span<const double> z_star) {
    return oracle_search(env, lambda, kind, z_star).value;
}

inline double oracle_worst(const TokenTradeEnv& env, const Preference& lambda, ScalarizerKind kind,
                           std::span<const double> z_star) {
    return oracle_search(env, lambda, kind, z_star, false).value;
}

/// Position of `value` between the worst and best attainable scalarised returns.
inline double attainment(double value, double best, double worst) {
    if (best - worst <= 1e-12) return 1.0;
    return (value - worst) / (best - worst);
}

} // namespace hoe
