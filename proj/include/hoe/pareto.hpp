#pragma once

// Preference-grid sweeps, Pareto fronts, hypervolume and the baselines the
// hierarchical model is compared against (parameter soup, logit fusion and a
// dedicated dense policy per preference).

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "hoe/trainer.hpp"

namespace hoe {

struct ParetoPoint {
    Preference preference;
    std::vector<double> mean_rewards;
    std::size_t episodes = 1;
    std::string method;
    std::uint64_t seed = 0;
};

/// Builds the policy to evaluate at one preference.
using PolicyFactory = std::function<LogitFn(const Preference&)>;

/// Greedy rollouts at every grid preference. The environment is deterministic
/// under argmax decoding, so `seed` only tags the rows.
inline std::vector<ParetoPoint> sweep(const PolicyFactory& make_policy_at, const std::vector<Preference>& grid_points,
                                      const TokenTradeEnv& env, std::size_t episodes, std::uint64_t seed,
                                      const std::string& method) {
    require(!grid_points.empty(), errc::invalid_input, "sweep over an empty grid");
    require(episodes >= 1, errc::invalid_input, "sweep needs at least one episode");
    std::vector<ParetoPoint> out;
    out.reserve(grid_points.size());
    for (const auto& p : grid_points) {
        ParetoPoint point{p, evaluate_greedy(env, make_policy_at(p), episodes), episodes, method, seed};
        for (double r : point.mean_rewards) require(std::isfinite(r), errc::invalid_input, "non-finite sweep reward");
        out.push_back(std::move(point));
    }
    return out;
}

inline bool dominates(std::span<const double> a, std::span<const double> b) {
    bool strict = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] < b[i]) return false;
        if (a[i] > b[i]) strict = true;
    }
    return strict;
}

/// Non-dominated subset, input order preserved.
inline std::vector<std::vector<double>> pareto_front(const std::vector<std::vector<double>>& points) {
    std::vector<std::vector<double>> front;
    for (std::size_t i = 0; i < points.size(); ++i) {
        require(points[i].size() == points.front().size(), errc::invalid_input, "points differ in dimension");
        bool dominated = false;
        for (std::size_t j = 0; j < points.size() && !dominated; ++j)
            dominated = j != i && dominates(points[j], points[i]);
        if (!dominated) front.push_back(points[i]);
    }
    return front;
}

namespace detail {

inline double hypervolume_2d(std::vector<std::vector<double>> pts, std::span<const double> ref) {
    std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a[0] > b[0] || (a[0] == b[0] && a[1] > b[1]); });
    double volume = 0.0, covered = ref[1];
    for (const auto& p : pts) {
        if (p[1] <= covered) continue;
        volume += (p[0] - ref[0]) * (p[1] - covered);
        covered = p[1];
    }
    return volume;
}

// Slices along the last coordinate: between consecutive levels the covered
// region is the (d-1)-volume of every point reaching at least that level.
inline double hypervolume_rec(std::vector<std::vector<double>> pts, std::vector<double> ref) {
    const std::size_t d = ref.size();
    if (pts.empty()) return 0.0;
    if (d == 1) {
        double top = ref[0];
        for (const auto& p : pts) top = std::max(top, p[0]);
        return top - ref[0];
    }
    if (d == 2) return hypervolume_2d(std::move(pts), ref);
    std::sort(pts.begin(), pts.end(), [d](const auto& a, const auto& b) { return a[d - 1] > b[d - 1]; });
    std::vector<double> sub_ref(ref.begin(), ref.end() - 1);
    double volume = 0.0;
    std::vector<std::vector<double>> active;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        active.emplace_back(pts[i].begin(), pts[i].end() - 1);
        const double next = i + 1 < pts.size() ? pts[i + 1][d - 1] : ref[d - 1];
        const double height = pts[i][d - 1] - next;
        if (height > 0.0) volume += height * hypervolume_rec(pareto_front(active), sub_ref);
    }
    return volume;
}

} // namespace detail

/// Measure of the union of boxes [ref, p]; points not strictly above ref in
/// every coordinate are discarded.
inline double hypervolume(const std::vector<std::vector<double>>& points, std::span<const double> ref) {
    std::vector<std::vector<double>> kept;
    for (const auto& p : points) {
        require(p.size() == ref.size(), errc::invalid_input, "hypervolume: dimension mismatch");
        bool above = true;
        for (std::size_t i = 0; i < p.size(); ++i) above = above && p[i] > ref[i];
        if (above) kept.push_back(p);
    }
    return detail::hypervolume_rec(pareto_front(kept), std::vector<double>(ref.begin(), ref.end()));
}

/// Coordinate-wise minimum over all points minus 5% of the coordinate range.
inline std::vector<double> reference_point(const std::vector<std::vector<double>>& points) {
    require(!points.empty(), errc::invalid_input, "reference point of an empty set");
    const std::size_t n = points.front().size();
    std::vector<double> lo(n, std::numeric_limits<double>::infinity()), hi(n, -std::numeric_limits<double>::infinity());
    for (const auto& p : points)
        for (std::size_t i = 0; i < n; ++i) {
            lo[i] = std::min(lo[i], p[i]);
            hi[i] = std::max(hi[i], p[i]);
        }
    for (std::size_t i = 0; i < n; ++i) {
        const double range = hi[i] - lo[i];
        lo[i] -= 0.05 * (range > 0.0 ? range : 1.0);
    }
    return lo;
}

// ---------------------------------------------------------------------------
// Baselines

/// theta_pre + sum_i lambda_i tau_i as a plain dense network.
inline PolicyNetwork rs_soup(const PolicyNetwork& base, const std::vector<ObjectiveVector>& taus, const Preference& lambda) {
    return base.with_weights(apply_delta(base.weight_map(), weighted_sum(taus, lambda)));
}

/// sum_i lambda_i * logits_i(state).
inline std::vector<double> mod_fuse(const std::vector<PolicyNetwork>& policies, const Preference& lambda,
                                    std::span<const double> state) {
    require(!policies.empty() && policies.size() == lambda.size(), errc::invalid_input,
            "mod_fuse: one policy per objective required");
    std::vector<double> fused;
    for (std::size_t i = 0; i < policies.size(); ++i) {
        const auto l = forward(policies[i], state, NoMixer{}).logits;
        if (fused.empty()) fused.assign(l.size(), 0.0);
        require(l.size() == fused.size(), errc::incompatible_models, "mod_fuse: action spaces differ");
        for (std::size_t a = 0; a < l.size(); ++a) fused[a] += lambda[i] * l[a];
    }
    return fused;
}

inline LogitFn mod_policy(const std::vector<PolicyNetwork>& policies, const Preference& lambda) {
    return [policies, lambda](std::span<const double> obs) { return mod_fuse(policies, lambda, obs); };
}

/// A dense network trained with linear scalarisation at `lambda`, then swept.
inline ParetoPoint morlhf_oracle(const PolicyNetwork& base, const Preference& lambda, const TokenTradeEnv& env,
                                 const PpoConfig& cfg, std::size_t episodes = 1) {
    auto trained = train_dense(base, lambda, env, cfg);
    return {lambda, evaluate_greedy(env, dense_policy(trained.net), episodes), episodes, "morlhf", cfg.seed};
}

// ---------------------------------------------------------------------------
// Reports

struct SweepReport {
    std::vector<ParetoPoint> points;
    std::map<std::string, double> hypervolume;
    // wins[m] = grid preferences where the reference method's linear return >= m's
    std::map<std::string, std::size_t> wins;
    std::map<std::string, std::size_t> wins_tch;  // same under TCH, when z* is given
    std::vector<double> reference;
};

inline std::vector<std::vector<double>> rewards_of(const std::vector<ParetoPoint>& points, const std::string& method) {
    std::vector<std::vector<double>> out;
    for (const auto& p : points)
        if (p.method == method) out.push_back(p.mean_rewards);
    return out;
}

inline std::vector<std::string> methods_of(const std::vector<ParetoPoint>& points) {
    std::vector<std::string> out;
    for (const auto& p : points)
        if (std::find(out.begin(), out.end(), p.method) == out.end()) out.push_back(p.method);
    return out;
}

/// Hypervolume per method against one shared reference point, and per-preference
/// win counts of `lead` over every other method.
inline SweepReport summarize(std::vector<ParetoPoint> points, const std::string& lead, std::span<const double> z_star = {}) {
    SweepReport report;
    std::vector<std::vector<double>> all;
    for (const auto& p : points) all.push_back(p.mean_rewards);
    report.reference = reference_point(all);
    for (const auto& m : methods_of(points)) report.hypervolume[m] = hypervolume(rewards_of(points, m), report.reference);
    auto count = [&](const std::string& m, auto&& score) {
        std::size_t wins = 0;
        for (const auto& a : points) {
            if (a.method != lead) continue;
            for (const auto& b : points)
                if (b.method == m && b.preference == a.preference && score(a) >= score(b) - 1e-9) ++wins;
        }
        return wins;
    };
    for (const auto& m : methods_of(points)) {
        if (m == lead) continue;
        report.wins[m] = count(m, [](const ParetoPoint& p) { return linear_scalarize(p.mean_rewards, p.preference); });
        if (!z_star.empty())
            report.wins_tch[m] =
                count(m, [&](const ParetoPoint& p) { return tch_value(p.mean_rewards, p.preference, z_star); });
    }
    report.points = std::move(points);
    return report;
}

inline std::string format_number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

/// method, seed, episodes, lambda_0..N-1, reward_0..N-1, linear, tch
inline void write_csv(std::ostream& os, const std::vector<ParetoPoint>& points, std::span<const double> z_star) {
    require(!points.empty(), errc::invalid_input, "nothing to write");
    const std::size_t n = points.front().preference.size();
    os << "method,seed,episodes";
    for (std::size_t i = 0; i < n; ++i) os << ",lambda_" << i;
    for (std::size_t i = 0; i < n; ++i) os << ",reward_" << i;
    os << ",linear,tch\n";
    for (const auto& p : points) {
        os << p.method << ',' << p.seed << ',' << p.episodes;
        for (double x : p.preference.weights()) os << ',' << format_number(x);
        for (double x : p.mean_rewards) os << ',' << format_number(x);
        os << ',' << format_number(linear_scalarize(p.mean_rewards, p.preference)) << ','
           << format_number(tch_value(p.mean_rewards, p.preference, z_star)) << '\n';
    }
}

} // namespace hoe
