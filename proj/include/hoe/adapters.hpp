#pragma once

// Objective vectors (finetuned - base weight deltas), task-SVD compression into
// low-rank experts, rescale calibration and preference-weighted merging.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "hoe/numkernel.hpp"
#include "hoe/simplex.hpp"

namespace hoe {

/// Adapted weight matrices keyed by module path.
using WeightMap = std::map<std::string, Matrix>;

struct ObjectiveVector {
    WeightMap deltas;

    std::size_t total_entries() const {
        std::size_t n = 0;
        for (const auto& [_, m] : deltas) n += m.size();
        return n;
    }
};

struct LoraExpert {
    std::string id;
    Preference preference;
    std::size_t rank = 0;  // requested rank; a module may hold fewer when clamped
    double rescale = 1.0;
    std::map<std::string, LowRankFactors> modules;
};

inline void require_compatible(const WeightMap& a, const WeightMap& b, const char* what) {
    require(a.size() == b.size(), errc::incompatible_models, std::string(what) + ": module sets differ");
    for (const auto& [path, m] : a) {
        auto it = b.find(path);
        require(it != b.end(), errc::incompatible_models, std::string(what) + ": missing module " + path);
        require(it->second.same_shape(m), errc::incompatible_models,
                std::string(what) + ": shape mismatch at " + path + " (" + shape_string(m) + " vs " +
                    shape_string(it->second) + ")");
    }
}

inline ObjectiveVector objective_vector(const WeightMap& finetuned, const WeightMap& base) {
    require_compatible(finetuned, base, "objective_vector");
    ObjectiveVector tau;
    for (const auto& [path, w] : finetuned) tau.deltas.emplace(path, subtract(w, base.at(path)));
    return tau;
}

/// Keeps the round(keep_fraction * total) largest-magnitude entries across all
/// modules (one global threshold) and zeroes the rest.
inline ObjectiveVector magnitude_prune(const ObjectiveVector& tau, double keep_fraction) {
    require(keep_fraction > 0.0 && keep_fraction <= 1.0, errc::invalid_input, "keep_fraction must lie in (0, 1]");
    const std::size_t total = tau.total_entries();
    const auto keep = static_cast<std::size_t>(std::llround(keep_fraction * static_cast<double>(total)));
    if (keep >= total) return tau;

    struct Entry {
        float magnitude;
        std::size_t index;
    };
    std::vector<Entry> entries;
    entries.reserve(total);
    for (const auto& [_, m] : tau.deltas)
        for (float v : m.data()) entries.push_back({std::abs(v), entries.size()});
    auto larger = [](const Entry& a, const Entry& b) {
        return a.magnitude != b.magnitude ? a.magnitude > b.magnitude : a.index < b.index;
    };
    std::vector<bool> kept(total, false);
    if (keep > 0) {
        std::nth_element(entries.begin(), entries.begin() + static_cast<std::ptrdiff_t>(keep - 1), entries.end(), larger);
        for (std::size_t i = 0; i < keep; ++i) kept[entries[i].index] = true;
    }

    ObjectiveVector out = tau;
    std::size_t index = 0;
    for (auto& [_, m] : out.deltas)
        for (auto& v : m.data()) {
            if (!kept[index]) v = 0.0f;
            ++index;
        }
    return out;
}

struct TaskSvdOptions {
    std::size_t rank = 4;
    double keep_fraction = 1.0;
    double rescale = 1.0;
    // Lower the rank per module to min(d_in, d_out) instead of raising RankTooLarge.
    bool clamp_rank = false;
};

/// Prune, then per module keep the top singular triplets as a (down, up) pair.
inline LoraExpert task_svd(const ObjectiveVector& tau, const TaskSvdOptions& options, const Preference& preference,
                           std::string id) {
    require(options.rank >= 1, errc::rank_too_large, "rank must be positive");
    require(options.rescale >= 0.0, errc::invalid_input, "rescale must be non-negative");
    const ObjectiveVector pruned = options.keep_fraction < 1.0 ? magnitude_prune(tau, options.keep_fraction) : tau;

    LoraExpert expert;
    expert.id = std::move(id);
    expert.preference = preference;
    expert.rank = options.rank;
    expert.rescale = options.rescale;
    for (const auto& [path, delta] : pruned.deltas) {
        const std::size_t limit = std::min(delta.rows(), delta.cols());
        std::size_t rank = options.rank;
        if (rank > limit) {
            require(options.clamp_rank, errc::rank_too_large,
                    "rank " + std::to_string(rank) + " exceeds module " + path + " (" + shape_string(delta) + ")");
            rank = limit;
        }
        expert.modules.emplace(path, truncate(svd(delta), rank));
    }
    return expert;
}

inline ObjectiveVector to_dense(const LoraExpert& expert) {
    ObjectiveVector out;
    for (const auto& [path, f] : expert.modules) {
        Matrix m(f.up.rows(), f.down.cols());
        for (std::size_t r = 0; r < m.rows(); ++r)
            for (std::size_t c = 0; c < m.cols(); ++c) {
                double acc = 0.0;
                for (std::size_t k = 0; k < f.down.rows(); ++k) acc += static_cast<double>(f.up(r, k)) * f.down(k, c);
                m(r, c) = static_cast<float>(expert.rescale * acc);
            }
        out.deltas.emplace(path, std::move(m));
    }
    return out;
}

/// Picks the candidate rescale maximising `score`; ties go to the smallest candidate.
inline LoraExpert calibrate_rescale(const LoraExpert& expert, const std::function<double(const LoraExpert&)>& score,
                                    std::vector<double> candidates) {
    require(!candidates.empty(), errc::invalid_input, "no rescale candidates");
    std::sort(candidates.begin(), candidates.end());
    LoraExpert trial = expert;
    double best_score = -std::numeric_limits<double>::infinity();
    double best = candidates.front();
    for (double gamma : candidates) {
        require(gamma > 0.0, errc::invalid_input, "rescale candidates must be positive");
        trial.rescale = gamma;
        const double value = score(trial);
        if (value > best_score) {
            best_score = value;
            best = gamma;
        }
    }
    trial.rescale = best;
    return trial;
}

/// Default candidate grid 0.8, 0.9, ..., 2.0.
inline std::vector<double> default_rescale_candidates() {
    std::vector<double> out;
    for (int i = 8; i <= 20; ++i) out.push_back(i / 10.0);
    return out;
}

/// Weighted trim / elect-sign / disjoint-mean merge. Each entry takes the sign of
/// the lambda-weighted sum of the trimmed deltas and averages, weighted by lambda,
/// only the contributors that agree with it.
inline ObjectiveVector merge(const std::vector<ObjectiveVector>& taus, const Preference& lambda, double keep_fraction) {
    require(!taus.empty(), errc::incompatible_models, "merge of zero objective vectors");
    require(taus.size() == lambda.size(), errc::incompatible_models,
            "merge: " + std::to_string(taus.size()) + " objective vectors for a " + std::to_string(lambda.size()) +
                "-objective preference");
    for (std::size_t i = 1; i < taus.size(); ++i) require_compatible(taus[0].deltas, taus[i].deltas, "merge");

    std::vector<ObjectiveVector> trimmed;
    trimmed.reserve(taus.size());
    for (const auto& t : taus) trimmed.push_back(keep_fraction < 1.0 ? magnitude_prune(t, keep_fraction) : t);

    ObjectiveVector out;
    for (const auto& [path, shape] : taus[0].deltas) {
        Matrix merged(shape.rows(), shape.cols());
        for (std::size_t e = 0; e < merged.size(); ++e) {
            double elected = 0.0;
            for (std::size_t i = 0; i < taus.size(); ++i) elected += lambda[i] * trimmed[i].deltas.at(path).data()[e];
            if (elected == 0.0) continue;
            double num = 0.0, den = 0.0;
            for (std::size_t i = 0; i < taus.size(); ++i) {
                const double v = trimmed[i].deltas.at(path).data()[e];
                if (lambda[i] <= 0.0 || v == 0.0 || (v > 0.0) != (elected > 0.0)) continue;
                num += lambda[i] * v;
                den += lambda[i];
            }
            if (den > 0.0) merged.data()[e] = static_cast<float>(num / den);
        }
        out.deltas.emplace(path, std::move(merged));
    }
    return out;
}

/// Plain task arithmetic: sum_i lambda_i * tau_i.
inline ObjectiveVector weighted_sum(const std::vector<ObjectiveVector>& taus, const Preference& lambda) {
    require(!taus.empty() && taus.size() == lambda.size(), errc::incompatible_models, "weighted_sum: dimension mismatch");
    for (std::size_t i = 1; i < taus.size(); ++i) require_compatible(taus[0].deltas, taus[i].deltas, "weighted_sum");
    ObjectiveVector out;
    for (const auto& [path, shape] : taus[0].deltas) {
        Matrix m(shape.rows(), shape.cols());
        for (std::size_t e = 0; e < m.size(); ++e) {
            double acc = 0.0;
            for (std::size_t i = 0; i < taus.size(); ++i) acc += lambda[i] * taus[i].deltas.at(path).data()[e];
            m.data()[e] = static_cast<float>(acc);
        }
        out.deltas.emplace(path, std::move(m));
    }
    return out;
}

inline WeightMap apply_delta(const WeightMap& base, const ObjectiveVector& tau) {
    require_compatible(base, tau.deltas, "apply_delta");
    WeightMap out;
    for (const auto& [path, w] : base) out.emplace(path, add(w, tau.deltas.at(path)));
    return out;
}

} // namespace hoe
