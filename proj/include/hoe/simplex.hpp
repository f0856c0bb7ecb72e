#pragma once

// Preference-vector geometry on the probability simplex.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hoe/error.hpp"

namespace hoe {

class Preference {
public:
    Preference() = default;

    /// Validating constructor; see validate().
    explicit Preference(std::vector<double> weights);

    std::size_t size() const noexcept { return weights_.size(); }
    double operator[](std::size_t i) const noexcept { return weights_[i]; }
    std::span<const double> weights() const noexcept { return weights_; }
    const std::vector<double>& vec() const noexcept { return weights_; }

    /// Zero-extends to `dims` objectives.
    Preference padded(std::size_t dims) const {
        require(dims >= weights_.size(), errc::invalid_input, "cannot pad preference to fewer objectives");
        Preference out = *this;
        out.weights_.resize(dims, 0.0);
        return out;
    }

    std::optional<std::size_t> one_hot_index() const noexcept {
        for (std::size_t i = 0; i < weights_.size(); ++i)
            if (weights_[i] == 1.0) return i;
        return std::nullopt;
    }

    friend bool operator==(const Preference&, const Preference&) = default;

private:
    std::vector<double> weights_;
};

inline Preference validate(std::span<const double> v) {
    require(!v.empty(), errc::not_on_simplex, "empty preference");
    std::vector<double> w(v.begin(), v.end());
    double total = 0.0;
    for (auto& x : w) {
        require(std::isfinite(x), errc::not_on_simplex, "non-finite preference weight");
        require(x >= 0.0, errc::not_on_simplex, "negative preference weight " + std::to_string(x));
        if (x == 0.0) x = 0.0;  // drops the sign of -0.0
        total += x;
    }
    require(std::abs(total - 1.0) <= 1e-6, errc::not_on_simplex,
            "preference weights sum to " + std::to_string(total));
    if (total != 1.0)
        for (auto& x : w) x /= total;
    return Preference(std::move(w));
}

inline Preference::Preference(std::vector<double> weights) : weights_(std::move(weights)) {
    double total = 0.0;
    for (auto& x : weights_) {
        require(std::isfinite(x) && x >= 0.0 && x <= 1.0 + 1e-9, errc::not_on_simplex,
                "preference weight out of range");
        if (x == 0.0) x = 0.0;
        total += x;
    }
    require(!weights_.empty() && std::abs(total - 1.0) <= 1e-9, errc::not_on_simplex,
            "preference weights sum to " + std::to_string(total));
}

/// Validates after renormalising; accepts rounded listings such as (0.33, 0.33, 0.33).
inline Preference normalized_preference(std::vector<double> v, double slack = 0.02) {
    double total = std::accumulate(v.begin(), v.end(), 0.0);
    require(total > 0.0 && std::abs(total - 1.0) <= slack, errc::not_on_simplex,
            "preference too far from the simplex to renormalise");
    for (auto& x : v) x /= total;
    return validate(v);
}

/// All lattice points of the simplex with spacing `step`, lexicographically ascending.
inline std::vector<Preference> grid(std::size_t n_objectives, double step) {
    require(n_objectives >= 2, errc::invalid_input, "grid needs at least two objectives");
    require(step > 0.0 && step <= 1.0, errc::invalid_step, "step must lie in (0, 1]");
    const double inv = 1.0 / step;
    const long divisions = std::lround(inv);
    require(divisions >= 1 && std::abs(static_cast<double>(divisions) * step - 1.0) <= 1e-9, errc::invalid_step,
            "step " + std::to_string(step) + " does not divide 1");

    std::vector<Preference> out;
    std::vector<long> counts(n_objectives, 0);
    // Depth-first enumeration of compositions in ascending lexicographic order.
    auto recurse = [&](auto&& self, std::size_t dim, long remaining) -> void {
        if (dim + 1 == n_objectives) {
            counts[dim] = remaining;
            std::vector<double> w(n_objectives);
            for (std::size_t i = 0; i < n_objectives; ++i)
                w[i] = static_cast<double>(counts[i]) / static_cast<double>(divisions);
            out.push_back(normalized_preference(std::move(w), 1e-9));
            return;
        }
        for (long c = 0; c <= remaining; ++c) {
            counts[dim] = c;
            self(self, dim + 1, remaining - c);
        }
    };
    recurse(recurse, 0, divisions);
    return out;
}

/// The fixed 13-point three-objective evaluation set (rounded entries renormalised).
inline std::vector<Preference> eval_set_3obj() {
    static const double listed[13][3] = {
        {0.0, 0.0, 1.0}, {0.0, 1.0, 0.0}, {0.1, 0.1, 0.8}, {0.1, 0.8, 0.1}, {0.2, 0.2, 0.6},
        {0.2, 0.4, 0.4}, {0.2, 0.6, 0.2}, {0.33, 0.33, 0.33}, {0.4, 0.4, 0.2}, {0.4, 0.2, 0.4},
        {0.6, 0.2, 0.2}, {0.8, 0.1, 0.1}, {1.0, 0.0, 0.0},
    };
    std::vector<Preference> out;
    out.reserve(13);
    for (const auto& row : listed) out.push_back(normalized_preference({row[0], row[1], row[2]}));
    return out;
}

inline double euclidean_distance(std::span<const double> a, std::span<const double> b) {
    require(a.size() == b.size(), errc::invalid_input, "distance between vectors of different length");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(acc);
}

/// Indices of the k closest registry entries; ties resolve to the lower index.
inline std::vector<std::size_t> nearest_experts(const Preference& user, std::span<const Preference> registry,
                                                std::size_t k) {
    require(!registry.empty(), errc::empty_registry, "no experts registered");
    require(k >= 1 && k <= registry.size(), errc::invalid_input,
            "k=" + std::to_string(k) + " with registry of " + std::to_string(registry.size()));
    std::vector<double> dist(registry.size());
    for (std::size_t i = 0; i < registry.size(); ++i) dist[i] = euclidean_distance(user.weights(), registry[i].weights());
    std::vector<std::size_t> idx(registry.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
    idx.resize(k);
    return idx;
}

struct ConvexCoords {
    std::vector<double> weights;  // one per selected point
    bool projected = false;       // true when the user point was not exactly representable
    double residual = 0.0;        // Euclidean reconstruction error
};

struct RoutingAssignment {
    std::vector<std::size_t> selected;  // indices into the expert preference registry
    std::vector<double> omega_r;        // dense over the registry, nonzero only at `selected`
    bool projected = false;
};

namespace detail {

// Solves a small dense system in place; returns false if numerically singular.
inline bool solve_dense(std::vector<double> a, std::vector<double>& b, std::size_t n) {
    double scale = 0.0;
    for (double v : a) scale = std::max(scale, std::abs(v));
    if (scale == 0.0) return n == 0;
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::abs(a[r * n + col]) > std::abs(a[pivot * n + col])) pivot = r;
        if (std::abs(a[pivot * n + col]) <= 1e-12 * scale) return false;
        if (pivot != col) {
            for (std::size_t c = 0; c < n; ++c) std::swap(a[col * n + c], a[pivot * n + c]);
            std::swap(b[col], b[pivot]);
        }
        for (std::size_t r = col + 1; r < n; ++r) {
            const double f = a[r * n + col] / a[col * n + col];
            if (f == 0.0) continue;
            for (std::size_t c = col; c < n; ++c) a[r * n + c] -= f * a[col * n + c];
            b[r] -= f * b[col];
        }
    }
    for (std::size_t i = n; i-- > 0;) {
        double acc = b[i];
        for (std::size_t c = i + 1; c < n; ++c) acc -= a[i * n + c] * b[c];
        b[i] = acc / a[i * n + i];
    }
    return true;
}

// Least-squares affine coordinates of `user` over `points` (weights sum to one).
// Returns nullopt when the points are affinely dependent.
inline std::optional<std::vector<double>> affine_coords(std::span<const double> user,
                                                        const std::vector<std::span<const double>>& points) {
    const std::size_t k = points.size();
    const std::size_t dims = user.size();
    if (k == 1) return std::vector<double>{1.0};
    const std::size_t m = k - 1;
    std::vector<double> gram(m * m, 0.0), rhs(m, 0.0);
    for (std::size_t a = 0; a < m; ++a) {
        for (std::size_t d = 0; d < dims; ++d) {
            const double da = points[a + 1][d] - points[0][d];
            rhs[a] += da * (user[d] - points[0][d]);
            for (std::size_t b = 0; b < m; ++b) gram[a * m + b] += da * (points[b + 1][d] - points[0][d]);
        }
    }
    double diag_max = 0.0;
    for (std::size_t a = 0; a < m; ++a) diag_max = std::max(diag_max, gram[a * m + a]);
    for (std::size_t a = 0; a < m; ++a)
        if (gram[a * m + a] <= 1e-14 * std::max(diag_max, 1e-300)) return std::nullopt;
    if (!solve_dense(gram, rhs, m)) return std::nullopt;
    std::vector<double> w(k);
    w[0] = 1.0 - std::accumulate(rhs.begin(), rhs.end(), 0.0);
    for (std::size_t a = 0; a < m; ++a) w[a + 1] = rhs[a];
    return w;
}

inline double reconstruction_error(std::span<const double> user, const std::vector<std::span<const double>>& points,
                                   std::span<const double> w) {
    double acc = 0.0;
    for (std::size_t d = 0; d < user.size(); ++d) {
        double v = 0.0;
        for (std::size_t i = 0; i < points.size(); ++i) v += w[i] * points[i][d];
        acc += (v - user[d]) * (v - user[d]);
    }
    return std::sqrt(acc);
}

inline void clean_simplex(std::vector<double>& w) {
    for (auto& x : w)
        if (x < 0.0) x = 0.0;
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    for (auto& x : w) x /= total;
}

} // namespace detail

/// Closest point of the convex hull of `selected` to `user`: exhaustive active-set
/// search over subsets, exact for the handful of points routing deals with.
inline ConvexCoords project_onto_hull(const Preference& user, std::span<const Preference> selected) {
    const std::size_t k = selected.size();
    require(k >= 1 && k <= 16, errc::invalid_input, "projection supports 1..16 points");
    ConvexCoords best;
    best.residual = std::numeric_limits<double>::infinity();
    for (unsigned mask = 1; mask < (1u << k); ++mask) {
        std::vector<std::span<const double>> pts;
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < k; ++i)
            if (mask & (1u << i)) {
                pts.push_back(selected[i].weights());
                members.push_back(i);
            }
        auto w = detail::affine_coords(user.weights(), pts);
        if (!w) continue;
        if (std::any_of(w->begin(), w->end(), [](double x) { return x < -1e-12; })) continue;
        detail::clean_simplex(*w);
        const double err = detail::reconstruction_error(user.weights(), pts, *w);
        if (err < best.residual - 1e-15) {
            best.residual = err;
            best.weights.assign(k, 0.0);
            for (std::size_t i = 0; i < members.size(); ++i) best.weights[members[i]] = (*w)[i];
        }
    }
    best.projected = true;
    return best;
}

/// Barycentric coordinates of `user` over `selected`. Falls back to the
/// constrained least-squares projection (flagged) when a coordinate would be negative.
inline ConvexCoords convex_coords(const Preference& user, std::span<const Preference> selected) {
    require(!selected.empty(), errc::empty_registry, "no points selected");
    std::vector<std::span<const double>> pts;
    for (const auto& p : selected) {
        require(p.size() == user.size(), errc::invalid_input, "preference dimension mismatch");
        pts.push_back(p.weights());
    }
    auto w = detail::affine_coords(user.weights(), pts);
    if (!w) fail(errc::degenerate_simplex, "selected preferences are affinely dependent");
    const bool feasible = std::all_of(w->begin(), w->end(), [](double x) { return x >= -1e-12; });
    if (feasible) {
        detail::clean_simplex(*w);
        ConvexCoords out;
        out.residual = detail::reconstruction_error(user.weights(), pts, *w);
        out.projected = out.residual > 1e-9;
        out.weights = std::move(*w);
        return out;
    }
    return project_onto_hull(user, selected);
}

} // namespace hoe
