#pragma once

// Dense numeric kernel: float32 row-major matrices, one-sided Jacobi SVD,
// temperature softmax and a reproducible counter-free RNG stream.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hoe/error.hpp"

namespace hoe {

class Matrix {
public:
    Matrix() = default;

    Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0f) {
        require(rows > 0 && cols > 0, errc::invalid_input, "matrix dimensions must be positive");
    }

    Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        require(rows > 0 && cols > 0, errc::invalid_input, "matrix dimensions must be positive");
        require(data_.size() == rows * cols, errc::invalid_input,
                "matrix data length " + std::to_string(data_.size()) + " != " + std::to_string(rows * cols));
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0f;
        return m;
    }

    static Matrix diagonal(std::span<const double> d) {
        Matrix m(d.size(), d.size());
        for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = static_cast<float>(d[i]);
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    float& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    float operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<float> data() noexcept { return data_; }
    std::span<const float> data() const noexcept { return data_; }
    std::span<const float> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

    bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

    bool all_finite() const noexcept {
        return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
    }

    friend bool operator==(const Matrix& a, const Matrix& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<float> data_;
};

inline std::string shape_string(const Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

/// y = m * x, accumulated in double.
inline std::vector<double> matvec(const Matrix& m, std::span<const double> x) {
    require(x.size() == m.cols(), errc::invalid_input,
            "matvec: input length " + std::to_string(x.size()) + " vs matrix " + shape_string(m));
    std::vector<double> y(m.rows(), 0.0);
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const auto row = m.row(r);
        double acc = 0.0;
        for (std::size_t c = 0; c < row.size(); ++c) acc += static_cast<double>(row[c]) * x[c];
        y[r] = acc;
    }
    return y;
}

/// y = m^T * x, accumulated in double.
inline std::vector<double> matvec_transposed(const Matrix& m, std::span<const double> x) {
    require(x.size() == m.rows(), errc::invalid_input, "matvec_transposed: shape mismatch");
    std::vector<double> y(m.cols(), 0.0);
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const auto row = m.row(r);
        const double xr = x[r];
        if (xr == 0.0) continue;
        for (std::size_t c = 0; c < row.size(); ++c) y[c] += static_cast<double>(row[c]) * xr;
    }
    return y;
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.rows(), errc::invalid_input,
            "matmul: " + shape_string(a) + " * " + shape_string(b));
    Matrix out(a.rows(), b.cols());
    std::vector<double> acc(b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            const auto brow = b.row(k);
            for (std::size_t j = 0; j < b.cols(); ++j) acc[j] += aik * brow[j];
        }
        for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) = static_cast<float>(acc[j]);
    }
    return out;
}

inline Matrix transpose(const Matrix& m) {
    Matrix t(m.cols(), m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < m.cols(); ++c) t(c, r) = m(r, c);
    return t;
}

inline Matrix scaled(const Matrix& m, double factor) {
    Matrix out = m;
    for (auto& v : out.data()) v = static_cast<float>(v * factor);
    return out;
}

inline Matrix subtract(const Matrix& a, const Matrix& b) {
    require(a.same_shape(b), errc::invalid_input, "subtract: shape mismatch");
    Matrix out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
    return out;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
    require(a.same_shape(b), errc::invalid_input, "add: shape mismatch");
    Matrix out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
    return out;
}

inline double frobenius_norm(const Matrix& m) {
    double acc = 0.0;
    for (float v : m.data()) acc += static_cast<double>(v) * v;
    return std::sqrt(acc);
}

inline double frobenius_distance(const Matrix& a, const Matrix& b) {
    require(a.same_shape(b), errc::invalid_input, "frobenius_distance: shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a.data()[i]) - b.data()[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

// ---------------------------------------------------------------------------
// SVD

struct SvdResult {
    Matrix u;               // rows x k, orthonormal columns
    std::vector<double> s;  // k, non-increasing
    Matrix vt;              // k x cols, orthonormal rows
};

namespace detail {

// Column-major working copy in double; one-sided Jacobi (Hestenes) on a tall matrix.
struct JacobiWork {
    std::size_t m = 0, n = 0;
    std::vector<double> a;  // m x n, column j at a[j*m]
    std::vector<double> v;  // n x n, column j at v[j*n]
};

inline void hestenes(JacobiWork& w) {
    const std::size_t m = w.m, n = w.n;
    w.v.assign(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) w.v[i * n + i] = 1.0;
    constexpr double eps = 1e-15;
    for (int sweep = 0; sweep < 100; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double* cp = &w.a[p * m];
                double* cq = &w.a[q * m];
                double alpha = 0.0, beta = 0.0, gamma = 0.0;
                for (std::size_t i = 0; i < m; ++i) {
                    alpha += cp[i] * cp[i];
                    beta += cq[i] * cq[i];
                    gamma += cp[i] * cq[i];
                }
                if (gamma == 0.0 || std::abs(gamma) <= eps * std::sqrt(alpha * beta)) continue;
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (std::size_t i = 0; i < m; ++i) {
                    const double x = cp[i], y = cq[i];
                    cp[i] = c * x - s * y;
                    cq[i] = s * x + c * y;
                }
                double* vp = &w.v[p * n];
                double* vq = &w.v[q * n];
                for (std::size_t i = 0; i < n; ++i) {
                    const double x = vp[i], y = vq[i];
                    vp[i] = c * x - s * y;
                    vq[i] = s * x + c * y;
                }
            }
        }
        if (!rotated) break;
    }
}

// Fill zero columns of an m x k column-major basis so that all k columns are orthonormal.
inline void complete_orthonormal(std::vector<double>& basis, std::size_t m, std::size_t k,
                                 const std::vector<bool>& valid) {
    std::size_t candidate = 0;
    for (std::size_t j = 0; j < k; ++j) {
        if (valid[j]) continue;
        double* col = &basis[j * m];
        while (true) {
            require(candidate < m, errc::invalid_input, "svd: failed to complete orthonormal basis");
            std::fill(col, col + m, 0.0);
            col[candidate++] = 1.0;
            for (int pass = 0; pass < 2; ++pass) {
                for (std::size_t o = 0; o < k; ++o) {
                    if (o == j || (!valid[o] && o > j)) continue;
                    const double* other = &basis[o * m];
                    double dot = 0.0;
                    for (std::size_t i = 0; i < m; ++i) dot += col[i] * other[i];
                    for (std::size_t i = 0; i < m; ++i) col[i] -= dot * other[i];
                }
            }
            double norm = 0.0;
            for (std::size_t i = 0; i < m; ++i) norm += col[i] * col[i];
            norm = std::sqrt(norm);
            if (norm > 1e-6) {
                for (std::size_t i = 0; i < m; ++i) col[i] /= norm;
                break;
            }
        }
    }
}

} // namespace detail

/// Thin SVD, k = min(rows, cols).
inline SvdResult svd(const Matrix& input) {
    require(!input.empty(), errc::invalid_input, "svd of empty matrix");
    require(input.all_finite(), errc::invalid_input, "svd input contains non-finite values");

    const bool wide = input.cols() > input.rows();
    const std::size_t m = wide ? input.cols() : input.rows();
    const std::size_t n = wide ? input.rows() : input.cols();

    detail::JacobiWork w;
    w.m = m;
    w.n = n;
    w.a.resize(m * n);
    for (std::size_t r = 0; r < input.rows(); ++r)
        for (std::size_t c = 0; c < input.cols(); ++c) {
            const double v = input(r, c);
            if (wide) w.a[r * m + c] = v;  // column r of the transpose
            else w.a[c * m + r] = v;
        }
    detail::hestenes(w);

    std::vector<double> sigma(n);
    for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < m; ++i) acc += w.a[j * m + i] * w.a[j * m + i];
        sigma[j] = std::sqrt(acc);
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sigma[a] > sigma[b]; });

    const double smax = sigma[order[0]];
    const double tiny = std::max(smax, 1.0) * 1e-13;
    std::vector<double> left(m * n, 0.0), right(n * n, 0.0);
    std::vector<bool> valid(n, false);
    std::vector<double> s(n);
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t src = order[j];
        s[j] = sigma[src];
        std::copy_n(&w.v[src * n], n, &right[j * n]);
        if (sigma[src] > tiny) {
            for (std::size_t i = 0; i < m; ++i) left[j * m + i] = w.a[src * m + i] / sigma[src];
            valid[j] = true;
        } else {
            s[j] = 0.0;
        }
    }
    detail::complete_orthonormal(left, m, n, valid);

    // left: m x n (tall side), right: n x n. For the wide case the roles swap.
    SvdResult out;
    if (!wide) {
        out.u = Matrix(input.rows(), n);
        out.vt = Matrix(n, input.cols());
        for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t i = 0; i < m; ++i) out.u(i, j) = static_cast<float>(left[j * m + i]);
            for (std::size_t i = 0; i < n; ++i) out.vt(j, i) = static_cast<float>(right[j * n + i]);
        }
    } else {
        out.u = Matrix(input.rows(), n);
        out.vt = Matrix(n, input.cols());
        for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t i = 0; i < n; ++i) out.u(i, j) = static_cast<float>(right[j * n + i]);
            for (std::size_t i = 0; i < m; ++i) out.vt(j, i) = static_cast<float>(left[j * m + i]);
        }
    }
    out.s = std::move(s);
    return out;
}

struct LowRankFactors {
    Matrix down;  // rank x cols
    Matrix up;    // rows x rank
};

/// Best rank-`rank` factorisation with sqrt(s) split evenly between the factors.
inline LowRankFactors truncate(const SvdResult& svd_result, std::size_t rank) {
    require(rank >= 1, errc::rank_too_large, "rank must be positive");
    require(rank <= svd_result.s.size(), errc::rank_too_large,
            "rank " + std::to_string(rank) + " exceeds " + std::to_string(svd_result.s.size()) + " singular values");
    LowRankFactors f{Matrix(rank, svd_result.vt.cols()), Matrix(svd_result.u.rows(), rank)};
    for (std::size_t k = 0; k < rank; ++k) {
        const double root = std::sqrt(svd_result.s[k]);
        for (std::size_t c = 0; c < svd_result.vt.cols(); ++c)
            f.down(k, c) = static_cast<float>(root * svd_result.vt(k, c));
        for (std::size_t r = 0; r < svd_result.u.rows(); ++r)
            f.up(r, k) = static_cast<float>(svd_result.u(r, k) * root);
    }
    return f;
}

// ---------------------------------------------------------------------------
// Softmax

inline std::vector<double> softmax(std::span<const double> scores, double temperature = 1.0) {
    require(temperature > 0.0, errc::invalid_input, "softmax temperature must be positive");
    require(!scores.empty(), errc::invalid_input, "softmax of empty vector");
    const double top = *std::max_element(scores.begin(), scores.end());
    require(std::isfinite(top), errc::invalid_input, "softmax scores must be finite");
    std::vector<double> out(scores.size());
    double total = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        require(std::isfinite(scores[i]), errc::invalid_input, "softmax scores must be finite");
        out[i] = std::exp((scores[i] - top) / temperature);
        total += out[i];
    }
    for (auto& v : out) v /= total;
    return out;
}

inline std::vector<double> log_softmax(std::span<const double> scores) {
    const double top = *std::max_element(scores.begin(), scores.end());
    double total = 0.0;
    for (double s : scores) total += std::exp(s - top);
    const double lse = top + std::log(total);
    std::vector<double> out(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) out[i] = scores[i] - lse;
    return out;
}

// ---------------------------------------------------------------------------
// RNG

/// xoshiro256** seeded through splitmix64 from (seed, stream_id).
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t stream_id = 0) : seed_(seed), stream_id_(stream_id) {
        std::uint64_t x = seed ^ (0x9E3779B97F4A7C15ull * (stream_id + 1));
        for (auto& word : state_) word = splitmix(x);
    }

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream_id() const noexcept { return stream_id_; }

    /// An independent stream derived from this one's identity.
    RngStream derive(std::uint64_t child) const {
        return RngStream(seed_, stream_id_ * 0x100000001B3ull + child + 1);
    }

    std::uint64_t next_u64() noexcept {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform in [0, 1).
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double normal() noexcept {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) noexcept { return (x << k) | (x >> (64 - k)); }
    static std::uint64_t splitmix(std::uint64_t& x) noexcept {
        std::uint64_t z = (x += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    std::uint64_t seed_;
    std::uint64_t stream_id_;
    std::uint64_t state_[4]{};
};

inline Matrix random_matrix(std::size_t rows, std::size_t cols, RngStream& rng, double stddev) {
    Matrix m(rows, cols);
    for (auto& v : m.data()) v = static_cast<float>(rng.normal() * stddev);
    return m;
}

inline std::size_t sample_categorical(std::span<const double> probs, RngStream& rng) {
    require(!probs.empty(), errc::invalid_distribution, "empty distribution");
    double total = 0.0;
    for (double p : probs) {
        require(std::isfinite(p) && p >= 0.0, errc::invalid_distribution, "negative or non-finite probability");
        total += p;
    }
    require(std::abs(total - 1.0) <= 1e-6, errc::invalid_distribution,
            "probabilities sum to " + std::to_string(total));
    const double u = rng.uniform() * total;
    double acc = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (probs[i] <= 0.0) continue;
        last_positive = i;
        acc += probs[i];
        if (u < acc) return i;
    }
    return last_positive;
}

} // namespace hoe
