#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "conewalk/errors.hpp"

namespace conewalk {

// Low-level kernels shared by the typed operations below and by the walk
// engine's allocation-free hot loop. Vector norm is L1 on the positive
// quadrant throughout.
namespace detail {

/// out = g * x (row-major g, d x d), returns |g x| (the plain entry sum,
/// valid because everything is nonnegative). out may not alias x.
inline double apply_matrix(std::span<const double> entries, std::size_t d,
                           std::span<const double> x, std::span<double> out) {
    double total = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        double acc = 0.0;
        const double* row = entries.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) acc += row[j] * x[j];
        out[i] = acc;
        total += acc;
    }
    return total;
}

}  // namespace detail

/// Point of the positive part of the unit L1 sphere: nonnegative
/// coordinates summing to one. The projective state of the walk.
class Direction {
  public:
    explicit Direction(std::vector<double> coords) : coords_(std::move(coords)) {
        if (coords_.size() < 2)
            throw ZeroVectorError("Direction: dimension must be >= 2");
        double sum = 0.0;
        for (double c : coords_) {
            if (!(c >= 0.0))
                throw ZeroVectorError("Direction: negative or NaN coordinate");
            sum += c;
        }
        if (std::abs(sum - 1.0) > 1e-12)
            throw ZeroVectorError("Direction: coordinates must sum to 1");
    }

    std::size_t dim() const { return coords_.size(); }
    const std::vector<double>& coords() const { return coords_; }
    double operator[](std::size_t i) const { return coords_[i]; }

    /// Barycenter (1/d, ..., 1/d).
    static Direction barycenter(std::size_t d) {
        return Direction(std::vector<double>(d, 1.0 / static_cast<double>(d)));
    }

    /// Vertex e_i of the simplex.
    static Direction vertex(std::size_t d, std::size_t i) {
        std::vector<double> c(d, 0.0);
        c.at(i) = 1.0;
        return Direction(std::move(c));
    }

  private:
    std::vector<double> coords_;
};

/// Allowable nonnegative d x d matrix (every row and every column has a
/// strictly positive entry) with cached column sums. Column sums are
/// accumulated in row-index order; that order is the determinism contract
/// for the cached values.
class PositiveMatrix {
  public:
    PositiveMatrix(std::size_t dim, std::vector<double> entries_row_major)
        : dim_(dim), entries_(std::move(entries_row_major)) {
        if (dim_ < 2) throw ConfigError("PositiveMatrix: dim must be >= 2");
        if (entries_.size() != dim_ * dim_)
            throw ConfigError("PositiveMatrix: entry count != dim^2");
        for (double e : entries_)
            if (!(e >= 0.0) || !std::isfinite(e))
                throw ConfigError("PositiveMatrix: entries must be finite and >= 0");
        col_sums_.assign(dim_, 0.0);
        std::vector<char> row_ok(dim_, 0);
        for (std::size_t i = 0; i < dim_; ++i)
            for (std::size_t j = 0; j < dim_; ++j) {
                const double e = entries_[i * dim_ + j];
                col_sums_[j] += e;
                if (e > 0.0) row_ok[i] = 1;
            }
        for (std::size_t i = 0; i < dim_; ++i)
            if (!row_ok[i])
                throw ConfigError("PositiveMatrix: zero row (not allowable)");
        for (std::size_t j = 0; j < dim_; ++j)
            if (!(col_sums_[j] > 0.0))
                throw ConfigError("PositiveMatrix: zero column (not allowable)");
    }

    std::size_t dim() const { return dim_; }
    double at(std::size_t i, std::size_t j) const { return entries_[i * dim_ + j]; }
    const std::vector<double>& entries() const { return entries_; }
    const std::vector<double>& col_sums() const { return col_sums_; }

    /// Entrywise scaling by c > 0 (projectively trivial; shifts the cocycle
    /// by log c).
    PositiveMatrix scaled(double c) const {
        if (!(c > 0.0)) throw ConfigError("PositiveMatrix::scaled: need c > 0");
        std::vector<double> e(entries_);
        for (double& v : e) v *= c;
        return PositiveMatrix(dim_, std::move(e));
    }

    static PositiveMatrix identity(std::size_t d) {
        std::vector<double> e(d * d, 0.0);
        for (std::size_t i = 0; i < d; ++i) e[i * d + i] = 1.0;
        return PositiveMatrix(d, std::move(e));
    }

  private:
    std::size_t dim_;
    std::vector<double> entries_;
    std::vector<double> col_sums_;
};

/// L1-normalize a nonnegative vector onto the simplex.
inline Direction normalize(const std::vector<double>& v) {
    double sum = 0.0;
    for (double c : v) {
        if (!(c >= 0.0)) throw ZeroVectorError("normalize: negative component");
        sum += c;
    }
    if (!(sum > 0.0)) throw ZeroVectorError("normalize: zero vector");
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / sum;
    return Direction(std::move(out));
}

/// Projective action g . x = gx / |gx|.
inline Direction act(const PositiveMatrix& g, const Direction& x) {
    std::vector<double> out(g.dim());
    const double norm =
        detail::apply_matrix(g.entries(), g.dim(), x.coords(), out);
    for (double& c : out) c /= norm;
    return Direction(std::move(out));
}

/// Cocycle rho(g, x) = log |g x| (nats). Additive under composition:
/// cocycle(g2 g1, x) = cocycle(g2, g1 . x) + cocycle(g1, x).
inline double cocycle(const PositiveMatrix& g, const Direction& x) {
    double total = 0.0;
    const std::size_t d = g.dim();
    for (std::size_t i = 0; i < d; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) acc += g.at(i, j) * x[j];
        total += acc;
    }
    return std::log(total);
}

/// Matrix norm sup_x |gx| = max column sum (L1 operator norm on the cone).
inline double matrix_norm(const PositiveMatrix& g) {
    return *std::max_element(g.col_sums().begin(), g.col_sums().end());
}

/// iota(g) = inf_x |gx| = min column sum; |gx| is linear in x so the
/// infimum over the simplex sits at a vertex.
inline double min_gain(const PositiveMatrix& g) {
    return *std::min_element(g.col_sums().begin(), g.col_sums().end());
}

/// N(g) = max(||g||, 1/iota(g)); always >= 1.
inline double size_N(const PositiveMatrix& g) {
    return std::max(matrix_norm(g), 1.0 / min_gain(g));
}

namespace detail {

// min_i x_i / x'_i with the boundary convention: 0/0 pairs are skipped,
// positive/0 contributes +inf (never the min), 0/positive contributes 0.
inline double ratio_min(const Direction& x, const Direction& xp) {
    double m = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < x.dim(); ++i) {
        const double a = x[i], b = xp[i];
        if (a == 0.0 && b == 0.0) continue;
        if (b == 0.0) continue;  // a/0 = +inf, cannot be the min
        m = std::min(m, a / b);
    }
    return std::isfinite(m) ? m : 0.0;
}

}  // namespace detail

/// Hilbert cross-ratio metric d(x, x') = (1 - m m') / (1 + m m') in [0, 1],
/// m = min_i <x,e_i>/<x',e_i>. Symmetric, zero iff x = x'; equals 1 when
/// the supports differ. The boundary convention for zero coordinates is
/// documented at ratio_min above (the interior formula does not extend
/// canonically to the boundary of the simplex).
inline double hilbert_metric(const Direction& x, const Direction& xp) {
    if (x.dim() != xp.dim())
        throw ConfigError("hilbert_metric: dimension mismatch");
    double p = detail::ratio_min(x, xp) * detail::ratio_min(xp, x);
    p = std::clamp(p, 0.0, 1.0);
    return (1.0 - p) / (1.0 + p);
}

/// Entry spread max g^{ij} / min g^{ij}; +infinity if any entry vanishes.
/// The uniform bound on this ratio over the support of a law is the
/// Furstenberg-Kesten constant kappa.
inline double fk_ratio(const PositiveMatrix& g) {
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (double e : g.entries()) {
        lo = std::min(lo, e);
        hi = std::max(hi, e);
    }
    if (lo == 0.0) return std::numeric_limits<double>::infinity();
    return hi / lo;
}

inline PositiveMatrix transpose(const PositiveMatrix& g) {
    const std::size_t d = g.dim();
    std::vector<double> e(d * d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) e[j * d + i] = g.at(i, j);
    return PositiveMatrix(d, std::move(e));
}

inline bool is_strictly_positive(const PositiveMatrix& g) {
    for (double e : g.entries())
        if (!(e > 0.0)) return false;
    return true;
}

/// Matrix product g2 * g1 (apply g1 first).
inline PositiveMatrix multiply(const PositiveMatrix& g2,
                               const PositiveMatrix& g1) {
    if (g2.dim() != g1.dim()) throw ConfigError("multiply: dimension mismatch");
    const std::size_t d = g2.dim();
    std::vector<double> e(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t k = 0; k < d; ++k) {
            const double a = g2.at(i, k);
            if (a == 0.0) continue;
            for (std::size_t j = 0; j < d; ++j) e[i * d + j] += a * g1.at(k, j);
        }
    return PositiveMatrix(d, std::move(e));
}

}  // namespace conewalk
