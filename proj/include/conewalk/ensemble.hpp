#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "conewalk/cone.hpp"
#include "conewalk/errors.hpp"
#include "conewalk/rng.hpp"

namespace conewalk {

struct SupportAtom {
    PositiveMatrix matrix;
    double prob;
};

/// Parametric generator: i.i.d. entries g^{ij} = exp(U[a, b]). Strictly
/// positive, so the contraction condition holds at step one, and the entry
/// spread is bounded by exp(b - a).
struct LogUniformGenerator {
    std::size_t dim;
    double a;
    double b;
};

/// Law mu of the i.i.d. matrix factors: finite support or a parametric
/// generator, plus a scalar centering scale (each sampled matrix is
/// multiplied by exp(log_scale); projectively trivial, shifts the walk by
/// log_scale per step).
class MatrixLaw {
  public:
    MatrixLaw(std::size_t dim, std::vector<SupportAtom> support,
              double log_scale = 0.0)
        : dim_(dim), body_(std::move(support)), log_scale_(log_scale) {
        const auto& atoms = std::get<std::vector<SupportAtom>>(body_);
        if (atoms.empty()) throw ConfigError("MatrixLaw: empty support");
        double total = 0.0;
        for (const auto& a : atoms) {
            if (a.matrix.dim() != dim_)
                throw ConfigError("MatrixLaw: atom dimension mismatch");
            if (!(a.prob >= 0.0)) throw ConfigError("MatrixLaw: negative prob");
            total += a.prob;
        }
        if (std::abs(total - 1.0) > 1e-12)
            throw ConfigError("MatrixLaw: probabilities must sum to 1");
    }

    MatrixLaw(LogUniformGenerator gen, double log_scale = 0.0)
        : dim_(gen.dim), body_(gen), log_scale_(log_scale) {
        if (!(gen.b >= gen.a)) throw ConfigError("MatrixLaw: need b >= a");
        if (gen.dim < 2) throw ConfigError("MatrixLaw: dim must be >= 2");
    }

    std::size_t dim() const { return dim_; }
    double log_scale() const { return log_scale_; }
    bool is_finite() const {
        return std::holds_alternative<std::vector<SupportAtom>>(body_);
    }
    const std::vector<SupportAtom>& atoms() const {
        return std::get<std::vector<SupportAtom>>(body_);
    }
    const LogUniformGenerator& generator() const {
        return std::get<LogUniformGenerator>(body_);
    }

    /// Support atoms with the centering scale already applied; these are
    /// the matrices the walk actually multiplies.
    std::vector<SupportAtom> scaled_atoms() const {
        const double c = std::exp(log_scale_);
        std::vector<SupportAtom> out;
        out.reserve(atoms().size());
        for (const auto& a : atoms()) out.push_back({a.matrix.scaled(c), a.prob});
        return out;
    }

    /// One draw from mu, scaled by exp(log_scale).
    PositiveMatrix sample(RandomStream& stream) const {
        if (is_finite()) {
            const auto& atoms_ = atoms();
            double u = stream.next_uniform();
            std::size_t idx = atoms_.size() - 1;
            for (std::size_t i = 0; i + 1 < atoms_.size(); ++i) {
                u -= atoms_[i].prob;
                if (u < 0.0) {
                    idx = i;
                    break;
                }
            }
            return atoms_[idx].matrix.scaled(std::exp(log_scale_));
        }
        const auto& gen = generator();
        const double c = std::exp(log_scale_);
        std::vector<double> e(dim_ * dim_);
        for (double& v : e) v = c * std::exp(stream.next_uniform(gen.a, gen.b));
        return PositiveMatrix(dim_, std::move(e));
    }

    /// Same law with log_scale decreased by lyapunov_hat, so the walk's
    /// log-norms shift by exactly -n * lyapunov_hat pathwise.
    MatrixLaw centered_by(double lyapunov_hat) const {
        MatrixLaw out = *this;
        out.log_scale_ -= lyapunov_hat;
        return out;
    }

  private:
    std::size_t dim_;
    std::variant<std::vector<SupportAtom>, LogUniformGenerator> body_;
    double log_scale_;
};

/// center per the zero-drift condition: g -> exp(-lyapunov_hat) g.
inline MatrixLaw center(const MatrixLaw& law, double lyapunov_hat) {
    if (!std::isfinite(lyapunov_hat))
        throw ConfigError("center: lyapunov_hat must be finite");
    return law.centered_by(lyapunov_hat);
}

namespace detail {

// Zero/positive pattern of a matrix, as a row-major bitmask. Patterns
// compose under boolean matrix product, so reachability of the all-ones
// pattern can be decided on patterns alone.
inline std::uint64_t pattern_of(const PositiveMatrix& g) {
    std::uint64_t p = 0;
    const std::size_t d = g.dim();
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
            if (g.at(i, j) > 0.0) p |= (std::uint64_t{1} << (i * d + j));
    return p;
}

inline std::uint64_t pattern_multiply(std::uint64_t a, std::uint64_t b,
                                      std::size_t d) {
    std::uint64_t out = 0;
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            for (std::size_t k = 0; k < d; ++k) {
                if ((a >> (i * d + k)) & 1 && (b >> (k * d + j)) & 1) {
                    out |= (std::uint64_t{1} << (i * d + j));
                    break;
                }
            }
        }
    return out;
}

}  // namespace detail

/// Smallest n <= horizon at which some length-n product of factors is
/// strictly positive; nullopt if none (the contraction condition fails up
/// to the horizon). Finite-support laws are decided exactly by breadth-
/// first search over zero/positive patterns; generator laws are probed by
/// simulation (our bundled generator is strictly positive at n = 1).
inline std::optional<int> verify_contraction(const MatrixLaw& law, int horizon,
                                             RandomStream stream = RandomStream(2)) {
    if (horizon < 1) throw ConfigError("verify_contraction: horizon >= 1");
    const std::size_t d = law.dim();
    if (d * d > 64)
        throw ConfigError("verify_contraction: dim too large for pattern search");
    const std::uint64_t full =
        (d * d == 64) ? ~std::uint64_t{0} : ((std::uint64_t{1} << (d * d)) - 1);
    if (law.is_finite()) {
        std::set<std::uint64_t> level;
        std::vector<std::uint64_t> atom_patterns;
        for (const auto& a : law.atoms()) {
            if (a.prob <= 0.0) continue;
            atom_patterns.push_back(detail::pattern_of(a.matrix));
        }
        for (std::uint64_t p : atom_patterns) {
            if (p == full) return 1;
            level.insert(p);
        }
        std::set<std::uint64_t> seen = level;
        for (int n = 2; n <= horizon; ++n) {
            std::set<std::uint64_t> next;
            for (std::uint64_t p : level)
                for (std::uint64_t q : atom_patterns) {
                    const std::uint64_t r = detail::pattern_multiply(q, p, d);
                    if (r == full) return n;
                    next.insert(r);
                }
            // pattern semigroup saturated without reaching all-ones:
            // no longer product can be strictly positive either
            std::size_t before = seen.size();
            seen.insert(next.begin(), next.end());
            if (seen.size() == before) return std::nullopt;
            level = std::move(next);
        }
        return std::nullopt;
    }
    const int runs = 32;
    std::optional<int> best;
    for (int r = 0; r < runs; ++r) {
        RandomStream s = stream.lane_stream(static_cast<std::uint64_t>(r));
        std::uint64_t p = 0;
        bool first = true;
        for (int n = 1; n <= horizon; ++n) {
            const std::uint64_t q = detail::pattern_of(law.sample(s));
            p = first ? q : detail::pattern_multiply(q, p, d);
            first = false;
            if (p == full) {
                if (!best || n < *best) best = n;
                break;
            }
        }
    }
    return best;
}

/// Moment of order 2 + delta of log N(g): exact weighted sum for finite
/// support (m ignored), Monte Carlo mean of m draws otherwise.
inline double estimate_moment(const MatrixLaw& law, double delta, long m,
                              RandomStream stream = RandomStream(3)) {
    if (!(delta > 0.0)) throw ConfigError("estimate_moment: delta must be > 0");
    if (m < 1) throw ConfigError("estimate_moment: m >= 1");
    const double p = 2.0 + delta;
    if (law.is_finite()) {
        double acc = 0.0;
        for (const auto& a : law.scaled_atoms())
            acc += a.prob * std::pow(std::log(size_N(a.matrix)), p);
        return acc;
    }
    double acc = 0.0;
    for (long i = 0; i < m; ++i) {
        RandomStream s = stream.lane_stream(static_cast<std::uint64_t>(i));
        acc += std::pow(std::log(size_N(law.sample(s))), p);
    }
    return acc / static_cast<double>(m);
}

struct KappaBound {
    double value;    // sup of fk_ratio over the support (may be +inf)
    bool exact;      // false when obtained by sampling a generator law
};

/// Furstenberg-Kesten constant of the law: max entry spread over the
/// support. Exact for finite support; for generator laws, an analytic
/// bound when available, otherwise a sampled estimate flagged as inexact.
inline KappaBound kappa_sup(const MatrixLaw& law,
                            RandomStream stream = RandomStream(5)) {
    if (law.is_finite()) {
        double k = 1.0;
        for (const auto& a : law.atoms())
            if (a.prob > 0.0) k = std::max(k, fk_ratio(a.matrix));
        return {k, true};
    }
    const auto& gen = law.generator();
    // entries exp(U[a,b]): the spread never exceeds exp(b - a)
    return {std::exp(gen.b - gen.a), true};
    (void)stream;
}

/// Diagnostics bundle for one ensemble (reported by the CLI as JSON).
struct EnsembleDiagnostics {
    double lyapunov_hat = 0.0;
    double lyapunov_stderr = 0.0;
    double sigma2_hat = 0.0;
    double sigma2_stderr = 0.0;
    double kappa_sup = 0.0;
    bool kappa_exact = true;
    double moment_2_delta = 0.0;
    double delta = 1.0;
    std::optional<int> a1_horizon;  // nullopt = failed within the probe horizon
    double residual_drift = 0.0;    // post-centering Lyapunov estimate
};

}  // namespace conewalk
