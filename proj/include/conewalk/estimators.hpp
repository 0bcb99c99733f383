#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "conewalk/cone.hpp"
#include "conewalk/ensemble.hpp"
#include "conewalk/errors.hpp"
#include "conewalk/rng.hpp"
#include "conewalk/walk.hpp"

namespace conewalk {

struct ConfidenceEstimate {
    double value = 0.0;
    double stderr_ = 0.0;
    long n_samples = 0;
    std::string method;
};

namespace detail {

/// Evaluate fn(lane) for lanes 0..m-1 in parallel, results landing in a
/// vector indexed by lane. Deterministic for any thread count: every slot
/// is written by exactly one task and reductions run over the full vector.
template <typename Fn>
std::vector<double> lane_values(long m, unsigned threads, Fn&& fn) {
    std::vector<double> out(static_cast<std::size_t>(m));
    if (threads == 0)
        threads = std::max(1u, std::thread::hardware_concurrency());
    const long block = 1024;
    const long blocks = (m + block - 1) / block;
    std::atomic<long> next{0};
    auto work = [&]() {
        for (;;) {
            const long b = next.fetch_add(1);
            if (b >= blocks) return;
            const long lo = b * block, hi = std::min(m, lo + block);
            for (long i = lo; i < hi; ++i)
                out[static_cast<std::size_t>(i)] = fn(static_cast<std::uint64_t>(i));
        }
    };
    if (threads <= 1 || blocks <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        const unsigned k = static_cast<unsigned>(
            std::min<long>(static_cast<long>(threads), blocks));
        for (unsigned t = 0; t < k; ++t) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    return out;
}

inline ConfidenceEstimate mean_stderr(const std::vector<double>& v,
                                      std::string method) {
    const auto n = static_cast<double>(v.size());
    const double mean = pairwise_sum(v) / n;
    std::vector<double> sq(v.size());
    for (std::size_t i = 0; i < v.size(); ++i)
        sq[i] = (v[i] - mean) * (v[i] - mean);
    const double var = v.size() > 1 ? pairwise_sum(sq) / (n - 1.0) : 0.0;
    return {mean, std::sqrt(var / n), static_cast<long>(v.size()),
            std::move(method)};
}

}  // namespace detail

/// Monte Carlo Lyapunov exponent: mean of S_n / n over m independent
/// trajectories from a fixed start (the limit does not depend on it).
inline ConfidenceEstimate lyapunov(const MatrixLaw& law, int n, long m,
                                   RandomStream stream, unsigned threads = 0) {
    if (n < 1 || m < 1) throw ConfigError("lyapunov: n, m >= 1");
    const Direction x0 = Direction::barycenter(law.dim());
    auto values = detail::lane_values(m, threads, [&](std::uint64_t lane) {
        detail::Walker walker(law);
        const auto o = walker.run(x0, n, stream.lane_stream(lane));
        return o.final_log_norm / static_cast<double>(n);
    });
    return detail::mean_stderr(values, "mc_lyapunov");
}

/// sigma^2 estimate at horizon n plus a companion at 2n that exposes the
/// residual 1/n bias of the plug-in formula E[(S_n - n lambda)^2] / n.
struct Sigma2Estimate {
    ConfidenceEstimate at_n;
    ConfidenceEstimate at_2n;
};

inline Sigma2Estimate sigma2(const MatrixLaw& law, double lyapunov_hat, int n,
                             long m, RandomStream stream, unsigned threads = 0) {
    if (n < 1 || m < 1) throw ConfigError("sigma2: n, m >= 1");
    const Direction x0 = Direction::barycenter(law.dim());
    auto run_at = [&](int horizon, RandomStream base) {
        auto values =
            detail::lane_values(m, threads, [&](std::uint64_t lane) {
                detail::Walker walker(law);
                const auto o = walker.run(x0, horizon, base.lane_stream(lane));
                const double dev = o.final_log_norm -
                                   static_cast<double>(horizon) * lyapunov_hat;
                return dev * dev / static_cast<double>(horizon);
            });
        return detail::mean_stderr(values, "mc_sigma2");
    };
    return {run_at(n, stream), run_at(2 * n, stream.derived(0x5132))};
}

/// Occupation measure of the direction chain. For d = 2 the measure is a
/// histogram over the first coordinate plus the thinned sample list; for
/// d > 2 the thinned directions are stored with equal weights.
struct EmpiricalMeasure {
    std::size_t dim = 2;
    std::size_t bins = 0;
    std::vector<double> bin_mass;        // d = 2
    std::vector<double> first_coords;    // d = 2 thinned samples
    std::vector<Direction> directions;   // d > 2

    double bin_center(std::size_t b) const {
        return (static_cast<double>(b) + 0.5) / static_cast<double>(bins);
    }

    /// nu-mean of a function given by its values on the uniform grid
    /// t_i = i/(B-1) (d = 2 only), using the thinned samples directly.
    double mean_of_grid(const std::vector<double>& grid_values) const;
};

inline EmpiricalMeasure invariant_measure(const MatrixLaw& law,
                                          const Direction& x0, long burn_in,
                                          long samples, long stride,
                                          std::size_t bins,
                                          RandomStream stream) {
    if (burn_in < 0 || samples < 1 || stride < 1)
        throw ConfigError("invariant_measure: invalid budget");
    EmpiricalMeasure out;
    out.dim = law.dim();
    detail::Walker walker(law);
    walker.begin(x0);
    RandomStream s = stream.lane_stream(0);
    for (long k = 0; k < burn_in; ++k) walker.step(s);
    if (out.dim == 2) {
        out.bins = bins;
        out.bin_mass.assign(bins, 0.0);
        out.first_coords.reserve(static_cast<std::size_t>(samples));
        const double w = 1.0 / static_cast<double>(samples);
        for (long i = 0; i < samples; ++i) {
            for (long k = 0; k < stride; ++k) walker.step(s);
            const double t = walker.direction()[0];
            out.first_coords.push_back(t);
            auto b = static_cast<std::size_t>(t * static_cast<double>(bins));
            if (b >= bins) b = bins - 1;
            out.bin_mass[b] += w;
        }
    } else {
        out.directions.reserve(static_cast<std::size_t>(samples));
        for (long i = 0; i < samples; ++i) {
            for (long k = 0; k < stride; ++k) walker.step(s);
            out.directions.push_back(walker.direction());
        }
    }
    return out;
}

namespace detail {

inline double interp_grid(const std::vector<double>& values, double t) {
    const auto b = static_cast<double>(values.size() - 1);
    const double u = std::clamp(t, 0.0, 1.0) * b;
    const auto i = std::min(static_cast<std::size_t>(u), values.size() - 2);
    const double frac = u - static_cast<double>(i);
    return values[i] * (1.0 - frac) + values[i + 1] * frac;
}

}  // namespace detail

inline double EmpiricalMeasure::mean_of_grid(
    const std::vector<double>& grid_values) const {
    if (dim != 2) throw UnsupportedDimError("mean_of_grid: d = 2 only");
    std::vector<double> vals(first_coords.size());
    for (std::size_t i = 0; i < first_coords.size(); ++i)
        vals[i] = detail::interp_grid(grid_values, first_coords[i]);
    return pairwise_sum(vals) / static_cast<double>(vals.size());
}

/// Finite-horizon surrogate of the harmonic function
/// V(x, y) = lim E[(y + S_n); tau_{x,y} > n]. plateau_flag reports whether
/// the estimates at n_V/2 and n_V agree within max(2 joint stderr,
/// 1 percent relative), the adequacy test for the horizon.
struct HarmonicEstimate {
    HarmonicEstimate(Direction start, double level, int horizon)
        : x(std::move(start)), y(level), n_V(horizon) {}

    Direction x;
    double y = 0.0;
    int n_V = 0;
    double value = 0.0;
    double stderr_ = 0.0;
    bool plateau_flag = false;
    double value_half = 0.0;
    double stderr_half = 0.0;
    bool dual = false;
};

namespace detail {

inline HarmonicEstimate harmonic_impl(const MatrixLaw& law, const Direction& x,
                                      double y, int n_V, long m,
                                      RandomStream stream, unsigned threads,
                                      bool dual) {
    if (n_V < 1 || m < 1) throw ConfigError("harmonic: n_V, m >= 1");
    const int half = std::max(1, n_V / 2);
    std::vector<double> at_half(static_cast<std::size_t>(m));
    auto at_full = lane_values(m, threads, [&](std::uint64_t lane) {
        Walker walker(law, /*transpose_factors=*/dual);
        WalkSnapshot snap;
        const auto o = walker.run(x, n_V, stream.lane_stream(lane), nullptr,
                                  nullptr, half, &snap);
        // dual walk: S*_k = -log-norm, exit uses the prefix max
        const double sk = dual ? -snap.log_norm : snap.log_norm;
        const double worst_half = dual ? -snap.prefix_max : snap.prefix_min;
        at_half[lane] = (y + worst_half >= 0.0) ? y + sk : 0.0;
        const double sn = dual ? -o.final_log_norm : o.final_log_norm;
        const double worst = dual ? -o.prefix_max : o.prefix_min;
        return (y + worst >= 0.0) ? y + sn : 0.0;
    });
    const ConfidenceEstimate full = mean_stderr(at_full, "mc_harmonic");
    const ConfidenceEstimate halfe = mean_stderr(at_half, "mc_harmonic");
    const double joint =
        std::sqrt(full.stderr_ * full.stderr_ + halfe.stderr_ * halfe.stderr_);
    const double gap = std::abs(full.value - halfe.value);
    HarmonicEstimate est(x, y, n_V);
    est.value = full.value;
    est.stderr_ = full.stderr_;
    est.value_half = halfe.value;
    est.stderr_half = halfe.stderr_;
    est.plateau_flag = gap < std::max(2.0 * joint, 0.01 * std::abs(full.value));
    est.dual = dual;
    return est;
}

}  // namespace detail

/// V(x, y): expected position of the surviving walk at the horizon.
inline HarmonicEstimate harmonic_V(const MatrixLaw& law, const Direction& x,
                                   double y, int n_V, long m,
                                   RandomStream stream, unsigned threads = 0) {
    return detail::harmonic_impl(law, x, y, n_V, m, stream, threads, false);
}

/// V*(x', z): same functional for the dual walk (transposed factors,
/// negated log-norms, exit when z + S*_k < 0).
inline HarmonicEstimate harmonic_V_star(const MatrixLaw& law,
                                        const Direction& xp, double z, int n_V,
                                        long m, RandomStream stream,
                                        unsigned threads = 0) {
    return detail::harmonic_impl(law, xp, z, n_V, m, stream, threads, true);
}

// ---------------------------------------------------------------------------
// Grid transfer operator (d = 2): x(t) = (t, 1-t), t in [0, 1], uniform
// grid with linear interpolation.
// ---------------------------------------------------------------------------

/// Function on the d = 2 direction simplex sampled on the uniform grid.
struct GridFn {
    std::vector<double> values;  // values[i] = f(t_i), t_i = i/(B-1)

    std::size_t size() const { return values.size(); }
    double at(double t) const { return detail::interp_grid(values, t); }
};

namespace detail {

struct GridAtoms {
    // per atom: probability, mapped grid points t -> (g.x)_1, cocycle values
    std::vector<double> probs;
    std::vector<std::vector<double>> mapped_t;
    std::vector<std::vector<double>> rho;
};

inline GridAtoms grid_atoms(const MatrixLaw& law, std::size_t B) {
    if (law.dim() != 2)
        throw UnsupportedDimError("transfer operator grid: d = 2 only");
    if (!law.is_finite())
        throw ConfigError("transfer operator grid: finite-support law required");
    if (B < 2) throw ConfigError("transfer operator grid: B >= 2");
    GridAtoms out;
    for (const auto& atom : law.scaled_atoms()) {
        const auto& g = atom.matrix;
        std::vector<double> mt(B), rho(B);
        for (std::size_t i = 0; i < B; ++i) {
            const double t =
                static_cast<double>(i) / static_cast<double>(B - 1);
            const double a = g.at(0, 0) * t + g.at(0, 1) * (1.0 - t);
            const double b = g.at(1, 0) * t + g.at(1, 1) * (1.0 - t);
            mt[i] = a / (a + b);
            rho[i] = std::log(a + b);
        }
        out.probs.push_back(atom.prob);
        out.mapped_t.push_back(std::move(mt));
        out.rho.push_back(std::move(rho));
    }
    return out;
}

inline GridFn apply_transfer(const GridAtoms& atoms, const GridFn& f) {
    GridFn out;
    out.values.assign(f.size(), 0.0);
    for (std::size_t a = 0; a < atoms.probs.size(); ++a)
        for (std::size_t i = 0; i < f.size(); ++i)
            out.values[i] += atoms.probs[a] * f.at(atoms.mapped_t[a][i]);
    return out;
}

inline GridFn grid_theta(const GridAtoms& atoms, std::size_t B) {
    GridFn theta;
    theta.values.assign(B, 0.0);
    for (std::size_t a = 0; a < atoms.probs.size(); ++a)
        for (std::size_t i = 0; i < B; ++i)
            theta.values[i] += atoms.probs[a] * atoms.rho[a][i];
    return theta;
}

}  // namespace detail

/// One application of the transfer operator P f(x) = sum_g p_g f(g . x) on
/// the grid (exact weighted sum, linear interpolation at mapped points).
inline GridFn transfer_apply(const MatrixLaw& law, const GridFn& f) {
    const auto atoms = detail::grid_atoms(law, f.size());
    return detail::apply_transfer(atoms, f);
}

/// Deterministic spectral value nu(f) = lim P^k f, with the sup-inf spread
/// of the last iterate as the accuracy indicator (the iterates converge to
/// a constant uniformly and geometrically).
struct SpectralValue {
    double value = 0.0;
    double spread = 0.0;
    int iterations = 0;
};

inline SpectralValue spectral_mean(const MatrixLaw& law, GridFn f, int iters) {
    const auto atoms = detail::grid_atoms(law, f.size());
    for (int k = 0; k < iters; ++k) f = detail::apply_transfer(atoms, f);
    const auto [lo, hi] = std::minmax_element(f.values.begin(), f.values.end());
    return {f.values[f.size() / 2], *hi - *lo, iters};
}

/// Deterministic Lyapunov exponent for d = 2 finite-support laws:
/// lambda = nu(theta) with theta the expected cocycle increment.
inline SpectralValue lyapunov_spectral(const MatrixLaw& law,
                                       std::size_t B = 4097, int iters = 256) {
    const auto atoms = detail::grid_atoms(law, B);
    return spectral_mean(law, detail::grid_theta(atoms, B), iters);
}

/// Truncated Neumann-series solution of the cohomological equation
/// theta = psi~ - P psi~ on the grid, psi~ = sum_{k<=K} P^k theta.
/// The reported residual is the sup-norm defect of the equation.
struct PoissonSolution {
    std::size_t bins = 0;          // grid size B
    std::vector<double> values;    // psi~ on the grid
    int truncation_K = 0;
    double residual_sup = 0.0;     // || theta - (psi~ - P psi~) ||_inf
    double nu_mean = 0.0;          // spectral nu-mean of psi~ (diagnostic)
    double sup_abs = 0.0;          // sup |psi~|

    double at(double t) const { return detail::interp_grid(values, t); }
};

inline PoissonSolution poisson_solve(const MatrixLaw& law, int K,
                                     std::size_t B,
                                     double centered_tol = 1e-3) {
    if (K < 0) throw ConfigError("poisson_solve: K >= 0");
    const auto atoms = detail::grid_atoms(law, B);
    const GridFn theta = detail::grid_theta(atoms, B);
    {
        GridFn probe = theta;
        for (int k = 0; k < 192; ++k) probe = detail::apply_transfer(atoms, probe);
        const double lam = probe.values[B / 2];
        if (std::abs(lam) > centered_tol)
            throw NotCenteredError("poisson_solve: |nu(theta)| = " +
                                   std::to_string(std::abs(lam)) +
                                   " exceeds tolerance; center the law first");
    }
    GridFn acc = theta, cur = theta;
    for (int k = 1; k <= K; ++k) {
        cur = detail::apply_transfer(atoms, cur);
        for (std::size_t i = 0; i < B; ++i) acc.values[i] += cur.values[i];
    }
    PoissonSolution sol;
    sol.bins = B;
    sol.values = acc.values;
    sol.truncation_K = K;
    const GridFn p_acc = detail::apply_transfer(atoms, acc);
    double resid = 0.0, sup = 0.0;
    for (std::size_t i = 0; i < B; ++i) {
        resid = std::max(resid, std::abs(theta.values[i] -
                                         (acc.values[i] - p_acc.values[i])));
        sup = std::max(sup, std::abs(acc.values[i]));
    }
    sol.residual_sup = resid;
    sol.sup_abs = sup;
    sol.nu_mean = spectral_mean(law, acc, 192).value;
    return sol;
}

/// Deterministic sigma^2 for d = 2 finite-support centered laws:
/// sigma^2 = nu(q), q(x) = E_mu[(rho(g, x) + psi~(g.x) - psi~(x))^2],
/// the stationary second moment of the martingale increments.
inline SpectralValue sigma2_spectral(const MatrixLaw& law, std::size_t B = 4097,
                                     int K = 128) {
    const auto atoms = detail::grid_atoms(law, B);
    const PoissonSolution sol = poisson_solve(law, K, B);
    GridFn q;
    q.values.assign(B, 0.0);
    for (std::size_t a = 0; a < atoms.probs.size(); ++a)
        for (std::size_t i = 0; i < B; ++i) {
            const double inc = atoms.rho[a][i] +
                               detail::interp_grid(sol.values, atoms.mapped_t[a][i]) -
                               sol.values[i];
            q.values[i] += atoms.probs[a] * inc * inc;
        }
    return spectral_mean(law, q, 192);
}

}  // namespace conewalk
