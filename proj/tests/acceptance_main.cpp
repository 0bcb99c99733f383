// Acceptance gate: one binary, one line per criterion, exit 0 iff all pass.
//
//  1  kernel identities (psi/ell/L, convolution, chi sandwich)
//  2  cone geometry properties (cocycle, norm sandwich, contraction, gain)
//  3  Monte Carlo vs exact 2^16-word enumeration at n = 16
//  4  Lyapunov vs spectral radius; sigma^2 start-point independence
//  5  conditioned local limit theorem at desk scale (n = 1024, 1e7 paths)
//  6  conditioned CLT: Rayleigh KS and the t = infinity survival scale
//  7  n^{-3/2} upper-bound shape over the n-doubling ladder
//  8  duality hard bound and the martingale approximation
//
// Heavy criteria take minutes; `acceptance --only 3` runs a subset.

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstring>
#include <iostream>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "conewalk/harness.hpp"
#include "oracles.hpp"

using namespace conewalk;

namespace {

struct Gate {
    int failures = 0;
    std::set<int> only;

    bool enabled(int id) const { return only.empty() || only.count(id) > 0; }

    template <typename Fn>
    void criterion(int id, const std::string& name, Fn&& fn) {
        if (!enabled(id)) return;
        const auto t0 = std::chrono::steady_clock::now();
        bool ok = false;
        std::string detail;
        try {
            std::tie(ok, detail) = fn();
        } catch (const std::exception& e) {
            ok = false;
            detail = std::string("exception: ") + e.what();
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                .count();
        std::printf("[%s] criterion %d: %-52s (%.1f s)%s%s\n",
                    ok ? "PASS" : "FAIL", id, name.c_str(), secs,
                    detail.empty() ? "" : "  -- ", detail.c_str());
        std::fflush(stdout);
        if (!ok) ++failures;
    }
};

using Result = std::pair<bool, std::string>;

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list args;
    va_start(args, f);
    std::vsnprintf(buf, sizeof buf, f, args);
    va_end(args);
    return buf;
}

// -- criterion 3 helpers ----------------------------------------------------

struct MomentWindowCollector {
    double y = 1.0;
    std::vector<oracle::Window> windows;

    struct Partial {
        std::vector<double> s;
        std::vector<double> dev2;
        std::vector<std::uint64_t> hits;
        std::uint64_t survived = 0;
    };

    std::vector<double> block_s, block_dev2, block_s2;
    std::vector<std::uint64_t> hits_total;
    std::uint64_t survived = 0, count = 0;
    double sum_s2 = 0.0;  // for the stderr of E[S_n]

    void accumulate(Partial& p, std::uint64_t, const TrajectoryOutcome& o) const {
        if (p.hits.empty()) p.hits.assign(windows.size(), 0);
        p.s.push_back(o.final_log_norm);
        p.dev2.push_back(o.final_log_norm * o.final_log_norm /
                         static_cast<double>(o.n));
        const bool alive = y + o.prefix_min >= 0.0;
        if (alive) {
            ++p.survived;
            const double w = y + o.final_log_norm;
            for (std::size_t i = 0; i < windows.size(); ++i)
                if (w >= windows[i].z && w < windows[i].z + windows[i].delta)
                    ++p.hits[i];
        }
    }

    void absorb(Partial&& p) {
        if (hits_total.empty()) hits_total.assign(windows.size(), 0);
        block_s.push_back(pairwise_sum(p.s));
        block_dev2.push_back(pairwise_sum(p.dev2));
        std::vector<double> sq(p.s.size());
        for (std::size_t i = 0; i < p.s.size(); ++i) sq[i] = p.s[i] * p.s[i];
        block_s2.push_back(pairwise_sum(sq));
        std::vector<double> d4(p.dev2.size());
        for (std::size_t i = 0; i < p.dev2.size(); ++i)
            d4[i] = p.dev2[i] * p.dev2[i];
        block_dev4.push_back(pairwise_sum(d4));
        survived += p.survived;
        count += p.s.size();
        for (std::size_t i = 0; i < windows.size(); ++i)
            hits_total[i] += p.hits[i];
    }

    std::vector<double> block_dev4;

    double mean_s() const {
        return pairwise_sum(block_s) / static_cast<double>(count);
    }
    double se_s() const {
        const double m = mean_s();
        const double var =
            pairwise_sum(block_s2) / static_cast<double>(count) - m * m;
        return std::sqrt(var / static_cast<double>(count));
    }
    double mean_dev2() const {
        return pairwise_sum(block_dev2) / static_cast<double>(count);
    }
    double se_dev2() const {
        const double m = mean_dev2();
        const double var =
            pairwise_sum(block_dev4) / static_cast<double>(count) - m * m;
        return std::sqrt(var / static_cast<double>(count));
    }
};

// -- ensembles ---------------------------------------------------------------

MatrixLaw centered_ab() {
    const auto law = oracle::ab_law();
    return center(law, lyapunov_spectral(law).value);
}

// -- criteria ----------------------------------------------------------------

Result crit1_kernels() {
    const auto r = run_kernel_selftest();
    std::string bad;
    for (const auto& l : r.lines)
        if (l.rfind("[FAIL]", 0) == 0) bad += l + "; ";
    return {r.ok, bad};
}

Result crit2_geometry() {
    const auto r = run_geometry_selftest();
    std::string bad;
    for (const auto& l : r.lines)
        if (l.rfind("[FAIL]", 0) == 0) bad += l + "; ";
    return {r.ok, bad};
}

Result crit3_enumeration() {
    const auto law = centered_ab();
    const Direction x0 = Direction::vertex(2, 0);
    const int n = 16;
    const std::vector<oracle::Window> windows = {
        {0.8, 0.2}, {1.0, 0.2}, {1.2, 0.2}};
    // y = 1 per the exit-time definition; the bounded increments make that
    // survival degenerate (exactly 1 at n = 16), so a second threshold
    // y = 0.3 exercises the killing non-trivially
    const auto exact = oracle::enumerate_walk(law, x0, n, 1.0, 0.0, windows);
    const auto exact_low = oracle::enumerate_walk(law, x0, n, 0.3, 0.0, {});

    MomentWindowCollector mc;
    mc.y = 1.0;
    mc.windows = windows;
    SimulationPlan plan{law, x0};
    plan.n = n;
    plan.num_traj = 1000000;
    plan.seed = 20260801;
    batch(plan, mc, 0);
    MomentWindowCollector mc_low;
    mc_low.y = 0.3;
    batch(plan, mc_low, 0);

    const double nn = static_cast<double>(mc.count);
    bool ok = true;
    std::string msg;
    if (std::abs(mc.mean_s() - exact.mean_sn) > 3.0 * mc.se_s()) {
        ok = false;
        msg += fmt("E[S_n] %.5g vs %.5g; ", mc.mean_s(), exact.mean_sn);
    }
    if (std::abs(mc.mean_dev2() - exact.dev2_over_n) > 3.0 * mc.se_dev2()) {
        ok = false;
        msg += fmt("E[S^2]/n %.5g vs %.5g; ", mc.mean_dev2(), exact.dev2_over_n);
    }
    auto check_survival = [&](const MomentWindowCollector& col, double p_ex) {
        const double surv = static_cast<double>(col.survived) / nn;
        const double se = std::sqrt(p_ex * (1.0 - p_ex) / nn);
        if (std::abs(surv - p_ex) > 3.0 * se) {
            ok = false;
            msg += fmt("survival %.5g vs %.5g; ", surv, p_ex);
        }
        return surv;
    };
    check_survival(mc, exact.survival);
    const double surv_low = check_survival(mc_low, exact_low.survival);
    for (std::size_t w = 0; w < windows.size(); ++w) {
        const double p_mc = static_cast<double>(mc.hits_total[w]) / nn;
        const double p_ex = exact.window_probs[w];
        const double se = std::sqrt(p_ex * (1.0 - p_ex) / nn);
        if (std::abs(p_mc - p_ex) > 3.0 * se) {
            ok = false;
            msg += fmt("window %zu %.5g vs %.5g; ", w, p_mc, p_ex);
        }
    }
    if (ok)
        msg = fmt("survival(y=0.3) %.4f vs exact %.4f, all statistics "
                  "within 3 se",
                  surv_low, exact_low.survival);
    return {ok, msg};
}

Result crit4_lyapunov_sigma() {
    // point mass: lambda equals the log spectral radius; the walk is
    // deterministic so its stderr vanishes and the 10/n floor covers the
    // O(1/n) projection bias of the finite-horizon estimate
    const PositiveMatrix a(2, {2, 1, 1, 1});
    const double exact = std::log(oracle::spectral_radius_2x2(a));
    const int n = 2000;
    const auto lam = lyapunov(MatrixLaw(2, {{a, 1.0}}), n, 8, RandomStream(40));
    const bool lam_ok =
        std::abs(lam.value - exact) <= 3.0 * lam.stderr_ + 10.0 / n;

    // start-point independence of sigma^2 on the centered ensemble
    const auto law = centered_ab();
    auto run_from = [&](const Direction& x0, std::uint64_t seed) {
        const int horizon = 2048;
        const long m = 20000;
        auto values = detail::lane_values(m, 0, [&](std::uint64_t lane) {
            detail::Walker walker(law);
            walker.begin(x0);
            RandomStream s = RandomStream(seed).lane_stream(lane);
            for (int k = 0; k < horizon; ++k) walker.step(s);
            return walker.log_norm() * walker.log_norm() /
                   static_cast<double>(horizon);
        });
        return detail::mean_stderr(values, "mc_sigma2");
    };
    const auto e1 = run_from(Direction::vertex(2, 0), 41);
    const auto e2 = run_from(Direction::barycenter(2), 42);
    const double joint =
        std::sqrt(e1.stderr_ * e1.stderr_ + e2.stderr_ * e2.stderr_);
    const bool sig_ok = std::abs(e1.value - e2.value) <= 3.0 * joint;

    return {lam_ok && sig_ok,
            fmt("lambda %.6f vs %.6f; sigma2 %.3e vs %.3e (3 joint se %.1e)",
                lam.value, exact, e1.value, e2.value, 3.0 * joint)};
}

Result crit5_thm1() {
    ExperimentSpec spec{oracle::ab_law()};
    spec.ys = {0.5, 2.0, 8.0};
    spec.zs = {0.25, 0.5, 1.0};
    spec.z_unit = "sigma_sqrt_n";
    spec.deltas = {0.5, 1.0};
    spec.ns = {1024};
    spec.num_traj = 10000000;
    spec.n_V = 2048;
    spec.m_V = 200000;
    spec.seed = 20260805;
    spec.tol_cell = 0.15;
    // floor for this grid: cells with theory below 1e-5 sit 4.5+ kernel
    // sigmas into the tail (y = 8 is 6.2 sigma sqrt n for this ensemble),
    // where the theorem's additive remainder dominates its main term and
    // 1e7 trajectories cannot score a 15% ratio anyway
    spec.theory_floor = 1e-5;
    const auto report = verify_local_theorem(spec);
    double worst = 0.0;
    int floors = 0;
    for (const auto& c : report.cells) {
        if (c.by_floor) {
            ++floors;
            continue;
        }
        worst = std::max(worst, std::abs(c.ratio - 1.0));
    }
    return {report.passed,
            fmt("%zu cells (%d by floor), worst |ratio-1| = %.3f, sigma = %.4f",
                report.cells.size(), floors, worst, report.sigma_hat)};
}

Result crit6_cclt() {
    ExperimentSpec spec{oracle::ab_law()};
    spec.ys = {0.5};
    spec.ns = {2048};
    spec.num_traj = 300000;
    spec.n_V = 2048;
    spec.m_V = 400000;
    spec.seed = 20260806;
    spec.min_survivors = 10000;
    spec.ks_tol = 0.03;
    const auto report = verify_cclt(spec, ClltRegime::small_y);
    return {report.passed,
            fmt("KS = %.4f (tol 0.03), survivors %ld, survival %.4f vs "
                "unified-t-inf %.4f",
                report.extra.at("ks").get<double>(),
                report.extra.at("survivors").get<long>(),
                report.extra.at("survival_freq").get<double>(),
                report.extra.at("unified_t_inf").get<double>())};
}

Result crit7_slope() {
    ExperimentSpec spec{oracle::ab_spread_law(0.25)};
    spec.ys = {1.0};
    spec.zs = {0.5, 1.0, 2.0};
    spec.z_unit = "absolute";
    spec.deltas = {1.0};
    spec.ns = {256, 512, 1024, 2048, 4096};
    spec.num_traj_per_n = {
        {256, 8000000}, {512, 6000000}, {1024, 4000000},
        {2048, 3000000}, {4096, 2000000}};
    spec.n_V = 2048;
    spec.m_V = 100000;
    spec.seed = 20260807;
    spec.slope_lo = -1.7;
    spec.slope_hi = -1.35;
    spec.boundedness_max = 3.0;
    const auto report = verify_upper_bound_slope(spec);
    return {report.passed,
            fmt("slope %.3f in [-1.7, -1.35], Q n^1.5 max/min %.2f, dual-"
                "factor-dropped trend x%.1f",
                report.extra.at("slope").get<double>(),
                report.extra.at("Qn32_maxmin").get<double>(),
                report.extra.at("dropped_factor_trend").get<double>())};
}

Result crit8_duality_martingale() {
    ExperimentSpec spec{oracle::ab_law()};
    spec.start = Direction::vertex(2, 0);  // extreme start stresses the bound
    spec.dual_n = 512;
    spec.dual_traj = 10000;
    spec.seed = 20260808;
    const auto report = verify_duality_and_norms(spec);

    const auto law = centered_ab();
    const auto mart = martingale_bound_check(law, {4, 8, 16, 32, 64},
                                             {250, 500, 1000}, 10000, 43);
    bool mart_ok = mart.residual_decreasing;
    double lo = 1e300, hi = 0.0;
    for (const auto& [n, gap] : mart.sup_gap_by_n) {
        mart_ok = mart_ok && std::isfinite(gap) && gap <= mart.bound + 1e-6;
        lo = std::min(lo, gap);
        hi = std::max(hi, gap);
    }
    // stability of the sup across horizons
    mart_ok = mart_ok && hi / lo <= 1.2;

    return {report.passed && mart_ok,
            fmt("max gap %.4f <= %.4f on %lld paths; |S-M| in [%.4f, %.4f] "
                "<= %.4f, residual ladder decreasing",
                report.extra.at("max_gap").get<double>(),
                report.extra.at("gap_bound").get<double>(),
                static_cast<long long>(spec.dual_traj), lo, hi, mart.bound)};
}

}  // namespace

int main(int argc, char** argv) {
    Gate gate;
    for (int i = 1; i + 1 < argc; i += 2)
        if (std::strcmp(argv[i], "--only") == 0)
            gate.only.insert(std::atoi(argv[i + 1]));

    gate.criterion(1, "kernel identities and quadrature", crit1_kernels);
    gate.criterion(2, "cone geometry properties", crit2_geometry);
    gate.criterion(3, "exact enumeration vs Monte Carlo (n = 16)",
                   crit3_enumeration);
    gate.criterion(4, "Lyapunov spectral radius; sigma2 start independence",
                   crit4_lyapunov_sigma);
    gate.criterion(5, "local limit theorem, n = 1024, 1e7 trajectories",
                   crit5_thm1);
    gate.criterion(6, "conditioned CLT: Rayleigh KS and t = inf scale",
                   crit6_cclt);
    gate.criterion(7, "uniform n^-3/2 bound: slope and boundedness",
                   crit7_slope);
    gate.criterion(8, "duality hard bound; martingale approximation",
                   crit8_duality_martingale);

    if (gate.failures == 0) {
        std::printf("acceptance: all criteria passed\n");
        return 0;
    }
    std::printf("acceptance: %d criterion(s) FAILED\n", gate.failures);
    return 1;
}
