#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "conewalk/ensemble.hpp"
#include "conewalk/errors.hpp"
#include "conewalk/estimators.hpp"
#include "conewalk/io.hpp"
#include "conewalk/kernels.hpp"
#include "conewalk/version.hpp"
#include "conewalk/walk.hpp"

namespace conewalk {

// ---------------------------------------------------------------------------
// Experiment specification
// ---------------------------------------------------------------------------

/// Separable target F(x, s) = a(x) b(s): a Lipschitz grid function on the
/// d = 2 simplex, b a continuous compactly supported piecewise-linear
/// function given by its knots.
struct TargetFunction {
    GridFn a;
    std::vector<std::pair<double, double>> b_knots;  // (s, value), sorted

    void validate() const {
        if (a.values.size() < 2) throw ConfigError("target: a needs a grid");
        for (double v : a.values)
            if (!std::isfinite(v)) throw ConfigError("target: a not finite");
        if (b_knots.size() < 2) throw ConfigError("target: b needs >= 2 knots");
        for (std::size_t i = 1; i < b_knots.size(); ++i)
            if (!(b_knots[i].first > b_knots[i - 1].first))
                throw ConfigError("target: b knots must be increasing");
        if (b_knots.front().second != 0.0 || b_knots.back().second != 0.0)
            throw ConfigError("target: b must vanish at its span edges");
    }

    double b(double s) const {
        if (s <= b_knots.front().first || s >= b_knots.back().first) return 0.0;
        for (std::size_t i = 1; i < b_knots.size(); ++i) {
            if (s <= b_knots[i].first) {
                const auto& [s0, v0] = b_knots[i - 1];
                const auto& [s1, v1] = b_knots[i];
                const double f = (s - s0) / (s1 - s0);
                return v0 * (1.0 - f) + v1 * f;
            }
        }
        return 0.0;
    }
};

struct ExperimentSpec {
    explicit ExperimentSpec(MatrixLaw law) : ensemble(std::move(law)) {}

    MatrixLaw ensemble;

    bool center = true;
    std::string lyapunov_method = "auto";  // auto | spectral | mc
    int lyap_n = 2000;
    long lyap_m = 10000;

    std::optional<Direction> start;       // default barycenter
    std::optional<Direction> dual_start;  // default barycenter

    std::vector<double> ys{1.0};
    std::vector<double> zs{0.5};
    std::vector<double> deltas{1.0};
    std::vector<long> ns{1024};
    std::string y_unit = "absolute";       // absolute | sigma_sqrt_n
    std::string z_unit = "sigma_sqrt_n";   // absolute | sigma_sqrt_n

    std::int64_t num_traj = 1000000;
    std::vector<std::pair<long, std::int64_t>> num_traj_per_n;

    int n_V = 1024;
    long m_V = 200000;
    int n_sigma = 2048;
    long m_sigma = 50000;
    std::string sigma_method = "auto";  // auto | spectral | mc

    std::uint64_t seed = 1;
    double tol_cell = 0.15;
    double theory_floor = 1e-6;
    double delta0 = 0.5;
    unsigned threads = 0;

    long min_survivors = 10000;
    double ks_tol = 0.03;

    double slope_lo = -1.7;
    double slope_hi = -1.35;
    double boundedness_max = 3.0;
    double scaled_z_ref = 1.0;  // diagnostic windows at z = ref * sigma sqrt n

    int dual_n = 512;
    std::int64_t dual_traj = 10000;

    std::optional<TargetFunction> target;

    void validate() const {
        for (double d : deltas)
            if (!(d >= delta0))
                throw ConfigError("spec: every Delta must be >= Delta0");
        for (long n : ns)
            if (n < 16) throw ConfigError("spec: n >= 16");
        if (num_traj < 1) throw ConfigError("spec: num_traj >= 1");
        if (target) target->validate();
    }

    std::int64_t traj_for(long n) const {
        for (const auto& [m, t] : num_traj_per_n)
            if (m == n) return t;
        return num_traj;
    }
};

inline ExperimentSpec spec_from_json(const json& j) {
    ExperimentSpec spec{law_from_json(j.at("ensemble"))};
    spec.center = j.value("center", true);
    spec.lyapunov_method = j.value("lyapunov_method", std::string("auto"));
    spec.lyap_n = j.value("lyap_n", 2000);
    spec.lyap_m = j.value("lyap_m", 10000L);
    if (j.contains("start")) spec.start = direction_from_json(j.at("start"));
    if (j.contains("dual_start"))
        spec.dual_start = direction_from_json(j.at("dual_start"));
    if (j.contains("ys")) spec.ys = j.at("ys").get<std::vector<double>>();
    if (j.contains("zs")) spec.zs = j.at("zs").get<std::vector<double>>();
    if (j.contains("deltas"))
        spec.deltas = j.at("deltas").get<std::vector<double>>();
    if (j.contains("ns")) spec.ns = j.at("ns").get<std::vector<long>>();
    spec.y_unit = j.value("y_unit", std::string("absolute"));
    spec.z_unit = j.value("z_unit", std::string("sigma_sqrt_n"));
    spec.num_traj = j.value("num_traj", std::int64_t{1000000});
    if (j.contains("num_traj_per_n"))
        for (const auto& row : j.at("num_traj_per_n"))
            spec.num_traj_per_n.emplace_back(row.at(0).get<long>(),
                                             row.at(1).get<std::int64_t>());
    spec.n_V = j.value("n_V", 1024);
    spec.m_V = j.value("m_V", 200000L);
    spec.n_sigma = j.value("n_sigma", 2048);
    spec.m_sigma = j.value("m_sigma", 50000L);
    spec.sigma_method = j.value("sigma_method", std::string("auto"));
    spec.seed = j.value("seed", std::uint64_t{1});
    spec.tol_cell = j.value("tol_cell", 0.15);
    spec.theory_floor = j.value("theory_floor", 1e-6);
    spec.delta0 = j.value("delta0", 0.5);
    spec.threads = j.value("threads", 0u);
    spec.min_survivors = j.value("min_survivors", 10000L);
    spec.ks_tol = j.value("ks_tol", 0.03);
    spec.slope_lo = j.value("slope_lo", -1.7);
    spec.slope_hi = j.value("slope_hi", -1.35);
    spec.boundedness_max = j.value("boundedness_max", 3.0);
    spec.scaled_z_ref = j.value("scaled_z_ref", 1.0);
    spec.dual_n = j.value("dual_n", 512);
    spec.dual_traj = j.value("dual_traj", std::int64_t{10000});
    if (j.contains("target")) {
        TargetFunction f;
        f.a.values = j.at("target").at("a").get<std::vector<double>>();
        for (const auto& row : j.at("target").at("b_knots"))
            f.b_knots.emplace_back(row.at(0).get<double>(),
                                   row.at(1).get<double>());
        spec.target = std::move(f);
    }
    spec.validate();
    return spec;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct CellResult {
    long n = 0;
    double y = 0.0, z = 0.0, delta = 0.0;
    double mc_prob = 0.0, mc_stderr = 0.0;
    double theory = 0.0;
    double ratio = std::numeric_limits<double>::quiet_NaN();
    bool pass = false;
    bool by_floor = false;
};

struct VerificationReport {
    std::string theorem;
    std::vector<CellResult> cells;
    EnsembleDiagnostics diagnostics;
    double sigma_hat = 0.0;
    json provenance;
    json extra;
    bool passed = true;
    std::vector<std::string> notes;

    std::string csv() const {
        std::ostringstream out;
        out << "n,y,z,delta,mc_prob,mc_stderr,theory,ratio,pass\n";
        out.precision(17);
        for (const auto& c : cells)
            out << c.n << ',' << c.y << ',' << c.z << ',' << c.delta << ','
                << c.mc_prob << ',' << c.mc_stderr << ',' << c.theory << ','
                << c.ratio << ',' << (c.pass ? 1 : 0) << '\n';
        return out.str();
    }

    json summary_json() const {
        json rows = json::array();
        for (const auto& c : cells)
            rows.push_back({{"n", c.n},
                            {"y", c.y},
                            {"z", c.z},
                            {"delta", c.delta},
                            {"mc_prob", c.mc_prob},
                            {"mc_stderr", c.mc_stderr},
                            {"theory", c.theory},
                            {"ratio", std::isnan(c.ratio) ? json() : json(c.ratio)},
                            {"pass", c.pass},
                            {"by_floor", c.by_floor}});
        return {{"theorem", theorem},      {"passed", passed},
                {"cells", std::move(rows)}, {"diagnostics", to_json(diagnostics)},
                {"sigma_hat", sigma_hat},  {"provenance", provenance},
                {"extra", extra},          {"notes", notes}};
    }
};

// ---------------------------------------------------------------------------
// Context: centering, sigma, V tables
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
    return mix64(seed ^ mix64(tag + 0x9e3779b9));
}

}  // namespace detail

struct HarnessContext {
    MatrixLaw law;  // centered when requested
    Direction start;
    Direction dual_start;
    EnsembleDiagnostics diag;
    double sigma_hat = 1.0;
    double sigma2_hat = 1.0;
    std::vector<HarmonicEstimate> v_table;       // sorted by y
    std::vector<HarmonicEstimate> v_star_table;  // sorted by z
    std::optional<EmpiricalMeasure> nu;

    HarnessContext(MatrixLaw l, Direction s, Direction ds)
        : law(std::move(l)), start(std::move(s)), dual_start(std::move(ds)) {}

    static double table_at(const std::vector<HarmonicEstimate>& table,
                           double node) {
        if (table.empty()) throw ConfigError("V table is empty");
        if (table.size() == 1) return table.front().value;
        // linear interpolation with end clamping
        if (node <= table.front().y) return table.front().value;
        if (node >= table.back().y) return table.back().value;
        for (std::size_t i = 1; i < table.size(); ++i)
            if (node <= table[i].y) {
                const double f =
                    (node - table[i - 1].y) / (table[i].y - table[i - 1].y);
                return table[i - 1].value * (1.0 - f) + table[i].value * f;
            }
        return table.back().value;
    }

    double V_at(double y) const { return table_at(v_table, y); }
    double V_star_at(double z) const { return table_at(v_star_table, z); }

    double V_stderr_at(double) const {
        double se = 0.0;
        for (const auto& e : v_table) se = std::max(se, e.stderr_);
        return se;
    }
};

/// Center the law, estimate the global quantities, and fill the V / V*
/// tables at the requested nodes.
inline HarnessContext prepare_context(const ExperimentSpec& spec,
                                      const std::vector<double>& v_nodes,
                                      const std::vector<double>& v_star_nodes,
                                      bool need_nu = false) {
    spec.validate();
    const std::size_t d = spec.ensemble.dim();
    Direction start = spec.start ? *spec.start : Direction::barycenter(d);
    Direction dual_start =
        spec.dual_start ? *spec.dual_start : Direction::barycenter(d);

    MatrixLaw law = spec.ensemble;
    EnsembleDiagnostics diag;

    const bool spectral_ok = law.dim() == 2 && law.is_finite();
    const std::string lyap_method =
        spec.lyapunov_method == "auto"
            ? (spectral_ok ? "spectral" : "mc")
            : spec.lyapunov_method;

    if (spec.center) {
        double lam = 0.0, lam_se = 0.0;
        if (lyap_method == "spectral") {
            if (!spectral_ok)
                throw ConfigError("spectral lyapunov needs a d=2 finite law");
            const auto sv = lyapunov_spectral(law);
            lam = sv.value;
            lam_se = sv.spread;
        } else {
            const auto est =
                lyapunov(law, spec.lyap_n, spec.lyap_m,
                         RandomStream(detail::derive_seed(spec.seed, 1)),
                         spec.threads);
            lam = est.value;
            lam_se = est.stderr_;
        }
        diag.lyapunov_hat = lam;
        diag.lyapunov_stderr = lam_se;
        law = center(law, lam);
        // residual drift of the centered law
        const auto resid =
            lyapunov(law, std::max(256, spec.lyap_n / 4),
                     std::max(400L, spec.lyap_m / 8),
                     RandomStream(detail::derive_seed(spec.seed, 2)),
                     spec.threads);
        diag.residual_drift = resid.value;
    }

    const auto kappa = kappa_sup(law);
    diag.kappa_sup = kappa.value;
    diag.kappa_exact = kappa.exact;
    diag.a1_horizon = verify_contraction(law, 16);
    diag.delta = 1.0;
    diag.moment_2_delta = estimate_moment(
        law, diag.delta, 20000, RandomStream(detail::derive_seed(spec.seed, 3)));

    HarnessContext ctx(law, start, dual_start);

    const std::string sig_method =
        spec.sigma_method == "auto" ? (spectral_ok ? "spectral" : "mc")
                                    : spec.sigma_method;
    if (sig_method == "spectral") {
        const auto sv = sigma2_spectral(ctx.law);
        ctx.sigma2_hat = sv.value;
        diag.sigma2_stderr = sv.spread;
    } else {
        const auto est = sigma2(ctx.law, diag.residual_drift, spec.n_sigma,
                                spec.m_sigma,
                                RandomStream(detail::derive_seed(spec.seed, 4)),
                                spec.threads);
        ctx.sigma2_hat = est.at_2n.value;  // the less biased companion
        diag.sigma2_stderr = est.at_2n.stderr_;
    }
    diag.sigma2_hat = ctx.sigma2_hat;
    ctx.sigma_hat = std::sqrt(ctx.sigma2_hat);
    ctx.diag = diag;

    std::set<double> vset(v_nodes.begin(), v_nodes.end());
    std::uint64_t tag = 16;
    for (double y : vset) {
        ctx.v_table.push_back(harmonic_V(
            ctx.law, start, y, spec.n_V, spec.m_V,
            RandomStream(detail::derive_seed(spec.seed, tag++)), spec.threads));
    }
    std::set<double> vsset(v_star_nodes.begin(), v_star_nodes.end());
    tag = 64;
    for (double z : vsset) {
        ctx.v_star_table.push_back(harmonic_V_star(
            ctx.law, dual_start, z, spec.n_V, spec.m_V,
            RandomStream(detail::derive_seed(spec.seed, tag++)), spec.threads));
    }
    if (need_nu)
        ctx.nu = invariant_measure(ctx.law, start, 1000, 100000, 10, 512,
                                   RandomStream(detail::derive_seed(spec.seed, 5)));
    return ctx;
}

inline json provenance_block(const ExperimentSpec& spec,
                             const HarnessContext& ctx) {
    json v = json::array(), vs = json::array();
    for (const auto& e : ctx.v_table)
        v.push_back({{"y", e.y},
                     {"value", e.value},
                     {"stderr", e.stderr_},
                     {"n_V", e.n_V},
                     {"plateau", e.plateau_flag}});
    for (const auto& e : ctx.v_star_table)
        vs.push_back({{"z", e.y},
                      {"value", e.value},
                      {"stderr", e.stderr_},
                      {"n_V", e.n_V},
                      {"plateau", e.plateau_flag}});
    char hash_hex[19];
    std::snprintf(hash_hex, sizeof hash_hex, "%016llx",
                  static_cast<unsigned long long>(ensemble_hash(spec.ensemble)));
    return {{"ensemble_hash", hash_hex},
            {"seed", spec.seed},
            {"version", version_string},
            {"lambda_hat", ctx.diag.lyapunov_hat},
            {"residual_drift", ctx.diag.residual_drift},
            {"sigma2_hat", ctx.sigma2_hat},
            {"sigma_hat", ctx.sigma_hat},
            {"kappa", std::isfinite(ctx.diag.kappa_sup)
                          ? json(ctx.diag.kappa_sup)
                          : json("inf")},
            {"V_table", std::move(v)},
            {"V_star_table", std::move(vs)}};
}

// ---------------------------------------------------------------------------
// Collectors
// ---------------------------------------------------------------------------

struct WindowCell {
    double y, z, delta;
};

/// Counts window hits {y + S_n in [z, z+Delta], tau > n} for a family of
/// cells sharing one horizon, plus survival counts per distinct y.
/// Integer counters make the merged totals order-free exactly.
class WindowCollector {
  public:
    WindowCollector(std::vector<WindowCell> cells, std::vector<double> ys)
        : cells_(std::move(cells)), ys_(std::move(ys)) {}

    struct Partial {
        std::vector<std::uint64_t> hits;
        std::vector<std::uint64_t> survived;
        std::uint64_t count = 0;
    };

    void accumulate(Partial& p, std::uint64_t, const TrajectoryOutcome& o) const {
        if (p.hits.empty()) {
            p.hits.assign(cells_.size(), 0);
            p.survived.assign(ys_.size(), 0);
        }
        ++p.count;
        for (std::size_t i = 0; i < ys_.size(); ++i)
            if (ys_[i] + o.prefix_min >= 0.0) ++p.survived[i];
        for (std::size_t c = 0; c < cells_.size(); ++c) {
            const auto& cell = cells_[c];
            if (cell.y + o.prefix_min < 0.0) continue;
            const double w = cell.y + o.final_log_norm;
            // half-open membership: identical in law to the closed window
            // and makes partition additivity an exact counting identity
            if (w >= cell.z && w < cell.z + cell.delta) ++p.hits[c];
        }
    }

    void absorb(Partial&& p) {
        if (hits_.empty()) {
            hits_.assign(cells_.size(), 0);
            survived_.assign(ys_.size(), 0);
        }
        if (p.hits.empty()) return;
        for (std::size_t c = 0; c < hits_.size(); ++c) hits_[c] += p.hits[c];
        for (std::size_t i = 0; i < survived_.size(); ++i)
            survived_[i] += p.survived[i];
        count_ += p.count;
    }

    double prob(std::size_t cell) const {
        return static_cast<double>(hits_.at(cell)) / static_cast<double>(count_);
    }
    double prob_stderr(std::size_t cell) const {
        const double p = prob(cell);
        return std::sqrt(p * (1.0 - p) / static_cast<double>(count_));
    }
    double survival(std::size_t yi) const {
        return static_cast<double>(survived_.at(yi)) /
               static_cast<double>(count_);
    }
    double survival_stderr(std::size_t yi) const {
        const double p = survival(yi);
        return std::sqrt(p * (1.0 - p) / static_cast<double>(count_));
    }
    std::uint64_t count() const { return count_; }
    std::uint64_t raw_hits(std::size_t cell) const { return hits_.at(cell); }

  private:
    std::vector<WindowCell> cells_;
    std::vector<double> ys_;
    std::vector<std::uint64_t> hits_;
    std::vector<std::uint64_t> survived_;
    std::uint64_t count_ = 0;
};

/// Collects (y + S_n) / scale for surviving trajectories (conditional-law
/// samples), in trajectory order.
class SurvivorCollector {
  public:
    SurvivorCollector(double y, double scale) : y_(y), scale_(scale) {}

    struct Partial {
        std::vector<double> values;
    };

    void accumulate(Partial& p, std::uint64_t, const TrajectoryOutcome& o) const {
        if (y_ + o.prefix_min >= 0.0)
            p.values.push_back((y_ + o.final_log_norm) / scale_);
    }

    void absorb(Partial&& p) {
        values_.insert(values_.end(), p.values.begin(), p.values.end());
    }

    std::vector<double>& values() { return values_; }
    const std::vector<double>& values() const { return values_; }

  private:
    double y_, scale_;
    std::vector<double> values_;
};

/// Mean of a(X_n) b(y + S_n - z) over surviving trajectories, block-
/// buffered and pairwise-reduced per the determinism contract.
class TargetCollector {
  public:
    TargetCollector(const TargetFunction* f, double y, double z)
        : f_(f), y_(y), z_(z) {}

    struct Partial {
        std::vector<double> values;
    };

    void accumulate(Partial& p, std::uint64_t, const TrajectoryOutcome& o) const {
        double v = 0.0;
        if (y_ + o.prefix_min >= 0.0)
            v = f_->a.at(o.final_direction[0]) *
                f_->b(y_ + o.final_log_norm - z_);
        p.values.push_back(v);
    }

    void absorb(Partial&& p) {
        block_sums_.push_back(pairwise_sum(p.values));
        std::vector<double> sq(p.values.size());
        for (std::size_t i = 0; i < p.values.size(); ++i)
            sq[i] = p.values[i] * p.values[i];
        block_sumsq_.push_back(pairwise_sum(sq));
        count_ += p.values.size();
    }

    double mean() const {
        return pairwise_sum(block_sums_) / static_cast<double>(count_);
    }
    double stderr_of_mean() const {
        const double n = static_cast<double>(count_);
        const double m = mean();
        const double var = pairwise_sum(block_sumsq_) / n - m * m;
        return std::sqrt(std::max(var, 0.0) / n);
    }

  private:
    const TargetFunction* f_;
    double y_, z_;
    std::vector<double> block_sums_, block_sumsq_;
    std::size_t count_ = 0;
};

// ---------------------------------------------------------------------------
// Verification drivers
// ---------------------------------------------------------------------------

namespace detail {

struct ResolvedCell {
    double y, z, delta;
    long n;
};

inline std::vector<double> resolve(const std::vector<double>& raw,
                                   const std::string& unit, double sigma,
                                   long n) {
    std::vector<double> out;
    const double sn = sigma * std::sqrt(static_cast<double>(n));
    for (double v : raw) out.push_back(unit == "sigma_sqrt_n" ? v * sn : v);
    return out;
}

/// Least-squares slope of log Q against log n.
inline double loglog_slope(const std::vector<std::pair<double, double>>& pts) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(pts.size());
    for (const auto& [x, y] : pts) {
        const double lx = std::log(x), ly = std::log(y);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

enum class TheoryKind { thm1, caravenna, large_y };

inline VerificationReport verify_window_theorem(const ExperimentSpec& spec,
                                                TheoryKind kind) {
    // V nodes: absolute y values; when y is given in sigma sqrt n units the
    // nodes depend on sigma, so resolve them after the context (two-phase).
    VerificationReport report;
    report.theorem = kind == TheoryKind::thm1        ? "thm1"
                     : kind == TheoryKind::caravenna ? "caravenna"
                                                     : "large_y";
    // Phase 1: context without V nodes to learn sigma; cheap because the V
    // tables are the expensive part.
    ExperimentSpec probe = spec;
    HarnessContext ctx0 = prepare_context(probe, {}, {});
    const double sigma = ctx0.sigma_hat;

    std::set<double> v_nodes;
    for (long n : spec.ns)
        for (double y : resolve(spec.ys, spec.y_unit, sigma, n))
            v_nodes.insert(y);
    HarnessContext ctx = prepare_context(
        spec, std::vector<double>(v_nodes.begin(), v_nodes.end()), {});
    report.diagnostics = ctx.diag;
    report.sigma_hat = ctx.sigma_hat;
    report.provenance = provenance_block(spec, ctx);

    for (long n : spec.ns) {
        const auto ys_abs = resolve(spec.ys, spec.y_unit, ctx.sigma_hat, n);
        const auto zs_abs = resolve(spec.zs, spec.z_unit, ctx.sigma_hat, n);
        std::vector<WindowCell> cells;
        for (double y : ys_abs)
            for (double z : zs_abs)
                for (double delta : spec.deltas) cells.push_back({y, z, delta});
        WindowCollector collector(cells, ys_abs);
        SimulationPlan plan{ctx.law, ctx.start};
        plan.n = static_cast<int>(n);
        plan.num_traj = spec.traj_for(n);
        plan.seed = derive_seed(spec.seed, 100 + static_cast<std::uint64_t>(n));
        batch(plan, collector, spec.threads);

        for (std::size_t c = 0; c < cells.size(); ++c) {
            const auto& cell = cells[c];
            TheoremInputs inp;
            inp.y = cell.y;
            inp.z = cell.z;
            inp.delta_window = cell.delta;
            inp.n = n;
            inp.sigma_hat = ctx.sigma_hat;
            inp.V_hat = ctx.V_at(cell.y);
            double theory = 0.0;
            bool in_regime = true;
            switch (kind) {
                case TheoryKind::thm1:
                    theory = main_term_thm1(inp);
                    break;
                case TheoryKind::caravenna:
                    theory = caravenna_term(inp);
                    in_regime =
                        cell.y <= std::pow(static_cast<double>(n), 0.25);
                    break;
                case TheoryKind::large_y: {
                    theory = large_y_term(inp);
                    const double sn =
                        ctx.sigma_hat * std::sqrt(static_cast<double>(n));
                    in_regime = cell.y >= sn && cell.y <= 3.0 * sn;
                    break;
                }
            }
            CellResult res;
            res.n = n;
            res.y = cell.y;
            res.z = cell.z;
            res.delta = cell.delta;
            res.mc_prob = collector.prob(c);
            res.mc_stderr = collector.prob_stderr(c);
            res.theory = theory;
            if (!in_regime) {
                res.pass = true;
                res.by_floor = false;
                report.notes.push_back("cell outside regime, not scored: y=" +
                                       std::to_string(cell.y) +
                                       " n=" + std::to_string(n));
                report.cells.push_back(res);
                continue;
            }
            if (theory < spec.theory_floor &&
                res.mc_prob <
                    spec.theory_floor + 10.0 * res.mc_stderr) {
                res.pass = true;
                res.by_floor = true;
            } else {
                if (res.mc_stderr > 0.25 * theory)
                    throw InsufficientSamplesError(
                        "cell (y=" + std::to_string(cell.y) +
                        ", z=" + std::to_string(cell.z) +
                        ", n=" + std::to_string(n) +
                        "): stderr above 25% of theory");
                res.ratio = res.mc_prob / theory;
                res.pass = std::abs(res.ratio - 1.0) <= spec.tol_cell;
            }
            report.passed = report.passed && res.pass;
            report.cells.push_back(res);
        }
    }
    return report;
}

}  // namespace detail

inline VerificationReport verify_local_theorem(const ExperimentSpec& spec) {
    return detail::verify_window_theorem(spec, detail::TheoryKind::thm1);
}

inline VerificationReport verify_caravenna(const ExperimentSpec& spec) {
    return detail::verify_window_theorem(spec, detail::TheoryKind::caravenna);
}

inline VerificationReport verify_large_y(const ExperimentSpec& spec) {
    return detail::verify_window_theorem(spec, detail::TheoryKind::large_y);
}

/// Conditioned CLT: Kolmogorov-Smirnov distance of the conditional law of
/// (y + S_n)/(sigma sqrt n) given survival against the regime reference
/// (Rayleigh for small y, the ell-density CDF otherwise), plus the t = inf
/// consistency of the unified form with the survival frequency.
inline VerificationReport verify_cclt(const ExperimentSpec& spec,
                                      ClltRegime regime) {
    VerificationReport report;
    report.theorem = "cclt";
    const long n = spec.ns.front();

    ExperimentSpec probe = spec;
    HarnessContext ctx0 = prepare_context(probe, {}, {});
    const double y =
        detail::resolve(spec.ys, spec.y_unit, ctx0.sigma_hat, n).front();
    HarnessContext ctx = prepare_context(spec, {y}, {});
    report.diagnostics = ctx.diag;
    report.sigma_hat = ctx.sigma_hat;
    report.provenance = provenance_block(spec, ctx);

    const double sn = ctx.sigma_hat * std::sqrt(static_cast<double>(n));
    SurvivorCollector collector(y, sn);
    SimulationPlan plan{ctx.law, ctx.start};
    plan.n = static_cast<int>(n);
    plan.num_traj = spec.traj_for(n);
    plan.seed = detail::derive_seed(spec.seed, 200);
    batch(plan, collector, spec.threads);

    auto& values = collector.values();
    const long survivors = static_cast<long>(values.size());
    if (survivors < spec.min_survivors)
        throw InsufficientSurvivorsError(
            "cclt: " + std::to_string(survivors) + " survivors < " +
            std::to_string(spec.min_survivors));
    std::sort(values.begin(), values.end());

    // reference conditional CDF
    const double u = y / sn;
    auto ref_cdf = [&](double t) {
        if (regime == ClltRegime::small_y) return rayleigh_cdf(t);
        if (t <= 0.0) return 0.0;
        return integrate([&](double s) { return ell(u, s); }, 0.0, t, 1e-9);
    };
    // evaluate on a grid and interpolate (monotone, smooth)
    const int grid_n = 2048;
    const double tmax = values.back() + 0.5;
    std::vector<double> ref(grid_n + 1);
    for (int i = 0; i <= grid_n; ++i)
        ref[static_cast<std::size_t>(i)] =
            ref_cdf(tmax * static_cast<double>(i) / grid_n);
    auto ref_at = [&](double t) {
        if (t <= 0.0) return 0.0;
        if (t >= tmax) return ref.back();
        const double p = t / tmax * grid_n;
        const auto i = static_cast<std::size_t>(p);
        const double f = p - static_cast<double>(i);
        return ref[i] * (1.0 - f) + ref[i + 1] * f;
    };
    double ks = 0.0;
    const double inv_n = 1.0 / static_cast<double>(survivors);
    for (long i = 0; i < survivors; ++i) {
        const double F = ref_at(values[static_cast<std::size_t>(i)]);
        ks = std::max(ks, std::abs(F - static_cast<double>(i) * inv_n));
        ks = std::max(ks, std::abs(static_cast<double>(i + 1) * inv_n - F));
    }

    const double surv_freq =
        static_cast<double>(survivors) / static_cast<double>(plan.num_traj);
    const double surv_se =
        std::sqrt(surv_freq * (1.0 - surv_freq) /
                  static_cast<double>(plan.num_traj));
    TheoremInputs inp;
    inp.y = y;
    inp.n = n;
    inp.sigma_hat = ctx.sigma_hat;
    inp.V_hat = ctx.V_at(y);
    const double unified_inf =
        cclt_rhs(inp, std::numeric_limits<double>::infinity(),
                 ClltRegime::unified);
    const double v_se = ctx.V_stderr_at(y) * L_func(u) / sn;
    const double joint_se = std::sqrt(surv_se * surv_se + v_se * v_se);
    const bool t_inf_pass =
        std::abs(surv_freq - unified_inf) <= 3.0 * joint_se;

    const bool ks_pass = ks <= spec.ks_tol;
    report.passed = ks_pass && t_inf_pass;
    report.extra = {{"regime", regime == ClltRegime::small_y ? "small_y"
                               : regime == ClltRegime::unified
                                   ? "unified"
                                   : "large_y"},
                    {"n", n},
                    {"y", y},
                    {"ks", ks},
                    {"ks_tol", spec.ks_tol},
                    {"ks_pass", ks_pass},
                    {"survivors", survivors},
                    {"survival_freq", surv_freq},
                    {"survival_stderr", surv_se},
                    {"unified_t_inf", unified_inf},
                    {"t_inf_joint_stderr", joint_se},
                    {"t_inf_pass", t_inf_pass}};
    return report;
}

/// Theorem-1.3 shape test: Q(n) = sup_z mc / [Delta (1+V_n)(1+V*_n)] over
/// an n-doubling ladder must decay with log-log slope in the configured
/// band and have Q(n) n^{3/2} bounded within a factor. A diagnostic column
/// tracks the same quantity without the dual factor at windows scaled like
/// sigma sqrt n, where dropping (1 + V*_n) visibly breaks the rate.
inline VerificationReport verify_upper_bound_slope(const ExperimentSpec& spec) {
    VerificationReport report;
    report.theorem = "upper_bound_slope";
    if (spec.z_unit != "absolute")
        throw ConfigError("slope ladder expects absolute z windows");

    ExperimentSpec probe = spec;
    HarnessContext ctx0 = prepare_context(probe, {}, {});
    const double sigma = ctx0.sigma_hat;

    const double y = spec.ys.front();
    const double delta = spec.deltas.front();
    std::vector<double> vstar_nodes;
    for (double z : spec.zs) vstar_nodes.push_back(z + delta);
    // nodes for the scaled-z diagnostic
    std::vector<double> scaled_nodes;
    for (long n : spec.ns) {
        const double zs = spec.scaled_z_ref * sigma *
                          std::sqrt(static_cast<double>(n));
        scaled_nodes.push_back(zs + delta);
        vstar_nodes.push_back(zs + delta);
    }
    HarnessContext ctx = prepare_context(spec, {y}, vstar_nodes);
    report.diagnostics = ctx.diag;
    report.sigma_hat = ctx.sigma_hat;
    report.provenance = provenance_block(spec, ctx);

    std::vector<std::pair<double, double>> q_points;
    std::vector<double> q_n32;
    std::vector<double> drop_n32;
    json rows = json::array();
    std::size_t n_index = 0;
    for (long n : spec.ns) {
        const double sn = ctx.sigma_hat * std::sqrt(static_cast<double>(n));
        std::vector<WindowCell> cells;
        for (double z : spec.zs) cells.push_back({y, z, delta});
        const double z_scaled = spec.scaled_z_ref * sn;
        cells.push_back({y, z_scaled, delta});
        WindowCollector collector(cells, {y});
        SimulationPlan plan{ctx.law, ctx.start};
        plan.n = static_cast<int>(n);
        plan.num_traj = spec.traj_for(n);
        plan.seed = detail::derive_seed(spec.seed, 300 + n_index);
        batch(plan, collector, spec.threads);

        const double vn = ctx.V_at(y) * L_func(y / sn);
        double q = 0.0;
        for (std::size_t c = 0; c + 1 < cells.size(); ++c) {
            const double z = cells[c].z;
            const double vsn = ctx.V_star_at(z + delta) * L_func((z + delta) / sn);
            const double mc = collector.prob(c);
            q = std::max(q, mc / (delta * (1.0 + vn) * (1.0 + vsn)));
            CellResult res;
            res.n = n;
            res.y = y;
            res.z = z;
            res.delta = delta;
            res.mc_prob = mc;
            res.mc_stderr = collector.prob_stderr(c);
            res.theory = upper_bound_thm3(
                [&] {
                    TheoremInputs inp;
                    inp.y = y;
                    inp.z = z;
                    inp.delta_window = delta;
                    inp.n = n;
                    inp.sigma_hat = ctx.sigma_hat;
                    inp.V_hat = ctx.V_at(y);
                    inp.V_star_hat = ctx.V_star_at(z + delta);
                    return inp;
                }());
            res.ratio = res.mc_prob / res.theory;  // implied constant c
            res.pass = true;                       // scored via slope below
            report.cells.push_back(res);
        }
        // scaled-z diagnostic without the dual factor
        const double mc_scaled = collector.prob(cells.size() - 1);
        drop_n32.push_back(mc_scaled / (delta * (1.0 + vn)) *
                           std::pow(static_cast<double>(n), 1.5));
        q_points.emplace_back(static_cast<double>(n), q);
        q_n32.push_back(q * std::pow(static_cast<double>(n), 1.5));
        rows.push_back({{"n", n},
                        {"Q", q},
                        {"Q_n32", q_n32.back()},
                        {"dropped_factor_scaled_z_n32", drop_n32.back()},
                        {"num_traj", plan.num_traj}});
        ++n_index;
    }
    const double slope = detail::loglog_slope(q_points);
    const auto [lo_it, hi_it] = std::minmax_element(q_n32.begin(), q_n32.end());
    const double maxmin = *hi_it / *lo_it;
    const bool slope_pass = slope >= spec.slope_lo && slope <= spec.slope_hi;
    const bool bounded_pass = maxmin <= spec.boundedness_max;
    report.passed = slope_pass && bounded_pass;
    report.extra = {{"slope", slope},
                    {"slope_band", {spec.slope_lo, spec.slope_hi}},
                    {"slope_pass", slope_pass},
                    {"Qn32_maxmin", maxmin},
                    {"boundedness_max", spec.boundedness_max},
                    {"bounded_pass", bounded_pass},
                    {"ladder", std::move(rows)},
                    {"dropped_factor_trend",
                     drop_n32.back() / drop_n32.front()}};
    return report;
}

/// Hard pathwise checks on retained draws: the duality gap bound
/// 2 log kappa + log d on every trajectory, and the norm-comparability
/// sandwich by explicit matrix products at small n.
inline VerificationReport verify_duality_and_norms(const ExperimentSpec& spec) {
    VerificationReport report;
    report.theorem = "duality";
    HarnessContext ctx = prepare_context(spec, {}, {});
    report.diagnostics = ctx.diag;
    report.sigma_hat = ctx.sigma_hat;
    report.provenance = provenance_block(spec, ctx);

    if (!std::isfinite(ctx.diag.kappa_sup))
        throw ConfigError("duality check needs a finite kappa ensemble");
    const double d = static_cast<double>(ctx.law.dim());
    const double bound = 2.0 * std::log(ctx.diag.kappa_sup) + std::log(d);

    const std::uint64_t seed = detail::derive_seed(spec.seed, 400);
    double max_gap = 0.0;
    json offenders = json::array();
    auto gaps = detail::lane_values(
        spec.dual_traj, spec.threads, [&](std::uint64_t lane) {
            auto [outcome, draw] = run_forward_retained(
                ctx.law, ctx.start, spec.dual_n, seed, lane);
            (void)outcome;
            return duality_gap(draw, ctx.start, ctx.dual_start, spec.dual_n);
        });
    std::int64_t violations = 0;
    for (std::size_t i = 0; i < gaps.size(); ++i) {
        max_gap = std::max(max_gap, gaps[i]);
        if (gaps[i] > bound + 1e-12) {
            ++violations;
            if (offenders.size() < 32)
                offenders.push_back({{"seed", seed}, {"index", i}, {"gap", gaps[i]}});
        }
    }

    // norm sandwich via explicit products at small horizon
    const int n_small = 30;
    std::int64_t sandwich_violations = 0;
    const double kap2 = 2.0 * std::log(ctx.diag.kappa_sup);
    for (std::uint64_t lane = 0; lane < 200; ++lane) {
        auto [outcome, draw] = run_forward_retained(
            ctx.law, ctx.start, n_small,
            detail::derive_seed(spec.seed, 401), lane);
        // forward partial sums
        std::vector<double> s(n_small + 1, 0.0);
        {
            Direction x = ctx.start;
            for (int k = 1; k <= n_small; ++k) {
                const auto& g = draw.matrices[static_cast<std::size_t>(k - 1)];
                s[static_cast<std::size_t>(k)] =
                    s[static_cast<std::size_t>(k - 1)] + cocycle(g, x);
                x = act(g, x);
            }
        }
        for (int k = 0; k < n_small; ++k) {
            PositiveMatrix prod =
                draw.matrices[static_cast<std::size_t>(n_small - 1)];
            for (int j = n_small - 2; j >= k; --j)
                prod = multiply(prod, draw.matrices[static_cast<std::size_t>(j)]);
            const double lhs = std::log(matrix_norm(prod));
            const double diff = s[static_cast<std::size_t>(n_small)] -
                                s[static_cast<std::size_t>(k)];
            if (!(lhs - kap2 - 1e-9 <= diff && diff <= lhs + 1e-9))
                ++sandwich_violations;
        }
    }

    report.passed = violations == 0 && sandwich_violations == 0;
    report.extra = {{"gap_bound", bound},
                    {"max_gap", max_gap},
                    {"trajectories", spec.dual_traj},
                    {"n", spec.dual_n},
                    {"violations", violations},
                    {"offenders", offenders},
                    {"sandwich_violations", sandwich_violations}};
    return report;
}

/// Local limit theorem with a separable target F(x, s) = a(x) b(s):
/// MC mean of a(X_n) b(y + S_n - z) on survival against
/// (V_n / (sigma^2 n)) nu(a) int b(z' - z) ell(u, z'/(sigma sqrt n)) dz'.
inline VerificationReport verify_target(const ExperimentSpec& spec,
                                        const TargetFunction& target) {
    target.validate();
    VerificationReport report;
    report.theorem = "target";
    const long n = spec.ns.front();

    ExperimentSpec probe = spec;
    HarnessContext ctx0 = prepare_context(probe, {}, {});
    const double y =
        detail::resolve(spec.ys, spec.y_unit, ctx0.sigma_hat, n).front();
    const double z =
        detail::resolve(spec.zs, spec.z_unit, ctx0.sigma_hat, n).front();
    HarnessContext ctx = prepare_context(spec, {y}, {}, /*need_nu=*/true);
    report.diagnostics = ctx.diag;
    report.sigma_hat = ctx.sigma_hat;
    report.provenance = provenance_block(spec, ctx);

    TargetCollector collector(&target, y, z);
    SimulationPlan plan{ctx.law, ctx.start};
    plan.n = static_cast<int>(n);
    plan.num_traj = spec.traj_for(n);
    plan.seed = detail::derive_seed(spec.seed, 500);
    batch(plan, collector, spec.threads);

    const double mc = collector.mean();
    const double mc_se = collector.stderr_of_mean();
    const double sn = ctx.sigma_hat * std::sqrt(static_cast<double>(n));
    const double u = y / sn;
    const double vn = ctx.V_at(y) * L_func(u);
    const double nu_a = ctx.nu->mean_of_grid(target.a.values);
    const double lo = std::max(0.0, z + target.b_knots.front().first);
    const double hi = z + target.b_knots.back().first;
    const double z_integral =
        hi > lo ? integrate(
                      [&](double zp) {
                          return target.b(zp - z) * ell(u, zp / sn);
                      },
                      lo, hi, 1e-10)
                : 0.0;
    const double theory = vn / (ctx.sigma2_hat * static_cast<double>(n)) *
                          nu_a * z_integral;

    CellResult res;
    res.n = n;
    res.y = y;
    res.z = z;
    res.delta = target.b_knots.back().first - target.b_knots.front().first;
    res.mc_prob = mc;
    res.mc_stderr = mc_se;
    res.theory = theory;
    if (theory < spec.theory_floor && mc < spec.theory_floor + 10.0 * mc_se) {
        res.pass = true;
        res.by_floor = true;
    } else {
        if (mc_se > 0.25 * theory)
            throw InsufficientSamplesError("target cell too noisy");
        res.ratio = mc / theory;
        res.pass = std::abs(res.ratio - 1.0) <= spec.tol_cell;
    }
    report.cells.push_back(res);
    report.passed = res.pass;
    report.extra = {{"nu_a", nu_a}, {"z_integral", z_integral}, {"V_n", vn}};
    return report;
}

/// Martingale-approximation diagnostics for d = 2 finite laws: Poisson
/// residuals over a K ladder and sup |S_n - M_n| along simulated paths,
/// which the cohomological construction bounds by 2 sup |psi~|.
struct MartingaleCheck {
    std::vector<std::pair<int, double>> residual_by_K;
    std::vector<std::pair<int, double>> sup_gap_by_n;
    double bound = 0.0;  // 2 sup |psi~| (+ grid slack applied by callers)
    bool residual_decreasing = true;
};

inline MartingaleCheck martingale_bound_check(
    const MatrixLaw& law, const std::vector<int>& K_ladder,
    const std::vector<int>& n_ladder, long traj, std::uint64_t seed,
    std::size_t grid = 2049) {
    MartingaleCheck out;
    for (int K : K_ladder) {
        const auto sol = poisson_solve(law, K, grid);
        out.residual_by_K.emplace_back(K, sol.residual_sup);
    }
    for (std::size_t i = 1; i < out.residual_by_K.size(); ++i)
        if (out.residual_by_K[i].second >
            out.residual_by_K[i - 1].second + 1e-12)
            out.residual_decreasing = false;

    const auto sol = poisson_solve(law, K_ladder.back(), grid);
    out.bound = 2.0 * sol.sup_abs;
    const Direction x0 = Direction::barycenter(2);
    for (int n : n_ladder) {
        // sup over traj of |S_n - M_n| = |psi~(x0) - psi~(X_n)|
        double sup_gap = 0.0;
        detail::Walker walker(law);
        for (long i = 0; i < traj; ++i) {
            walker.begin(x0);
            RandomStream s(seed, 7, static_cast<std::uint64_t>(i));
            for (int k = 0; k < n; ++k) walker.step(s);
            const double gap =
                std::abs(sol.at(x0[0]) - sol.at(walker.direction()[0]));
            sup_gap = std::max(sup_gap, gap);
        }
        out.sup_gap_by_n.emplace_back(n, sup_gap);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Self-test suites (kernel + geometry property checks used by the CLI
// `selftest` subcommand and by the acceptance gate)
// ---------------------------------------------------------------------------

struct SelfTestResult {
    bool ok = true;
    std::vector<std::string> lines;

    void check(bool cond, const std::string& what) {
        ok = ok && cond;
        lines.push_back(std::string(cond ? "[pass] " : "[FAIL] ") + what);
    }
};

inline SelfTestResult run_kernel_selftest() {
    SelfTestResult r;
    // symmetry, zero line, positivity on a grid
    bool sym = true, zero = true, pos = true;
    for (int i = 0; i <= 100; ++i)
        for (int j = 0; j <= 100; ++j) {
            const double a = -3.0 + 6.0 * i / 100.0;
            const double b = -3.0 + 6.0 * j / 100.0;
            if (std::abs(psi(a, b) - psi(b, a)) > 1e-15) sym = false;
            if (a > 0.0 && b > 0.0 && !(psi(a, b) > 0.0)) pos = false;
        }
    for (double yv : {-3.0, 0.0, 1.7}) {
        if (std::abs(psi(yv, 0.0)) > 1e-15) zero = false;
    }
    r.check(sym, "psi symmetry on grid");
    r.check(zero, "psi(y, 0) = 0");
    r.check(pos, "psi > 0 on the open positive quadrant");

    bool mass = true;
    for (double yv : {0.0, 0.01, 0.1, 1.0, 3.0, 10.0}) {
        const double hi = std::max(yv, 0.0) + 12.0;
        const double m =
            integrate([&](double zv) { return ell(yv, zv); }, 0.0, hi, 1e-10);
        if (std::abs(m - 1.0) > 1e-8) mass = false;
    }
    r.check(mass, "int_0^inf ell(y, .) = 1 within 1e-8");

    r.check(std::abs(L_func(0.0) - 2.0 / kSqrt2Pi) <= 1e-12,
            "L(0) = 2/sqrt(2 pi) within 1e-12");

    // x stays away from 0 where H(x) = 0 makes the ratio kernels singular;
    // the x -> 0 regime is covered by the branch-stitching check below
    bool conv = true;
    for (double v : {0.1, 0.3, 0.5, 0.7, 0.9})
        for (double x : {-1.0, 0.2, 0.5, 1.3, 2.5})
            for (double yv : {0.0, 0.4, 0.9, 1.7, 3.0}) {
                const auto [lhs, rhs] = conv_identity_check(v, x, yv);
                if (std::abs(lhs - rhs) > 1e-8) conv = false;
            }
    r.check(conv, "convolution identity on 125-point (v,x,y) grid within 1e-8");

    bool sandwich = true;
    for (double eps : {0.05, 0.3, 1.0})
        for (double t : {-2.0, -0.9, -0.3, 0.0, 0.4, 1.5}) {
            const double ind = t > 0.0 ? 1.0 : 0.0;
            if (!(smooth_indicator(eps, t - eps) <= ind + 1e-15 &&
                  ind <= smooth_indicator(eps, t) + 1e-15))
                sandwich = false;
        }
    r.check(sandwich, "chi_eps sandwich of the indicator");

    // branch stitching at the y-threshold
    bool stitch = true;
    const double yt = default_kernel_config().y_zero_threshold;
    for (int i = 0; i <= 100; ++i) {
        const double zv = 5.0 * i / 100.0;
        if (std::abs(psi(yt, zv) / H(yt) - rayleigh_pdf(zv)) > 1e-6)
            stitch = false;
    }
    r.check(stitch, "ell branch switch is seamless at |y| = threshold");
    return r;
}

inline SelfTestResult run_geometry_selftest() {
    SelfTestResult r;
    RandomStream s(777);
    auto rand_dir = [&](std::size_t d) {
        std::vector<double> v(d);
        for (double& c : v) c = s.next_uniform(1e-3, 1.0);
        return normalize(v);
    };
    auto rand_fk = [&](std::size_t d, double kappa) {
        std::vector<double> e(d * d);
        const double base = s.next_uniform(0.25, 4.0);
        for (double& x : e) x = base * s.next_uniform(1.0, kappa);
        return PositiveMatrix(d, std::move(e));
    };

    bool cocycle_ok = true;
    for (int rep = 0; rep < 2000; ++rep) {
        const std::size_t d = 2 + (rep % 3);
        const auto g1 = rand_fk(d, 5.0), g2 = rand_fk(d, 5.0);
        const auto x = rand_dir(d);
        if (std::abs(cocycle(multiply(g2, g1), x) -
                     cocycle(g2, act(g1, x)) - cocycle(g1, x)) > 1e-10)
            cocycle_ok = false;
    }
    r.check(cocycle_ok, "cocycle identity within 1e-10");

    bool sandwich_ok = true;
    const double kappa = 2.0;
    for (int rep = 0; rep < 10000; ++rep) {
        const auto g = rand_fk(2 + (rep % 2), kappa);
        const auto x = rand_dir(g.dim());
        const double gx = std::exp(cocycle(g, x));
        const double nrm = matrix_norm(g);
        if (!(gx <= nrm * (1.0 + 1e-12) &&
              gx >= nrm / (kappa * kappa) * (1.0 - 1e-12)))
            sandwich_ok = false;
    }
    r.check(sandwich_ok, "norm comparability sandwich on 1e4 pairs, kappa = 2");

    bool contraction_ok = true;
    for (int rep = 0; rep < 2000; ++rep) {
        const std::size_t d = 2 + (rep % 3);
        const auto g = rand_fk(d, 6.0);
        const auto x = rand_dir(d), x2 = rand_dir(d);
        const double before = hilbert_metric(x, x2);
        const double after = hilbert_metric(act(g, x), act(g, x2));
        if (after > before + 1e-12) contraction_ok = false;
        if (before > 1e-9 && !(after < before)) contraction_ok = false;
    }
    r.check(contraction_ok, "strict contraction for strictly positive factors");

    bool gain_ok = true;
    for (int rep = 0; rep < 20; ++rep)
        for (std::size_t d : {std::size_t{2}, std::size_t{3}}) {
            const auto g = rand_fk(d, 6.0);
            double best = std::numeric_limits<double>::infinity();
            if (d == 2) {
                std::array<double, 2> xs{};
                std::array<double, 2> out{};
                for (int i = 0; i <= 10000; ++i) {
                    xs = {i / 10000.0, 1.0 - i / 10000.0};
                    best = std::min(
                        best, detail::apply_matrix(g.entries(), 2, xs, out));
                }
            } else {
                std::array<double, 3> xs{};
                std::array<double, 3> out{};
                for (int i = 0; i <= 100; ++i)
                    for (int j = 0; j + i <= 100; ++j) {
                        xs = {i / 100.0, j / 100.0, 1.0 - i / 100.0 - j / 100.0};
                        best = std::min(
                            best, detail::apply_matrix(g.entries(), 3, xs, out));
                    }
            }
            if (std::abs(best - min_gain(g)) > 1e-9) gain_ok = false;
        }
    r.check(gain_ok, "min_gain equals simplex-grid minimization within 1e-9");
    return r;
}

}  // namespace conewalk
