// conewalk command-line interface: simulate walks, estimate spectral and
// harmonic quantities, verify the limit-theorem predictions against Monte
// Carlo, tabulate kernels, and run the built-in property self-tests.
//
// Exit codes: 0 success, 1 usage/config error, 2 verification failure.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "conewalk/harness.hpp"
#include "conewalk/io.hpp"
#include "conewalk/version.hpp"

namespace cw = conewalk;
namespace fs = std::filesystem;

namespace {

struct CommonOpts {
    std::string config;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    unsigned threads = 0;
    std::optional<double> tol;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool need_config = true) {
    auto* c = cmd->add_option("--config", opts.config, "JSON config file");
    if (need_config) c->required();
    cmd->add_option("--out", opts.out_dir, "output directory");
    cmd->add_option("--seed", opts.seed, "override the config seed");
    cmd->add_option("--threads", opts.threads, "worker threads (0 = all)");
    cmd->add_option("--tol", opts.tol, "override per-cell ratio tolerance");
}

cw::ExperimentSpec load_spec(const CommonOpts& opts) {
    cw::ExperimentSpec spec = cw::spec_from_json(cw::load_json_file(opts.config));
    if (opts.seed) spec.seed = *opts.seed;
    if (opts.threads) spec.threads = opts.threads;
    if (opts.tol) spec.tol_cell = *opts.tol;
    return spec;
}

void write_report(const cw::VerificationReport& report,
                  const std::string& out_dir) {
    if (out_dir.empty()) {
        std::cout << report.summary_json().dump(2) << '\n';
        return;
    }
    fs::create_directories(out_dir);
    cw::write_text_file((fs::path(out_dir) / "report.csv").string(),
                        report.csv());
    cw::write_text_file((fs::path(out_dir) / "summary.json").string(),
                        report.summary_json().dump(2) + "\n");
    std::cout << (report.passed ? "PASS " : "FAIL ") << report.theorem
              << "  (report in " << out_dir << ")\n";
}

/// Collector for the simulate subcommand: aggregates plus optional
/// per-trajectory CSV rows kept in trajectory order.
class SimulateCollector {
  public:
    SimulateCollector(std::vector<double> thresholds, bool keep_rows)
        : thresholds_(std::move(thresholds)), keep_rows_(keep_rows) {}

    struct Partial {
        std::vector<double> s_n;
        std::vector<double> prefix_min;
        std::vector<std::uint64_t> survived;
        std::string rows;
    };

    void accumulate(Partial& p, std::uint64_t idx,
                    const cw::TrajectoryOutcome& o) const {
        if (p.survived.empty()) p.survived.assign(thresholds_.size() + 1, 0);
        p.s_n.push_back(o.final_log_norm);
        p.prefix_min.push_back(o.prefix_min);
        for (std::size_t i = 0; i < thresholds_.size(); ++i)
            if (thresholds_[i] + o.prefix_min >= 0.0) ++p.survived[i];
        if (keep_rows_) {
            char buf[160];
            std::snprintf(buf, sizeof buf, "%llu,%.17g,%.17g",
                          static_cast<unsigned long long>(idx),
                          o.final_log_norm, o.prefix_min);
            p.rows += buf;
            for (double y : thresholds_)
                p.rows += (y + o.prefix_min >= 0.0) ? ",1" : ",0";
            p.rows += '\n';
        }
    }

    void absorb(Partial&& p) {
        if (survived_.empty()) survived_.assign(thresholds_.size() + 1, 0);
        sum_s_ += cw::pairwise_sum(p.s_n);
        sum_min_ += cw::pairwise_sum(p.prefix_min);
        count_ += p.s_n.size();
        for (std::size_t i = 0; i < thresholds_.size(); ++i)
            survived_[i] += p.survived[i];
        csv_ += p.rows;
    }

    cw::json aggregate() const {
        cw::json surv = cw::json::array();
        for (std::size_t i = 0; i < thresholds_.size(); ++i)
            surv.push_back({{"y", thresholds_[i]},
                            {"survival",
                             static_cast<double>(survived_[i]) /
                                 static_cast<double>(count_)}});
        return {{"num_traj", count_},
                {"mean_S_n", sum_s_ / static_cast<double>(count_)},
                {"mean_prefix_min", sum_min_ / static_cast<double>(count_)},
                {"survival", std::move(surv)}};
    }

    std::string csv_header() const {
        std::string h = "index,S_n,prefix_min";
        for (double y : thresholds_) {
            char buf[48];
            std::snprintf(buf, sizeof buf, ",survived_%g", y);
            h += buf;
        }
        return h + "\n";
    }
    const std::string& csv_rows() const { return csv_; }

  private:
    std::vector<double> thresholds_;
    bool keep_rows_;
    double sum_s_ = 0.0, sum_min_ = 0.0;
    std::size_t count_ = 0;
    std::vector<std::uint64_t> survived_;
    std::string csv_;
};

int cmd_simulate(const CommonOpts& opts, bool csv_rows) {
    cw::SimulationPlan plan =
        cw::plan_from_json(cw::load_json_file(opts.config));
    if (opts.seed) plan.seed = *opts.seed;
    SimulateCollector collector(plan.exit_thresholds, csv_rows);
    cw::batch(plan, collector, opts.threads);
    cw::json agg = collector.aggregate();
    agg["plan"] = cw::to_json(plan);
    if (opts.out_dir.empty()) {
        std::cout << agg.dump(2) << '\n';
    } else {
        fs::create_directories(opts.out_dir);
        cw::write_text_file(
            (fs::path(opts.out_dir) / "aggregate.json").string(),
            agg.dump(2) + "\n");
        if (csv_rows)
            cw::write_text_file(
                (fs::path(opts.out_dir) / "trajectories.csv").string(),
                collector.csv_header() + collector.csv_rows());
        std::cout << "wrote " << opts.out_dir << "\n";
    }
    return 0;
}

int cmd_estimate(const CommonOpts& opts) {
    cw::ExperimentSpec spec = load_spec(opts);
    std::vector<double> v_nodes = spec.ys;
    std::vector<double> vs_nodes = spec.zs;
    const bool d2 = spec.ensemble.dim() == 2 && spec.ensemble.is_finite();
    cw::HarnessContext ctx =
        cw::prepare_context(spec, v_nodes, vs_nodes, /*need_nu=*/d2);
    cw::json out;
    out["diagnostics"] = cw::to_json(ctx.diag);
    out["sigma_hat"] = ctx.sigma_hat;
    out["provenance"] = cw::provenance_block(spec, ctx);
    // MC sigma cross-check alongside the method used by the context
    const auto mc_sig =
        cw::sigma2(ctx.law, ctx.diag.residual_drift, spec.n_sigma, spec.m_sigma,
                   cw::RandomStream(spec.seed ^ 0xABCD), spec.threads);
    out["sigma2_mc_at_n"] = cw::to_json(mc_sig.at_n);
    out["sigma2_mc_at_2n"] = cw::to_json(mc_sig.at_2n);
    if (d2) {
        const auto sol = cw::poisson_solve(ctx.law, 64, 2049);
        out["poisson"] = {{"K", sol.truncation_K},
                          {"residual_sup", sol.residual_sup},
                          {"nu_mean", sol.nu_mean},
                          {"sup_abs", sol.sup_abs}};
    }
    cw::json vt = cw::json::array();
    for (const auto& e : ctx.v_table) vt.push_back(cw::to_json(e));
    cw::json vst = cw::json::array();
    for (const auto& e : ctx.v_star_table) vst.push_back(cw::to_json(e));
    out["V"] = std::move(vt);
    out["V_star"] = std::move(vst);
    if (opts.out_dir.empty()) {
        std::cout << out.dump(2) << '\n';
    } else {
        fs::create_directories(opts.out_dir);
        cw::write_text_file((fs::path(opts.out_dir) / "estimates.json").string(),
                            out.dump(2) + "\n");
        if (ctx.nu)
            cw::write_text_file((fs::path(opts.out_dir) / "measure.csv").string(),
                                cw::measure_csv(*ctx.nu));
        std::cout << "wrote " << opts.out_dir << "\n";
    }
    return 0;
}

int cmd_verify(const std::string& theorem, const CommonOpts& opts) {
    cw::ExperimentSpec spec = load_spec(opts);
    cw::VerificationReport report;
    if (theorem == "thm1") {
        report = cw::verify_local_theorem(spec);
    } else if (theorem == "caravenna") {
        report = cw::verify_caravenna(spec);
    } else if (theorem == "large-y") {
        report = cw::verify_large_y(spec);
    } else if (theorem == "cclt") {
        report = cw::verify_cclt(spec, cw::ClltRegime::small_y);
    } else if (theorem == "cclt-unified") {
        report = cw::verify_cclt(spec, cw::ClltRegime::unified);
    } else if (theorem == "slope") {
        report = cw::verify_upper_bound_slope(spec);
    } else if (theorem == "duality") {
        report = cw::verify_duality_and_norms(spec);
    } else if (theorem == "target") {
        if (!spec.target)
            throw cw::ConfigError("verify target: config must define target");
        report = cw::verify_target(spec, *spec.target);
    } else {
        throw cw::ConfigError("unknown theorem '" + theorem +
                              "' (thm1|caravenna|large-y|cclt|cclt-unified|"
                              "slope|duality|target)");
    }
    write_report(report, opts.out_dir);
    return report.passed ? 0 : 2;
}

int cmd_kernels(const std::string& kernel, double a0, double a1, int na,
                double b0, double b1, int nb, double v,
                const std::string& out_path) {
    std::ostringstream csv;
    csv.precision(17);
    const bool two_arg = kernel == "psi" || kernel == "ell" ||
                         kernel == "psi_scaled" || kernel == "ell_scaled";
    if (two_arg) {
        csv << "y,z,value\n";
        for (int i = 0; i < na; ++i)
            for (int j = 0; j < nb; ++j) {
                const double a = na == 1 ? a0 : a0 + (a1 - a0) * i / (na - 1);
                const double b = nb == 1 ? b0 : b0 + (b1 - b0) * j / (nb - 1);
                double val = 0.0;
                if (kernel == "psi") val = cw::psi(a, b);
                if (kernel == "ell") val = cw::ell(a, b);
                if (kernel == "psi_scaled") val = cw::psi_scaled(v, a, b);
                if (kernel == "ell_scaled") val = cw::ell_scaled(v, a, b);
                csv << a << ',' << b << ',' << val << '\n';
            }
    } else {
        csv << "y,value\n";
        for (int i = 0; i < na; ++i) {
            const double a = na == 1 ? a0 : a0 + (a1 - a0) * i / (na - 1);
            double val = 0.0;
            if (kernel == "H") val = cw::H(a);
            else if (kernel == "L") val = cw::L_func(a);
            else if (kernel == "rayleigh_pdf") val = cw::rayleigh_pdf(a);
            else if (kernel == "rayleigh_cdf") val = cw::rayleigh_cdf(a);
            else
                throw cw::ConfigError("unknown kernel '" + kernel + "'");
            csv << a << ',' << val << '\n';
        }
    }
    if (out_path.empty())
        std::cout << csv.str();
    else
        cw::write_text_file(out_path, csv.str());
    return 0;
}

int cmd_selftest() {
    const auto kernel = cw::run_kernel_selftest();
    const auto geometry = cw::run_geometry_selftest();
    for (const auto& l : kernel.lines) std::cout << "kernel   " << l << '\n';
    for (const auto& l : geometry.lines) std::cout << "geometry " << l << '\n';
    const bool ok = kernel.ok && geometry.ok;
    std::cout << (ok ? "selftest: all checks passed\n"
                     : "selftest: FAILURES above\n");
    return ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"conewalk: products of positive random matrices, conditioned "
                 "walks, and their limit-theorem verification"};
    app.set_version_flag("--version", cw::version_string);
    app.require_subcommand(1);

    CommonOpts sim_opts;
    bool sim_csv = false;
    auto* sim = app.add_subcommand("simulate", "run a batch of trajectories");
    add_common(sim, sim_opts);
    sim->add_flag("--csv", sim_csv, "write per-trajectory CSV");

    CommonOpts est_opts;
    auto* est = app.add_subcommand(
        "estimate", "lambda, sigma^2, invariant measure, V and V*");
    add_common(est, est_opts);

    CommonOpts ver_opts;
    std::string theorem;
    auto* ver = app.add_subcommand("verify", "compare Monte Carlo to theory");
    ver->add_option("theorem", theorem,
                    "thm1|caravenna|large-y|cclt|cclt-unified|slope|duality|"
                    "target")
        ->required();
    add_common(ver, ver_opts);

    std::string kernel_name = "psi", kernel_out;
    double a0 = 0.0, a1 = 3.0, b0 = 0.0, b1 = 3.0, scale_v = 1.0;
    int na = 31, nb = 31;
    auto* ker = app.add_subcommand("kernels", "tabulate a kernel to CSV");
    ker->add_option("--kernel", kernel_name,
                    "psi|ell|psi_scaled|ell_scaled|H|L|rayleigh_pdf|rayleigh_cdf");
    ker->add_option("--a0", a0);
    ker->add_option("--a1", a1);
    ker->add_option("--na", na);
    ker->add_option("--b0", b0);
    ker->add_option("--b1", b1);
    ker->add_option("--nb", nb);
    ker->add_option("--v", scale_v, "scale parameter for *_scaled");
    ker->add_option("--out", kernel_out, "output CSV path (default stdout)");

    app.add_subcommand("selftest", "kernel and geometry property suites");

    CLI11_PARSE(app, argc, argv);

    try {
        if (sim->parsed()) return cmd_simulate(sim_opts, sim_csv);
        if (est->parsed()) return cmd_estimate(est_opts);
        if (ver->parsed()) return cmd_verify(theorem, ver_opts);
        if (ker->parsed())
            return cmd_kernels(kernel_name, a0, a1, na, b0, b1, nb, scale_v,
                               kernel_out);
        return cmd_selftest();
    } catch (const cw::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
