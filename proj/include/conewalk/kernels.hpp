#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <utility>

#include "conewalk/errors.hpp"
#include "conewalk/quadrature.hpp"

namespace conewalk {

inline constexpr double kSqrt2Pi = 2.5066282746310005024;

struct KernelConfig {
    double y_zero_threshold = 1e-6;  // switch ell to its y->0 limit below this
    double quad_abs_tol = 1e-10;
    unsigned quad_max_depth = 15;
};

inline const KernelConfig& default_kernel_config() {
    static const KernelConfig cfg{};
    return cfg;
}

inline double std_normal_pdf(double t) {
    return std::exp(-0.5 * t * t) / kSqrt2Pi;
}

inline double std_normal_cdf(double t) {
    return 0.5 * std::erfc(-t / 1.4142135623730950488);
}

/// Heat kernel of Brownian motion killed at zero:
/// psi(y, z) = (phi(y - z) - phi(y + z)), phi the standard normal density.
/// Positive on the open positive quadrant, psi(y, 0) = 0, symmetric in
/// (y, z), odd in each argument.
inline double psi(double y, double z) {
    return (std::exp(-0.5 * (y - z) * (y - z)) -
            std::exp(-0.5 * (y + z) * (y + z))) /
           kSqrt2Pi;
}

/// Normalization H(y) = int_0^inf psi(y, z) dz = 2 Phi(y) - 1.
inline double H(double y) { return 2.0 * std_normal_cdf(y) - 1.0; }

/// Rayleigh density phi+(z) = z exp(-z^2/2) on z >= 0.
inline double rayleigh_pdf(double z) {
    return z >= 0.0 ? z * std::exp(-0.5 * z * z) : 0.0;
}

/// Rayleigh distribution function Phi+(t) = 1 - exp(-t^2/2) on t >= 0.
inline double rayleigh_cdf(double t) {
    return t >= 0.0 ? -std::expm1(-0.5 * t * t) : 0.0;
}

/// Conditioned density ell(y, .) = psi(y, .) / H(y), a probability density
/// on the positive half-line for every y. Below the configured |y|
/// threshold the 0/0 ratio is replaced by its limit, the Rayleigh density.
inline double ell(double y, double z,
                  const KernelConfig& cfg = default_kernel_config()) {
    if (std::abs(y) < cfg.y_zero_threshold) return rayleigh_pdf(z);
    return psi(y, z) / H(y);
}

/// L(y) = H(y)/y, extended by continuity with L(0) = 2/sqrt(2 pi).
/// Positive and even.
inline double L_func(double y,
                     const KernelConfig& cfg = default_kernel_config()) {
    if (std::abs(y) < cfg.y_zero_threshold) return 2.0 / kSqrt2Pi;
    return H(y) / y;
}

/// Scaled heat kernel psi_v(x, y) = psi(x/sqrt v, y/sqrt v)/sqrt v
///                               = phi_v(x - y) - phi_v(x + y).
inline double psi_scaled(double v, double x, double y) {
    if (!(v > 0.0)) throw ConfigError("psi_scaled: v must be > 0");
    const double s = std::sqrt(v);
    return psi(x / s, y / s) / s;
}

/// ell_v(x, y) = psi_v(x, y) / H(x); the normalization stays unscaled.
/// Near x = 0 the 0/0 ratio is replaced by its limit phi+(y/sqrt v)/v,
/// mirroring the unscaled ell branch.
inline double ell_scaled(double v, double x, double y,
                         const KernelConfig& cfg = default_kernel_config()) {
    if (std::abs(x) < cfg.y_zero_threshold) {
        if (!(v > 0.0)) throw ConfigError("ell_scaled: v must be > 0");
        return rayleigh_pdf(y / std::sqrt(v)) / v;
    }
    return psi_scaled(v, x, y) / H(x);
}

/// Normal density of variance v.
inline double gauss_pdf_var(double v, double t) {
    const double s = std::sqrt(v);
    return std_normal_pdf(t / s) / s;
}

/// Both sides of the half-line convolution identity
///   (phi_v * ell^+_{1-v})(x, y) + (phi_v * ell^-_{1-v})(x, y) = ell(x, y)
/// for v in (0, 1). lhs by quadrature over the two half-lines, rhs closed
/// form; the caller compares them at its own tolerance.
inline std::pair<double, double> conv_identity_check(
    double v, double x, double y,
    const KernelConfig& cfg = default_kernel_config()) {
    if (!(v > 0.0 && v < 1.0))
        throw ConfigError("conv_identity_check: v in (0,1) required");
    const double reach = 12.0;  // Gaussian tails are dead past 12 sd
    const double hi = std::max(std::abs(y), std::abs(x)) + reach;
    auto integrand = [&](double z) {
        return gauss_pdf_var(v, y - z) * ell_scaled(1.0 - v, x, z);
    };
    const double plus =
        integrate(integrand, 0.0, hi, cfg.quad_abs_tol, cfg.quad_max_depth);
    const double minus =
        integrate(integrand, -hi, 0.0, cfg.quad_abs_tol, cfg.quad_max_depth);
    return {plus + minus, ell(x, y, cfg)};
}

/// Piecewise-linear smooth indicator: 0 below -eps, linear ramp on
/// (-eps, 0), 1 from 0 on. 1/eps-Lipschitz, and sandwiches the strict
/// indicator: chi_eps(t - eps) <= 1{t > 0} <= chi_eps(t).
inline double smooth_indicator(double eps, double t) {
    if (!(eps > 0.0)) throw ConfigError("smooth_indicator: eps must be > 0");
    if (t <= -eps) return 0.0;
    if (t >= 0.0) return 1.0;
    return (t + eps) / eps;
}

/// Inputs the theorem evaluators consume. sigma/V are estimated upstream
/// and passed in explicitly so statistical error never hides inside the
/// analytic layer.
struct TheoremInputs {
    double y = 0.0;
    double z = 0.0;              // window left edge, >= 0
    double delta_window = 1.0;   // window length Delta > 0
    long n = 1;
    double sigma_hat = 1.0;
    double V_hat = 0.0;
    std::optional<double> V_star_hat;  // evaluated at z + Delta by the caller

    void validate() const {
        if (n < 1) throw ConfigError("TheoremInputs: n >= 1");
        if (!(sigma_hat > 0.0)) throw ConfigError("TheoremInputs: sigma > 0");
        if (!(delta_window >= 0.0)) throw ConfigError("TheoremInputs: Delta >= 0");
        if (z < 0.0) throw ConfigError("TheoremInputs: z >= 0");
    }
};

/// Main term of the conditioned local limit theorem:
///   V_n(x,y) / (sigma^2 n) * int_z^{z+Delta} ell(y/(sigma sqrt n),
///                                               z'/(sigma sqrt n)) dz'
/// with V_n(x,y) = V(x,y) L(y/(sigma sqrt n)).
inline double main_term_thm1(const TheoremInputs& inp,
                             const KernelConfig& cfg = default_kernel_config()) {
    inp.validate();
    if (inp.delta_window == 0.0) return 0.0;
    const double sn = inp.sigma_hat * std::sqrt(static_cast<double>(inp.n));
    const double u = inp.y / sn;
    const double pref = inp.V_hat * L_func(u, cfg) /
                        (inp.sigma_hat * inp.sigma_hat * static_cast<double>(inp.n));
    const double integral = integrate(
        [&](double zp) { return ell(u, zp / sn, cfg); }, inp.z,
        inp.z + inp.delta_window, cfg.quad_abs_tol, cfg.quad_max_depth);
    return pref * integral;
}

/// y -> 0 reduction of the main term (the Caravenna-regime value):
///   2 V / (sqrt(2 pi) sigma^2 n) * int_z^{z+Delta} phi+(z'/(sigma sqrt n)) dz'.
/// Coincides with main_term_thm1 at y = 0 since ell(0,.) is the Rayleigh
/// density and L(0) = 2/sqrt(2 pi).
inline double caravenna_term(const TheoremInputs& inp,
                             const KernelConfig& cfg = default_kernel_config()) {
    inp.validate();
    if (inp.delta_window == 0.0) return 0.0;
    const double sn = inp.sigma_hat * std::sqrt(static_cast<double>(inp.n));
    const double pref =
        2.0 * inp.V_hat /
        (kSqrt2Pi * inp.sigma_hat * inp.sigma_hat * static_cast<double>(inp.n));
    const double integral = integrate(
        [&](double zp) { return rayleigh_pdf(zp / sn); }, inp.z,
        inp.z + inp.delta_window, cfg.quad_abs_tol, cfg.quad_max_depth);
    return pref * integral;
}

/// Large-y regime term: (1/(sigma sqrt n)) int_z^{z+Delta}
/// psi(y/(sigma sqrt n), z'/(sigma sqrt n)) dz'. Relates to the main term
/// by main/large = V_hat / y exactly (since ell = psi/H and L = H/y).
inline double large_y_term(const TheoremInputs& inp,
                           const KernelConfig& cfg = default_kernel_config()) {
    inp.validate();
    if (inp.delta_window == 0.0) return 0.0;
    const double sn = inp.sigma_hat * std::sqrt(static_cast<double>(inp.n));
    const double u = inp.y / sn;
    const double integral = integrate(
        [&](double zp) { return psi(u, zp / sn); }, inp.z,
        inp.z + inp.delta_window, cfg.quad_abs_tol, cfg.quad_max_depth);
    return integral / sn;
}

enum class ClltRegime { small_y, large_y, unified };

/// Right-hand side of the conditioned central limit theorem at argument t
/// (t may be +infinity):
///   small_y : Phi+(t) * 2 V / (sigma sqrt(2 pi n))
///   large_y : int_0^t psi(y/(sigma sqrt n), z) dz
///   unified : (V_n / (sigma sqrt n)) int_0^t ell(y/(sigma sqrt n), u) du
inline double cclt_rhs(const TheoremInputs& inp, double t, ClltRegime regime,
                       const KernelConfig& cfg = default_kernel_config()) {
    if (inp.n < 1) throw ConfigError("cclt_rhs: n >= 1");
    if (!(inp.sigma_hat > 0.0)) throw ConfigError("cclt_rhs: sigma > 0");
    const double sn = inp.sigma_hat * std::sqrt(static_cast<double>(inp.n));
    const double u = inp.y / sn;
    const bool at_inf = std::isinf(t);
    switch (regime) {
        case ClltRegime::small_y: {
            const double cdf = at_inf ? 1.0 : rayleigh_cdf(t);
            return cdf * 2.0 * inp.V_hat /
                   (inp.sigma_hat * kSqrt2Pi *
                    std::sqrt(static_cast<double>(inp.n)));
        }
        case ClltRegime::large_y: {
            if (!at_inf && t < 0.0)
                throw ConfigError("cclt_rhs: t >= 0 in the large_y regime");
            if (at_inf) return H(u);
            return integrate([&](double z) { return psi(u, z); }, 0.0, t,
                             cfg.quad_abs_tol, cfg.quad_max_depth);
        }
        case ClltRegime::unified: {
            const double vn = inp.V_hat * L_func(u, cfg);
            if (at_inf) return vn / sn;  // int_0^inf ell = 1
            const double integral =
                integrate([&](double s) { return ell(u, s, cfg); }, 0.0,
                          std::max(t, 0.0), cfg.quad_abs_tol, cfg.quad_max_depth);
            return vn / sn * integral;
        }
    }
    return 0.0;
}

/// Shape of the uniform n^{-3/2} upper bound with unit constant:
///   Delta n^{-3/2} (1 + V_n(x, y)) (1 + V*_n(x', z + Delta)).
/// The harness monitors the implied constant instead of asserting one.
inline double upper_bound_thm3(const TheoremInputs& inp,
                               const KernelConfig& cfg = default_kernel_config()) {
    inp.validate();
    if (!inp.V_star_hat)
        throw ConfigError("upper_bound_thm3: V_star_hat required");
    const double sn = inp.sigma_hat * std::sqrt(static_cast<double>(inp.n));
    const double vn = inp.V_hat * L_func(inp.y / sn, cfg);
    const double vsn =
        *inp.V_star_hat * L_func((inp.z + inp.delta_window) / sn, cfg);
    return inp.delta_window * std::pow(static_cast<double>(inp.n), -1.5) *
           (1.0 + vn) * (1.0 + vsn);
}

}  // namespace conewalk
