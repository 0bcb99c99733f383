#pragma once

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "conewalk/cone.hpp"
#include "conewalk/ensemble.hpp"
#include "conewalk/errors.hpp"
#include "conewalk/estimators.hpp"
#include "conewalk/walk.hpp"

namespace conewalk {

using nlohmann::json;

// matrices serialize as row-major nested arrays, directions as flat arrays

inline json to_json(const PositiveMatrix& g) {
    json rows = json::array();
    for (std::size_t i = 0; i < g.dim(); ++i) {
        json row = json::array();
        for (std::size_t j = 0; j < g.dim(); ++j) row.push_back(g.at(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline PositiveMatrix matrix_from_json(const json& j) {
    if (!j.is_array() || j.empty())
        throw ConfigError("matrix: expected a nested array");
    const std::size_t d = j.size();
    std::vector<double> e;
    e.reserve(d * d);
    for (const auto& row : j) {
        if (!row.is_array() || row.size() != d)
            throw ConfigError("matrix: ragged rows");
        for (const auto& v : row) e.push_back(v.get<double>());
    }
    return PositiveMatrix(d, std::move(e));
}

inline json to_json(const Direction& x) {
    return json(x.coords());
}

inline Direction direction_from_json(const json& j) {
    return normalize(j.get<std::vector<double>>());
}

/// Ensemble spec:
///   { "dim": d, "support": [{"matrix": [[..]], "prob": p}, ...],
///     "log_scale": s }
/// or
///   { "dim": d, "generator": "log_uniform", "params": {"a": .., "b": ..},
///     "log_scale": s }
inline json to_json(const MatrixLaw& law) {
    json j;
    j["dim"] = law.dim();
    j["log_scale"] = law.log_scale();
    if (law.is_finite()) {
        json support = json::array();
        for (const auto& a : law.atoms())
            support.push_back({{"matrix", to_json(a.matrix)}, {"prob", a.prob}});
        j["support"] = std::move(support);
    } else {
        j["generator"] = "log_uniform";
        j["params"] = {{"a", law.generator().a}, {"b", law.generator().b}};
    }
    return j;
}

inline MatrixLaw law_from_json(const json& j) {
    if (!j.contains("dim")) throw ConfigError("ensemble: missing dim");
    const auto dim = j.at("dim").get<std::size_t>();
    const double log_scale = j.value("log_scale", 0.0);
    if (j.contains("support")) {
        std::vector<SupportAtom> atoms;
        for (const auto& a : j.at("support"))
            atoms.push_back(
                {matrix_from_json(a.at("matrix")), a.at("prob").get<double>()});
        return MatrixLaw(dim, std::move(atoms), log_scale);
    }
    if (j.contains("generator")) {
        const auto name = j.at("generator").get<std::string>();
        if (name != "log_uniform")
            throw ConfigError("ensemble: unknown generator '" + name + "'");
        const auto& p = j.at("params");
        return MatrixLaw(
            LogUniformGenerator{dim, p.at("a").get<double>(), p.at("b").get<double>()},
            log_scale);
    }
    throw ConfigError("ensemble: need either support or generator");
}

inline json to_json(const SimulationPlan& plan) {
    json j;
    j["ensemble"] = to_json(plan.law);
    j["start"] = to_json(plan.start);
    j["n"] = plan.n;
    j["num_traj"] = plan.num_traj;
    j["seed"] = plan.seed;
    j["retain_matrices"] = plan.retain_matrices;
    if (plan.dual_start) j["dual_start"] = to_json(*plan.dual_start);
    if (!plan.exit_thresholds.empty()) j["exit_thresholds"] = plan.exit_thresholds;
    return j;
}

inline SimulationPlan plan_from_json(const json& j) {
    MatrixLaw law = law_from_json(j.at("ensemble"));
    Direction start = j.contains("start") ? direction_from_json(j.at("start"))
                                          : Direction::barycenter(law.dim());
    SimulationPlan plan{std::move(law), std::move(start)};
    plan.n = j.value("n", 1);
    plan.num_traj = j.value("num_traj", std::int64_t{1});
    plan.seed = j.value("seed", std::uint64_t{0});
    plan.retain_matrices = j.value("retain_matrices", false);
    if (j.contains("dual_start"))
        plan.dual_start = direction_from_json(j.at("dual_start"));
    if (j.contains("exit_thresholds"))
        plan.exit_thresholds = j.at("exit_thresholds").get<std::vector<double>>();
    plan.validate();
    return plan;
}

inline json to_json(const ConfidenceEstimate& e) {
    return {{"value", e.value},
            {"stderr", e.stderr_},
            {"n_samples", e.n_samples},
            {"method", e.method}};
}

inline json to_json(const HarmonicEstimate& e) {
    return {{"x", to_json(e.x)},
            {"y", e.y},
            {"n_V", e.n_V},
            {"value", e.value},
            {"stderr", e.stderr_},
            {"plateau_flag", e.plateau_flag},
            {"value_half", e.value_half},
            {"stderr_half", e.stderr_half},
            {"dual", e.dual}};
}

inline json to_json(const EnsembleDiagnostics& d) {
    json j;
    j["lyapunov_hat"] = d.lyapunov_hat;
    j["lyapunov_stderr"] = d.lyapunov_stderr;
    j["sigma2_hat"] = d.sigma2_hat;
    j["sigma2_stderr"] = d.sigma2_stderr;
    j["kappa_sup"] = std::isfinite(d.kappa_sup) ? json(d.kappa_sup) : json("inf");
    j["kappa_exact"] = d.kappa_exact;
    j["moment_2_delta"] = d.moment_2_delta;
    j["delta"] = d.delta;
    if (d.a1_horizon)
        j["a1_horizon"] = *d.a1_horizon;
    else
        j["a1_horizon"] = "failed";
    j["residual_drift"] = d.residual_drift;
    return j;
}

/// FNV-1a hash of the canonical ensemble dump; embedded in report
/// provenance blocks.
inline std::uint64_t ensemble_hash(const MatrixLaw& law) {
    const std::string dump = to_json(law).dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : dump) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline void write_text_file(const std::string& path, const std::string& body) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open for writing: " + path);
    out << body;
}

inline json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config: " + path);
    json j;
    in >> j;
    return j;
}

/// EmpiricalMeasure CSV: bin_center, mass (d = 2 histogram form).
inline std::string measure_csv(const EmpiricalMeasure& m) {
    std::ostringstream out;
    out << "bin_center,mass\n" << std::setprecision(17);
    for (std::size_t b = 0; b < m.bins; ++b)
        out << m.bin_center(b) << ',' << m.bin_mass[b] << '\n';
    return out.str();
}

}  // namespace conewalk
