#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <thread>
#include <utility>
#include <vector>

#include "conewalk/cone.hpp"
#include "conewalk/ensemble.hpp"
#include "conewalk/errors.hpp"
#include "conewalk/rng.hpp"

namespace conewalk {

/// Per-path record of one forward walk of length n.
struct TrajectoryOutcome {
    Direction final_direction;        // X_n
    double final_log_norm = 0.0;      // S_n (nats)
    double prefix_min = 0.0;          // min_{1<=j<=n} S_j
    double prefix_max = 0.0;          // max_{1<=j<=n} S_j
    int n = 0;
    std::optional<std::vector<double>> log_norm_path;  // S_1..S_n when retained
};

/// Walk state captured mid-trajectory (for horizon-halving diagnostics).
struct WalkSnapshot {
    double log_norm = 0.0;
    double prefix_min = 0.0;
    double prefix_max = 0.0;
};

/// Replay token for one trajectory; regenerating from (seed, index) yields
/// the identical matrix sequence. Matrices are retained only when a dual
/// walk or target replay needs them.
struct DrawRecord {
    std::uint64_t seed = 0;
    std::uint64_t index = 0;
    std::vector<PositiveMatrix> matrices;
};

struct SimulationPlan {
    SimulationPlan(MatrixLaw l, Direction s)
        : law(std::move(l)), start(std::move(s)) {}

    MatrixLaw law;
    Direction start;
    int n = 1;
    std::int64_t num_traj = 1;
    std::uint64_t seed = 0;
    bool retain_matrices = false;
    std::optional<Direction> dual_start;
    std::vector<double> exit_thresholds;  // y values answered per trajectory

    void validate() const {
        if (n < 1) throw ConfigError("SimulationPlan: n >= 1");
        if (num_traj < 1) throw ConfigError("SimulationPlan: num_traj >= 1");
        if (start.dim() != law.dim())
            throw ConfigError("SimulationPlan: start dimension mismatch");
    }
};

namespace detail {

// Flush the running product into the log accumulator before it can leave
// the representable range; 256 centered factors stay far inside it.
constexpr int kRenormBlock = 256;

/// Stepwise iterator for x_k = g_k . x_{k-1} with per-step renormalization:
/// the direction is kept on the simplex and the log-norm accumulates in a
/// product buffer flushed every kRenormBlock steps, so no horizon
/// overflows. Running prefix min/max of S_j are maintained exactly.
class Walker {
  public:
    explicit Walker(const MatrixLaw& law, bool transpose_factors = false)
        : law_(&law), d_(law.dim()), x_(d_), gx_(d_), scratch_(d_ * d_) {
        if (law.is_finite()) {
            for (const auto& a : law.scaled_atoms()) {
                cum_.push_back((cum_.empty() ? 0.0 : cum_.back()) + a.prob);
                const PositiveMatrix m =
                    transpose_factors ? transpose(a.matrix) : a.matrix;
                entries_flat_.insert(entries_flat_.end(), m.entries().begin(),
                                     m.entries().end());
            }
            if (!cum_.empty()) cum_.back() = 1.0;
        } else {
            // i.i.d. entries: transposition does not change the law
            gen_scale_ = std::exp(law.log_scale());
        }
    }

    void begin(const Direction& start) {
        std::copy(start.coords().begin(), start.coords().end(), x_.begin());
        log_base_ = 0.0;
        prod_ = 1.0;
        in_block_ = 0;
        block_min_ = std::numeric_limits<double>::infinity();
        block_max_ = -std::numeric_limits<double>::infinity();
        prefix_min_ = std::numeric_limits<double>::infinity();
        prefix_max_ = -std::numeric_limits<double>::infinity();
        steps_ = 0;
    }

    /// Advance one step; returns |g x| for the pre-step direction.
    double step(RandomStream& stream) {
        const double norm = sample_and_apply(stream);
        prod_ *= norm;
        block_min_ = std::min(block_min_, prod_);
        block_max_ = std::max(block_max_, prod_);
        ++in_block_;
        ++steps_;
        if (in_block_ == kRenormBlock || prod_ < 1e-280 || prod_ > 1e280)
            flush();
        return norm;
    }

    int steps() const { return steps_; }

    /// S_k for the current step count.
    double log_norm() const { return log_base_ + std::log(prod_); }

    /// min_{1<=j<=k} S_j (requires at least one step).
    double prefix_min() const {
        if (in_block_ == 0) return prefix_min_;
        return std::min(prefix_min_, log_base_ + std::log(block_min_));
    }

    /// max_{1<=j<=k} S_j (requires at least one step).
    double prefix_max() const {
        if (in_block_ == 0) return prefix_max_;
        return std::max(prefix_max_, log_base_ + std::log(block_max_));
    }

    Direction direction() const {
        return Direction(std::vector<double>(x_.begin(), x_.end()));
    }

    /// The matrix sampled by the most recent step.
    PositiveMatrix current_matrix() const {
        if (law_->is_finite()) {
            const double* g = entries_flat_.data() + last_atom_ * d_ * d_;
            return PositiveMatrix(d_, std::vector<double>(g, g + d_ * d_));
        }
        return PositiveMatrix(d_, scratch_);
    }

    /// Run a whole trajectory. Optional sinks: `path` receives S_1..S_n,
    /// `mats` the sampled matrices, `snap` the state after `snapshot_at`
    /// steps. The d = 2 finite-support loop keeps its state in registers;
    /// it is the hot path of every large batch.
    TrajectoryOutcome run(const Direction& start, int n, RandomStream stream,
                          std::vector<double>* path = nullptr,
                          std::vector<PositiveMatrix>* mats = nullptr,
                          int snapshot_at = -1, WalkSnapshot* snap = nullptr) {
        if (path) {
            path->clear();
            path->reserve(static_cast<std::size_t>(n));
        }
        if (mats) {
            mats->clear();
            mats->reserve(static_cast<std::size_t>(n));
        }
        if (d_ == 2 && !entries_flat_.empty() && !mats)
            return run_d2(start, n, stream, path, snapshot_at, snap);
        begin(start);
        for (int k = 0; k < n; ++k) {
            step(stream);
            if (path) path->push_back(log_norm());
            if (mats) mats->push_back(current_matrix());
            if (k + 1 == snapshot_at && snap)
                *snap = {log_norm(), prefix_min(), prefix_max()};
        }
        return TrajectoryOutcome{direction(), log_norm(), prefix_min(),
                                 prefix_max(), n,
                                 path ? std::optional<std::vector<double>>(*path)
                                      : std::nullopt};
    }

  private:
    TrajectoryOutcome run_d2(const Direction& start, int n, RandomStream& stream,
                             std::vector<double>* path, int snapshot_at,
                             WalkSnapshot* snap) {
        const double* atoms = entries_flat_.data();
        const std::size_t n_atoms = cum_.size();
        const double cum0 = cum_.front();
        double t = start[0];
        double log_base = 0.0, prod = 1.0;
        double block_min = std::numeric_limits<double>::infinity();
        double block_max = -std::numeric_limits<double>::infinity();
        double pref_min = std::numeric_limits<double>::infinity();
        double pref_max = -std::numeric_limits<double>::infinity();
        int in_block = 0;
        auto flush_now = [&] {
            if (in_block == 0) return;
            pref_min = std::min(pref_min, log_base + std::log(block_min));
            pref_max = std::max(pref_max, log_base + std::log(block_max));
            log_base += std::log(prod);
            prod = 1.0;
            block_min = std::numeric_limits<double>::infinity();
            block_max = -std::numeric_limits<double>::infinity();
            in_block = 0;
        };
        for (int k = 0; k < n; ++k) {
            const double u = stream.next_uniform();
            const double* g;
            if (n_atoms == 2) {
                g = atoms + (u >= cum0 ? 4 : 0);
            } else {
                std::size_t idx = 0;
                while (idx + 1 < n_atoms && u >= cum_[idx]) ++idx;
                g = atoms + idx * 4;
            }
            const double top = g[0] * t + g[1] * (1.0 - t);
            const double norm = top + g[2] * t + g[3] * (1.0 - t);
            t = top / norm;
            prod *= norm;
            block_min = std::min(block_min, prod);
            block_max = std::max(block_max, prod);
            ++in_block;
            const bool want_state = path || k + 1 == snapshot_at;
            if (in_block == kRenormBlock || want_state || prod < 1e-280 ||
                prod > 1e280) {
                const double here = log_base + std::log(prod);
                flush_now();
                if (path) path->push_back(here);
                if (k + 1 == snapshot_at && snap)
                    *snap = {here, pref_min, pref_max};
            }
        }
        flush_now();
        x_[0] = t;
        x_[1] = 1.0 - t;
        return TrajectoryOutcome{Direction(std::vector<double>{t, 1.0 - t}),
                                 log_base, pref_min, pref_max, n,
                                 path ? std::optional<std::vector<double>>(*path)
                                      : std::nullopt};
    }

    void flush() {
        if (in_block_ == 0) return;
        prefix_min_ = std::min(prefix_min_, log_base_ + std::log(block_min_));
        prefix_max_ = std::max(prefix_max_, log_base_ + std::log(block_max_));
        log_base_ += std::log(prod_);
        prod_ = 1.0;
        block_min_ = std::numeric_limits<double>::infinity();
        block_max_ = -std::numeric_limits<double>::infinity();
        in_block_ = 0;
    }

    double sample_and_apply(RandomStream& stream) {
        const double* g;
        if (!entries_flat_.empty()) {
            const double u = stream.next_uniform();
            std::size_t idx = 0;
            while (idx + 1 < cum_.size() && u >= cum_[idx]) ++idx;
            g = entries_flat_.data() + idx * d_ * d_;
            last_atom_ = idx;
            if (d_ == 2) {
                const double top = g[0] * x_[0] + g[1] * x_[1];
                const double total = top + g[2] * x_[0] + g[3] * x_[1];
                x_[0] = top / total;
                x_[1] = 1.0 - x_[0];
                return total;
            }
        } else {
            const auto& spec = law_->generator();
            for (double& e : scratch_)
                e = gen_scale_ * std::exp(stream.next_uniform(spec.a, spec.b));
            g = scratch_.data();
        }
        double total = 0.0;
        for (std::size_t i = 0; i < d_; ++i) {
            double acc = 0.0;
            const double* row = g + i * d_;
            for (std::size_t j = 0; j < d_; ++j) acc += row[j] * x_[j];
            gx_[i] = acc;
            total += acc;
        }
        const double inv = 1.0 / total;
        for (std::size_t i = 0; i < d_; ++i) x_[i] = gx_[i] * inv;
        return total;
    }

    const MatrixLaw* law_;
    std::size_t d_;
    std::vector<double> x_, gx_, scratch_;
    std::vector<double> cum_;
    std::vector<double> entries_flat_;  // atoms concatenated row-major
    std::size_t last_atom_ = 0;
    double gen_scale_ = 1.0;

    double log_base_ = 0.0, prod_ = 1.0;
    double block_min_ = 0.0, block_max_ = 0.0;
    double prefix_min_ = 0.0, prefix_max_ = 0.0;
    int in_block_ = 0, steps_ = 0;
};

}  // namespace detail

/// One forward trajectory: S_n = log|g_n ... g_1 x| accumulated through the
/// renormalized recursion, with the running prefix minimum of S_j.
inline TrajectoryOutcome run_forward(const MatrixLaw& law, const Direction& x,
                                     int n, RandomStream stream,
                                     std::vector<double>* path = nullptr) {
    if (n < 1) throw ConfigError("run_forward: n >= 1");
    detail::Walker walker(law);
    return walker.run(x, n, stream, path);
}

/// Forward trajectory with the matrix sequence retained for replay.
inline std::pair<TrajectoryOutcome, DrawRecord> run_forward_retained(
    const MatrixLaw& law, const Direction& x, int n, std::uint64_t seed,
    std::uint64_t index) {
    detail::Walker walker(law);
    DrawRecord draw{seed, index, {}};
    auto outcome = walker.run(x, n, RandomStream(seed, 0, index), nullptr,
                              &draw.matrices);
    return {std::move(outcome), std::move(draw)};
}

/// First k >= 1 with y + S_k < 0, scanning a retained path; nullopt means
/// the walk survived the whole horizon.
inline std::optional<int> exit_time(std::span<const double> log_norm_path,
                                    double y) {
    for (std::size_t k = 0; k < log_norm_path.size(); ++k)
        if (y + log_norm_path[k] < 0.0) return static_cast<int>(k + 1);
    return std::nullopt;
}

/// Exit query on an outcome. Survival needs only the prefix minimum,
/// answering tau > n for every y at once; the exact step needs the path.
inline std::optional<int> exit_time(const TrajectoryOutcome& outcome, double y) {
    if (y + outcome.prefix_min >= 0.0) return std::nullopt;
    if (!outcome.log_norm_path)
        throw MissingMatricesError(
            "exit_time: exact exit step needs a retained path");
    return exit_time(std::span<const double>(*outcome.log_norm_path), y);
}

/// Dual walk log-norms S*_k = -log|h_k ... h_1 x'| for k = 1..n, where
/// h_i is the transpose of the (n-i+1)-th retained matrix.
inline std::vector<double> run_dual(const DrawRecord& draw, const Direction& xp,
                                    int n) {
    if (static_cast<int>(draw.matrices.size()) < n)
        throw MissingMatricesError("run_dual: draw did not retain n matrices");
    const std::size_t d = xp.dim();
    std::vector<double> x(xp.coords());
    std::vector<double> gx(d);
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(n));
    double acc = 0.0;
    for (int i = 1; i <= n; ++i) {
        const PositiveMatrix& g = draw.matrices[static_cast<std::size_t>(n - i)];
        // h x with h = g^T, i.e. (h x)_c = sum_r g_{rc} x_r
        double total = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            double v = 0.0;
            for (std::size_t r = 0; r < d; ++r) v += g.at(r, c) * x[r];
            gx[c] = v;
            total += v;
        }
        acc += std::log(total);
        const double inv = 1.0 / total;
        for (std::size_t c = 0; c < d; ++c) x[c] = gx[c] * inv;
        out.push_back(-acc);
    }
    return out;
}

/// Pathwise duality defect: max over 0 <= k <= n of
/// |(-S_n + S_k) - S*_{n-k}|, forward and dual walks driven by the same
/// retained matrices. Bounded by 2 log kappa + log d for entry-spread-
/// bounded ensembles.
inline double duality_gap(const DrawRecord& draw, const Direction& x,
                          const Direction& xp, int n) {
    if (static_cast<int>(draw.matrices.size()) < n)
        throw MissingMatricesError("duality_gap: draw did not retain n matrices");
    // forward path from the retained matrices
    std::vector<double> s(static_cast<std::size_t>(n) + 1, 0.0);
    {
        std::vector<double> cur(x.coords()), gx(x.dim());
        double acc = 0.0;
        for (int k = 1; k <= n; ++k) {
            const auto& g = draw.matrices[static_cast<std::size_t>(k - 1)];
            const double total =
                detail::apply_matrix(g.entries(), g.dim(), cur, gx);
            acc += std::log(total);
            const double inv = 1.0 / total;
            for (std::size_t i = 0; i < cur.size(); ++i) cur[i] = gx[i] * inv;
            s[static_cast<std::size_t>(k)] = acc;
        }
    }
    const std::vector<double> dual = run_dual(draw, xp, n);
    double gap = 0.0;
    for (int k = 0; k <= n; ++k) {
        const double reversed = -s[static_cast<std::size_t>(n)] +
                                s[static_cast<std::size_t>(k)];
        const double dual_val =
            (k == n) ? 0.0 : dual[static_cast<std::size_t>(n - k - 1)];
        gap = std::max(gap, std::abs(reversed - dual_val));
    }
    return gap;
}

/// Compensated pairwise-tree sum; the reduction the determinism contract
/// prescribes inside aggregation blocks.
inline double pairwise_sum(std::span<const double> v) {
    if (v.size() <= 8) {
        double acc = 0.0;
        for (double x : v) acc += x;
        return acc;
    }
    const std::size_t half = v.size() / 2;
    return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

/// Aggregation block size: trajectories are processed in index order in
/// fixed blocks; block partials merge in block order, so aggregates are
/// bit-identical for any worker count.
inline constexpr std::int64_t kBatchBlock = 4096;

/// Run plan.num_traj trajectories with per-trajectory streams derived from
/// (seed, index) and feed each outcome to the collector.
///
/// Collector contract:
///   using Partial;                     default-constructible block state
///   void accumulate(Partial&, std::uint64_t index, const TrajectoryOutcome&);
///   void absorb(Partial&&);            called in block-index order
/// absorb sees blocks exactly in increasing index order regardless of the
/// thread count, so any order-sensitive reduction stays deterministic.
template <typename Collector>
void batch(const SimulationPlan& plan, Collector& collector,
           unsigned threads = 0) {
    plan.validate();
    if (threads == 0)
        threads = std::max(1u, std::thread::hardware_concurrency());
    const std::int64_t blocks = (plan.num_traj + kBatchBlock - 1) / kBatchBlock;
    threads = static_cast<unsigned>(std::min<std::int64_t>(threads, blocks));

    using Partial = typename Collector::Partial;
    std::vector<Partial> partials(static_cast<std::size_t>(blocks));
    std::atomic<std::int64_t> next_block{0};

    auto work = [&]() {
        detail::Walker walker(plan.law);
        for (;;) {
            const std::int64_t b = next_block.fetch_add(1);
            if (b >= blocks) return;
            const std::int64_t lo = b * kBatchBlock;
            const std::int64_t hi = std::min(plan.num_traj, lo + kBatchBlock);
            Partial partial{};
            for (std::int64_t i = lo; i < hi; ++i) {
                const auto idx = static_cast<std::uint64_t>(i);
                auto outcome = walker.run(plan.start, plan.n,
                                          RandomStream(plan.seed, 0, idx));
                collector.accumulate(partial, idx, outcome);
            }
            partials[static_cast<std::size_t>(b)] = std::move(partial);
        }
    };

    if (threads <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(threads);
        for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    for (auto& p : partials) collector.absorb(std::move(p));
}

}  // namespace conewalk
