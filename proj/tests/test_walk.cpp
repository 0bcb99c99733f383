#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "conewalk/walk.hpp"
#include "oracles.hpp"

using namespace conewalk;
using Catch::Approx;

namespace {

MatrixLaw point_mass(const PositiveMatrix& g) {
    return MatrixLaw(g.dim(), {{g, 1.0}});
}

}  // namespace

TEST_CASE("identity walk is flat") {
    const auto law = point_mass(PositiveMatrix::identity(2));
    const Direction x0 = normalize({0.3, 0.7});
    auto o = run_forward(law, x0, 700, RandomStream(1));
    CHECK(o.final_log_norm == Approx(0.0).margin(1e-12));
    CHECK(o.prefix_min == Approx(0.0).margin(1e-12));
    CHECK(o.final_direction[0] == Approx(0.3));
}

TEST_CASE("two deterministic steps") {
    const auto law = point_mass(PositiveMatrix(2, {2, 1, 1, 1}));
    auto o = run_forward(law, Direction::vertex(2, 0), 2, RandomStream(1));
    // A x = (2,1), |Ax| = 3; A (2/3,1/3) has norm 8/3; S_2 = log 8
    CHECK(o.final_log_norm == Approx(std::log(8.0)));
}

TEST_CASE("prefix minimum and exit times") {
    // shrinkende identity: every step adds log(1/2)
    const auto law = point_mass(PositiveMatrix(2, {0.5, 0, 0, 0.5}));
    std::vector<double> path;
    auto o = run_forward(law, normalize({1.0, 1.0}), 10, RandomStream(1), &path);
    CHECK(o.prefix_min == Approx(10.0 * std::log(0.5)));
    CHECK(path.size() == 10);
    CHECK(path[2] == Approx(3.0 * std::log(0.5)));

    // y + S_k < 0 first at k with k log 2 > y
    const auto exit = exit_time(o, 2.0);
    REQUIRE(exit.has_value());
    CHECK(*exit == 3);  // 2 - 3 log 2 < 0, 2 - 2 log 2 > 0
    CHECK_FALSE(exit_time(o, 10.0).has_value());

    const auto id_law = point_mass(PositiveMatrix::identity(2));
    auto flat = run_forward(id_law, normalize({1.0, 1.0}), 5, RandomStream(1),
                            nullptr);
    // y = -1: already negative at the first step
    flat.log_norm_path = std::vector<double>{0, 0, 0, 0, 0};
    const auto e2 = exit_time(flat, -1.0);
    REQUIRE(e2.has_value());
    CHECK(*e2 == 1);
    // survival requires no path
    TrajectoryOutcome bare{flat.final_direction, 0.0, 0.0, 0.0, 5, std::nullopt};
    CHECK_FALSE(exit_time(bare, 0.5).has_value());
    CHECK_THROWS_AS(exit_time(bare, -0.5), MissingMatricesError);
}

TEST_CASE("renormalized recursion equals direct product") {
    const auto law = center(oracle::ab_law(), 0.9154795407738678);
    const Direction x0 = Direction::vertex(2, 0);
    for (int n : {5, 13, 25}) {
        for (std::uint64_t idx = 0; idx < 40; ++idx) {
            auto [outcome, draw] = run_forward_retained(law, x0, n, 42, idx);
            PositiveMatrix prod = draw.matrices.back();
            for (int k = n - 2; k >= 0; --k)
                prod = multiply(prod, draw.matrices[static_cast<std::size_t>(k)]);
            const double direct = cocycle(prod, x0);
            REQUIRE(std::abs(outcome.final_log_norm - direct) <= 1e-8);
        }
    }
}

TEST_CASE("long horizons do not overflow") {
    // uncentered law drifts at ~0.92 nats/step; raw products would
    // overflow near n = 700
    auto o = run_forward(oracle::ab_law(), Direction::barycenter(2), 20000,
                         RandomStream(3));
    CHECK(std::isfinite(o.final_log_norm));
    CHECK(o.final_log_norm == Approx(20000 * 0.9155).epsilon(0.01));
}

TEST_CASE("dual walk basics") {
    const auto id_law = point_mass(PositiveMatrix::identity(2));
    auto [o1, d1] = run_forward_retained(id_law, Direction::barycenter(2), 6, 1, 0);
    const auto dual = run_dual(d1, Direction::barycenter(2), 6);
    for (double v : dual) CHECK(v == Approx(0.0).margin(1e-12));

    // n = 1, symmetric g: S*_1 = -log|g^T e_1| = -log 3
    const auto a_law = point_mass(PositiveMatrix(2, {2, 1, 1, 1}));
    auto [o2, d2] = run_forward_retained(a_law, Direction::vertex(2, 0), 1, 1, 0);
    const auto dual2 = run_dual(d2, Direction::vertex(2, 0), 1);
    CHECK(dual2[0] == Approx(-std::log(3.0)));

    DrawRecord empty{1, 0, {}};
    CHECK_THROWS_AS(run_dual(empty, Direction::barycenter(2), 1),
                    MissingMatricesError);
}

TEST_CASE("duality gap: identity ensemble is exact") {
    const auto id_law = point_mass(PositiveMatrix::identity(2));
    auto [o, d] = run_forward_retained(id_law, Direction::barycenter(2), 32, 1, 0);
    CHECK(duality_gap(d, Direction::barycenter(2), Direction::barycenter(2), 32) ==
          Approx(0.0).margin(1e-12));
}

TEST_CASE("duality gap bound for the bounded-ratio ensemble") {
    const auto law = center(oracle::ab_law(), 0.9154795407738678);
    const double bound = 2.0 * std::log(2.0) + std::log(2.0);
    const Direction x = Direction::vertex(2, 0);
    const Direction xp = Direction::barycenter(2);
    double max_gap = 0.0;
    for (std::uint64_t idx = 0; idx < 400; ++idx) {
        auto [o, d] = run_forward_retained(law, x, 96, 7, idx);
        const double g = duality_gap(d, x, xp, 96);
        max_gap = std::max(max_gap, g);
        REQUIRE(g <= bound + 1e-12);
    }
    CHECK(max_gap > 0.0);
}

TEST_CASE("pathwise norm sandwich on retained draws") {
    const auto law = center(oracle::ab_law(), 0.9154795407738678);
    const double kappa = 2.0;
    const Direction x = Direction::barycenter(2);
    for (std::uint64_t idx = 0; idx < 50; ++idx) {
        const int n = 20;
        auto [o, draw] = run_forward_retained(law, x, n, 11, idx);
        std::vector<double> s(n + 1, 0.0);
        Direction cur = x;
        for (int k = 1; k <= n; ++k) {
            s[k] = s[k - 1] + cocycle(draw.matrices[k - 1], cur);
            cur = act(draw.matrices[k - 1], cur);
        }
        for (int k = 0; k < n; ++k) {
            PositiveMatrix prod = draw.matrices[n - 1];
            for (int j = n - 2; j >= k; --j)
                prod = multiply(prod, draw.matrices[j]);
            const double lognorm = std::log(matrix_norm(prod));
            const double diff = s[n] - s[k];
            REQUIRE(diff <= lognorm + 1e-9);
            REQUIRE(diff >= lognorm - 2.0 * std::log(kappa) - 1e-9);
        }
    }
}

namespace {

struct SumCollector {
    struct Partial {
        std::vector<double> values;
        std::uint64_t survived = 0;
    };
    double y = 1.0;
    std::vector<double> block_sums;
    std::uint64_t survived = 0, count = 0;

    void accumulate(Partial& p, std::uint64_t, const TrajectoryOutcome& o) const {
        p.values.push_back(o.final_log_norm);
        if (y + o.prefix_min >= 0.0) ++p.survived;
    }
    void absorb(Partial&& p) {
        block_sums.push_back(pairwise_sum(p.values));
        survived += p.survived;
        count += p.values.size();
    }
};

}  // namespace

TEST_CASE("batch determinism across thread counts") {
    const auto law = center(oracle::ab_law(), 0.9154795407738678);
    SimulationPlan plan{law, Direction::vertex(2, 0)};
    plan.n = 64;
    plan.num_traj = 20000;
    plan.seed = 99;

    SumCollector c1, c2, c3;
    batch(plan, c1, 1);
    batch(plan, c2, 2);
    batch(plan, c3, 4);
    REQUIRE(c1.block_sums == c2.block_sums);  // bit-identical
    REQUIRE(c1.block_sums == c3.block_sums);
    CHECK(c1.survived == c2.survived);
    CHECK(c1.survived == c3.survived);

    SumCollector again;
    batch(plan, again, 2);
    CHECK(again.block_sums == c1.block_sums);
}

TEST_CASE("plan validation") {
    SimulationPlan plan{oracle::ab_law(), Direction::barycenter(2)};
    plan.num_traj = 0;
    CHECK_THROWS_AS(plan.validate(), ConfigError);
    plan.num_traj = 1;
    plan.n = 0;
    CHECK_THROWS_AS(plan.validate(), ConfigError);
}

TEST_CASE("batch survival matches exact enumeration at n = 16") {
    const auto law = center(oracle::ab_law(), 0.9154795407738678);
    const Direction x0 = Direction::vertex(2, 0);
    const double y = 1.0;
    const auto exact = oracle::enumerate_walk(law, x0, 16, y, 0.0, {});

    SumCollector collector;
    collector.y = y;
    SimulationPlan plan{law, x0};
    plan.n = 16;
    plan.num_traj = 200000;
    plan.seed = 31;
    batch(plan, collector, 2);
    const double mc = static_cast<double>(collector.survived) /
                      static_cast<double>(collector.count);
    const double se = std::sqrt(exact.survival * (1 - exact.survival) /
                                static_cast<double>(plan.num_traj));
    CHECK(std::abs(mc - exact.survival) <= 3.0 * se);

    const double mean_mc =
        pairwise_sum(collector.block_sums) / static_cast<double>(collector.count);
    // SD(S_16) is about 0.16 for this ensemble; allow 5 standard errors
    CHECK(std::abs(mean_mc - exact.mean_sn) <=
          5.0 * 0.161 / std::sqrt(2.0e5));
}
