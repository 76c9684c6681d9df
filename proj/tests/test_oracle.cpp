#include <cmath>

#include "doctest.h"
#include "test_support.hpp"
#include "wproj/errors.hpp"
#include "wproj/oracle.hpp"

using namespace wproj;

namespace {
const std::vector<double> kSwapCost{0, 1, 1, 0};
}

TEST_CASE("exact distance basics") {
    Rng rng(1);
    const auto x = testing::random_unit_mass(rng, 3, 3);
    const auto cost = oracle::dense_grid_cost(3, 3, 1.0);
    CHECK(oracle::exact_ot_distance(x, x, cost) == doctest::Approx(0.0));
    CHECK(oracle::exact_ot_distance(std::vector<double>{1, 0}, std::vector<double>{0, 1}, kSwapCost) == doctest::Approx(1.0));

    // Ten percent of a spike moved one pixel.
    const MassVector spike(1, 3, {0.0, 1.0, 0.0});
    const MassVector moved(1, 3, {0.0, 0.9, 0.1});
    CHECK(oracle::exact_ot_distance(spike, moved, oracle::dense_grid_cost(1, 3, 1.0)) == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("exact distance rejects unequal mass") {
    CHECK_THROWS_AS(oracle::exact_ot_distance(std::vector<double>{1, 0}, std::vector<double>{0, 0.5}, kSwapCost),
                    ParameterError);
}

TEST_CASE("dense grid cost") {
    const auto c = oracle::dense_grid_cost(2, 2, 2.0);
    // pixels (0,0) and (1,1) are one diagonal apart.
    CHECK(c[0 * 4 + 3] == doctest::Approx(2.0));
    CHECK(c[1 * 4 + 2] == doctest::Approx(2.0));
    CHECK(c[0 * 4 + 1] == doctest::Approx(1.0));
    const auto local = oracle::dense_local_cost(1, 5, build_cost_kernel(3, 1.0), 99.0);
    CHECK(local[0 * 5 + 1] == 1.0);
    CHECK(local[0 * 5 + 2] == 99.0);
}

TEST_CASE("metric axioms and scaling") {
    Rng rng(2);
    const auto cost = oracle::dense_grid_cost(4, 4, 1.0);
    for (int t = 0; t < 10; ++t) {
        const auto a = testing::random_unit_mass(rng, 4, 4, 0.0);
        const auto b = testing::random_unit_mass(rng, 4, 4, 0.0);
        const auto c = testing::random_unit_mass(rng, 4, 4, 0.0);
        const double ab = oracle::exact_ot_distance(a, b, cost);
        CHECK(ab == doctest::Approx(oracle::exact_ot_distance(b, a, cost)).epsilon(1e-8));
        CHECK(ab <= oracle::exact_ot_distance(a, c, cost) + oracle::exact_ot_distance(c, b, cost) + 1e-8);
        std::vector<double> sa(a.values().begin(), a.values().end()), sb(b.values().begin(), b.values().end());
        for (double& e : sa) e *= 3.5;
        for (double& e : sb) e *= 3.5;
        CHECK(oracle::exact_ot_distance(sa, sb, cost) == doctest::Approx(3.5 * ab).epsilon(1e-8));
    }
}

TEST_CASE("transport certificate") {
    Rng rng(3);
    const auto cost = oracle::dense_grid_cost(3, 4, 2.0);
    for (int t = 0; t < 10; ++t) {
        const auto a = testing::random_unit_mass(rng, 3, 4, 0.0);
        const auto b = testing::random_unit_mass(rng, 3, 4, 0.0);
        const auto s = oracle::solve_transport(a.values(), b.values(), cost);
        CHECK(s.dual_value == doctest::Approx(s.cost).epsilon(1e-8));
        const std::size_t n = 12;
        for (std::size_t i = 0; i < n; ++i) {
            double row = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                CHECK(s.source_potential[i] + s.target_potential[j] <= cost[i * n + j] + 1e-9);
                CHECK(s.plan[i * n + j] >= 0.0);
                row += s.plan[i * n + j];
            }
            CHECK(row == doctest::Approx(a[i]).epsilon(1e-9));
        }
    }
}

TEST_CASE("exact ball projection") {
    SUBCASE("two pixels") {
        const auto p = oracle::exact_ball_projection(std::vector<double>{0, 1}, std::vector<double>{1, 0}, 0.5, kSwapCost);
        CHECK(p.z[0] == doctest::Approx(0.5).epsilon(1e-8));
        CHECK(p.z[1] == doctest::Approx(0.5).epsilon(1e-8));
        CHECK(p.certificate.kkt_residual() <= 1e-8);
    }
    SUBCASE("interior point stays") {
        Rng rng(4);
        const auto x = testing::random_unit_mass(rng, 3, 3);
        std::vector<double> w(x.values().begin(), x.values().end());
        w[0] += 0.01;
        w[1] -= 0.01;
        const auto cost = oracle::dense_grid_cost(3, 3, 1.0);
        const auto p = oracle::exact_ball_projection(w, x.values(), 0.5, cost);
        CHECK(testing::max_abs_diff(p.z, w) <= 1e-7);
    }
    SUBCASE("zero radius returns x") {
        Rng rng(5);
        const auto x = testing::random_unit_mass(rng, 3, 3);
        const auto w = testing::random_unit_mass(rng, 3, 3);
        const auto p = oracle::exact_ball_projection(w.values(), x.values(), 0.0, oracle::dense_grid_cost(3, 3, 1.0));
        CHECK(testing::max_abs_diff(p.z, x.values()) <= 1e-9);
    }
    SUBCASE("random instances satisfy the certificate and the budget") {
        Rng rng(6);
        const auto cost = oracle::dense_grid_cost(4, 4, 1.0);
        for (int t = 0; t < 5; ++t) {
            const auto x = testing::random_unit_mass(rng, 4, 4);
            const auto w = testing::random_unit_mass(rng, 4, 4);
            const double eps = rng.uniform(0.05, 0.5);
            const auto p = oracle::exact_ball_projection(w.values(), x.values(), eps, cost);
            CHECK(p.certificate.kkt_residual() <= 1e-8);
            CHECK(p.transport_cost <= eps + 1e-8);
            CHECK(oracle::exact_ot_distance(x.values(), p.z, cost) <= eps + 1e-7);
        }
    }
}

TEST_CASE("exact support function") {
    Rng rng(7);
    const auto x = testing::random_unit_mass(rng, 3, 3);
    const auto cost = oracle::dense_grid_cost(3, 3, 1.0);
    const auto constant = oracle::exact_support_function(x.values(), std::vector<double>(9, 2.5), 0.7, cost);
    CHECK(constant.value == doctest::Approx(-2.5).epsilon(1e-8));

    const auto y = testing::random_vector(rng, 9, -1.0, 1.0);
    double xy = 0.0;
    for (std::size_t j = 0; j < 9; ++j) xy += x[j] * y[j];
    CHECK(oracle::exact_support_function(x.values(), y, 0.0, cost).value == doctest::Approx(-xy).epsilon(1e-12));

    const auto s = oracle::exact_support_function(x.values(), y, 0.3, cost);
    CHECK(s.value == doctest::Approx(s.dual_value).epsilon(1e-8));
    CHECK(s.value >= -xy - 1e-12);
    CHECK(s.certificate.kkt_residual() <= 1e-8);
}
