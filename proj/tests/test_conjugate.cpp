#include <cmath>

#include "doctest.h"
#include "test_support.hpp"
#include "wproj/conjugate.hpp"
#include "wproj/oracle.hpp"

using namespace wproj;

TEST_CASE("zero objective") {
    Rng rng(1);
    const auto kernel = build_cost_kernel(3, 1.0);
    const auto x = testing::random_unit_mass(rng, 3, 3);
    const auto r = conjugate_solve(std::vector<double>(9, 0.0), x, 0.2, kernel, SinkhornConfig{});
    CHECK(r.objective == 0.0);
    CHECK(r.transport_cost <= 0.2 * 1.001 + 1e-6);
}

TEST_CASE("two-pixel support value") {
    const MassVector x(1, 2, {1.0, 0.0});
    const std::vector<double> y{0.0, -1.0};
    SinkhornConfig cfg;
    cfg.max_iterations = 50000;
    const auto r = conjugate_solve(y, x, 0.5, build_cost_kernel(3, 1.0), cfg);
    CHECK(r.converged);
    CHECK(std::abs(r.objective - 0.5) <= 0.05);
    const auto exact = oracle::exact_support_function(x.values(), y, 0.5, std::vector<double>{0, 1, 1, 0});
    CHECK(exact.value == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("conjugate rows are fit and beta stays frozen") {
    Rng rng(2);
    const auto kernel = build_cost_kernel(3, 1.0);
    const auto x = testing::random_unit_mass(rng, 3, 3);
    const auto y = testing::random_vector(rng, 9, -1.0, 1.0);
    SinkhornConfig cfg;
    cfg.lambda = 50.0;
    const auto r = conjugate_solve(y, x, 0.3, kernel, cfg);
    CHECK(r.converged);
    for (std::size_t j = 0; j < 9; ++j) CHECK(r.state.beta[j] == -cfg.lambda * y[j]);
    const auto rows = TransportPlan(r.state, kernel).row_sums();
    for (std::size_t i = 0; i < 9; ++i) CHECK(std::abs(rows[i] - x[i]) <= 1e-12);
}

TEST_CASE("active budget is met with equality at the optimum") {
    Rng rng(5);
    const auto kernel = build_cost_kernel(5, 1.0);
    SinkhornConfig cfg;
    cfg.max_iterations = 5000;
    for (int t = 0; t < 10; ++t) {
        const auto x = testing::random_unit_mass(rng, 3, 3);
        const auto y = testing::random_vector(rng, 9, -1.0, 1.0);
        const auto r = conjugate_solve(y, x, 0.2, kernel, cfg);
        CHECK(r.converged);
        if (r.state.psi > 0.0) CHECK(std::abs(r.transport_cost - 0.2) <= 1e-3);
        if (r.state.psi == 0.0) CHECK(r.transport_cost <= 0.2 * 1.001 + 1e-6);
    }
}

TEST_CASE("objective grows with the radius") {
    Rng rng(3);
    const auto kernel = build_cost_kernel(3, 1.0);
    SinkhornConfig cfg;
    cfg.lambda = 100.0;
    cfg.max_iterations = 50000;
    for (int t = 0; t < 5; ++t) {
        const auto x = testing::random_unit_mass(rng, 3, 3);
        const auto y = testing::random_vector(rng, 9, -1.0, 1.0);
        double last = -1e300;
        for (double eps : {0.05, 0.1, 0.2, 0.4, 0.8}) {
            const auto r = conjugate_solve(y, x, eps, kernel, cfg);
            CHECK(r.objective >= last - 1e-6);
            last = r.objective;
        }
    }
}

TEST_CASE("support value is bracketed by feasible points and the exact LP") {
    Rng rng(4);
    const auto kernel = build_cost_kernel(3, 1.0);
    const auto cost = oracle::dense_grid_cost(3, 3, 1.0);
    SinkhornConfig cfg;
    cfg.max_iterations = 50000;
    for (int t = 0; t < 5; ++t) {
        const auto x = testing::random_unit_mass(rng, 3, 3);
        const auto y = testing::random_vector(rng, 9, -1.0, 1.0);
        const double eps = rng.uniform(0.1, 0.6);
        const auto r = conjugate_solve(y, x, eps, kernel, cfg);
        if (!r.converged) continue;
        const auto exact = oracle::exact_support_function(x.values(), y, eps, cost);
        CHECK(r.objective <= exact.value + 0.05);
        // x itself is feasible; the entropic solution can trail it by at most log(n^2)/lambda.
        double at_x = 0.0;
        for (std::size_t j = 0; j < 9; ++j) at_x -= x[j] * y[j];
        CHECK(r.objective >= at_x - std::log(81.0) / cfg.lambda);
        CHECK(oracle::exact_ot_distance(x, MassVector(3, 3, testing::match_mass(r.z, x)), cost) <= eps * 1.001 + 1e-6);
    }
}
