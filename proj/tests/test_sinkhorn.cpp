#include <cmath>
#include <limits>

#include "doctest.h"
#include "test_support.hpp"
#include "wproj/errors.hpp"
#include "wproj/lambert_w.hpp"
#include "wproj/oracle.hpp"
#include "wproj/sinkhorn.hpp"

using namespace wproj;

namespace {

// Two pixels side by side with unit cost between them.
const LocalCostKernel& two_pixel_kernel() {
    static const LocalCostKernel k = build_cost_kernel(3, 1.0);
    return k;
}

// Dense g(alpha, beta, psi) for one channel, straight from the definition.
double dense_dual(const DualState& s, std::span<const double> x, std::span<const double> w, double eps,
                  std::span<const double> cost_or_inf) {
    const std::size_t n = x.size();
    double g = -s.psi * eps;
    for (std::size_t i = 0; i < n; ++i) {
        if (x[i] > 0.0) g += s.alpha[i] * x[i];
        g += s.beta[i] * w[i] - s.beta[i] * s.beta[i] / (2.0 * s.lambda);
        for (std::size_t j = 0; j < n; ++j) {
            if (std::isinf(cost_or_inf[i * n + j]) || std::isinf(s.alpha[i])) continue;
            g -= std::exp(s.alpha[i] - s.psi * cost_or_inf[i * n + j] - 1.0 + s.beta[j]);
        }
    }
    return g;
}

}  // namespace

TEST_CASE("config validation") {
    SinkhornConfig c;
    CHECK_NOTHROW(c.validate());
    c.lambda = 0.0;
    CHECK_THROWS_AS(c.validate(), ParameterError);
    c = {};
    c.convergence_tol = 0.0;
    CHECK_THROWS_AS(c.validate(), ParameterError);
    c = {};
    c.max_iterations = 0;
    CHECK_THROWS_AS(c.validate(), ParameterError);
    c = {};
    c.newton_shrink = 1.0;
    CHECK_THROWS_AS(c.validate(), ParameterError);
}

TEST_CASE("initial dual state") {
    const auto s = DualState::initial(GridShape{1, 2, 3}, 7.0);
    for (double a : s.alpha) CHECK(a == doctest::Approx(std::log(1.0 / 6.0)));
    for (double b : s.beta) CHECK(b == doctest::Approx(std::log(1.0 / 6.0)));
    CHECK(s.psi == 1.0);
    CHECK(s.lambda == 7.0);
}

TEST_CASE("alpha step on two uniform pixels") {
    const MassVector x(1, 2, {0.5, 0.5});
    DualState s = DualState::initial(x.shape(), 1000.0);
    s.psi = 0.0;
    s.beta = {std::log(0.5), std::log(0.5)};
    // The exact formula with psi = 0 makes the window sum (e^-1 + e^-1) / 2 over both pixels.
    alpha_step(s, x, two_pixel_kernel());
    const double expect = std::log(0.5) - std::log((std::exp(-1.0) + std::exp(-1.0)) / 2.0);
    CHECK(s.alpha[0] == doctest::Approx(expect).epsilon(1e-14));
    CHECK(s.alpha[1] == doctest::Approx(expect).epsilon(1e-14));

    // With psi = 1 the off-diagonal term picks up e^-1.
    s.psi = 1.0;
    alpha_step(s, x, two_pixel_kernel());
    const double expect1 = std::log(0.5) - std::log((std::exp(-1.0) + std::exp(-2.0)) / 2.0);
    CHECK(s.alpha[0] == doctest::Approx(expect1).epsilon(1e-14));
}

TEST_CASE("alpha step with zero mass gives an empty row") {
    const MassVector x(1, 2, {1.0, 0.0});
    DualState s = DualState::initial(x.shape(), 1000.0);
    alpha_step(s, x, two_pixel_kernel());
    CHECK(s.alpha[1] == -std::numeric_limits<double>::infinity());
    TransportPlan plan(s, two_pixel_kernel());
    CHECK(plan.entry(0, 1, 0) == 0.0);
    CHECK(plan.entry(0, 1, 1) == 0.0);
    CHECK(plan.row_sums()[1] == 0.0);
}

TEST_CASE("beta step closed forms") {
    SUBCASE("zero Lambert argument when every alpha is -inf") {
        DualState s = DualState::initial(GridShape{1, 1, 2}, 10.0);
        s.alpha = {-std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
        const std::vector<double> w{0.3, 0.7};
        beta_step(s, w, two_pixel_kernel());
        CHECK(s.beta[0] == doctest::Approx(3.0));
        CHECK(s.beta[1] == doctest::Approx(7.0));
    }
    SUBCASE("lambda = 1, w = 1 and a unit window sum") {
        // A single pixel with alpha = 1 makes sum_i exp(alpha_i - psi C - 1) = 1.
        DualState s = DualState::initial(GridShape{1, 1, 1}, 1.0);
        s.alpha = {1.0};
        beta_step(s, std::vector<double>{1.0}, build_cost_kernel(1, 1.0));
        CHECK(std::abs(s.beta[0]) <= 1e-14);
    }
}

TEST_CASE("beta step stationarity against a numerical derivative of the dual") {
    Rng rng(5);
    const auto kernel = build_cost_kernel(3, 1.0);
    const auto cost = oracle::dense_local_cost(3, 3, kernel, std::numeric_limits<double>::infinity());
    for (int t = 0; t < 10; ++t) {
        const auto x = testing::random_unit_mass(rng, 3, 3);
        const auto w = testing::random_vector(rng, 9, 0.0, 0.3);
        DualState s = DualState::initial(x.shape(), 20.0);
        s.psi = rng.uniform(0.0, 2.0);
        alpha_step(s, x, kernel);
        beta_step(s, w, kernel);
        const double eps = 0.3;
        for (std::size_t j = 0; j < 9; ++j) {
            const double h = 1e-5;
            DualState up = s, dn = s;
            up.beta[j] += h;
            dn.beta[j] -= h;
            const double d = (dense_dual(up, x.values(), w, eps, cost) - dense_dual(dn, x.values(), w, eps, cost)) / (2 * h);
            CHECK(std::abs(d) <= 1e-8);
        }
        // The library's dual agrees with the dense definition.
        CHECK(dual_objective(s, x, w, eps, kernel) == doctest::Approx(dense_dual(s, x.values(), w, eps, cost)).epsilon(1e-12));
    }
}

TEST_CASE("scaling identities against the dense plan") {
    Rng rng(9);
    const auto kernel = build_cost_kernel(3, 1.0);
    for (int t = 0; t < 10; ++t) {
        const auto x = testing::random_unit_mass(rng, 3, 3);
        const auto w = testing::random_vector(rng, 9, 0.0, 0.3);
        DualState s = DualState::initial(x.shape(), 50.0);
        s.psi = rng.uniform(0.0, 3.0);
        alpha_step(s, x, kernel);
        auto dense = TransportPlan(s, kernel).dense(0);
        for (std::size_t i = 0; i < 9; ++i) {
            double row = 0.0;
            for (std::size_t j = 0; j < 9; ++j) row += dense[i * 9 + j];
            CHECK(row == doctest::Approx(x[i]).epsilon(1e-10));
        }
        beta_step(s, w, kernel);
        dense = TransportPlan(s, kernel).dense(0);
        const auto z = recover_primal(s, w);
        for (std::size_t j = 0; j < 9; ++j) {
            double col = 0.0;
            for (std::size_t i = 0; i < 9; ++i) col += dense[i * 9 + j];
            CHECK(std::abs(col - z[j]) <= 1e-8);
        }
    }
}

TEST_CASE("psi derivative matches the dense plan") {
    Rng rng(13);
    const auto kernel = build_cost_kernel(3, 1.0);
    const auto cost = oracle::dense_local_cost(3, 3, kernel, 0.0);
    for (int t = 0; t < 10; ++t) {
        const auto x = testing::random_unit_mass(rng, 3, 3);
        const auto w = testing::random_vector(rng, 9, 0.0, 0.3);
        DualState s = DualState::initial(x.shape(), 50.0);
        alpha_step(s, x, kernel);
        beta_step(s, w, kernel);
        const auto dense = TransportPlan(s, kernel).dense(0);
        double c1 = 0.0, c2 = 0.0;
        for (std::size_t a = 0; a < 81; ++a) {
            c1 += dense[a] * cost[a];
            c2 += dense[a] * cost[a] * cost[a];
        }
        TransportPlan plan(s, kernel);
        CHECK(plan.cost() == doctest::Approx(c1).epsilon(1e-10));
        CHECK(plan.cost_squared() == doctest::Approx(c2).epsilon(1e-10));

        // The Newton step lands where the closed form says.
        const double eps = 0.05;
        const double direction = -(-eps + c1) / -c2;
        DualState stepped = s;
        psi_newton_step(stepped, eps, kernel);
        if (s.psi + direction >= 0.0) CHECK(stepped.psi == doctest::Approx(s.psi + direction).epsilon(1e-10));
        CHECK(stepped.psi >= 0.0);
    }
}

TEST_CASE("psi newton step sign behaviour") {
    const auto& kernel = two_pixel_kernel();
    const MassVector x(1, 2, {1.0, 0.0});
    DualState s = DualState::initial(x.shape(), 1000.0);
    alpha_step(s, x, kernel);
    const std::vector<double> w{0.0, 1.0};
    beta_step(s, w, kernel);
    const double cost = TransportPlan(s, kernel).cost();

    SUBCASE("cost equal to eps leaves psi alone") {
        DualState t = s;
        psi_newton_step(t, cost, kernel);
        CHECK(t.psi == doctest::Approx(s.psi).epsilon(1e-15));
    }
    SUBCASE("cost above eps raises psi") {
        DualState t = s;
        psi_newton_step(t, cost / 2.0, kernel);
        CHECK(t.psi > s.psi);
    }
    SUBCASE("cost below eps lowers psi but never below zero") {
        DualState t = s;
        psi_newton_step(t, cost + 100.0, kernel);
        CHECK(t.psi < s.psi);
        CHECK(t.psi >= 0.0);
    }
}

TEST_CASE("psi step on a flat dual drops to zero") {
    // A one-pixel grid has no off-diagonal transport, so the curvature is zero.
    const MassVector x(1, 1, {1.0});
    DualState s = DualState::initial(x.shape(), 10.0);
    alpha_step(s, x, build_cost_kernel(1, 1.0));
    psi_newton_step(s, 0.5, build_cost_kernel(1, 1.0));
    CHECK(s.psi == 0.0);
}

TEST_CASE("recover primal") {
    DualState s = DualState::initial(GridShape{1, 1, 3}, 4.0);
    s.beta = {0.0, 0.0, 0.0};
    const std::vector<double> w{0.2, 0.3, 0.5};
    CHECK(recover_primal(s, w) == w);
    const std::vector<double> x{0.5, 0.25, 0.25};
    for (std::size_t j = 0; j < 3; ++j) s.beta[j] = s.lambda * (w[j] - x[j]);
    const auto z = recover_primal(s, w);
    for (std::size_t j = 0; j < 3; ++j) CHECK(z[j] == doctest::Approx(x[j]).epsilon(1e-15));
}

TEST_CASE("two-pixel projection lands on the boundary") {
    const MassVector x(1, 2, {1.0, 0.0});
    const std::vector<double> w{0.0, 1.0};
    SinkhornConfig cfg;
    cfg.max_iterations = 20000;
    const auto r = project(w, x, 0.5, two_pixel_kernel(), cfg);
    CHECK(r.converged);
    CHECK(std::abs(r.z[0] - 0.5) <= 1e-2);
    CHECK(std::abs(r.z[1] - 0.5) <= 1e-2);
    CHECK(r.transport_cost <= 0.5 * 1.001 + 1e-6);
}

TEST_CASE("projecting x onto its own ball returns x") {
    Rng rng(21);
    const auto kernel = build_cost_kernel(3, 1.0);
    for (double eps : {0.1, 0.5, 1.0}) {
        const auto x = testing::random_unit_mass(rng, 4, 4);
        const auto r = project(x, x, eps, kernel, SinkhornConfig{});
        CHECK(r.converged);
        CHECK(testing::max_abs_diff(r.z.values(), x.values()) <= 1e-2);
    }
}

TEST_CASE("inactive constraint returns w") {
    Rng rng(22);
    const auto kernel = build_cost_kernel(3, 1.0);
    const auto x = testing::random_unit_mass(rng, 4, 4);
    const auto w = testing::random_unit_mass(rng, 4, 4);
    const double eps = 3.0 * x.total_mass() * kernel.max_cost();
    const auto r = project(w, x, eps, kernel, SinkhornConfig{});
    CHECK(r.converged);
    CHECK(testing::max_abs_diff(r.z.values(), w.values()) <= 1e-2);
    CHECK(r.state.psi <= 1e-6);

    // Same answer from the exact solver on the local cost.
    const auto cost = oracle::dense_local_cost(4, 4, kernel, 1e3);
    const auto exact = oracle::exact_ball_projection(w.values(), x.values(), eps, cost);
    CHECK(testing::max_abs_diff(r.z.values(), exact.z) <= 1e-2);
}

TEST_CASE("dual objective never decreases across sweeps") {
    Rng rng(31);
    const auto kernel = build_cost_kernel(3, 1.0);
    for (int t = 0; t < 10; ++t) {
        const auto x = testing::random_unit_mass(rng, 4, 4);
        const auto wm = testing::random_unit_mass(rng, 4, 4);
        const std::vector<double> w(wm.values().begin(), wm.values().end());
        const double eps = rng.uniform(0.05, 0.5);
        DualState s = DualState::initial(x.shape(), 100.0);
        // The first sweep starts from an arbitrary point; monotonicity holds from there on.
        alpha_step(s, x, kernel);
        double g = dual_objective(s, x, w, eps, kernel);
        for (int sweep = 0; sweep < 60; ++sweep) {
            beta_step(s, w, kernel);
            psi_newton_step(s, eps, kernel);
            alpha_step(s, x, kernel);
            const double next = dual_objective(s, x, w, eps, kernel);
            CHECK(next >= g - 1e-9);
            g = next;
        }
    }
}

TEST_CASE("larger lambda gives a sharper projection") {
    // A spike in the middle of an 8 x 8 grid, pushed back onto its own ball.
    std::vector<double> v(64, 0.0);
    v[27] = 1.0;
    const MassVector x(8, 8, v);
    const auto kernel = build_cost_kernel(5, 1.0);
    auto entropy = [](const MassVector& z) {
        double h = 0.0;
        for (double e : z.values()) {
            if (e > 0.0) h -= e * std::log(e);
        }
        return h;
    };
    SinkhornConfig soft, sharp;
    soft.lambda = 1.0;
    sharp.lambda = 1000.0;
    soft.max_iterations = sharp.max_iterations = 5000;
    const auto a = project(x, x, 0.5, kernel, soft);
    const auto b = project(x, x, 0.5, kernel, sharp);
    CHECK(entropy(a.z) > entropy(b.z));
}

TEST_CASE("projection input validation") {
    const auto kernel = build_cost_kernel(3, 1.0);
    const MassVector x(1, 2, {0.5, 0.5});
    CHECK_THROWS_AS(project(std::vector<double>{1.0}, x, 0.1, kernel, SinkhornConfig{}), ShapeError);
    CHECK_THROWS_AS(project(std::vector<double>{1.0, 0.0}, x, -0.1, kernel, SinkhornConfig{}), ParameterError);
    CHECK_THROWS_AS(project(std::vector<double>{1.0, std::nan("")}, x, 0.1, kernel, SinkhornConfig{}), ParameterError);
}

TEST_CASE("non-convergence is reported, not hidden") {
    const MassVector x(1, 2, {1.0, 0.0});
    SinkhornConfig cfg;
    cfg.max_iterations = 3;
    const auto r = project(std::vector<double>{0.0, 1.0}, x, 0.5, two_pixel_kernel(), cfg);
    CHECK_FALSE(r.converged);
    CHECK(r.iterations == 3);
    CHECK(r.final_residual > cfg.convergence_tol);
}

TEST_CASE("overflowing duals raise a numerical failure naming the step") {
    const MassVector x(1, 2, {0.5, 0.5});
    DualState s = DualState::initial(x.shape(), 1000.0);
    try {
        beta_step(s, std::vector<double>{std::numeric_limits<double>::max(), 0.0}, two_pixel_kernel());
        FAIL("expected a numerical failure");
    } catch (const NumericalFailure& e) {
        CHECK(e.step() == "beta_step");
    }
}

TEST_CASE("multi-channel projection shares one budget") {
    Rng rng(41);
    const auto kernel = build_cost_kernel(3, 1.0);
    const GridShape shape{3, 4, 4};
    std::vector<double> xv, wv;
    for (int c = 0; c < 3; ++c) {
        const auto xc = testing::random_unit_mass(rng, 4, 4);
        const auto wc = testing::random_unit_mass(rng, 4, 4);
        xv.insert(xv.end(), xc.values().begin(), xc.values().end());
        wv.insert(wv.end(), wc.values().begin(), wc.values().end());
    }
    const MassVector x(shape, xv);
    SinkhornConfig cfg;
    cfg.max_iterations = 5000;
    const double eps = 0.2;
    const auto r = project(wv, x, eps, kernel, cfg);
    CHECK(r.converged);
    CHECK(r.z.shape() == shape);
    CHECK(r.transport_cost <= eps * 1.001 + 1e-6);
    const auto rows = TransportPlan(r.state, kernel).row_sums();
    for (std::size_t i = 0; i < rows.size(); ++i) CHECK(std::abs(rows[i] - x[i]) <= 1e-6);
}
