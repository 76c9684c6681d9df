#include <cmath>
#include <limits>
#include <numbers>

#include "doctest.h"
#include "wproj/errors.hpp"
#include "wproj/lambert_w.hpp"

using namespace wproj;

TEST_CASE("lambert W special values") {
    CHECK(lambert_w(0.0) == 0.0);
    CHECK(std::abs(lambert_w(std::numbers::e) - 1.0) <= 1e-14);
    CHECK(lambert_w(1.0) == doctest::Approx(0.5671432904097838).epsilon(1e-15));
    CHECK_THROWS_AS(lambert_w(-1e-3), ParameterError);
    CHECK_THROWS_AS(lambert_w(std::nan("")), ParameterError);
}

TEST_CASE("lambert W defining identity over a log grid") {
    for (double lv = -300.0; lv <= 300.0; lv += 0.25) {
        const double v = std::pow(10.0, lv);
        const double r = lambert_w(v);
        CHECK(std::abs(r * std::exp(r) - v) / std::max(v, 1.0) <= 1e-12);
    }
}

TEST_CASE("log-argument lambert W") {
    CHECK(lambert_w_log(-std::numeric_limits<double>::infinity()) == 0.0);
    CHECK(lambert_w_log(std::numeric_limits<double>::infinity()) == std::numeric_limits<double>::infinity());
    CHECK(std::abs(lambert_w_log(1.0) - 1.0) <= 1e-14);
    // Arguments far beyond the double range of e^y.
    for (double y : {-50.0, -1.0, 0.0, 2.5, 10.0, 700.0, 710.0, 1e3, 1e5, 1e10, 1e200}) {
        const double r = lambert_w_log(y);
        REQUIRE(std::isfinite(r));
        if (r > 0.0) CHECK(std::abs(r + std::log(r) - y) <= 1e-12 * std::max(1.0, std::abs(y)));
    }
    // Agreement with the direct form where both apply.
    for (double y = -30.0; y < 690.0; y += 7.3) {
        CHECK(lambert_w_log(y) == doctest::Approx(lambert_w(std::exp(y))).epsilon(1e-13));
    }
}
