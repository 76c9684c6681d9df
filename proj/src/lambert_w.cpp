#include "wproj/lambert_w.hpp"

#include <cmath>
#include <limits>

#include "wproj/errors.hpp"

namespace wproj {

namespace {

constexpr int kMaxIterations = 64;

// Halley on f(r) = r e^r - v. Used where e^r is comfortably representable.
double halley_direct(double v, double r) {
    for (int it = 0; it < kMaxIterations; ++it) {
        const double er = std::exp(r);
        const double f = r * er - v;
        const double fp = er * (r + 1.0);
        const double denom = fp - (r + 2.0) * f / (2.0 * r + 2.0);
        const double step = f / denom;
        r -= step;
        if (std::abs(step) <= 4.0 * std::numeric_limits<double>::epsilon() * std::abs(r)) break;
    }
    return r;
}

// Halley on h(r) = r + log r - y, the logarithm of r e^r = e^y. Only valid for r > 0.
double halley_log(double y, double r) {
    for (int it = 0; it < kMaxIterations; ++it) {
        const double h = r + std::log(r) - y;
        const double hp = 1.0 + 1.0 / r;
        const double hpp = -1.0 / (r * r);
        const double step = h / (hp - 0.5 * h * hpp / hp);
        double next = r - step;
        if (next <= 0.0) next = 0.5 * r;
        const double change = std::abs(next - r);
        r = next;
        if (change <= 4.0 * std::numeric_limits<double>::epsilon() * r) break;
    }
    return r;
}

}  // namespace

double lambert_w(double v) {
    if (std::isnan(v) || v < 0.0) throw ParameterError("lambert_w: argument must be non-negative");
    if (v == 0.0) return 0.0;
    if (std::isinf(v)) return v;
    if (v < 1e-8) {
        // W(v) = v - v^2 + 3/2 v^3 - ..., exact to double precision here.
        return v * (1.0 - v * (1.0 - 1.5 * v));
    }
    if (v > 20.0) return halley_log(std::log(v), std::log(v) - std::log(std::log(v)));
    // Winitzki's uniform approximation as a starting point.
    const double l = std::log1p(v);
    const double r0 = l * (1.0 - std::log1p(l) / (2.0 + l));
    return halley_direct(v, r0);
}

double lambert_w_log(double y) {
    if (std::isnan(y)) throw ParameterError("lambert_w_log: argument is NaN");
    if (y == -std::numeric_limits<double>::infinity()) return 0.0;
    if (y == std::numeric_limits<double>::infinity()) return y;
    if (y < 3.0) return lambert_w(std::exp(y));
    return halley_log(y, y - std::log(y));
}

}  // namespace wproj
