#include "wproj/conjugate.hpp"

#include <cmath>
#include <limits>

#include "wproj/errors.hpp"

namespace wproj {

namespace {

struct ReducedMoments {
    double cost = 0.0;      ///< <plan, C>
    double variance = 0.0;  ///< sum over rows of the mass-weighted variance of C
};

// With beta frozen, alpha can be eliminated exactly; the remaining dual is concave
// in psi alone with slope <plan, C> - eps and curvature -variance.
ReducedMoments reduced_moments(const DualState& s, const LocalCostKernel& kernel) {
    const TransportPlan plan(s, kernel);
    const auto h = static_cast<std::ptrdiff_t>(s.shape.height);
    const auto w = static_cast<std::ptrdiff_t>(s.shape.width);
    const std::ptrdiff_t r = kernel.radius();
    ReducedMoments out;
    for (std::size_t c = 0; c < s.shape.channels; ++c) {
        for (std::ptrdiff_t i = 0; i < h * w; ++i) {
            double mass = 0.0, m1 = 0.0, m2 = 0.0;
            const std::ptrdiff_t ri = i / w, ci = i % w;
            for (std::ptrdiff_t di = -r; di <= r; ++di) {
                for (std::ptrdiff_t dj = -r; dj <= r; ++dj) {
                    if (ri + di < 0 || ri + di >= h || ci + dj < 0 || ci + dj >= w) continue;
                    const double p = plan.entry(c, static_cast<std::size_t>(i), static_cast<std::size_t>(i + di * w + dj));
                    const double cost = kernel.at(di, dj);
                    mass += p;
                    m1 += p * cost;
                    m2 += p * cost * cost;
                }
            }
            out.cost += m1;
            if (mass > 0.0) out.variance += std::max(0.0, m2 - m1 * m1 / mass);
        }
    }
    return out;
}

// Newton step on the alpha-eliminated dual, kept inside the bracket [lo, hi]
// known to contain the optimal psi; falls back to bisection or doubling.
void reduced_psi_step(DualState& s, double eps, const LocalCostKernel& kernel, double& lo, double& hi) {
    const ReducedMoments m = reduced_moments(s, kernel);
    const double slope = m.cost - eps;
    if (!std::isfinite(slope) || !std::isfinite(m.variance)) {
        throw NumericalFailure("conjugate_psi_step", "non-finite derivative of the dual");
    }
    if (slope > 0.0) {
        lo = std::max(lo, s.psi);
    } else {
        hi = std::min(hi, s.psi);
        if (s.psi == 0.0) return;
    }
    double next = m.variance > 0.0 ? s.psi + slope / m.variance : std::numeric_limits<double>::quiet_NaN();
    if (!(next > lo && next < hi)) next = std::isfinite(hi) ? 0.5 * (lo + hi) : std::max(2.0 * lo, lo + 1.0);
    s.psi = next;
    if (!std::isfinite(s.psi)) throw NumericalFailure("conjugate_psi_step", "psi is not finite");
}

}  // namespace

ConjugateResult conjugate_solve(std::span<const double> y, const MassVector& x, double eps,
                                const LocalCostKernel& kernel, const SinkhornConfig& cfg) {
    cfg.validate();
    if (y.size() != x.size()) throw ShapeError("conjugate_solve: y and x must have the same shape");
    if (!(eps >= 0.0) || !std::isfinite(eps)) throw ParameterError("conjugate_solve: eps must be finite and non-negative");

    DualState state = DualState::initial(x.shape(), cfg.lambda);
    for (std::size_t j = 0; j < y.size(); ++j) {
        if (!std::isfinite(y[j])) throw ParameterError("conjugate_solve: y has non-finite entries");
        // The z-stationarity condition of the linear objective -z^T y.
        state.beta[j] = -cfg.lambda * y[j];
    }

    ConjugateResult result;
    if (eps == 0.0) {
        result.z = x;
        for (std::size_t j = 0; j < y.size(); ++j) result.objective -= x[j] * y[j];
        result.converged = true;
        result.state = std::move(state);
        return result;
    }
    const double cost_limit = eps * (1.0 + 1e-3) + 1e-6;
    double lo = 0.0, hi = std::numeric_limits<double>::infinity();
    for (std::size_t it = 1; it <= cfg.max_iterations; ++it) {
        const DualState previous = state;
        alpha_step(state, x, kernel);
        reduced_psi_step(state, eps, kernel, lo, hi);
        result.iterations = it;
        result.final_residual = detail::state_change(previous, state);
        if (result.final_residual < cfg.convergence_tol && TransportPlan(state, kernel).cost() <= cost_limit) {
            result.converged = true;
            break;
        }
    }
    // Re-fit the rows so the plan carries exactly the mass of x.
    alpha_step(state, x, kernel);

    TransportPlan plan(state, kernel);
    auto z = plan.column_sums();
    for (std::size_t j = 0; j < z.size(); ++j) result.objective -= z[j] * y[j];
    result.transport_cost = plan.cost();
    if (result.transport_cost > cost_limit) result.converged = false;
    result.z = MassVector(x.shape(), std::move(z));
    result.state = std::move(state);
    return result;
}

}  // namespace wproj
