#include "wproj/sinkhorn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "wproj/errors.hpp"
#include "wproj/lambert_w.hpp"

namespace wproj {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// log K_psi over the window: -psi * C(d) - 1.
std::vector<double> log_kernel(const LocalCostKernel& kernel, double psi) {
    auto costs = kernel.costs();
    std::vector<double> lk(costs.size());
    for (std::size_t a = 0; a < costs.size(); ++a) lk[a] = -psi * costs[a] - 1.0;
    return lk;
}

struct Window {
    std::ptrdiff_t i0, i1, j0, j1;  // inclusive offset ranges clipped to the image
};

inline Window clip(std::ptrdiff_t i, std::ptrdiff_t j, std::ptrdiff_t r, std::ptrdiff_t h, std::ptrdiff_t w) {
    return {std::max(-r, -i), std::min(r, h - 1 - i), std::max(-r, -j), std::min(r, w - 1 - j)};
}

// Sums that come out below this are recomputed in the log domain: a scaled
// sum this large cannot have lost anything that matters to underflow.
constexpr double kTrustedSum = 1e-280;

// log sum_{d in window(i, j)} exp(src(p + d) + lk(d)) with a per-window max shift.
double exact_window_lse(const double* src, const double* lk, std::ptrdiff_t k, std::ptrdiff_t i, std::ptrdiff_t j,
                        std::ptrdiff_t h, std::ptrdiff_t w) {
    const std::ptrdiff_t r = k / 2;
    const Window win = clip(i, j, r, h, w);
    double top = kNegInf;
    for (std::ptrdiff_t di = win.i0; di <= win.i1; ++di) {
        const double* row = src + (i + di) * w + j;
        const double* lrow = lk + (di + r) * k + r;
        for (std::ptrdiff_t dj = win.j0; dj <= win.j1; ++dj) top = std::max(top, row[dj] + lrow[dj]);
    }
    if (top == kNegInf) return kNegInf;
    double acc = 0.0;
    for (std::ptrdiff_t di = win.i0; di <= win.i1; ++di) {
        const double* row = src + (i + di) * w + j;
        const double* lrow = lk + (di + r) * k + r;
        for (std::ptrdiff_t dj = win.j0; dj <= win.j1; ++dj) acc += std::exp(row[dj] + lrow[dj] - top);
    }
    return top + std::log(acc);
}

// exp(v - max v), with -inf entries mapped to 0. Returns the shift.
double shifted_exp(std::span<const double> v, std::vector<double>& out) {
    double top = kNegInf;
    for (double e : v) top = std::max(top, e);
    out.resize(v.size());
    for (std::size_t a = 0; a < v.size(); ++a) out[a] = top == kNegInf ? 0.0 : std::exp(v[a] - top);
    return top;
}

// out(p) = log sum_{d in window} exp(src(p + d) + lk(d)). The cost kernel is
// point symmetric, so the same routine serves rows (alpha) and columns (beta).
// Evaluated as a plain windowed product of exp(src - shift) with exp(lk); any
// pixel whose product is too small to trust is redone with a local shift.
void windowed_log_sum_exp(std::span<const double> src, std::span<const double> lk, std::size_t k,
                          std::size_t height, std::size_t width, std::span<double> out) {
    const auto r = static_cast<std::ptrdiff_t>(k / 2);
    const auto kk = static_cast<std::ptrdiff_t>(k);
    const auto h = static_cast<std::ptrdiff_t>(height);
    const auto w = static_cast<std::ptrdiff_t>(width);
    std::vector<double> scaled;
    const double shift = shifted_exp(src, scaled);
    std::vector<double> kern(lk.size());
    for (std::size_t a = 0; a < lk.size(); ++a) kern[a] = std::exp(lk[a]);
    for (std::ptrdiff_t i = 0; i < h; ++i) {
        for (std::ptrdiff_t j = 0; j < w; ++j) {
            const Window win = clip(i, j, r, h, w);
            double acc = 0.0;
            for (std::ptrdiff_t di = win.i0; di <= win.i1; ++di) {
                const double* row = scaled.data() + (i + di) * w + j;
                const double* krow = kern.data() + (di + r) * kk + r;
                for (std::ptrdiff_t dj = win.j0; dj <= win.j1; ++dj) acc += row[dj] * krow[dj];
            }
            out[static_cast<std::size_t>(i * w + j)] =
                acc >= kTrustedSum ? shift + std::log(acc) : exact_window_lse(src.data(), lk.data(), kk, i, j, h, w);
        }
    }
}

struct PlanMoments {
    double mass = 0.0;
    double cost = 0.0;
    double cost_squared = 0.0;
};

// Mass, cost and squared cost of the plan, accumulated row by row. Each row is
// exp(alpha_i + B) * sum_d K(d) exp(beta_{i+d} - B) with B = max beta; rows
// whose scaled sum is too small to trust are summed entry by entry instead.
PlanMoments plan_moments(const DualState& s, const LocalCostKernel& kernel) {
    const auto lk = log_kernel(kernel, s.psi);
    auto costs = kernel.costs();
    const auto r = kernel.radius();
    const auto kk = static_cast<std::ptrdiff_t>(kernel.size());
    const auto h = static_cast<std::ptrdiff_t>(s.shape.height);
    const auto w = static_cast<std::ptrdiff_t>(s.shape.width);
    std::vector<double> kern(lk.size());
    for (std::size_t a = 0; a < lk.size(); ++a) kern[a] = std::exp(lk[a]);
    std::vector<double> scaled;
    PlanMoments m;
    for (std::size_t c = 0; c < s.shape.channels; ++c) {
        const double* alpha = s.alpha.data() + c * s.shape.pixels();
        const double* beta = s.beta.data() + c * s.shape.pixels();
        const double shift = shifted_exp(std::span<const double>(beta, s.shape.pixels()), scaled);
        for (std::ptrdiff_t i = 0; i < h; ++i) {
            for (std::ptrdiff_t j = 0; j < w; ++j) {
                const double a = alpha[i * w + j];
                if (a == kNegInf) continue;
                const Window win = clip(i, j, r, h, w);
                double s0 = 0.0, s1 = 0.0, s2 = 0.0;
                for (std::ptrdiff_t di = win.i0; di <= win.i1; ++di) {
                    for (std::ptrdiff_t dj = win.j0; dj <= win.j1; ++dj) {
                        const auto off = static_cast<std::size_t>((di + r) * kk + dj + r);
                        const double e = kern[off] * scaled[static_cast<std::size_t>((i + di) * w + j + dj)];
                        s0 += e;
                        s1 += e * costs[off];
                        s2 += e * costs[off] * costs[off];
                    }
                }
                if (s0 >= kTrustedSum) {
                    const double row_mass = std::exp(a + shift + std::log(s0));
                    m.mass += row_mass;
                    m.cost += row_mass * (s1 / s0);
                    m.cost_squared += row_mass * (s2 / s0);
                    continue;
                }
                for (std::ptrdiff_t di = win.i0; di <= win.i1; ++di) {
                    for (std::ptrdiff_t dj = win.j0; dj <= win.j1; ++dj) {
                        const auto off = static_cast<std::size_t>((di + r) * kk + dj + r);
                        const double e = std::exp(a + lk[off] + beta[(i + di) * w + j + dj]);
                        m.mass += e;
                        m.cost += e * costs[off];
                        m.cost_squared += e * costs[off] * costs[off];
                    }
                }
            }
        }
    }
    return m;
}

void check_shape(const DualState& s, std::size_t n, const char* what) {
    if (s.alpha.size() != s.shape.size() || s.beta.size() != s.shape.size() || n != s.shape.size()) {
        throw ShapeError(std::string(what) + ": dual state and input sizes disagree");
    }
}

}  // namespace

void SinkhornConfig::validate() const {
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ParameterError("SinkhornConfig: lambda must be positive");
    if (!(convergence_tol > 0.0)) throw ParameterError("SinkhornConfig: convergence_tol must be positive");
    if (max_iterations < 1) throw ParameterError("SinkhornConfig: max_iterations must be at least 1");
    if (!(newton_shrink > 0.0 && newton_shrink < 1.0)) {
        throw ParameterError("SinkhornConfig: newton_shrink must lie in (0, 1)");
    }
}

DualState DualState::initial(GridShape shape, double lambda) {
    DualState s;
    s.shape = shape;
    const double init = std::log(1.0 / static_cast<double>(shape.pixels()));
    s.alpha.assign(shape.size(), init);
    s.beta.assign(shape.size(), init);
    s.psi = 1.0;
    s.lambda = lambda;
    return s;
}

double TransportPlan::entry(std::size_t channel, std::size_t from, std::size_t to) const {
    const auto& s = *state_;
    const auto w = static_cast<std::ptrdiff_t>(s.shape.width);
    const std::ptrdiff_t di = static_cast<std::ptrdiff_t>(to / s.shape.width) - static_cast<std::ptrdiff_t>(from / s.shape.width);
    const std::ptrdiff_t dj = static_cast<std::ptrdiff_t>(to) % w - static_cast<std::ptrdiff_t>(from) % w;
    const auto r = kernel_->radius();
    if (std::abs(di) > r || std::abs(dj) > r) return 0.0;
    const double a = s.alpha[channel * s.shape.pixels() + from];
    if (a == kNegInf) return 0.0;
    return std::exp(a - s.psi * kernel_->at(di, dj) - 1.0 + s.beta[channel * s.shape.pixels() + to]);
}

std::vector<double> TransportPlan::row_sums() const {
    const auto& s = *state_;
    std::vector<double> out(s.shape.size());
    const auto lk = log_kernel(*kernel_, s.psi);
    for (std::size_t c = 0; c < s.shape.channels; ++c) {
        const std::size_t base = c * s.shape.pixels();
        std::span<double> dst(out.data() + base, s.shape.pixels());
        windowed_log_sum_exp(std::span<const double>(s.beta).subspan(base, s.shape.pixels()), lk, kernel_->size(),
                             s.shape.height, s.shape.width, dst);
        for (std::size_t i = 0; i < s.shape.pixels(); ++i) {
            const double a = s.alpha[base + i];
            dst[i] = a == kNegInf ? 0.0 : std::exp(a + dst[i]);
        }
    }
    return out;
}

std::vector<double> TransportPlan::column_sums() const {
    const auto& s = *state_;
    std::vector<double> out(s.shape.size());
    const auto lk = log_kernel(*kernel_, s.psi);
    for (std::size_t c = 0; c < s.shape.channels; ++c) {
        const std::size_t base = c * s.shape.pixels();
        std::span<double> dst(out.data() + base, s.shape.pixels());
        windowed_log_sum_exp(std::span<const double>(s.alpha).subspan(base, s.shape.pixels()), lk, kernel_->size(),
                             s.shape.height, s.shape.width, dst);
        for (std::size_t j = 0; j < s.shape.pixels(); ++j) {
            dst[j] = dst[j] == kNegInf ? 0.0 : std::exp(dst[j] + s.beta[base + j]);
        }
    }
    return out;
}

double TransportPlan::cost() const { return plan_moments(*state_, *kernel_).cost; }

double TransportPlan::cost_squared() const { return plan_moments(*state_, *kernel_).cost_squared; }

std::vector<double> TransportPlan::dense(std::size_t channel) const {
    const std::size_t n = state_->shape.pixels();
    std::vector<double> out(n * n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = entry(channel, i, j);
    }
    return out;
}

void alpha_step(DualState& state, const MassVector& x, const LocalCostKernel& kernel) {
    check_shape(state, x.size(), "alpha_step");
    const auto lk = log_kernel(kernel, state.psi);
    const std::size_t n = state.shape.pixels();
    std::vector<double> lse(n);
    for (std::size_t c = 0; c < state.shape.channels; ++c) {
        const std::size_t base = c * n;
        windowed_log_sum_exp(std::span<const double>(state.beta).subspan(base, n), lk, kernel.size(),
                             state.shape.height, state.shape.width, lse);
        for (std::size_t i = 0; i < n; ++i) {
            const double xi = x[base + i];
            if (xi == 0.0) {
                state.alpha[base + i] = kNegInf;
                continue;
            }
            if (lse[i] == kNegInf) {
                throw NumericalFailure("alpha_step", "window sum is zero at a pixel with positive mass");
            }
            state.alpha[base + i] = std::log(xi) - lse[i];
        }
    }
    detail::check_finite(state, "alpha_step");
}

void beta_step(DualState& state, std::span<const double> w, const LocalCostKernel& kernel) {
    check_shape(state, w.size(), "beta_step");
    const auto lk = log_kernel(kernel, state.psi);
    const std::size_t n = state.shape.pixels();
    const double lambda = state.lambda;
    const double log_lambda = std::log(lambda);
    std::vector<double> lse(n);
    for (std::size_t c = 0; c < state.shape.channels; ++c) {
        const std::size_t base = c * n;
        windowed_log_sum_exp(std::span<const double>(state.alpha).subspan(base, n), lk, kernel.size(),
                             state.shape.height, state.shape.width, lse);
        for (std::size_t j = 0; j < n; ++j) {
            const double scaled = lambda * w[base + j];
            // W(lambda e^{lambda w_j} sum_i e^{alpha_i - psi C_ij - 1}) with the argument kept in log form.
            const double y = log_lambda + scaled + lse[j];
            state.beta[base + j] = scaled - lambert_w_log(y);
        }
    }
    detail::check_finite(state, "beta_step");
}

void psi_newton_step(DualState& state, double eps, const LocalCostKernel& kernel, double shrink) {
    const PlanMoments m = plan_moments(state, kernel);
    const double grad = -eps + m.cost;
    const double curvature = -m.cost_squared;
    if (!std::isfinite(grad) || !std::isfinite(curvature)) {
        throw NumericalFailure("psi_newton_step", "non-finite derivative of the dual");
    }
    if (curvature == 0.0) {
        // No mass on positive-cost entries: the dual is linear in psi with slope -eps.
        if (grad > 0.0) throw NumericalFailure("psi_newton_step", "zero curvature with positive slope");
        state.psi = 0.0;
        return;
    }
    const double direction = -grad / curvature;
    if (state.psi == 0.0 && direction < 0.0) return;
    double t = 1.0;
    int halvings = 0;
    while (state.psi + t * direction < 0.0 && halvings < 1100) {
        t *= shrink;
        ++halvings;
    }
    const double next = state.psi + t * direction;
    state.psi = next < 0.0 ? state.psi : next;
    if (!std::isfinite(state.psi)) throw NumericalFailure("psi_newton_step", "psi is not finite");
}

std::vector<double> recover_primal(const DualState& state, std::span<const double> w) {
    if (w.size() != state.beta.size()) throw ShapeError("recover_primal: size mismatch");
    std::vector<double> z(w.size());
    for (std::size_t j = 0; j < w.size(); ++j) z[j] = w[j] - state.beta[j] / state.lambda;
    return z;
}

double dual_objective(const DualState& state, const MassVector& x, std::span<const double> w, double eps,
                      const LocalCostKernel& kernel) {
    check_shape(state, x.size(), "dual_objective");
    if (w.size() != x.size()) throw ShapeError("dual_objective: size mismatch");
    double g = -state.psi * eps - plan_moments(state, kernel).mass;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] > 0.0) g += state.alpha[i] * x[i];
        g += state.beta[i] * w[i] - state.beta[i] * state.beta[i] / (2.0 * state.lambda);
    }
    return g;
}

KktResiduals kkt_residuals(const DualState& state, const MassVector& x, std::span<const double> w, double eps,
                           const LocalCostKernel& kernel) {
    check_shape(state, x.size(), "kkt_residuals");
    TransportPlan plan(state, kernel);
    const auto rows = plan.row_sums();
    const auto cols = plan.column_sums();
    KktResiduals res;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        res.alpha = std::max(res.alpha, std::abs(x[i] - rows[i]));
        res.beta = std::max(res.beta, std::abs(w[i] - state.beta[i] / state.lambda - cols[i]));
    }
    res.complementary = std::abs(state.psi * (plan.cost() - eps));
    return res;
}

ProjectionResult project(std::span<const double> w, const MassVector& x, double eps, const LocalCostKernel& kernel,
                         const SinkhornConfig& cfg) {
    cfg.validate();
    if (w.size() != x.size()) throw ShapeError("project: w and x must have the same shape");
    if (!(eps >= 0.0) || !std::isfinite(eps)) throw ParameterError("project: eps must be finite and non-negative");
    for (double v : w) {
        if (!std::isfinite(v)) throw ParameterError("project: w has non-finite entries");
    }

    DualState state = DualState::initial(x.shape(), cfg.lambda);
    ProjectionResult result;
    if (eps == 0.0) {
        // The ball is the single point x.
        result.z = x;
        result.converged = true;
        result.state = std::move(state);
        return result;
    }
    const double cost_limit = eps * (1.0 + 1e-3) + 1e-6;
    for (std::size_t it = 1; it <= cfg.max_iterations; ++it) {
        const DualState previous = state;
        alpha_step(state, x, kernel);
        beta_step(state, w, kernel);
        psi_newton_step(state, eps, kernel, cfg.newton_shrink);
        result.iterations = it;
        result.final_residual = detail::state_change(previous, state);
        // The plan cost is only needed once the duals have settled.
        if (result.final_residual < cfg.convergence_tol && TransportPlan(state, kernel).cost() <= cost_limit) {
            result.converged = true;
            break;
        }
    }

    // Re-fit the rows so the returned plan carries exactly the mass of x.
    alpha_step(state, x, kernel);
    result.transport_cost = TransportPlan(state, kernel).cost();
    if (result.transport_cost > cost_limit) result.converged = false;

    auto z = recover_primal(state, w);
    for (double& v : z) {
        if (v < 0.0) {
            result.clamped_mass -= v;
            v = 0.0;
        }
    }
    result.z = MassVector(x.shape(), std::move(z));
    result.state = std::move(state);
    return result;
}

ProjectionResult project(const MassVector& w, const MassVector& x, double eps, const LocalCostKernel& kernel,
                         const SinkhornConfig& cfg) {
    if (!(w.shape() == x.shape())) throw ShapeError("project: w and x must have the same shape");
    return project(w.values(), x, eps, kernel, cfg);
}

namespace detail {

double state_change(const DualState& a, const DualState& b) {
    double change = std::abs(a.psi - b.psi);
    auto diff = [](double u, double v) { return (u == v) ? 0.0 : std::abs(u - v); };
    for (std::size_t i = 0; i < a.alpha.size(); ++i) change = std::max(change, diff(a.alpha[i], b.alpha[i]));
    for (std::size_t i = 0; i < a.beta.size(); ++i) change = std::max(change, diff(a.beta[i], b.beta[i]));
    return change;
}

void check_finite(const DualState& state, const char* step) {
    if (!std::isfinite(state.psi) || state.psi < 0.0) throw NumericalFailure(step, "psi is not a finite non-negative value");
    for (double a : state.alpha) {
        if (std::isnan(a) || a == std::numeric_limits<double>::infinity()) {
            throw NumericalFailure(step, "alpha has a non-finite entry");
        }
    }
    for (double b : state.beta) {
        if (!std::isfinite(b)) throw NumericalFailure(step, "beta has a non-finite entry");
    }
}

}  // namespace detail

}  // namespace wproj
