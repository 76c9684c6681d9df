#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "wproj/core.hpp"

namespace wproj {

struct SinkhornConfig {
    double lambda = 1000.0;
    std::size_t max_iterations = 500;
    /// Max-abs change of alpha, beta and psi between two sweeps.
    double convergence_tol = 1e-4;
    /// Step shrink factor of the psi >= 0 line search.
    double newton_shrink = 0.5;

    /// Throws ParameterError when a field is out of range.
    void validate() const;
};

/// Log-domain dual variables of the entropy-regularized projection.
/// alpha and beta are stored per (channel, pixel); psi is shared by all channels.
/// alpha is -inf exactly where the source mass is zero.
struct DualState {
    GridShape shape{};
    std::vector<double> alpha;
    std::vector<double> beta;
    double psi = 1.0;
    double lambda = 1.0;

    /// alpha = beta = log(1/n), psi = 1.
    static DualState initial(GridShape shape, double lambda);
};

/// Lazy view of the transport plan implied by a dual state:
/// plan(c, i, j) = exp(alpha_i - psi * C_ij - 1 + beta_j) for j in the window of i.
/// Holds references; the state and kernel must outlive it.
class TransportPlan {
public:
    TransportPlan(const DualState& state, const LocalCostKernel& kernel) : state_(&state), kernel_(&kernel) {}

    /// Pixel indices are flat within a channel. Zero outside the local window.
    double entry(std::size_t channel, std::size_t from, std::size_t to) const;

    std::vector<double> row_sums() const;
    std::vector<double> column_sums() const;

    /// Sum over channels of <plan, C> and <plan, C*C>.
    double cost() const;
    double cost_squared() const;

    /// Materialized n x n plan of one channel, row-major. For small grids.
    std::vector<double> dense(std::size_t channel) const;

private:
    const DualState* state_;
    const LocalCostKernel* kernel_;
};

struct ProjectionResult {
    MassVector z;
    double transport_cost = 0.0;
    std::size_t iterations = 0;
    bool converged = false;
    double final_residual = 0.0;
    /// Mass removed when clamping negative entries of w - beta / lambda.
    double clamped_mass = 0.0;
    DualState state;
};

/// Exact maximization of the dual over alpha (a log-domain Sinkhorn row scaling).
void alpha_step(DualState& state, const MassVector& x, const LocalCostKernel& kernel);

/// Exact maximization of the dual over beta through the Lambert W function,
/// evaluated on log arguments so large lambda * w cannot overflow.
void beta_step(DualState& state, std::span<const double> w, const LocalCostKernel& kernel);

/// One damped Newton step on psi. The step is shrunk until psi stays >= 0.
void psi_newton_step(DualState& state, double eps, const LocalCostKernel& kernel, double shrink = 0.5);

/// z = w - beta / lambda, unclamped.
std::vector<double> recover_primal(const DualState& state, std::span<const double> w);

/// g(alpha, beta, psi) of the dual problem.
double dual_objective(const DualState& state, const MassVector& x, std::span<const double> w, double eps,
                      const LocalCostKernel& kernel);

struct KktResiduals {
    double alpha = 0.0;          ///< max |x_i - sum_j plan_ij|
    double beta = 0.0;           ///< max |w_j - beta_j / lambda - sum_i plan_ij|
    double complementary = 0.0;  ///< |psi * (<plan, C> - eps)|
};

KktResiduals kkt_residuals(const DualState& state, const MassVector& x, std::span<const double> w, double eps,
                           const LocalCostKernel& kernel);

/// Approximate projection of w onto the eps Wasserstein ball around x.
/// w may hold negative entries (a gradient step can produce them).
/// Throws NumericalFailure when an update produces a non-finite value.
ProjectionResult project(std::span<const double> w, const MassVector& x, double eps,
                         const LocalCostKernel& kernel, const SinkhornConfig& cfg);

ProjectionResult project(const MassVector& w, const MassVector& x, double eps, const LocalCostKernel& kernel,
                         const SinkhornConfig& cfg);

namespace detail {

/// Max-abs difference between two dual states, treating matching -inf entries as equal.
double state_change(const DualState& a, const DualState& b);

/// Throws NumericalFailure naming `step` if any alpha, beta or psi is NaN or +inf.
void check_finite(const DualState& state, const char* step);

}  // namespace detail

}  // namespace wproj
