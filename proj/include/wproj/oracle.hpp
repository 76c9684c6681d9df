#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "wproj/core.hpp"

// Exact solvers for small instances. Everything here works on dense n x n
// cost matrices over the full grid, without the local-window restriction.

namespace wproj::oracle {

/// Dense n x n ground cost between all pixel pairs of a height x width grid:
/// C(a, b) = (drow^2 + dcol^2)^(p/2).
std::vector<double> dense_grid_cost(std::size_t height, std::size_t width, double p);

/// Dense n x n cost over the grid that reproduces a local kernel: entries
/// outside the k x k window are set to `outside`.
std::vector<double> dense_local_cost(std::size_t height, std::size_t width, const LocalCostKernel& kernel,
                                     double outside);

struct TransportSolution {
    double cost = 0.0;
    std::vector<double> plan;    ///< n x m row-major
    std::vector<double> source_potential;  ///< u with u_i + v_j <= C_ij
    std::vector<double> target_potential;  ///< v
    double dual_value = 0.0;     ///< sum a_i u_i + sum b_j v_j
};

/// Exact optimal transport between equal-mass histograms by successive
/// shortest paths with node potentials. The returned potentials certify
/// optimality; the solver checks dual feasibility and the duality gap itself
/// and throws SolverError if either fails.
/// Throws ParameterError if the masses differ by more than 1e-9 (relative to max(1, mass)).
TransportSolution solve_transport(std::span<const double> source, std::span<const double> target,
                                  std::span<const double> cost);

double exact_ot_distance(std::span<const double> x, std::span<const double> y, std::span<const double> cost);

/// Single-channel convenience overload.
double exact_ot_distance(const MassVector& x, const MassVector& y, std::span<const double> cost);

struct QpCertificate {
    double primal_residual = 0.0;   ///< max |A u - b|
    double dual_residual = 0.0;     ///< max |Q u + q - A^T y - s|
    double complementarity = 0.0;   ///< max u_k s_k
    double duality_gap = 0.0;       ///< |primal objective - dual objective|
    std::size_t iterations = 0;

    double kkt_residual() const;
};

struct BallProjection {
    std::vector<double> z;
    std::vector<double> plan;
    double objective = 0.0;         ///< 0.5 |w - z|^2
    double transport_cost = 0.0;
    QpCertificate certificate;
};

/// Exact Euclidean projection of w onto { z : W_C(x, z) <= eps }.
/// Solved as a convex QP over transport plans with a primal-dual interior
/// point method; throws SolverError unless the KKT residual reaches 1e-8.
BallProjection exact_ball_projection(std::span<const double> w, std::span<const double> x, double eps,
                                     std::span<const double> cost);

struct SupportValue {
    double value = 0.0;             ///< max over the ball of -z^T y
    double dual_value = 0.0;
    std::vector<double> z;
    QpCertificate certificate;
};

/// max { -z^T y : W_C(x, z) <= eps } as an exact LP.
SupportValue exact_support_function(std::span<const double> x, std::span<const double> y, double eps,
                                    std::span<const double> cost);

}  // namespace wproj::oracle
