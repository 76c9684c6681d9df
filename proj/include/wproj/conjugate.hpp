#pragma once

#include <cstddef>
#include <span>

#include "wproj/core.hpp"
#include "wproj/sinkhorn.hpp"

namespace wproj {

struct ConjugateResult {
    MassVector z;                 ///< column sums of the recovered plan
    double objective = 0.0;       ///< -z^T y, the maximized value
    double transport_cost = 0.0;
    std::size_t iterations = 0;
    bool converged = false;
    double final_residual = 0.0;
    DualState state;
};

/// Entropy-regularized max { -z^T y : W(x, z) <= eps }. Runs the projected
/// Sinkhorn alpha step with beta frozen at -lambda * y. Since alpha then has a
/// closed form, psi takes a bracketed Newton step on the alpha-eliminated dual.
ConjugateResult conjugate_solve(std::span<const double> y, const MassVector& x, double eps,
                                const LocalCostKernel& kernel, const SinkhornConfig& cfg);

}  // namespace wproj
