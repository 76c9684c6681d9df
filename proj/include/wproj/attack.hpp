#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "wproj/core.hpp"
#include "wproj/data.hpp"
#include "wproj/models.hpp"
#include "wproj/sinkhorn.hpp"

namespace wproj {

/// Geometric radius schedule for PGD: iteration t (0-based) uses
/// eps_start * growth_factor^floor(t / growth_period).
struct EpsilonSchedule {
    double eps_start = 0.3;
    double growth_factor = 1.1;
    std::size_t growth_period = 10;
    std::size_t max_pgd_iterations = 200;

    void validate() const;
    double eps_at(std::size_t iteration) const;
    /// Radius of the last iteration, eps_at(max_pgd_iterations - 1).
    double max_explored() const;
    /// Every distinct radius the schedule visits, ascending.
    std::vector<double> radii() const;

    /// Test-time evaluation on digits: 0.3, x1.1 every 10, 200 iterations.
    static EpsilonSchedule mnist_evaluation() { return {0.3, 1.1, 10, 200}; }
    /// Training on digits: 0.1, x1.4 every 5, 50 iterations.
    static EpsilonSchedule mnist_training() { return {0.1, 1.4, 5, 50}; }
    /// Training on natural images: 0.01, x1.5 every 5, 50 iterations.
    static EpsilonSchedule cifar_training() { return {0.01, 1.5, 5, 50}; }
};

struct AttackResult {
    bool success = false;
    MassVector adversarial_example;
    /// Radius in force when the prediction flipped; 0 for inputs that were
    /// already misclassified, +inf when the attack failed.
    double eps_at_success = std::numeric_limits<double>::infinity();
    std::size_t iterations_used = 0;
    std::vector<double> loss_trace;
    std::size_t unconverged_projections = 0;
    /// Set when a projection raised a numerical failure; the attack stops there.
    std::string error;
};

/// step * sign(grad) with sign(0) = 0.
std::vector<double> steepest_step_linf(std::span<const double> grad, double step);

/// Wasserstein PGD with l-infinity steepest ascent on the loss:
///   x <- project(x + step * sign(grad loss), x_orig, eps_t)
/// starting from x_orig, stopping at the first misclassification or the cap.
AttackResult pgd_attack(const DifferentiableClassifier& model, const MassVector& x, std::size_t label,
                        const EpsilonSchedule& schedule, double step, const SinkhornConfig& cfg,
                        const LocalCostKernel& kernel);

struct AccuracyCurve {
    std::vector<std::pair<double, double>> points;  ///< (eps, adversarial accuracy), eps ascending
    double nominal_accuracy = 0.0;
    std::vector<double> eps_at_success;             ///< per example
    std::size_t attack_errors = 0;

    /// Fraction of examples whose attack needed a radius strictly above eps.
    double accuracy_at(double eps) const;
};

/// Attacks every example and reports, for eps = 0 and each radius of the
/// schedule, the fraction of examples not broken within that radius.
AccuracyCurve evaluate_adversarial_accuracy(const DifferentiableClassifier& model, const Dataset& data,
                                            const EpsilonSchedule& schedule, double step,
                                            const SinkhornConfig& cfg, const LocalCostKernel& kernel);

}  // namespace wproj
