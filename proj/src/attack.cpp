#include "wproj/attack.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "wproj/errors.hpp"

namespace wproj {

void EpsilonSchedule::validate() const {
    if (!(eps_start > 0.0) || !std::isfinite(eps_start)) throw ParameterError("EpsilonSchedule: eps_start must be positive");
    if (!(growth_factor > 1.0) || !std::isfinite(growth_factor)) {
        throw ParameterError("EpsilonSchedule: growth_factor must exceed 1");
    }
    if (growth_period == 0) throw ParameterError("EpsilonSchedule: growth_period must be positive");
    if (max_pgd_iterations == 0) throw ParameterError("EpsilonSchedule: max_pgd_iterations must be positive");
    const double growths = std::floor(static_cast<double>(max_pgd_iterations) / static_cast<double>(growth_period));
    if (!std::isfinite(eps_start * std::pow(growth_factor, growths))) {
        throw ParameterError("EpsilonSchedule: maximum radius overflows");
    }
}

double EpsilonSchedule::eps_at(std::size_t iteration) const {
    return eps_start * std::pow(growth_factor, static_cast<double>(iteration / growth_period));
}

double EpsilonSchedule::max_explored() const { return eps_at(max_pgd_iterations - 1); }

std::vector<double> EpsilonSchedule::radii() const {
    std::vector<double> out;
    for (std::size_t t = 0; t < max_pgd_iterations; t += growth_period) out.push_back(eps_at(t));
    return out;
}

std::vector<double> steepest_step_linf(std::span<const double> grad, double step) {
    std::vector<double> out(grad.size());
    for (std::size_t i = 0; i < grad.size(); ++i) {
        out[i] = grad[i] > 0.0 ? step : (grad[i] < 0.0 ? -step : 0.0);
    }
    return out;
}

AttackResult pgd_attack(const DifferentiableClassifier& model, const MassVector& x, std::size_t label,
                        const EpsilonSchedule& schedule, double step, const SinkhornConfig& cfg,
                        const LocalCostKernel& kernel) {
    schedule.validate();
    if (!(step >= 0.0)) throw ParameterError("pgd_attack: step must be non-negative");
    if (x.size() != model.input_size()) throw ShapeError("pgd_attack: input does not match the model");

    AttackResult result;
    result.adversarial_example = x;
    if (model.predict(x.values()) != label) {
        result.success = true;
        result.eps_at_success = 0.0;
        return result;
    }

    MassVector current = x;
    for (std::size_t t = 0; t < schedule.max_pgd_iterations; ++t) {
        const double eps = schedule.eps_at(t);
        LossGrad lg = model.loss_and_input_grad(current.values(), label);
        result.loss_trace.push_back(lg.loss);
        result.iterations_used = t + 1;

        const auto delta = steepest_step_linf(lg.grad, step);
        // A zero step leaves the (already feasible) iterate where it is.
        if (std::any_of(delta.begin(), delta.end(), [](double d) { return d != 0.0; })) {
            std::vector<double> w(current.values().begin(), current.values().end());
            for (std::size_t i = 0; i < w.size(); ++i) w[i] += delta[i];
            try {
                ProjectionResult proj = project(w, x, eps, kernel, cfg);
                if (!proj.converged) ++result.unconverged_projections;
                current = std::move(proj.z);
            } catch (const NumericalFailure& e) {
                result.error = e.what();
                result.adversarial_example = current;
                return result;
            }
        }
        if (model.predict(current.values()) != label) {
            result.success = true;
            result.eps_at_success = eps;
            break;
        }
    }
    result.adversarial_example = std::move(current);
    return result;
}

double AccuracyCurve::accuracy_at(double eps) const {
    if (eps_at_success.empty()) return 0.0;
    const auto robust = std::count_if(eps_at_success.begin(), eps_at_success.end(), [eps](double e) { return e > eps; });
    return static_cast<double>(robust) / static_cast<double>(eps_at_success.size());
}

AccuracyCurve evaluate_adversarial_accuracy(const DifferentiableClassifier& model, const Dataset& data,
                                            const EpsilonSchedule& schedule, double step,
                                            const SinkhornConfig& cfg, const LocalCostKernel& kernel) {
    if (data.empty()) throw ParameterError("evaluate_adversarial_accuracy: dataset is empty");
    schedule.validate();
    AccuracyCurve curve;
    curve.eps_at_success.reserve(data.size());
    std::size_t correct = 0;
    for (std::size_t e = 0; e < data.size(); ++e) {
        if (model.predict(data.images[e].values()) == data.labels[e]) ++correct;
        const AttackResult r = pgd_attack(model, data.images[e], data.labels[e], schedule, step, cfg, kernel);
        // An attack that errored out counts as a failed attack.
        if (!r.error.empty()) ++curve.attack_errors;
        curve.eps_at_success.push_back(r.success ? r.eps_at_success : std::numeric_limits<double>::infinity());
    }
    curve.nominal_accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
    curve.points.emplace_back(0.0, curve.accuracy_at(0.0));
    for (double eps : schedule.radii()) curve.points.emplace_back(eps, curve.accuracy_at(eps));
    return curve;
}

}  // namespace wproj
