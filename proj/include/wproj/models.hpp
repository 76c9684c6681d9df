#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "wproj/data.hpp"
#include "wproj/sinkhorn.hpp"

namespace wproj {

struct LossGrad {
    double loss = 0.0;
    std::vector<double> grad;
};

/// What an attack needs from a model. Implementations must be safe to share
/// read-only between threads.
class DifferentiableClassifier {
public:
    virtual ~DifferentiableClassifier() = default;
    virtual std::size_t input_size() const = 0;
    virtual std::size_t predict(std::span<const double> x) const = 0;
    /// Cross-entropy loss of `label` and its gradient with respect to the input.
    virtual LossGrad loss_and_input_grad(std::span<const double> x, std::size_t label) const = 0;
};

enum class Architecture { linear, mlp };

const char* to_string(Architecture a);
Architecture architecture_from_string(const std::string& s);

/// Multinomial logistic regression or a one-hidden-layer ReLU network.
/// Parameters live in one flat vector:
///   linear: weight (classes x inputs), bias (classes)
///   mlp:    weight1 (hidden x inputs), bias1 (hidden), weight2 (classes x hidden), bias2 (classes)
class TinyClassifier final : public DifferentiableClassifier {
public:
    static TinyClassifier linear(std::size_t inputs, std::size_t classes, Rng& rng);
    static TinyClassifier mlp(std::size_t inputs, std::size_t hidden, std::size_t classes, Rng& rng);
    /// Builds a model from explicit parameters; throws ShapeError on a size mismatch.
    static TinyClassifier from_parameters(Architecture arch, std::size_t inputs, std::size_t hidden,
                                          std::size_t classes, std::vector<double> params);

    Architecture architecture() const noexcept { return arch_; }
    std::size_t input_size() const override { return inputs_; }
    std::size_t hidden_size() const noexcept { return hidden_; }
    std::size_t classes() const noexcept { return classes_; }

    std::span<const double> parameters() const noexcept { return params_; }
    std::span<double> parameters() noexcept { return params_; }

    std::vector<double> logits(std::span<const double> x) const;
    std::size_t predict(std::span<const double> x) const override;
    LossGrad loss_and_input_grad(std::span<const double> x, std::size_t label) const override;

    /// Adds the parameter gradient of the cross-entropy loss into `grad` and returns the loss.
    double accumulate_param_grad(std::span<const double> x, std::size_t label, std::span<double> grad) const;

private:
    TinyClassifier(Architecture arch, std::size_t inputs, std::size_t hidden, std::size_t classes);
    void check_input(std::span<const double> x) const;

    Architecture arch_;
    std::size_t inputs_;
    std::size_t hidden_;
    std::size_t classes_;
    std::vector<double> params_;
};

/// Numerically stable softmax.
std::vector<double> softmax(std::span<const double> logits);

/// SGD hyperparameters. Defaults: lr 0.1,
/// dropped to 0.01 after 10 epochs, momentum 0.9, weight decay 5e-4, batch 128.
struct TrainConfig {
    double learning_rate = 0.1;
    std::size_t lr_drop_epoch = 10;
    double learning_rate_after_drop = 0.01;
    double momentum = 0.9;
    double weight_decay = 0.0005;
    std::size_t batch_size = 128;
    std::size_t epochs = 20;
    std::uint64_t seed = 0;

    void validate() const;
    double learning_rate_at(std::size_t epoch) const {
        return epoch < lr_drop_epoch ? learning_rate : learning_rate_after_drop;
    }
};

/// SGD with momentum and L2 weight decay, applied as
///   g += weight_decay * p;  buf = momentum * buf + g;  p -= lr * buf.
class SgdMomentum {
public:
    SgdMomentum(std::size_t params, double momentum, double weight_decay);
    void step(std::span<double> params, std::span<const double> grad, double lr);

private:
    double momentum_;
    double weight_decay_;
    std::vector<double> buffer_;
    bool first_ = true;
};

struct EpochStats {
    double loss = 0.0;           ///< mean training loss on the (possibly perturbed) batches
    double accuracy = 0.0;       ///< clean accuracy after the epoch
    std::size_t adversarial_found = 0;
    std::size_t projection_failures = 0;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
};

double accuracy(const DifferentiableClassifier& model, const Dataset& data);

TrainHistory train_standard(TinyClassifier& model, const Dataset& data, const TrainConfig& cfg);

struct EpsilonSchedule;

/// Adversarial training: every minibatch example is replaced by the first
/// adversarial example the growing-radius PGD attack finds (or its last
/// iterate), then the parameters are updated on the perturbed batch.
/// Projection failures fall back to the clean example and are counted.
TrainHistory train_adversarial(TinyClassifier& model, const Dataset& data, const TrainConfig& cfg,
                               const EpsilonSchedule& schedule, double step, const SinkhornConfig& sinkhorn,
                               const LocalCostKernel& kernel);

/// Text checkpoint, see README for the format.
void save_checkpoint(const TinyClassifier& model, const std::string& path);
TinyClassifier load_checkpoint(const std::string& path);
std::string checkpoint_to_string(const TinyClassifier& model);
TinyClassifier checkpoint_from_string(const std::string& text);

}  // namespace wproj
