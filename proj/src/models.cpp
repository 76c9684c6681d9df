#include "wproj/models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "wproj/attack.hpp"
#include "wproj/errors.hpp"

namespace wproj {

const char* to_string(Architecture a) { return a == Architecture::linear ? "linear" : "mlp"; }

Architecture architecture_from_string(const std::string& s) {
    if (s == "linear") return Architecture::linear;
    if (s == "mlp") return Architecture::mlp;
    throw ParameterError("unknown architecture '" + s + "' (expected linear or mlp)");
}

namespace {

std::size_t parameter_count(Architecture arch, std::size_t inputs, std::size_t hidden, std::size_t classes) {
    if (arch == Architecture::linear) return classes * inputs + classes;
    return hidden * inputs + hidden + classes * hidden + classes;
}

double log_sum_exp(std::span<const double> v) {
    const double top = *std::max_element(v.begin(), v.end());
    double acc = 0.0;
    for (double e : v) acc += std::exp(e - top);
    return top + std::log(acc);
}

}  // namespace

TinyClassifier::TinyClassifier(Architecture arch, std::size_t inputs, std::size_t hidden, std::size_t classes)
    : arch_(arch), inputs_(inputs), hidden_(hidden), classes_(classes) {
    if (inputs == 0 || classes < 2) throw ParameterError("TinyClassifier: need inputs > 0 and at least 2 classes");
    if (arch == Architecture::mlp && hidden == 0) throw ParameterError("TinyClassifier: mlp needs hidden units");
    if (arch == Architecture::linear) hidden_ = 0;
    params_.assign(parameter_count(arch_, inputs_, hidden_, classes_), 0.0);
}

TinyClassifier TinyClassifier::linear(std::size_t inputs, std::size_t classes, Rng& rng) {
    TinyClassifier m(Architecture::linear, inputs, 0, classes);
    const double bound = 1.0 / std::sqrt(static_cast<double>(inputs));
    for (std::size_t i = 0; i < classes * inputs; ++i) m.params_[i] = rng.uniform(-bound, bound);
    return m;
}

TinyClassifier TinyClassifier::mlp(std::size_t inputs, std::size_t hidden, std::size_t classes, Rng& rng) {
    TinyClassifier m(Architecture::mlp, inputs, hidden, classes);
    const double b1 = 1.0 / std::sqrt(static_cast<double>(inputs));
    const double b2 = 1.0 / std::sqrt(static_cast<double>(hidden));
    std::size_t k = 0;
    for (std::size_t i = 0; i < hidden * inputs; ++i) m.params_[k++] = rng.uniform(-b1, b1);
    k += hidden;
    for (std::size_t i = 0; i < classes * hidden; ++i) m.params_[k++] = rng.uniform(-b2, b2);
    return m;
}

TinyClassifier TinyClassifier::from_parameters(Architecture arch, std::size_t inputs, std::size_t hidden,
                                               std::size_t classes, std::vector<double> params) {
    TinyClassifier m(arch, inputs, hidden, classes);
    if (params.size() != m.params_.size()) {
        throw ShapeError("TinyClassifier: expected " + std::to_string(m.params_.size()) + " parameters, got " +
                         std::to_string(params.size()));
    }
    for (double p : params) {
        if (!std::isfinite(p)) throw ParameterError("TinyClassifier: parameters must be finite");
    }
    m.params_ = std::move(params);
    return m;
}

void TinyClassifier::check_input(std::span<const double> x) const {
    if (x.size() != inputs_) {
        throw ShapeError("TinyClassifier: input has " + std::to_string(x.size()) + " entries, model expects " +
                         std::to_string(inputs_));
    }
}

std::vector<double> TinyClassifier::logits(std::span<const double> x) const {
    check_input(x);
    std::vector<double> out(classes_);
    if (arch_ == Architecture::linear) {
        const double* weight = params_.data();
        const double* bias = weight + classes_ * inputs_;
        for (std::size_t k = 0; k < classes_; ++k) {
            out[k] = bias[k] + std::inner_product(x.begin(), x.end(), weight + k * inputs_, 0.0);
        }
        return out;
    }
    const double* w1 = params_.data();
    const double* b1 = w1 + hidden_ * inputs_;
    const double* w2 = b1 + hidden_;
    const double* b2 = w2 + classes_ * hidden_;
    std::vector<double> h(hidden_);
    for (std::size_t u = 0; u < hidden_; ++u) {
        h[u] = std::max(0.0, b1[u] + std::inner_product(x.begin(), x.end(), w1 + u * inputs_, 0.0));
    }
    for (std::size_t k = 0; k < classes_; ++k) out[k] = b2[k] + std::inner_product(h.begin(), h.end(), w2 + k * hidden_, 0.0);
    return out;
}

std::size_t TinyClassifier::predict(std::span<const double> x) const {
    const auto z = logits(x);
    return static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
}

std::vector<double> softmax(std::span<const double> logits) {
    const double lse = log_sum_exp(logits);
    std::vector<double> p(logits.size());
    for (std::size_t k = 0; k < logits.size(); ++k) p[k] = std::exp(logits[k] - lse);
    return p;
}

LossGrad TinyClassifier::loss_and_input_grad(std::span<const double> x, std::size_t label) const {
    check_input(x);
    if (label >= classes_) throw ParameterError("loss_and_input_grad: label out of range");
    LossGrad out;
    out.grad.assign(inputs_, 0.0);
    if (arch_ == Architecture::linear) {
        const auto z = logits(x);
        out.loss = log_sum_exp(z) - z[label];
        auto p = softmax(z);
        p[label] -= 1.0;
        for (std::size_t k = 0; k < classes_; ++k) {
            const double* row = params_.data() + k * inputs_;
            for (std::size_t d = 0; d < inputs_; ++d) out.grad[d] += p[k] * row[d];
        }
        return out;
    }
    const double* w1 = params_.data();
    const double* b1 = w1 + hidden_ * inputs_;
    const double* w2 = b1 + hidden_;
    const double* b2 = w2 + classes_ * hidden_;
    std::vector<double> pre(hidden_), h(hidden_), z(classes_);
    for (std::size_t u = 0; u < hidden_; ++u) {
        pre[u] = b1[u] + std::inner_product(x.begin(), x.end(), w1 + u * inputs_, 0.0);
        h[u] = std::max(0.0, pre[u]);
    }
    for (std::size_t k = 0; k < classes_; ++k) z[k] = b2[k] + std::inner_product(h.begin(), h.end(), w2 + k * hidden_, 0.0);
    out.loss = log_sum_exp(z) - z[label];
    auto p = softmax(z);
    p[label] -= 1.0;
    for (std::size_t u = 0; u < hidden_; ++u) {
        if (pre[u] <= 0.0) continue;
        double dh = 0.0;
        for (std::size_t k = 0; k < classes_; ++k) dh += p[k] * w2[k * hidden_ + u];
        const double* row = w1 + u * inputs_;
        for (std::size_t d = 0; d < inputs_; ++d) out.grad[d] += dh * row[d];
    }
    return out;
}

double TinyClassifier::accumulate_param_grad(std::span<const double> x, std::size_t label, std::span<double> grad) const {
    check_input(x);
    if (label >= classes_) throw ParameterError("accumulate_param_grad: label out of range");
    if (grad.size() != params_.size()) throw ShapeError("accumulate_param_grad: gradient size mismatch");
    if (arch_ == Architecture::linear) {
        const auto z = logits(x);
        const double loss = log_sum_exp(z) - z[label];
        auto p = softmax(z);
        p[label] -= 1.0;
        double* gw = grad.data();
        double* gb = gw + classes_ * inputs_;
        for (std::size_t k = 0; k < classes_; ++k) {
            for (std::size_t d = 0; d < inputs_; ++d) gw[k * inputs_ + d] += p[k] * x[d];
            gb[k] += p[k];
        }
        return loss;
    }
    const double* w1 = params_.data();
    const double* b1 = w1 + hidden_ * inputs_;
    const double* w2 = b1 + hidden_;
    const double* b2 = w2 + classes_ * hidden_;
    std::vector<double> pre(hidden_), h(hidden_), z(classes_);
    for (std::size_t u = 0; u < hidden_; ++u) {
        pre[u] = b1[u] + std::inner_product(x.begin(), x.end(), w1 + u * inputs_, 0.0);
        h[u] = std::max(0.0, pre[u]);
    }
    for (std::size_t k = 0; k < classes_; ++k) z[k] = b2[k] + std::inner_product(h.begin(), h.end(), w2 + k * hidden_, 0.0);
    const double loss = log_sum_exp(z) - z[label];
    auto p = softmax(z);
    p[label] -= 1.0;
    double* gw1 = grad.data();
    double* gb1 = gw1 + hidden_ * inputs_;
    double* gw2 = gb1 + hidden_;
    double* gb2 = gw2 + classes_ * hidden_;
    for (std::size_t k = 0; k < classes_; ++k) {
        for (std::size_t u = 0; u < hidden_; ++u) gw2[k * hidden_ + u] += p[k] * h[u];
        gb2[k] += p[k];
    }
    for (std::size_t u = 0; u < hidden_; ++u) {
        if (pre[u] <= 0.0) continue;
        double dh = 0.0;
        for (std::size_t k = 0; k < classes_; ++k) dh += p[k] * w2[k * hidden_ + u];
        for (std::size_t d = 0; d < inputs_; ++d) gw1[u * inputs_ + d] += dh * x[d];
        gb1[u] += dh;
    }
    return loss;
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0) || !(learning_rate_after_drop > 0.0)) {
        throw ParameterError("TrainConfig: learning rates must be positive");
    }
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ParameterError("TrainConfig: momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ParameterError("TrainConfig: weight_decay must be non-negative");
    if (batch_size == 0) throw ParameterError("TrainConfig: batch_size must be positive");
}

SgdMomentum::SgdMomentum(std::size_t params, double momentum, double weight_decay)
    : momentum_(momentum), weight_decay_(weight_decay), buffer_(params, 0.0) {}

void SgdMomentum::step(std::span<double> params, std::span<const double> grad, double lr) {
    if (params.size() != buffer_.size() || grad.size() != buffer_.size()) {
        throw ShapeError("SgdMomentum: parameter count changed");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grad[i] + weight_decay_ * params[i];
        buffer_[i] = first_ ? g : momentum_ * buffer_[i] + g;
        params[i] -= lr * buffer_[i];
    }
    first_ = false;
}

double accuracy(const DifferentiableClassifier& model, const Dataset& data) {
    if (data.empty()) return 0.0;
    std::size_t correct = 0;
    for (std::size_t e = 0; e < data.size(); ++e) {
        if (model.predict(data.images[e].values()) == data.labels[e]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

namespace {

// Shared epoch loop. `perturb` maps (example index) to the input used for the update.
template <class Perturb>
TrainHistory run_sgd(TinyClassifier& model, const Dataset& data, const TrainConfig& cfg, Perturb&& perturb) {
    cfg.validate();
    if (!data.empty() && data.shape.size() != model.input_size()) {
        throw ShapeError("train: dataset images do not match the model input");
    }
    TrainHistory history;
    SgdMomentum opt(model.parameters().size(), cfg.momentum, cfg.weight_decay);
    Rng rng = Rng(cfg.seed).split("train-order");
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<double> grad(model.parameters().size());
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        EpochStats stats;
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::fill(grad.begin(), grad.end(), 0.0);
            for (std::size_t b = start; b < end; ++b) {
                const std::size_t e = order[b];
                const MassVector input = perturb(e, stats);
                loss_sum += model.accumulate_param_grad(input.values(), data.labels[e], grad);
            }
            const double inv = 1.0 / static_cast<double>(end - start);
            for (double& g : grad) g *= inv;
            opt.step(model.parameters(), grad, cfg.learning_rate_at(epoch));
        }
        stats.loss = data.empty() ? 0.0 : loss_sum / static_cast<double>(data.size());
        stats.accuracy = accuracy(model, data);
        history.epochs.push_back(stats);
    }
    return history;
}

}  // namespace

TrainHistory train_standard(TinyClassifier& model, const Dataset& data, const TrainConfig& cfg) {
    return run_sgd(model, data, cfg, [&](std::size_t e, EpochStats&) -> const MassVector& { return data.images[e]; });
}

TrainHistory train_adversarial(TinyClassifier& model, const Dataset& data, const TrainConfig& cfg,
                               const EpsilonSchedule& schedule, double step, const SinkhornConfig& sinkhorn,
                               const LocalCostKernel& kernel) {
    schedule.validate();
    return run_sgd(model, data, cfg, [&](std::size_t e, EpochStats& stats) -> MassVector {
        AttackResult r = pgd_attack(model, data.images[e], data.labels[e], schedule, step, sinkhorn, kernel);
        if (!r.error.empty()) {
            ++stats.projection_failures;
            return data.images[e];
        }
        if (r.success) ++stats.adversarial_found;
        return std::move(r.adversarial_example);
    });
}

// Checkpoint format (text, line oriented):
//   wproj-classifier 1
//   architecture <linear|mlp>
//   inputs <n>
//   hidden <n>
//   classes <n>
//   tensor <name> <rows> <cols>     then `rows` lines of `cols` values
//   ...
//   end
std::string checkpoint_to_string(const TinyClassifier& model) {
    std::ostringstream out;
    out << "wproj-classifier 1\n";
    out << "architecture " << to_string(model.architecture()) << "\n";
    out << "inputs " << model.input_size() << "\n";
    out << "hidden " << model.hidden_size() << "\n";
    out << "classes " << model.classes() << "\n";
    out << std::setprecision(17);
    auto params = model.parameters();
    std::size_t k = 0;
    auto tensor = [&](const char* name, std::size_t rows, std::size_t cols) {
        out << "tensor " << name << " " << rows << " " << cols << "\n";
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) out << (c ? " " : "") << params[k++];
            out << "\n";
        }
    };
    if (model.architecture() == Architecture::linear) {
        tensor("weight", model.classes(), model.input_size());
        tensor("bias", 1, model.classes());
    } else {
        tensor("weight1", model.hidden_size(), model.input_size());
        tensor("bias1", 1, model.hidden_size());
        tensor("weight2", model.classes(), model.hidden_size());
        tensor("bias2", 1, model.classes());
    }
    out << "end\n";
    return out.str();
}

TinyClassifier checkpoint_from_string(const std::string& text) {
    std::istringstream in(text);
    auto expect = [&](const std::string& key) {
        std::string word;
        if (!(in >> word) || word != key) {
            throw ParseError("checkpoint: expected '" + key + "'", static_cast<std::size_t>(std::max<std::streamoff>(0, in.tellg())));
        }
    };
    auto read_count = [&](const std::string& key) {
        expect(key);
        std::size_t v = 0;
        if (!(in >> v)) throw ParseError("checkpoint: bad value for " + key, 0);
        return v;
    };
    expect("wproj-classifier");
    int version = 0;
    if (!(in >> version) || version != 1) throw ParseError("checkpoint: unsupported version", 0);
    expect("architecture");
    std::string arch_name;
    in >> arch_name;
    const Architecture arch = architecture_from_string(arch_name);
    const std::size_t inputs = read_count("inputs");
    const std::size_t hidden = read_count("hidden");
    const std::size_t classes = read_count("classes");
    std::vector<double> params;
    std::string word;
    while (in >> word && word == "tensor") {
        std::string name;
        std::size_t rows = 0, cols = 0;
        if (!(in >> name >> rows >> cols)) throw ParseError("checkpoint: bad tensor header", 0);
        for (std::size_t i = 0; i < rows * cols; ++i) {
            double v = 0.0;
            if (!(in >> v)) throw ParseError("checkpoint: truncated tensor " + name, 0);
            params.push_back(v);
        }
    }
    if (word != "end") throw ParseError("checkpoint: missing 'end'", 0);
    return TinyClassifier::from_parameters(arch, inputs, hidden, classes, std::move(params));
}

void save_checkpoint(const TinyClassifier& model, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << checkpoint_to_string(model);
    if (!out) throw IoError("error writing " + path);
}

TinyClassifier load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return checkpoint_from_string(buf.str());
}

}  // namespace wproj
