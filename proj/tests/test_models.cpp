#include <cmath>
#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "test_support.hpp"
#include "wproj/errors.hpp"
#include "wproj/models.hpp"

using namespace wproj;

namespace {

double max_rel_error(std::span<const double> analytic, std::span<const double> numeric) {
    double scale = 0.0, err = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        scale = std::max(scale, std::abs(numeric[i]));
        err = std::max(err, std::abs(analytic[i] - numeric[i]));
    }
    return err / std::max(scale, 1e-12);
}

std::vector<double> numeric_input_grad(const TinyClassifier& m, std::vector<double> x, std::size_t label) {
    const double h = 1e-5;
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + h;
        const double up = m.loss_and_input_grad(x, label).loss;
        x[i] = keep - h;
        const double dn = m.loss_and_input_grad(x, label).loss;
        x[i] = keep;
        g[i] = (up - dn) / (2 * h);
    }
    return g;
}

}  // namespace

TEST_CASE("softmax sums to one") {
    Rng rng(1);
    for (int t = 0; t < 20; ++t) {
        const auto z = testing::random_vector(rng, 7, -400.0, 400.0);
        double s = 0.0;
        for (double p : softmax(z)) s += p;
        CHECK(std::abs(s - 1.0) <= 1e-12);
    }
}

TEST_CASE("uniform logits give log of the class count") {
    const auto m = TinyClassifier::from_parameters(Architecture::linear, 3, 0, 4, std::vector<double>(16, 0.0));
    CHECK(m.loss_and_input_grad(std::vector<double>{0.2, 0.3, 0.5}, 1).loss == doctest::Approx(std::log(4.0)));
}

TEST_CASE("linear input gradient is W^T (softmax - onehot)") {
    Rng rng(2);
    auto m = TinyClassifier::linear(5, 3, rng);
    const auto x = testing::random_vector(rng, 5, 0.0, 1.0);
    const auto p = softmax(m.logits(x));
    const auto params = m.parameters();
    std::vector<double> expect(5, 0.0);
    for (std::size_t k = 0; k < 3; ++k) {
        for (std::size_t d = 0; d < 5; ++d) expect[d] += (p[k] - (k == 2 ? 1.0 : 0.0)) * params[k * 5 + d];
    }
    const auto got = m.loss_and_input_grad(x, 2).grad;
    for (std::size_t d = 0; d < 5; ++d) CHECK(got[d] == doctest::Approx(expect[d]).epsilon(1e-14));
}

TEST_CASE("input gradients match central differences") {
    Rng rng(3);
    for (int t = 0; t < 20; ++t) {
        auto lin = TinyClassifier::linear(16, 3, rng);
        auto mlp = TinyClassifier::mlp(16, 8, 3, rng);
        const auto x = testing::random_vector(rng, 16, 0.0, 1.0);
        const std::size_t label = rng.below(3);
        for (const TinyClassifier* m : {&lin, &mlp}) {
            const auto g = m->loss_and_input_grad(x, label).grad;
            CHECK(max_rel_error(g, numeric_input_grad(*m, x, label)) <= 1e-5);
        }
    }
}

TEST_CASE("parameter gradients match central differences") {
    Rng rng(4);
    for (int t = 0; t < 5; ++t) {
        for (auto arch : {Architecture::linear, Architecture::mlp}) {
            auto m = arch == Architecture::linear ? TinyClassifier::linear(6, 3, rng) : TinyClassifier::mlp(6, 4, 3, rng);
            const auto x = testing::random_vector(rng, 6, 0.0, 1.0);
            std::vector<double> g(m.parameters().size(), 0.0);
            const double loss = m.accumulate_param_grad(x, 1, g);
            CHECK(loss == doctest::Approx(m.loss_and_input_grad(x, 1).loss));
            std::vector<double> num(g.size());
            auto p = m.parameters();
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double keep = p[i];
                p[i] = keep + 1e-5;
                const double up = m.loss_and_input_grad(x, 1).loss;
                p[i] = keep - 1e-5;
                const double dn = m.loss_and_input_grad(x, 1).loss;
                p[i] = keep;
                num[i] = (up - dn) / 2e-5;
            }
            CHECK(max_rel_error(g, num) <= 1e-5);
        }
    }
}

TEST_CASE("model input validation") {
    Rng rng(5);
    auto m = TinyClassifier::linear(4, 2, rng);
    CHECK_THROWS_AS(m.predict(std::vector<double>(3, 0.0)), ShapeError);
    CHECK_THROWS_AS(m.loss_and_input_grad(std::vector<double>(4, 0.0), 2), ParameterError);
    CHECK_THROWS_AS(TinyClassifier::from_parameters(Architecture::linear, 4, 0, 2, std::vector<double>(3)), ShapeError);
    CHECK_THROWS_AS(architecture_from_string("resnet"), ParameterError);
}

TEST_CASE("plain SGD when momentum and weight decay are zero") {
    SgdMomentum opt(2, 0.0, 0.0);
    std::vector<double> p{1.0, -2.0};
    opt.step(p, std::vector<double>{0.5, 0.25}, 0.1);
    CHECK(p[0] == doctest::Approx(0.95));
    CHECK(p[1] == doctest::Approx(-2.025));
}

TEST_CASE("momentum and weight decay follow the documented update") {
    SgdMomentum opt(1, 0.9, 0.1);
    std::vector<double> p{1.0};
    opt.step(p, std::vector<double>{0.5}, 0.1);  // g = 0.6, buf = 0.6
    CHECK(p[0] == doctest::Approx(0.94));
    opt.step(p, std::vector<double>{0.5}, 0.1);  // g = 0.594, buf = 0.54 + 0.594
    CHECK(p[0] == doctest::Approx(0.94 - 0.1 * 1.134));
}

TEST_CASE("training config") {
    TrainConfig c;
    CHECK(c.learning_rate_at(0) == 0.1);
    CHECK(c.learning_rate_at(10) == 0.01);
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), ParameterError);
}

TEST_CASE("standard training") {
    const Dataset data = generate_blobs(200, 8, 2, 1);
    TrainConfig cfg;
    cfg.batch_size = 32;
    cfg.seed = 3;

    SUBCASE("separable blobs are learned") {
        Rng rng(1);
        auto m = TinyClassifier::linear(64, 2, rng);
        train_standard(m, data, cfg);
        CHECK(accuracy(m, data) >= 0.99);
    }
    SUBCASE("zero epochs leave the model unchanged") {
        Rng rng(1);
        auto m = TinyClassifier::linear(64, 2, rng);
        const std::vector<double> before(m.parameters().begin(), m.parameters().end());
        cfg.epochs = 0;
        train_standard(m, data, cfg);
        CHECK(std::vector<double>(m.parameters().begin(), m.parameters().end()) == before);
    }
    SUBCASE("a fixed seed reproduces the weights") {
        Rng r1(1), r2(1);
        auto a = TinyClassifier::mlp(64, 8, 2, r1);
        auto b = TinyClassifier::mlp(64, 8, 2, r2);
        cfg.epochs = 3;
        train_standard(a, data, cfg);
        train_standard(b, data, cfg);
        CHECK(std::vector<double>(a.parameters().begin(), a.parameters().end()) ==
              std::vector<double>(b.parameters().begin(), b.parameters().end()));
    }
}

TEST_CASE("checkpoint round trip") {
    Rng rng(6);
    for (auto arch : {Architecture::linear, Architecture::mlp}) {
        auto m = arch == Architecture::linear ? TinyClassifier::linear(9, 3, rng) : TinyClassifier::mlp(9, 5, 3, rng);
        const auto text = checkpoint_to_string(m);
        const auto back = checkpoint_from_string(text);
        CHECK(back.architecture() == arch);
        CHECK(back.hidden_size() == m.hidden_size());
        CHECK(std::vector<double>(back.parameters().begin(), back.parameters().end()) ==
              std::vector<double>(m.parameters().begin(), m.parameters().end()));
        CHECK(checkpoint_to_string(back) == text);
    }
    const auto path = (std::filesystem::temp_directory_path() / "wproj_ckpt_test.txt").string();
    auto m = TinyClassifier::linear(4, 2, rng);
    save_checkpoint(m, path);
    CHECK(checkpoint_to_string(load_checkpoint(path)) == checkpoint_to_string(m));
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_checkpoint(path), IoError);
    CHECK_THROWS_AS(checkpoint_from_string("wproj-classifier 2\n"), ParseError);
    CHECK_THROWS_AS(checkpoint_from_string(checkpoint_to_string(m).substr(0, 80)), ParseError);
}
