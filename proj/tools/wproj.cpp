// wproj command-line tool: projections, attacks, training and oracle checks.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "wproj/attack.hpp"
#include "wproj/data.hpp"
#include "wproj/errors.hpp"
#include "wproj/models.hpp"
#include "wproj/oracle.hpp"
#include "wproj/sinkhorn.hpp"

namespace {

using json = nlohmann::ordered_json;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumerical = 2;
constexpr int kExitIo = 3;

constexpr const char* kVersion = "0.1.0";

struct SolverFlags {
    double lambda = 1000.0;
    std::size_t k = 5;
    double p = 1.0;
    std::size_t max_iterations = 500;
    double tol = 1e-4;

    wproj::SinkhornConfig config() const {
        wproj::SinkhornConfig c;
        c.lambda = lambda;
        c.max_iterations = max_iterations;
        c.convergence_tol = tol;
        c.validate();
        return c;
    }
    json to_json() const {
        return {{"lambda", lambda}, {"kernel_size", k}, {"p", p}, {"max_iterations", max_iterations}, {"tol", tol}};
    }
};

void add_solver_flags(CLI::App* cmd, SolverFlags& f) {
    cmd->add_option("--lambda", f.lambda, "Entropy regularization strength")->capture_default_str();
    cmd->add_option("--kernel-size,-k", f.k, "Side of the local transport window (odd)")->capture_default_str();
    cmd->add_option("--p", f.p, "Exponent of the ground cost")->capture_default_str();
    cmd->add_option("--max-iterations", f.max_iterations, "Sinkhorn sweep cap")->capture_default_str();
    cmd->add_option("--tol", f.tol, "Convergence tolerance on the dual variables")->capture_default_str();
}

void add_schedule_flags(CLI::App* cmd, wproj::EpsilonSchedule& s) {
    cmd->add_option("--eps-start", s.eps_start, "Initial radius")->capture_default_str();
    cmd->add_option("--eps-growth", s.growth_factor, "Radius growth factor")->capture_default_str();
    cmd->add_option("--eps-period", s.growth_period, "PGD iterations between growths")->capture_default_str();
    cmd->add_option("--pgd-iterations", s.max_pgd_iterations, "PGD iteration cap")->capture_default_str();
}

json schedule_json(const wproj::EpsilonSchedule& s) {
    return {{"eps_start", s.eps_start},
            {"growth_factor", s.growth_factor},
            {"growth_period", s.growth_period},
            {"max_pgd_iterations", s.max_pgd_iterations}};
}

// Shortest decimal form that reads back to the same double.
std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw wproj::IoError("cannot open " + path + " for writing");
    out << text;
    if (!out) throw wproj::IoError("error writing " + path);
}

json envelope(const std::string& command, json config) {
    return {{"command", command}, {"version", kVersion}, {"status", "ok"}, {"config", std::move(config)}};
}

void emit(const json& doc, const std::string& path) {
    const std::string text = doc.dump(2) + "\n";
    if (path.empty()) {
        std::cout << text;
    } else {
        write_text(path, text);
    }
}

wproj::Dataset load_dataset(const std::string& images, const std::string& labels, std::size_t limit) {
    wproj::Dataset data = wproj::load_idx_dataset(images, labels);
    if (limit > 0 && limit < data.size()) {
        data.images.resize(limit);
        data.labels.resize(limit);
    }
    return data;
}

// ---------------------------------------------------------------- make-blobs

struct BlobsArgs {
    std::size_t n = 1000;
    std::size_t grid = 8;
    std::size_t classes = 2;
    std::uint64_t seed = 0;
    std::string images, labels, json_out;
};

int run_make_blobs(const BlobsArgs& a) {
    const wproj::Dataset data = wproj::generate_blobs(a.n, a.grid, a.classes, a.seed);
    const auto [idx, labels] = wproj::to_idx(data);
    wproj::write_file(a.images, wproj::encode_idx_images(idx));
    wproj::write_file(a.labels, wproj::encode_idx_labels(labels));
    std::vector<std::size_t> per_class(a.classes, 0);
    for (auto l : data.labels) ++per_class[l];
    json doc = envelope("make-blobs", {{"n", a.n}, {"grid", a.grid}, {"classes", a.classes}, {"seed", a.seed},
                                       {"images", a.images}, {"labels", a.labels}});
    doc["metrics"] = {{"count", data.size()}, {"per_class", per_class}};
    emit(doc, a.json_out);
    return kExitOk;
}

// ------------------------------------------------------------------- project

struct ProjectArgs {
    std::string input, output;
    double eps = 0.5;
    SolverFlags solver;
};

int run_project(const ProjectArgs& a) {
    std::ifstream in(a.input);
    if (!in) throw wproj::IoError("cannot open " + a.input);
    json problem;
    try {
        problem = json::parse(in);
    } catch (const json::parse_error& e) {
        throw wproj::ParseError(std::string("project input: ") + e.what(), e.byte);
    }
    if (!problem.contains("x") || !problem.contains("w") || !problem.contains("height") || !problem.contains("width")) {
        throw wproj::ParameterError("project input needs height, width, x and w");
    }
    const wproj::GridShape shape{problem.value("channels", std::size_t{1}), problem.at("height").get<std::size_t>(),
                                 problem.at("width").get<std::size_t>()};
    const auto xv = problem.at("x").get<std::vector<double>>();
    const auto w = problem.at("w").get<std::vector<double>>();
    const wproj::MassVector x(shape, xv);
    const auto kernel = wproj::build_cost_kernel(a.solver.k, a.solver.p);
    const auto r = wproj::project(w, x, a.eps, kernel, a.solver.config());

    json cfg = {{"input", a.input}, {"eps", a.eps}, {"solver", a.solver.to_json()}};
    json doc = envelope("project", cfg);
    doc["metrics"] = {{"converged", r.converged},
                      {"iterations", r.iterations},
                      {"final_residual", r.final_residual},
                      {"transport_cost", r.transport_cost},
                      {"clamped_mass", r.clamped_mass},
                      {"psi", r.state.psi}};
    doc["z"] = std::vector<double>(r.z.values().begin(), r.z.values().end());
    emit(doc, a.output);
    return kExitOk;
}

// -------------------------------------------------------------------- attack

struct AttackArgs {
    std::string model, images, labels, dump_dir, json_out;
    std::size_t index = 0;
    std::size_t count = 1;
    double step = 0.1;
    wproj::EpsilonSchedule schedule = wproj::EpsilonSchedule::mnist_evaluation();
    SolverFlags solver;
};

// Writes original / perturbation / adversarial graymaps and returns the value maps used.
json dump_triplet(const std::string& dir, std::size_t index, const wproj::GridShape& shape, const wproj::MassVector& x,
                  const wproj::MassVector& adv) {
    std::filesystem::create_directories(dir);
    const std::size_t n = shape.pixels();
    double top = 0.0, spread = 0.0;
    std::vector<double> delta(n);
    for (std::size_t i = 0; i < n; ++i) {
        top = std::max({top, x[i], adv[i]});
        delta[i] = adv[i] - x[i];
        spread = std::max(spread, std::abs(delta[i]));
    }
    if (top == 0.0) top = 1.0;
    if (spread == 0.0) spread = 1.0;
    const std::string stem = dir + "/example_" + std::to_string(index);
    auto channel0 = [n](const wproj::MassVector& m) { return m.values().subspan(0, n); };
    wproj::write_pgm(stem + "_original.pgm", shape.height, shape.width, channel0(x), 0.0, top);
    wproj::write_pgm(stem + "_adversarial.pgm", shape.height, shape.width, channel0(adv), 0.0, top);
    wproj::write_pgm(stem + "_perturbation.pgm", shape.height, shape.width, delta, -spread, spread);
    // value = lo + (hi - lo) * byte / 255
    return {{"original", {{"file", stem + "_original.pgm"}, {"lo", 0.0}, {"hi", top}}},
            {"adversarial", {{"file", stem + "_adversarial.pgm"}, {"lo", 0.0}, {"hi", top}}},
            {"perturbation", {{"file", stem + "_perturbation.pgm"}, {"lo", -spread}, {"hi", spread}}}};
}

int run_attack(const AttackArgs& a) {
    const auto model = wproj::load_checkpoint(a.model);
    const wproj::Dataset data = wproj::load_idx_dataset(a.images, a.labels);
    if (a.index >= data.size()) throw wproj::ParameterError("--index is past the end of the dataset");
    const auto kernel = wproj::build_cost_kernel(a.solver.k, a.solver.p);
    const auto cfg = a.solver.config();

    json results = json::array();
    std::size_t errors = 0;
    const std::size_t end = std::min(data.size(), a.index + a.count);
    for (std::size_t e = a.index; e < end; ++e) {
        const auto r = wproj::pgd_attack(model, data.images[e], data.labels[e], a.schedule, a.step, cfg, kernel);
        json item = {{"index", e},
                     {"label", data.labels[e]},
                     {"clean_prediction", model.predict(data.images[e].values())},
                     {"adversarial_prediction", model.predict(r.adversarial_example.values())},
                     {"success", r.success},
                     {"eps_at_success", finite_or_null(r.eps_at_success)},
                     {"iterations", r.iterations_used},
                     {"unconverged_projections", r.unconverged_projections},
                     {"loss_trace", r.loss_trace}};
        if (!r.error.empty()) {
            item["error"] = r.error;
            ++errors;
        }
        if (!a.dump_dir.empty()) item["images"] = dump_triplet(a.dump_dir, e, data.shape, data.images[e], r.adversarial_example);
        results.push_back(std::move(item));
    }
    json config = {{"model", a.model},     {"images", a.images}, {"labels", a.labels},
                   {"index", a.index},     {"count", a.count},   {"step", a.step},
                   {"schedule", schedule_json(a.schedule)},      {"solver", a.solver.to_json()},
                   {"dump_dir", a.dump_dir}};
    json doc = envelope("attack", config);
    if (errors > 0) doc["status"] = "numerical_failure";
    doc["metrics"] = {{"attacked", results.size()}, {"attack_errors", errors}};
    doc["results"] = std::move(results);
    emit(doc, a.json_out);
    return errors > 0 ? kExitNumerical : kExitOk;
}

// ------------------------------------------------------------------ evaluate

struct EvaluateArgs {
    std::string model, images, labels, csv, json_out;
    std::size_t limit = 0;
    double step = 0.1;
    wproj::EpsilonSchedule schedule = wproj::EpsilonSchedule::mnist_evaluation();
    SolverFlags solver;
};

int run_evaluate(const EvaluateArgs& a) {
    const auto model = wproj::load_checkpoint(a.model);
    const wproj::Dataset data = load_dataset(a.images, a.labels, a.limit);
    const auto kernel = wproj::build_cost_kernel(a.solver.k, a.solver.p);
    const auto curve =
        wproj::evaluate_adversarial_accuracy(model, data, a.schedule, a.step, a.solver.config(), kernel);

    std::string csv = "eps,accuracy\n";
    json points = json::array();
    for (const auto& [eps, acc] : curve.points) {
        csv += fmt(eps) + "," + fmt(acc) + "\n";
        points.push_back({{"eps", eps}, {"accuracy", acc}});
    }
    if (!a.csv.empty()) write_text(a.csv, csv);

    json eps_at = json::array();
    for (double e : curve.eps_at_success) eps_at.push_back(finite_or_null(e));
    json config = {{"model", a.model}, {"images", a.images}, {"labels", a.labels}, {"limit", a.limit},
                   {"step", a.step},   {"schedule", schedule_json(a.schedule)},    {"solver", a.solver.to_json()},
                   {"csv", a.csv}};
    json doc = envelope("evaluate", config);
    if (curve.attack_errors > 0) doc["status"] = "numerical_failure";
    doc["metrics"] = {{"examples", data.size()},
                      {"nominal_accuracy", curve.nominal_accuracy},
                      {"attack_errors", curve.attack_errors},
                      {"curve", points},
                      {"eps_at_success", eps_at}};
    emit(doc, a.json_out);
    return curve.attack_errors > 0 ? kExitNumerical : kExitOk;
}

// --------------------------------------------------------------------- train

struct TrainArgs {
    std::string images, labels, out, json_out;
    std::string arch = "linear";
    std::size_t hidden = 32;
    std::size_t limit = 0;
    bool adversarial = false;
    double step = 0.1;
    wproj::TrainConfig train;
    wproj::EpsilonSchedule schedule = wproj::EpsilonSchedule::mnist_training();
    SolverFlags solver;
};

int run_train(const TrainArgs& a) {
    const wproj::Dataset data = load_dataset(a.images, a.labels, a.limit);
    if (data.empty()) throw wproj::ParameterError("training set is empty");
    const auto arch = wproj::architecture_from_string(a.arch);
    wproj::Rng init = wproj::Rng(a.train.seed).split("init");
    const std::size_t inputs = data.shape.size();
    const std::size_t classes = std::max<std::size_t>(data.classes, 2);
    auto model = arch == wproj::Architecture::linear ? wproj::TinyClassifier::linear(inputs, classes, init)
                                                     : wproj::TinyClassifier::mlp(inputs, a.hidden, classes, init);
    wproj::TrainHistory history;
    if (a.adversarial) {
        const auto kernel = wproj::build_cost_kernel(a.solver.k, a.solver.p);
        history = wproj::train_adversarial(model, data, a.train, a.schedule, a.step, a.solver.config(), kernel);
    } else {
        history = wproj::train_standard(model, data, a.train);
    }
    wproj::save_checkpoint(model, a.out);

    json epochs = json::array();
    for (const auto& e : history.epochs) {
        epochs.push_back({{"loss", e.loss},
                          {"accuracy", e.accuracy},
                          {"adversarial_found", e.adversarial_found},
                          {"projection_failures", e.projection_failures}});
    }
    json config = {{"images", a.images},
                   {"labels", a.labels},
                   {"limit", a.limit},
                   {"architecture", a.arch},
                   {"hidden", arch == wproj::Architecture::mlp ? a.hidden : 0},
                   {"learning_rate", a.train.learning_rate},
                   {"lr_drop_epoch", a.train.lr_drop_epoch},
                   {"learning_rate_after_drop", a.train.learning_rate_after_drop},
                   {"momentum", a.train.momentum},
                   {"weight_decay", a.train.weight_decay},
                   {"batch_size", a.train.batch_size},
                   {"epochs", a.train.epochs},
                   {"seed", a.train.seed},
                   {"adversarial", a.adversarial},
                   {"out", a.out}};
    if (a.adversarial) {
        config["step"] = a.step;
        config["schedule"] = schedule_json(a.schedule);
        config["solver"] = a.solver.to_json();
    }
    json doc = envelope("train", config);
    doc["metrics"] = {{"examples", data.size()}, {"final_accuracy", wproj::accuracy(model, data)}, {"epochs", epochs}};
    emit(doc, a.json_out);
    return kExitOk;
}

// -------------------------------------------------------------- oracle-check

struct OracleArgs {
    std::size_t count = 50;
    std::size_t grid = 6;
    std::vector<double> eps{0.1, 0.5, 1.0};
    std::uint64_t seed = 0;
    std::string json_out;
    SolverFlags solver;
};

int run_oracle_check(const OracleArgs& a) {
    if (a.grid * a.grid > 256) throw wproj::ParameterError("oracle-check: grid too large for the exact solver");
    const auto kernel = wproj::build_cost_kernel(a.solver.k, a.solver.p);
    const auto cost = wproj::oracle::dense_grid_cost(a.grid, a.grid, a.solver.p);
    const auto cfg = a.solver.config();
    wproj::Rng rng = wproj::Rng(a.seed).split("oracle-check");
    auto random_mass = [&]() {
        std::vector<double> v(a.grid * a.grid);
        double total = 0.0;
        for (double& e : v) total += (e = rng.uniform());
        for (double& e : v) e /= total;
        return wproj::MassVector(a.grid, a.grid, std::move(v));
    };
    std::size_t runs = 0, converged = 0, feasible = 0;
    double worst = 0.0;
    for (std::size_t t = 0; t < a.count; ++t) {
        const auto x = random_mass();
        const auto w = random_mass();
        for (double eps : a.eps) {
            ++runs;
            const auto r = wproj::project(w, x, eps, kernel, cfg);
            if (!r.converged) continue;
            ++converged;
            std::vector<double> z(r.z.values().begin(), r.z.values().end());
            const double s = x.total_mass() / r.z.total_mass();
            for (double& e : z) e *= s;
            const double d = wproj::oracle::exact_ot_distance(x.values(), z, cost);
            if (d <= eps * 1.001 + 1e-6) ++feasible;
            if (eps > 0.0) worst = std::max(worst, d / eps);
        }
    }
    json config = {{"count", a.count}, {"grid", a.grid}, {"eps", a.eps}, {"seed", a.seed}, {"solver", a.solver.to_json()}};
    json doc = envelope("oracle-check", config);
    const bool pass = feasible == converged;
    if (!pass) doc["status"] = "numerical_failure";
    doc["metrics"] = {{"runs", runs},
                      {"converged", converged},
                      {"feasible", feasible},
                      {"feasible_fraction", converged ? double(feasible) / double(converged) : 1.0},
                      {"worst_distance_ratio", worst},
                      {"pass", pass}};
    emit(doc, a.json_out);
    return pass ? kExitOk : kExitNumerical;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Wasserstein-ball projections, attacks and adversarial training"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    BlobsArgs blobs;
    auto* mk = app.add_subcommand("make-blobs", "Write a synthetic blobs dataset as IDX files");
    mk->add_option("--n", blobs.n, "Number of examples")->capture_default_str();
    mk->add_option("--grid", blobs.grid, "Grid side")->capture_default_str();
    mk->add_option("--classes", blobs.classes, "Number of classes")->capture_default_str();
    mk->add_option("--seed", blobs.seed, "Random seed")->capture_default_str();
    mk->add_option("--images", blobs.images, "Output IDX image file")->required();
    mk->add_option("--labels", blobs.labels, "Output IDX label file")->required();
    mk->add_option("--json", blobs.json_out, "Write the run report here instead of stdout");

    ProjectArgs proj;
    auto* pr = app.add_subcommand("project", "Project w onto the Wasserstein ball around x");
    pr->add_option("--input", proj.input, "JSON file with height, width, [channels], x and w")->required();
    pr->add_option("--eps", proj.eps, "Ball radius")->required();
    pr->add_option("--output", proj.output, "Write the result here instead of stdout");
    add_solver_flags(pr, proj.solver);

    AttackArgs atk;
    auto* at = app.add_subcommand("attack", "Run Wasserstein PGD on dataset examples");
    at->add_option("--model", atk.model, "Model checkpoint")->required();
    at->add_option("--images", atk.images, "IDX image file")->required();
    at->add_option("--labels", atk.labels, "IDX label file")->required();
    at->add_option("--index", atk.index, "First example to attack")->capture_default_str();
    at->add_option("--count", atk.count, "Number of examples to attack")->capture_default_str();
    at->add_option("--step", atk.step, "PGD step size")->capture_default_str();
    at->add_option("--dump-dir", atk.dump_dir, "Write original/perturbation/adversarial PGM images here");
    at->add_option("--json", atk.json_out, "Write the run report here instead of stdout");
    add_schedule_flags(at, atk.schedule);
    add_solver_flags(at, atk.solver);

    EvaluateArgs ev;
    auto* evc = app.add_subcommand("evaluate", "Adversarial accuracy curve over the radius schedule");
    evc->add_option("--model", ev.model, "Model checkpoint")->required();
    evc->add_option("--images", ev.images, "IDX image file")->required();
    evc->add_option("--labels", ev.labels, "IDX label file")->required();
    evc->add_option("--limit", ev.limit, "Use only the first N examples (0 = all)")->capture_default_str();
    evc->add_option("--step", ev.step, "PGD step size")->capture_default_str();
    evc->add_option("--csv", ev.csv, "Write the accuracy curve as CSV");
    evc->add_option("--json", ev.json_out, "Write the run report here instead of stdout");
    add_schedule_flags(evc, ev.schedule);
    add_solver_flags(evc, ev.solver);

    TrainArgs tr;
    auto* trc = app.add_subcommand("train", "Train a classifier, optionally adversarially");
    trc->add_option("--images", tr.images, "IDX image file")->required();
    trc->add_option("--labels", tr.labels, "IDX label file")->required();
    trc->add_option("--out", tr.out, "Checkpoint to write")->required();
    trc->add_option("--json", tr.json_out, "Write the run report here instead of stdout");
    trc->add_option("--limit", tr.limit, "Use only the first N examples (0 = all)")->capture_default_str();
    trc->add_option("--arch", tr.arch, "linear or mlp")->capture_default_str()->check(CLI::IsMember({"linear", "mlp"}));
    trc->add_option("--hidden", tr.hidden, "Hidden units of the mlp")->capture_default_str();
    trc->add_option("--epochs", tr.train.epochs, "Epochs")->capture_default_str();
    trc->add_option("--lr", tr.train.learning_rate, "Initial learning rate")->capture_default_str();
    trc->add_option("--lr-drop-epoch", tr.train.lr_drop_epoch, "Epoch at which the learning rate drops")->capture_default_str();
    trc->add_option("--lr-after", tr.train.learning_rate_after_drop, "Learning rate after the drop")->capture_default_str();
    trc->add_option("--momentum", tr.train.momentum, "SGD momentum")->capture_default_str();
    trc->add_option("--weight-decay", tr.train.weight_decay, "L2 weight decay")->capture_default_str();
    trc->add_option("--batch", tr.train.batch_size, "Minibatch size")->capture_default_str();
    trc->add_option("--seed", tr.train.seed, "Seed for initialization and batch order")->capture_default_str();
    trc->add_flag("--adversarial", tr.adversarial, "Train on Wasserstein PGD examples");
    trc->add_option("--step", tr.step, "PGD step size for adversarial training")->capture_default_str();
    add_schedule_flags(trc, tr.schedule);
    add_solver_flags(trc, tr.solver);

    OracleArgs orc;
    auto* oc = app.add_subcommand("oracle-check", "Check projections against the exact transport oracle");
    oc->add_option("--count", orc.count, "Random instances")->capture_default_str();
    oc->add_option("--grid", orc.grid, "Grid side (at most 16)")->capture_default_str();
    oc->add_option("--eps", orc.eps, "Radii to test")->capture_default_str();
    oc->add_option("--seed", orc.seed, "Random seed")->capture_default_str();
    oc->add_option("--json", orc.json_out, "Write the run report here instead of stdout");
    add_solver_flags(oc, orc.solver);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*mk) return run_make_blobs(blobs);
        if (*pr) return run_project(proj);
        if (*at) return run_attack(atk);
        if (*evc) return run_evaluate(ev);
        if (*trc) return run_train(tr);
        if (*oc) return run_oracle_check(orc);
    } catch (const wproj::ParameterError& e) {
        std::cerr << "error: " << e.what() << "\nRun with --help for usage.\n";
        return kExitUsage;
    } catch (const wproj::ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const wproj::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const wproj::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        // NumericalFailure, SolverError and anything unexpected from the solvers.
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    }
    return kExitUsage;
}
