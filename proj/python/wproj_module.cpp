// Python bindings for the core operations.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "wproj/attack.hpp"
#include "wproj/conjugate.hpp"
#include "wproj/errors.hpp"
#include "wproj/lambert_w.hpp"
#include "wproj/models.hpp"
#include "wproj/oracle.hpp"
#include "wproj/sinkhorn.hpp"

namespace py = pybind11;
using namespace wproj;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

// (H, W) or (C, H, W).
GridShape shape_of(const Array& a, const char* name) {
    if (a.ndim() == 2) return {1, static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1))};
    if (a.ndim() == 3) {
        return {static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
                static_cast<std::size_t>(a.shape(2))};
    }
    throw ShapeError(std::string(name) + " must be a 2-d (H, W) or 3-d (C, H, W) array");
}

std::vector<double> to_vector(const Array& a) { return {a.data(), a.data() + a.size()}; }

MassVector to_mass(const Array& a, const char* name) { return MassVector(shape_of(a, name), to_vector(a)); }

Array to_array(std::span<const double> v, const GridShape& shape) {
    std::vector<py::ssize_t> dims;
    if (shape.channels > 1) dims.push_back(static_cast<py::ssize_t>(shape.channels));
    dims.push_back(static_cast<py::ssize_t>(shape.height));
    dims.push_back(static_cast<py::ssize_t>(shape.width));
    Array out(dims);
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

void require_same_shape(const Array& a, const Array& b) {
    if (a.ndim() != b.ndim() || !std::equal(a.shape(), a.shape() + a.ndim(), b.shape())) {
        throw ShapeError("arrays must have the same shape");
    }
}

SinkhornConfig make_config(double lambda, std::size_t max_iterations, double tol) {
    SinkhornConfig cfg;
    cfg.lambda = lambda;
    cfg.max_iterations = max_iterations;
    cfg.convergence_tol = tol;
    return cfg;
}

py::dict project_py(const Array& w, const Array& x, double eps, double lambda, std::size_t k, double p,
                    std::size_t max_iterations, double tol) {
    require_same_shape(w, x);
    const MassVector xm = to_mass(x, "x");
    const auto wv = to_vector(w);
    const auto r = project(wv, xm, eps, build_cost_kernel(k, p), make_config(lambda, max_iterations, tol));
    py::dict out;
    out["z"] = to_array(r.z.values(), r.z.shape());
    out["transport_cost"] = r.transport_cost;
    out["iterations"] = r.iterations;
    out["converged"] = r.converged;
    out["final_residual"] = r.final_residual;
    out["clamped_mass"] = r.clamped_mass;
    out["psi"] = r.state.psi;
    return out;
}

py::dict conjugate_py(const Array& y, const Array& x, double eps, double lambda, std::size_t k, double p,
                      std::size_t max_iterations, double tol) {
    require_same_shape(y, x);
    const MassVector xm = to_mass(x, "x");
    const auto yv = to_vector(y);
    const auto r = conjugate_solve(yv, xm, eps, build_cost_kernel(k, p), make_config(lambda, max_iterations, tol));
    py::dict out;
    out["z"] = to_array(r.z.values(), r.z.shape());
    out["objective"] = r.objective;
    out["transport_cost"] = r.transport_cost;
    out["iterations"] = r.iterations;
    out["converged"] = r.converged;
    out["psi"] = r.state.psi;
    return out;
}

std::vector<double> grid_cost(const Array& a, double p) {
    if (a.ndim() != 2) throw ShapeError("exact oracle works on single-channel (H, W) arrays");
    return oracle::dense_grid_cost(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)), p);
}

double exact_distance_py(const Array& x, const Array& y, double p) {
    require_same_shape(x, y);
    return oracle::exact_ot_distance(to_vector(x), to_vector(y), grid_cost(x, p));
}

py::dict exact_projection_py(const Array& w, const Array& x, double eps, double p) {
    require_same_shape(w, x);
    const auto r = oracle::exact_ball_projection(to_vector(w), to_vector(x), eps, grid_cost(x, p));
    py::dict out;
    out["z"] = to_array(r.z, shape_of(x, "x"));
    out["objective"] = r.objective;
    out["transport_cost"] = r.transport_cost;
    out["kkt_residual"] = r.certificate.kkt_residual();
    return out;
}

py::tuple blobs_py(std::size_t n, std::size_t grid, std::size_t classes, std::uint64_t seed) {
    const Dataset d = generate_blobs(n, grid, classes, seed);
    Array images({static_cast<py::ssize_t>(n), static_cast<py::ssize_t>(grid), static_cast<py::ssize_t>(grid)});
    double* dst = images.mutable_data();
    for (const auto& img : d.images) dst = std::copy(img.values().begin(), img.values().end(), dst);
    py::array_t<std::int64_t> labels(static_cast<py::ssize_t>(n));
    for (std::size_t i = 0; i < n; ++i) labels.mutable_at(static_cast<py::ssize_t>(i)) = static_cast<std::int64_t>(d.labels[i]);
    return py::make_tuple(images, labels);
}

py::dict attack_py(const TinyClassifier& model, const Array& x, std::size_t label, double eps_start, double growth,
                   std::size_t period, std::size_t iterations, double step, double lambda, std::size_t k, double p,
                   std::size_t max_iterations, double tol) {
    const MassVector xm = to_mass(x, "x");
    const EpsilonSchedule schedule{eps_start, growth, period, iterations};
    const auto r = pgd_attack(model, xm, label, schedule, step, make_config(lambda, max_iterations, tol),
                              build_cost_kernel(k, p));
    py::dict out;
    out["success"] = r.success;
    out["adversarial"] = to_array(r.adversarial_example.values(), r.adversarial_example.shape());
    out["eps_at_success"] = r.eps_at_success;
    out["iterations"] = r.iterations_used;
    out["loss_trace"] = r.loss_trace;
    out["unconverged_projections"] = r.unconverged_projections;
    out["error"] = r.error;
    return out;
}

}  // namespace

PYBIND11_MODULE(_wproj, m) {
    m.doc() = "Wasserstein-ball projections, exact transport oracles and Wasserstein PGD";

    py::register_exception<ParameterError>(m, "ParameterError", PyExc_ValueError);
    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<NumericalFailure>(m, "NumericalFailure", PyExc_ArithmeticError);
    py::register_exception<SolverError>(m, "SolverError", PyExc_RuntimeError);
    py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
    py::register_exception<IoError>(m, "IoError", PyExc_OSError);

    m.def("lambert_w", &lambert_w, py::arg("v"), "Principal branch of the Lambert W function for v >= 0.");
    m.def("lambert_w_log", &lambert_w_log, py::arg("y"), "W(exp(y)), valid where exp(y) overflows.");

    m.def("project", &project_py, py::arg("w"), py::arg("x"), py::arg("eps"), py::arg("lam") = 1000.0,
          py::arg("k") = 5, py::arg("p") = 1.0, py::arg("max_iterations") = 500, py::arg("tol") = 1e-4,
          "Projected Sinkhorn: approximate projection of w onto the eps Wasserstein ball around x.");
    m.def("conjugate", &conjugate_py, py::arg("y"), py::arg("x"), py::arg("eps"), py::arg("lam") = 1000.0,
          py::arg("k") = 5, py::arg("p") = 1.0, py::arg("max_iterations") = 500, py::arg("tol") = 1e-4,
          "Entropic max of -z.y over the eps Wasserstein ball around x.");
    m.def("exact_distance", &exact_distance_py, py::arg("x"), py::arg("y"), py::arg("p") = 1.0,
          "Exact Wasserstein distance between equal-mass (H, W) histograms, full-grid cost.");
    m.def("exact_projection", &exact_projection_py, py::arg("w"), py::arg("x"), py::arg("eps"), py::arg("p") = 1.0,
          "Exact Euclidean projection onto the Wasserstein ball (interior point QP).");
    m.def("generate_blobs", &blobs_py, py::arg("n"), py::arg("grid") = 8, py::arg("classes") = 2,
          py::arg("seed") = 0, "Synthetic blob images (N, grid, grid) with unit mass and their labels.");

    py::class_<TinyClassifier>(m, "Classifier")
        .def_static("load", &load_checkpoint, py::arg("path"))
        .def_static("from_string", &checkpoint_from_string, py::arg("text"))
        .def_static(
            "linear",
            [](std::size_t inputs, std::size_t classes, std::uint64_t seed) {
                Rng rng(seed);
                return TinyClassifier::linear(inputs, classes, rng);
            },
            py::arg("inputs"), py::arg("classes"), py::arg("seed") = 0)
        .def_static(
            "mlp",
            [](std::size_t inputs, std::size_t hidden, std::size_t classes, std::uint64_t seed) {
                Rng rng(seed);
                return TinyClassifier::mlp(inputs, hidden, classes, rng);
            },
            py::arg("inputs"), py::arg("hidden"), py::arg("classes"), py::arg("seed") = 0)
        .def("save", [](const TinyClassifier& c, const std::string& path) { save_checkpoint(c, path); })
        .def("to_string", [](const TinyClassifier& c) { return checkpoint_to_string(c); })
        .def_property_readonly("architecture", [](const TinyClassifier& c) { return std::string(to_string(c.architecture())); })
        .def_property_readonly("inputs", &TinyClassifier::input_size)
        .def_property_readonly("classes", &TinyClassifier::classes)
        .def("logits", [](const TinyClassifier& c, const Array& x) { return c.logits(to_vector(x)); })
        .def("predict", [](const TinyClassifier& c, const Array& x) { return c.predict(to_vector(x)); })
        .def("loss_and_grad", [](const TinyClassifier& c, const Array& x, std::size_t label) {
            const auto r = c.loss_and_input_grad(to_vector(x), label);
            Array g(x.request().shape);
            std::copy(r.grad.begin(), r.grad.end(), g.mutable_data());
            return py::make_tuple(r.loss, g);
        });

    m.def("pgd_attack", &attack_py, py::arg("model"), py::arg("x"), py::arg("label"), py::arg("eps_start") = 0.3,
          py::arg("growth") = 1.1, py::arg("period") = 10, py::arg("iterations") = 200, py::arg("step") = 0.1,
          py::arg("lam") = 1000.0, py::arg("k") = 5, py::arg("p") = 1.0, py::arg("max_iterations") = 500,
          py::arg("tol") = 1e-4, "Wasserstein PGD with an adaptive radius schedule.");
}
