// Python surface for the mixed posterior estimator: simulate / fit / sample /
// log_prob / calibrate plus the reference posteriors and the C2ST metric.
// Discrete parameters cross this boundary on their display scale (class index
// plus the dimension's display offset), matching the CSV file conventions.

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mnpe/calibration.hpp"
#include "mnpe/dataset.hpp"
#include "mnpe/metrics.hpp"
#include "mnpe/references.hpp"
#include "mnpe/run_config.hpp"

namespace py = pybind11;
using namespace mnpe;

namespace {

py::array_t<std::int64_t> discrete_to_display(const std::vector<std::vector<int>>& theta_d,
                                              const MixedParamSpace& space) {
    const auto n = static_cast<py::ssize_t>(theta_d.size());
    const auto l = static_cast<py::ssize_t>(space.l());
    py::array_t<std::int64_t> out({n, l});
    auto view = out.mutable_unchecked<2>();
    for (py::ssize_t i = 0; i < n; ++i)
        for (py::ssize_t d = 0; d < l; ++d)
            view(i, d) = theta_d[static_cast<std::size_t>(i)][static_cast<std::size_t>(d)] +
                         space.discrete.dim(static_cast<int>(d)).display_offset;
    return out;
}

py::array_t<std::int64_t> samples_to_display(const std::vector<MixedSample>& samples,
                                             const MixedParamSpace& space) {
    std::vector<std::vector<int>> theta_d;
    theta_d.reserve(samples.size());
    for (const MixedSample& s : samples) theta_d.push_back(s.theta_d);
    return discrete_to_display(theta_d, space);
}

Matrix samples_to_continuous(const std::vector<MixedSample>& samples, const MixedParamSpace& space) {
    Matrix out(static_cast<std::int64_t>(samples.size()), space.k());
    for (std::size_t i = 0; i < samples.size(); ++i)
        out.row(static_cast<std::int64_t>(i)) = samples[i].theta_c.transpose();
    return out;
}

std::vector<std::vector<int>> display_to_internal(const py::array_t<std::int64_t>& theta_d,
                                                  const MixedParamSpace& space) {
    if (theta_d.ndim() != 2 || theta_d.shape(1) != space.l())
        throw InputError("theta_d must have shape (n, " + std::to_string(space.l()) + ")");
    auto view = theta_d.unchecked<2>();
    std::vector<std::vector<int>> out(static_cast<std::size_t>(theta_d.shape(0)));
    for (py::ssize_t i = 0; i < theta_d.shape(0); ++i) {
        auto& row = out[static_cast<std::size_t>(i)];
        row.resize(static_cast<std::size_t>(space.l()));
        for (int d = 0; d < space.l(); ++d)
            row[static_cast<std::size_t>(d)] =
                discrete_index_from_display(space, d, static_cast<double>(view(i, d)));
    }
    return out;
}

MixedSample make_sample(const std::vector<std::int64_t>& theta_d_display, const Vector& theta_c,
                        const MixedParamSpace& space) {
    if (static_cast<int>(theta_d_display.size()) != space.l() || theta_c.size() != space.k())
        throw InputError("theta has the wrong number of dimensions for this space");
    MixedSample theta;
    theta.theta_d.resize(theta_d_display.size());
    for (int d = 0; d < space.l(); ++d)
        theta.theta_d[static_cast<std::size_t>(d)] = discrete_index_from_display(
            space, d, static_cast<double>(theta_d_display[static_cast<std::size_t>(d)]));
    theta.theta_c = theta_c;
    return theta;
}

py::dict space_info(const MixedParamSpace& space) {
    py::list discrete;
    for (const DiscreteDim& dim : space.discrete.dims())
        discrete.append(py::dict(py::arg("name") = dim.name, py::arg("classes") = dim.classes,
                                 py::arg("display_offset") = dim.display_offset));
    py::dict out;
    out["discrete"] = discrete;
    out["continuous"] = space.continuous_names;
    return out;
}

RunConfig resolve_config(const std::string& model, const std::string& config_json) {
    if (config_json.empty()) return default_run_config(model);
    RunConfig config = run_config_from_json_text(config_json);
    if (config.model != model)
        throw InputError("config is for model '" + config.model + "', not '" + model + "'");
    return config;
}

}  // namespace

PYBIND11_MODULE(_mnpe, m) {
    m.doc() =
        "Amortized Bayesian inference for simulators with mixed discrete/continuous "
        "parameters: categorical-autoregressive discrete head, conditional spline-flow "
        "continuous head, calibration diagnostics, and reference posteriors.";

    py::register_exception<ReferenceInvalidError>(m, "ReferenceInvalidError", PyExc_RuntimeError);

    m.def(
        "simulate",
        [](const std::string& model, std::int64_t n, std::uint64_t seed) {
            const auto sim = make_simulator(model);
            const Dataset data = generate_dataset(*sim, n, seed);
            const MixedParamSpace space = sim->space();
            py::dict out;
            out["theta_d"] = discrete_to_display(data.theta_d, space);
            out["theta_c"] = Matrix(data.theta_c.transpose());
            out["x"] = Matrix(data.x.transpose());
            out["n_rejected"] = data.meta.n_rejected();
            out["space"] = space_info(space);
            return out;
        },
        py::arg("model"), py::arg("n"), py::arg("seed") = 0,
        "Draw n accepted (theta, x) pairs from the model's prior and simulator. Rows are "
        "samples; discrete columns are on display scale.");

    m.def(
        "default_config_json", [](const std::string& model) {
            return run_config_to_json(default_run_config(model));
        },
        py::arg("model"), "Fully resolved default run configuration for a model.");

    py::class_<MnpeEstimator>(m, "Estimator",
                              "Joint mixed posterior estimator q(theta_d|x) q(theta_c|theta_d,x)")
        .def_static(
            "fit",
            [](const std::string& model, const py::array_t<std::int64_t>& theta_d,
               const Matrix& theta_c, const Matrix& x, const std::string& config_json,
               std::uint64_t seed) {
                const auto sim = make_simulator(model);
                const MixedParamSpace space = sim->space();
                Dataset data;
                data.theta_d = display_to_internal(theta_d, space);
                data.theta_c = theta_c.transpose();
                data.x = x.transpose();
                data.meta.simulator = sim->name();
                data.meta.n_requested = static_cast<std::int64_t>(data.theta_d.size());
                data.validate(space);
                RunConfig config = resolve_config(sim->name(), config_json);
                config.train.seed = seed;
                return MnpeEstimator::fit(space, data, config.arch, config.train,
                                          sim->obs_transforms());
            },
            py::arg("model"), py::arg("theta_d"), py::arg("theta_c"), py::arg("x"),
            py::arg("config_json") = std::string(), py::arg("seed") = 0,
            "Train on rows of (theta_d display values, theta_c, x). config_json overrides the "
            "model's default architecture/training blocks; seed fixes the training stream.")
        .def_static("load", &MnpeEstimator::load, py::arg("path"))
        .def("save", &MnpeEstimator::save, py::arg("path"))
        .def(
            "sample",
            [](const MnpeEstimator& self, const Vector& x, int n, std::uint64_t seed) {
                Rng rng(seed);
                const auto samples = self.posterior_sample(x, n, rng);
                return py::make_tuple(samples_to_display(samples, self.space()),
                                      samples_to_continuous(samples, self.space()));
            },
            py::arg("x"), py::arg("n") = 1000, py::arg("seed") = 0,
            "Posterior draws at observation x: (theta_d display ints (n, l), theta_c (n, k)).")
        .def(
            "log_prob",
            [](const MnpeEstimator& self, const std::vector<std::int64_t>& theta_d,
               const Vector& theta_c, const Vector& x) {
                return self.joint_log_prob(make_sample(theta_d, theta_c, self.space()), x);
            },
            py::arg("theta_d"), py::arg("theta_c"), py::arg("x"),
            "Joint posterior log density at (theta_d display values, theta_c) given x.")
        .def(
            "discrete_marginal_probs",
            [](const MnpeEstimator& self, const Vector& x, std::uint64_t seed) {
                Rng rng(seed);
                return self.discrete_marginal_probs(x, rng);
            },
            py::arg("x"), py::arg("seed") = 0,
            "Per-dimension marginal class probabilities at x (internal class order).")
        .def_property_readonly("obs_dim", &MnpeEstimator::obs_dim)
        .def_property_readonly("space",
                               [](const MnpeEstimator& self) { return space_info(self.space()); });

    m.def(
        "reference_sample",
        [](const std::string& model, const Vector& x, int n, std::uint64_t seed,
           std::int64_t queue_budget) {
            const auto sim = make_simulator(model);
            Rng rng(seed);
            std::vector<MixedSample> samples;
            if (sim->name() == "gaussian_toy") {
                const GaussianToyModel toy;
                samples = ToyAnalyticPosterior(toy).posterior_sample(x, n, rng);
            } else if (sim->name() == "coal_changepoint") {
                samples = CoalExactPosterior(x).posterior_sample(x, n, rng);
            } else {
                samples = queue_reference_sample(x, n, rng, queue_budget);
            }
            const MixedParamSpace space = sim->space();
            return py::make_tuple(samples_to_display(samples, space),
                                  samples_to_continuous(samples, space));
        },
        py::arg("model"), py::arg("x"), py::arg("n") = 1000, py::arg("seed") = 0,
        py::arg("queue_budget") = 400000,
        "Reference posterior draws: analytic (toy), conjugate-exact (coal), or "
        "importance-sampling (queue; raises ReferenceInvalidError if the ESS check fails).");

    m.def(
        "calibration_report_json",
        [](const MnpeEstimator& estimator, const std::string& model, int n_test, int s, int b,
           std::uint64_t seed) {
            const auto sim = make_simulator(model);
            CalibrationConfig config;
            config.n_test = n_test;
            config.s = s;
            config.b = b;
            return calibration_report_to_json(calibration_report(estimator, *sim, config, seed));
        },
        py::arg("estimator"), py::arg("model"), py::arg("n_test") = 500, py::arg("s") = 1000,
        py::arg("b") = 10, py::arg("seed") = 0,
        "Rank (SBC/EoD) and reliability (ECE) calibration report as a JSON string.");

    m.def(
        "c2st",
        [](const Matrix& a, const Matrix& b, std::uint64_t seed) {
            C2stConfig config;
            config.seed = seed;
            // Rows are samples at this boundary; the metric wants columns.
            return c2st(a.transpose(), b.transpose(), config).score;
        },
        py::arg("a"), py::arg("b"), py::arg("seed") = 0,
        "Classifier two-sample test on two (n, d) sample arrays; 0.5 = indistinguishable.");
}
