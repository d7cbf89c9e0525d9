// Python bindings for the core operations: problems, hypergradient
// estimation, derived constants, rate presets, and the federated run loop.
#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "fedbilevel/algorithms.hpp"
#include "fedbilevel/federation.hpp"
#include "fedbilevel/hypergrad.hpp"
#include "fedbilevel/problems.hpp"
#include "fedbilevel/random.hpp"

namespace py = pybind11;
using namespace fedbilevel;

PYBIND11_MODULE(_core, m) {
  m.doc() = "Federated stochastic bilevel optimization simulator";

  py::register_exception<CapabilityError>(m, "CapabilityError");
  py::register_exception<DivergenceError>(m, "DivergenceError");

  py::class_<RandomStream>(m, "RandomStream")
      .def(py::init<>())
      .def(py::init([](std::uint64_t seed, std::uint64_t stream_id,
                       std::uint64_t counter) {
             return RandomStream{seed, stream_id, counter};
           }),
           py::arg("seed"), py::arg("stream_id") = 0, py::arg("counter") = 0)
      .def_readwrite("seed", &RandomStream::seed)
      .def_readwrite("stream_id", &RandomStream::stream_id)
      .def_readwrite("counter", &RandomStream::counter);
  m.def("gaussian_vec", &gaussian_vec, py::arg("stream"), py::arg("dim"),
        py::arg("std"));

  py::class_<SmoothnessConstants>(m, "SmoothnessConstants")
      .def(py::init<>())
      .def_readwrite("mu", &SmoothnessConstants::mu)
      .def_readwrite("L0", &SmoothnessConstants::L0)
      .def_readwrite("L1", &SmoothnessConstants::L1)
      .def_readwrite("L21", &SmoothnessConstants::L21)
      .def_readwrite("L22", &SmoothnessConstants::L22)
      .def_readwrite("sigma", &SmoothnessConstants::sigma);

  py::class_<NeumannConfig>(m, "NeumannConfig")
      .def(py::init([](double theta, int Q) {
             return NeumannConfig{theta, Q};
           }),
           py::arg("theta"), py::arg("Q"))
      .def_readwrite("theta", &NeumannConfig::theta)
      .def_readwrite("Q", &NeumannConfig::Q);

  py::class_<DerivedConstants>(m, "DerivedConstants")
      .def_readonly("L_hat", &DerivedConstants::L_hat)
      .def_readonly("L_tilde", &DerivedConstants::L_tilde)
      .def_readonly("L_Phi", &DerivedConstants::L_Phi)
      .def_readonly("G", &DerivedConstants::G)
      .def_readonly("Delta_Q", &DerivedConstants::Delta_Q);
  m.def("derived_constants", &derived_constants, py::arg("constants"),
        py::arg("neumann"));
  m.def("truncation_bias_bound", &truncation_bias_bound, py::arg("constants"),
        py::arg("theta"), py::arg("Q"));
  m.def("default_theta", &default_theta, py::arg("constants"));
  m.def("default_Q", &default_Q, py::arg("constants"), py::arg("theta"),
        py::arg("epsilon"));

  py::class_<BilevelOracle>(m, "BilevelOracle")
      .def_property_readonly("dim_x", &BilevelOracle::dim_x)
      .def_property_readonly("dim_y", &BilevelOracle::dim_y)
      .def_property_readonly("noise_std", &BilevelOracle::noise_std)
      .def_property_readonly("constants", &BilevelOracle::constants,
                             py::return_value_policy::copy)
      .def_property_readonly("has_exact_lower_solution",
                             &BilevelOracle::has_exact_lower_solution)
      .def_property_readonly("has_exact_hypergradient",
                             &BilevelOracle::has_exact_hypergradient)
      .def("upper_value", &BilevelOracle::upper_value, py::arg("x"),
           py::arg("y"))
      .def("exact_lower_solution", &BilevelOracle::exact_lower_solution,
           py::arg("x"))
      .def("exact_hypergradient", &BilevelOracle::exact_hypergradient,
           py::arg("x"))
      .def("grad_y_g",
           [](const BilevelOracle& o, const Vec& x, const Vec& y,
              RandomStream& s) { return o.grad_y_g(OracleQuery{x, y, s}); },
           py::arg("x"), py::arg("y"), py::arg("stream"))
      .def("grad_x_f",
           [](const BilevelOracle& o, const Vec& x, const Vec& y,
              RandomStream& s) { return o.grad_x_f(OracleQuery{x, y, s}); },
           py::arg("x"), py::arg("y"), py::arg("stream"))
      .def("grad_y_f",
           [](const BilevelOracle& o, const Vec& x, const Vec& y,
              RandomStream& s) { return o.grad_y_f(OracleQuery{x, y, s}); },
           py::arg("x"), py::arg("y"), py::arg("stream"));

  py::class_<QuadQuadConfig>(m, "QuadQuadConfig")
      .def(py::init<>())
      .def_readwrite("dim_x", &QuadQuadConfig::dim_x)
      .def_readwrite("dim_y", &QuadQuadConfig::dim_y)
      .def_readwrite("mu", &QuadQuadConfig::mu)
      .def_readwrite("L1", &QuadQuadConfig::L1)
      .def_readwrite("lam", &QuadQuadConfig::lambda)
      .def_readwrite("b_scale", &QuadQuadConfig::b_scale)
      .def_readwrite("B_scale", &QuadQuadConfig::B_scale)
      .def_readwrite("yc_scale", &QuadQuadConfig::yc_scale)
      .def_readwrite("noise_std", &QuadQuadConfig::noise_std)
      .def_readwrite("region_radius", &QuadQuadConfig::region_radius)
      .def_readwrite("gen_seed", &QuadQuadConfig::gen_seed);

  py::class_<QuadQuadOracle, BilevelOracle>(m, "QuadQuadOracle")
      .def(py::init<const QuadQuadConfig&>(), py::arg("config"))
      .def(py::init<Mat, Mat, Vec, Vec, double, double, double>(),
           py::arg("A"), py::arg("B"), py::arg("b"), py::arg("y_c"),
           py::arg("lam"), py::arg("noise_std"),
           py::arg("region_radius") = 10.0)
      .def_property_readonly("A", &QuadQuadOracle::A)
      .def_property_readonly("B", &QuadQuadOracle::B);

  py::class_<Dataset>(m, "Dataset")
      .def(py::init<>())
      .def_readwrite("features", &Dataset::features)
      .def_readwrite("targets", &Dataset::targets);
  m.def("synth_dataset", &synth_dataset, py::arg("n_samples"),
        py::arg("n_features"), py::arg("target_noise"), py::arg("gen_seed"));
  m.def("load_csv_dataset", &load_csv_dataset, py::arg("path"),
        py::arg("target_column") = "target");

  py::class_<RidgeHyperConfig>(m, "RidgeHyperConfig")
      .def(py::init<>())
      .def_readwrite("train_fraction", &RidgeHyperConfig::train_fraction)
      .def_readwrite("split_seed", &RidgeHyperConfig::split_seed)
      .def_readwrite("region_radius", &RidgeHyperConfig::region_radius);
  py::class_<RidgeHyperOracle, BilevelOracle>(m, "RidgeHyperOracle")
      .def(py::init<Dataset, const RidgeHyperConfig&>(), py::arg("data"),
           py::arg("config"));

  m.def("neumann_apply", &neumann_apply, py::arg("oracle"), py::arg("x"),
        py::arg("y"), py::arg("w"), py::arg("neumann"), py::arg("stream"));
  m.def("stochastic_hypergradient", &stochastic_hypergradient,
        py::arg("oracle"), py::arg("x"), py::arg("y"), py::arg("neumann"),
        py::arg("stream"));
  m.def("hypergrad_samples", &hypergrad_samples, py::arg("Q"));
  m.def("measure_bias", &measure_bias, py::arg("oracle"), py::arg("x"),
        py::arg("neumann"), py::arg("n_draws"), py::arg("stream"));

  py::enum_<Algorithm>(m, "Algorithm")
      .value("LocalBSGM", Algorithm::LocalBSGM)
      .value("LocalBSGVRM", Algorithm::LocalBSGVRM);
  py::enum_<RatePreset>(m, "RatePreset")
      .value("BsgmFixed", RatePreset::BsgmFixed)
      .value("BsgvrmFixed", RatePreset::BsgvrmFixed)
      .value("BsgvrmDecay", RatePreset::BsgvrmDecay);

  py::class_<HyperParams>(m, "HyperParams")
      .def(py::init<>())
      .def_readwrite("alpha", &HyperParams::alpha)
      .def_readwrite("beta", &HyperParams::beta)
      .def_readwrite("rho1", &HyperParams::rho1)
      .def_readwrite("rho2", &HyperParams::rho2)
      .def_readwrite("p", &HyperParams::p)
      .def_readwrite("B", &HyperParams::B)
      .def_readwrite("neumann", &HyperParams::neumann);

  py::class_<StepSchedule>(m, "StepSchedule")
      .def_static("fixed", &StepSchedule::fixed, py::arg("eta"))
      .def_static("decaying", &StepSchedule::decaying, py::arg("K"),
                  py::arg("p"), py::arg("L_hat"), py::arg("rho1"),
                  py::arg("L_Phi"))
      .def("eta", &StepSchedule::eta, py::arg("t"));

  py::class_<RateDerivation>(m, "RateDerivation")
      .def_readonly("hp", &RateDerivation::hp)
      .def_readonly("schedule", &RateDerivation::schedule);
  m.def("theorem_hyperparams", &theorem_hyperparams, py::arg("constants"),
        py::arg("derived"), py::arg("neumann"), py::arg("K"), py::arg("p"),
        py::arg("preset"), py::arg("alpha_override") = 0.0,
        py::arg("beta_override") = 0.0, py::arg("B_override") = 0);
  m.def("audit_rate_derivation", &audit_rate_derivation, py::arg("derivation"),
        py::arg("constants"), py::arg("derived"), py::arg("K"), py::arg("p"),
        py::arg("preset"));

  py::class_<IterationRecord>(m, "IterationRecord")
      .def_readonly("t", &IterationRecord::t)
      .def_readonly("eta", &IterationRecord::eta)
      .def_readonly("grad_norm_sq", &IterationRecord::grad_norm_sq)
      .def_readonly("lower_gap_sq", &IterationRecord::lower_gap_sq)
      .def_readonly("metric_partial", &IterationRecord::metric_partial)
      .def_readonly("samples_cumulative", &IterationRecord::samples_cumulative)
      .def_readonly("bytes_cumulative", &IterationRecord::bytes_cumulative)
      .def_readonly("rounds_cumulative", &IterationRecord::rounds_cumulative);

  py::class_<RunTrace>(m, "RunTrace")
      .def_readonly("rows", &RunTrace::rows)
      .def_readonly("K", &RunTrace::K)
      .def_readonly("p", &RunTrace::p)
      .def_readonly("T", &RunTrace::T)
      .def_readonly("L_tilde", &RunTrace::L_tilde)
      .def_readonly("has_exact_metric", &RunTrace::has_exact_metric)
      .def_readonly("final_metric", &RunTrace::final_metric);

  py::class_<FederationConfig>(m, "FederationConfig")
      .def(py::init<>())
      .def_readwrite("K", &FederationConfig::K)
      .def_readwrite("p", &FederationConfig::p)
      .def_readwrite("T", &FederationConfig::T)
      .def_readwrite("seed", &FederationConfig::seed)
      .def_readwrite("algorithm", &FederationConfig::algorithm)
      .def_readwrite("hp", &FederationConfig::hp)
      .def_readwrite("schedule", &FederationConfig::schedule)
      .def_readwrite("bytes_per_scalar", &FederationConfig::bytes_per_scalar)
      .def_readwrite("count_broadcast", &FederationConfig::count_broadcast)
      .def_readwrite("workers", &FederationConfig::workers)
      .def_readwrite("force_shared_stream",
                     &FederationConfig::force_shared_stream)
      .def_readwrite("x0", &FederationConfig::x0)
      .def_readwrite("y0", &FederationConfig::y0)
      .def_readwrite("divergence_guard", &FederationConfig::divergence_guard);

  m.def("run", &run, py::arg("config"), py::arg("oracle"),
        py::call_guard<py::gil_scoped_release>());
  m.def("convergence_metric", &convergence_metric, py::arg("trace"),
        py::arg("L_tilde"));

  py::class_<Accounting>(m, "Accounting")
      .def_readonly("samples_per_device", &Accounting::samples_per_device)
      .def_readonly("rounds", &Accounting::rounds)
      .def_readonly("bytes", &Accounting::bytes)
      .def_readonly("bytes_upload", &Accounting::bytes_upload);
  m.def("accounting", &accounting, py::arg("trace"));
}
