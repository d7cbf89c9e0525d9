#include "fedbilevel/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>

#include "fedbilevel/algorithms.hpp"
#include "fedbilevel/csv_io.hpp"
#include "fedbilevel/federation.hpp"
#include "fedbilevel/finite_diff.hpp"
#include "fedbilevel/hypergrad.hpp"
#include "fedbilevel/problems.hpp"

namespace fedbilevel {

namespace {

VerifyCheck bounded(std::string name, double measured, double threshold) {
  VerifyCheck c;
  c.name = std::move(name);
  c.measured = measured;
  c.threshold = threshold;
  c.pass = measured <= threshold;
  return c;
}

// Worst relative disagreement between the assembled hypergradient and
// central differences of x -> f(x, y*(x)) at `n` random points.
double hypergradient_fd_gap(const BilevelOracle& oracle, int n, double scale,
                            std::uint64_t seed) {
  RandomStream stream{seed, 1, 0};
  const auto phi = [&oracle](const Vec& x) {
    return oracle.upper_value(x, oracle.exact_lower_solution(x));
  };
  double worst = 0.0;
  for (int i = 0; i < n; ++i) {
    const Vec x = gaussian_vec(stream, oracle.dim_x(), scale);
    const Vec exact = oracle.exact_hypergradient(x);
    const Vec fd = finite_diff_grad(phi, x);
    const double rel = (fd - exact).norm() / (1e-12 + exact.norm());
    worst = std::max(worst, rel);
  }
  return worst;
}

double neumann_contraction_excess(const QuadQuadOracle& oracle) {
  const SmoothnessConstants& sc = oracle.constants();
  const double theta = 0.9 / sc.L1;
  const Mat A_inv = oracle.A().inverse();
  RandomStream stream{11, 2, 0};
  double worst_ratio = 0.0;
  for (const int q : {0, 1, 2, 4, 8, 16}) {
    NeumannConfig nm{theta, q};
    for (int rep = 0; rep < 4; ++rep) {
      const Vec w = gaussian_vec(stream, oracle.dim_y(), 1.0);
      const Vec x = Vec::Zero(oracle.dim_x());
      const Vec y = Vec::Zero(oracle.dim_y());
      RandomStream draw = stream;
      const Vec approx = neumann_apply(oracle, x, y, w, nm, draw);
      const double err = (approx - A_inv * w).norm();
      const double bound =
          std::pow(1.0 - theta * sc.mu, q + 1) / sc.mu * w.norm();
      worst_ratio = std::max(worst_ratio, err / bound);
    }
  }
  return worst_ratio;
}

// Runs LocalBSGVRM estimator updates directly on a noiseless problem and
// measures how far u/v drift from the current deterministic draws.
double storm_exactness_drift(const QuadQuadOracle& oracle, int steps) {
  const SmoothnessConstants& sc = oracle.constants();
  HyperParams hp;
  hp.alpha = 1.0;
  hp.beta = 1.0;
  hp.rho1 = 0.05;
  hp.rho2 = 0.2;
  hp.p = 1;
  hp.B = 4;
  hp.neumann = NeumannConfig{0.9 / sc.L1, 3};
  const double eta = 0.5;

  RandomStream stream{21, 0, 0};
  Vec x = Vec::Constant(oracle.dim_x(), 0.5);
  Vec y = Vec::Constant(oracle.dim_y(), -0.5);
  EstimatorState st = bsgvrm_init(oracle, x, y, hp.neumann, hp.B, stream);
  double worst = 0.0;
  for (int t = 0; t < steps; ++t) {
    // sigma = 0 makes every draw deterministic, so a throwaway stream
    // reproduces the exact current values.
    RandomStream probe{99, 7, 0};
    const Vec expect_u = stochastic_hypergradient(oracle, x, y, hp.neumann, probe);
    const Vec expect_v = oracle.grad_y_g(OracleQuery{x, y, probe});
    worst = std::max(worst, (st.u - expect_u).norm());
    worst = std::max(worst, (st.v - expect_v).norm());
    local_update(x, y, st, eta, hp);
    bsgvrm_estimator_step(st, x, y, eta, hp, oracle, stream);
  }
  return worst;
}

struct FederationProbe {
  double consensus = 0.0;  // max cross-device spread right after averaging
  double drift = 0.0;      // max change of the mean across averaging
};

FederationProbe probe_federation(const BilevelOracle& oracle) {
  const SmoothnessConstants& sc = oracle.constants();
  const NeumannConfig nm{0.9 / sc.L1, 2};
  const DerivedConstants dc = derived_constants(sc, nm);
  RateDerivation d = theorem_hyperparams(sc, dc, nm, 4, 5,
                                         RatePreset::BsgmFixed);

  FederationConfig fc;
  fc.K = 4;
  fc.p = 5;
  fc.T = 500;
  fc.seed = 3;
  fc.algorithm = Algorithm::LocalBSGM;
  fc.hp = d.hp;
  fc.schedule = d.schedule;
  fc.y0 = Vec::Constant(oracle.dim_y(), 0.9);

  FederationProbe probe;
  Vec sum_before[4];
  fc.before_average = [&](long, const std::vector<DeviceState>& devices) {
    sum_before[0] = devices[0].x;
    sum_before[1] = devices[0].y;
    sum_before[2] = devices[0].est.u;
    sum_before[3] = devices[0].est.v;
    for (std::size_t k = 1; k < devices.size(); ++k) {
      sum_before[0] += devices[k].x;
      sum_before[1] += devices[k].y;
      sum_before[2] += devices[k].est.u;
      sum_before[3] += devices[k].est.v;
    }
  };
  fc.after_average = [&](long, const std::vector<DeviceState>& devices) {
    Vec sum_after[4] = {devices[0].x, devices[0].y, devices[0].est.u,
                        devices[0].est.v};
    for (std::size_t k = 1; k < devices.size(); ++k) {
      sum_after[0] += devices[k].x;
      sum_after[1] += devices[k].y;
      sum_after[2] += devices[k].est.u;
      sum_after[3] += devices[k].est.v;
    }
    for (int i = 0; i < 4; ++i) {
      const double scale = 1.0 + sum_before[i].norm() / devices.size();
      probe.drift = std::max(
          probe.drift,
          (sum_after[i] - sum_before[i]).norm() / (devices.size() * scale));
    }
    for (std::size_t k = 1; k < devices.size(); ++k) {
      probe.consensus = std::max(
          {probe.consensus,
           (devices[k].x - devices[0].x).lpNorm<Eigen::Infinity>(),
           (devices[k].y - devices[0].y).lpNorm<Eigen::Infinity>(),
           (devices[k].est.u - devices[0].est.u).lpNorm<Eigen::Infinity>(),
           (devices[k].est.v - devices[0].est.v).lpNorm<Eigen::Infinity>()});
    }
  };
  run(fc, oracle);
  return probe;
}

double trace_difference(const RunTrace& a, const RunTrace& b) {
  if (a.rows.size() != b.rows.size()) {
    return std::numeric_limits<double>::infinity();
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    const IterationRecord& ra = a.rows[i];
    const IterationRecord& rb = b.rows[i];
    worst = std::max({worst, std::fabs(ra.eta - rb.eta),
                      std::fabs(ra.grad_norm_sq - rb.grad_norm_sq),
                      std::fabs(ra.lower_gap_sq - rb.lower_gap_sq),
                      std::fabs(ra.metric_partial - rb.metric_partial),
                      static_cast<double>(std::llabs(
                          ra.samples_cumulative - rb.samples_cumulative)),
                      static_cast<double>(std::llabs(ra.bytes_cumulative -
                                                     rb.bytes_cumulative)),
                      static_cast<double>(std::llabs(ra.rounds_cumulative -
                                                     rb.rounds_cumulative))});
  }
  return worst;
}

double determinism_gap(const BilevelOracle& oracle) {
  const SmoothnessConstants& sc = oracle.constants();
  const NeumannConfig nm{0.9 / sc.L1, 2};
  const DerivedConstants dc = derived_constants(sc, nm);
  RateDerivation d =
      theorem_hyperparams(sc, dc, nm, 3, 2, RatePreset::BsgmFixed);

  FederationConfig fc;
  fc.K = 3;
  fc.p = 2;
  fc.T = 80;
  fc.seed = 12;
  fc.algorithm = Algorithm::LocalBSGM;
  fc.hp = d.hp;
  fc.schedule = d.schedule;
  fc.y0 = Vec::Constant(oracle.dim_y(), 0.5);

  const RunTrace base = run(fc, oracle);
  const RunTrace repeat = run(fc, oracle);
  FederationConfig parallel = fc;
  parallel.workers = 3;
  const RunTrace threaded = run(parallel, oracle);
  return std::max(trace_difference(base, repeat),
                  trace_difference(base, threaded));
}

}  // namespace

std::vector<VerifyCheck> run_verification(bool fault_inject) {
  std::vector<VerifyCheck> checks;

  // Gradient assembly against finite differences of the reduced objective.
  QuadQuadConfig qc;
  qc.noise_std = 0.1;
  qc.flip_hypergradient_correction = fault_inject;
  const QuadQuadOracle quad(qc);
  checks.push_back(bounded("hypergradient_fd_quadquad",
                           hypergradient_fd_gap(quad, 100, 1.0, 5), 1e-5));

  const Dataset ridge_data = synth_dataset(120, 8, 0.1, 99);
  const RidgeHyperOracle ridge(ridge_data, RidgeHyperConfig{});
  checks.push_back(bounded("hypergradient_fd_ridgehyper",
                           hypergradient_fd_gap(ridge, 20, 0.5, 6), 1e-5));

  // Neumann truncation: contraction factor and bias bound at fixed depths.
  QuadQuadConfig det = qc;
  det.noise_std = 0.0;
  det.flip_hypergradient_correction = fault_inject;
  const QuadQuadOracle quad_det(det);
  checks.push_back(bounded("neumann_contraction_ratio",
                           neumann_contraction_excess(quad_det),
                           1.0 + 1e-9));

  const SmoothnessConstants& sc = quad_det.constants();
  const Vec probe_x = Vec::Ones(quad_det.dim_x());
  for (const int q : {0, 4, 8}) {
    const NeumannConfig nm{0.9 / sc.L1, q};
    RandomStream bias_stream{1, 4, 0};
    const double bias = measure_bias(quad_det, probe_x, nm, 1, bias_stream);
    const double bound = derived_constants(sc, nm).Delta_Q;
    checks.push_back(
        bounded("bias_bound_q" + std::to_string(q), bias, bound));
  }

  checks.push_back(bounded("storm_exactness_500_steps",
                           storm_exactness_drift(quad_det, 500), 1e-10));

  const FederationProbe fed = probe_federation(quad);
  checks.push_back(
      bounded("consensus_after_averaging", fed.consensus, 1e-12));
  checks.push_back(bounded("mean_preserved_by_averaging", fed.drift, 1e-12));

  // Decaying schedule at K = 1, p = 1 starts exactly at the fixed-step cap.
  {
    const NeumannConfig nm{0.9 / sc.L1, 2};
    const DerivedConstants dc = derived_constants(sc, nm);
    const RateDerivation d =
        theorem_hyperparams(sc, dc, nm, 1, 1, RatePreset::BsgvrmDecay);
    const double eta0 = d.schedule.eta(0);
    checks.push_back(bounded("schedule_crosscheck_eta0",
                             std::fabs(eta0 * 200.0 * dc.L_hat - 1.0),
                             1e-12));
  }

  checks.push_back(
      bounded("determinism_reruns_and_workers", determinism_gap(quad), 0.0));

  return checks;
}

int print_verification_report(const std::vector<VerifyCheck>& checks,
                              std::ostream& os) {
  os << "check,measured,threshold,status\n";
  int failures = 0;
  for (const VerifyCheck& c : checks) {
    os << c.name << ',' << format_double(c.measured) << ','
       << format_double(c.threshold) << ',' << (c.pass ? "PASS" : "FAIL")
       << '\n';
    if (!c.pass) {
      ++failures;
    }
  }
  os << "# " << (checks.size() - static_cast<std::size_t>(failures)) << "/"
     << checks.size() << " checks passed\n";
  return failures;
}

}  // namespace fedbilevel
