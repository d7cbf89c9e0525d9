#include "fedbilevel/hypergrad.hpp"

#include <cmath>
#include <stdexcept>

namespace fedbilevel {

void NeumannConfig::validate_against(const SmoothnessConstants& sc) const {
  if (Q < 0) {
    throw std::invalid_argument("NeumannConfig: Q must be >= 0");
  }
  const double tl = theta * sc.L1;
  if (!(tl > 0.0) || !(tl < 1.0)) {
    throw std::invalid_argument(
        "NeumannConfig: need 0 < theta*L1 < 1, got theta*L1 = " +
        std::to_string(tl));
  }
}

double default_theta(const SmoothnessConstants& sc) { return 0.9 / sc.L1; }

int default_Q(const SmoothnessConstants& sc, double theta,
              double epsilon_target) {
  if (!(epsilon_target > 0.0)) {
    throw std::invalid_argument("default_Q: epsilon_target must be positive");
  }
  const double target = epsilon_target / 10.0;
  int Q = 0;
  while (truncation_bias_bound(sc, theta, Q) > target && Q < 10000) {
    ++Q;
  }
  return Q;
}

double truncation_bias_bound(const SmoothnessConstants& sc, double theta,
                             int Q) {
  return std::pow(1.0 - theta * sc.mu, Q + 1) * sc.L0 * sc.L1 / sc.mu;
}

DerivedConstants derived_constants(const SmoothnessConstants& sc,
                                   const NeumannConfig& cfg) {
  cfg.validate_against(sc);
  sc.validate();
  const double th = cfg.theta;
  const double q1 = static_cast<double>(cfg.Q) + 1.0;
  const double q0 = static_cast<double>(cfg.Q);
  const double mu = sc.mu, L0 = sc.L0, L1 = sc.L1, L21 = sc.L21, L22 = sc.L22;
  // The mixed third derivative shares the L21 constant by symmetry of
  // second partials.
  const double L12 = L21;

  DerivedConstants out;
  const double lhat_sq =
      2.0 * L1 * L1 + 4.0 * th * th * L0 * L0 * L21 * L21 * q1 * q1 +
      8.0 * th * th * L1 * L1 * L1 * L1 * q1 * q1 +
      2.0 * std::pow(th, 4) * L0 * L0 * L1 * L1 * L22 * L22 * q0 * q0 * q1 * q1;
  out.L_hat = std::sqrt(lhat_sq);
  out.L_tilde = L1 + L1 * L1 / mu + L0 * L21 / mu + L0 * L1 * L22 / (mu * mu);
  out.L_Phi = L1 + (2.0 * L1 * L1 + L21 * L0 * L0) / mu +
              (L22 * L1 * L0 + L1 * L1 * L1 + L12 * L0 * L1) / (mu * mu) +
              L22 * L1 * L1 * L0 / (mu * mu * mu);
  out.G = 2.0 * L0 * L0 + 12.0 * th * th * L0 * L0 * L1 * L1 * q1 * q1 +
          4.0 * std::pow(th, 4) * L0 * L0 * L1 * L1 * (q0 + 2.0) * q1 * q1 *
              sc.sigma * sc.sigma;
  out.Delta_Q = truncation_bias_bound(sc, th, cfg.Q);
  return out;
}

Vec neumann_apply(const BilevelOracle& oracle, const Vec& x, const Vec& y,
                  const Vec& w, const NeumannConfig& cfg,
                  RandomStream& stream) {
  cfg.validate_against(oracle.constants());
  if (w.size() != oracle.dim_y()) {
    throw std::invalid_argument("neumann_apply: w must have dimension dim_y");
  }
  Vec s = w;
  Vec acc = w;
  for (int j = cfg.Q; j >= 1; --j) {
    s -= cfg.theta * oracle.hvp_yy_g(OracleQuery{x, y, stream}, s);
    acc += s;
  }
  return cfg.theta * acc;
}

Vec stochastic_hypergradient(const BilevelOracle& oracle, const Vec& x,
                             const Vec& y, const NeumannConfig& cfg,
                             RandomStream& stream) {
  cfg.validate_against(oracle.constants());
  // Both f-gradients must see the same xi: evaluate them from the same
  // stream position. The two calls consume equal draw counts by contract.
  RandomStream shared = stream;
  const Vec fx = oracle.grad_x_f(OracleQuery{x, y, stream});
  const Vec fy = oracle.grad_y_f(OracleQuery{x, y, shared});
  // Series Hessian samples are independent of the mixed-product sample.
  const Vec hw = neumann_apply(oracle, x, y, fy, cfg, stream);
  const Vec correction = -oracle.jvp_xy_g(OracleQuery{x, y, stream}, hw);
  return fx + oracle.correction_sign() * correction;
}

double measure_bias(const BilevelOracle& oracle, const Vec& x,
                    const NeumannConfig& cfg, int n_draws,
                    RandomStream& stream) {
  if (n_draws < 1) {
    throw std::invalid_argument("measure_bias: n_draws must be >= 1");
  }
  if (!oracle.has_exact_lower_solution() || !oracle.has_exact_hypergradient()) {
    throw CapabilityError(
        "measure_bias needs exact_lower_solution and exact_hypergradient");
  }
  const Vec ystar = oracle.exact_lower_solution(x);
  Vec mean = Vec::Zero(oracle.dim_x());
  for (int i = 0; i < n_draws; ++i) {
    mean += stochastic_hypergradient(oracle, x, ystar, cfg, stream);
  }
  mean /= static_cast<double>(n_draws);
  return (mean - oracle.exact_hypergradient(x)).norm();
}

}  // namespace fedbilevel
