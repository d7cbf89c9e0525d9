#pragma once

#include "fedbilevel/problems.hpp"
#include "fedbilevel/random.hpp"
#include "fedbilevel/types.hpp"

namespace fedbilevel {

// Truncated-series inverse-Hessian approximation: Q Hessian samples and a
// scale theta with 0 < theta * L1 < 1. Q = 0 degenerates to theta * I.
struct NeumannConfig {
  double theta = 0.0;
  int Q = 0;

  // Enforces 0 < theta*L1 < 1 (strict) and Q >= 0 against the constants the
  // oracle declares. Throws std::invalid_argument on violation.
  void validate_against(const SmoothnessConstants& sc) const;
};

// Default scale: 0.9 / L1.
double default_theta(const SmoothnessConstants& sc);

// Smallest Q whose truncation-bias bound is at most epsilon_target / 10.
int default_Q(const SmoothnessConstants& sc, double theta,
              double epsilon_target);

// Constants derived from the declared smoothness numbers and the series
// configuration. Field names follow the estimator analysis:
//   L_hat    smoothness of the assembled stochastic hypergradient
//   L_tilde  weight of the lower-level gap inside the convergence metric
//   L_Phi    smoothness of the implied objective F(x) = f(x, y*(x))
//   G        second-moment bound on the assembled hypergradient
//   Delta_Q  truncation-bias bound (1 - theta*mu)^(Q+1) * L0 * L1 / mu
struct DerivedConstants {
  double L_hat = 0.0;
  double L_tilde = 0.0;
  double L_Phi = 0.0;
  double G = 0.0;
  double Delta_Q = 0.0;
};

DerivedConstants derived_constants(const SmoothnessConstants& sc,
                                   const NeumannConfig& cfg);

// Truncation-bias bound for arbitrary (theta, Q) without the rest of the
// derived set.
double truncation_bias_bound(const SmoothnessConstants& sc, double theta,
                             int Q);

// Applies the sampled inverse-Hessian estimate to w:
//
//   H_hat w = theta * sum_{q=-1}^{Q-1} prod_{j=Q-q}^{Q} (I - theta H_j) w
//
// evaluated right-to-left with exactly Q Hessian-vector products (the q = -1
// term is the empty product, i.e. w itself):
//
//   s = w; acc = w;
//   for j = Q..1: s -= theta * hvp(zeta_j, s); acc += s;
//   return theta * acc.
Vec neumann_apply(const BilevelOracle& oracle, const Vec& x, const Vec& y,
                  const Vec& w, const NeumannConfig& cfg, RandomStream& stream);

// One stochastic hypergradient draw
//
//   grad_x f(xi) - jvp_xy_g(zeta) [H_hat] grad_y f(xi)
//
// with one xi shared by both f-gradients, Q independent Hessian samples
// inside H_hat, and one further independent zeta for the mixed product.
// Consumes hypergrad_samples(Q) oracle samples.
Vec stochastic_hypergradient(const BilevelOracle& oracle, const Vec& x,
                             const Vec& y, const NeumannConfig& cfg,
                             RandomStream& stream);

// Oracle samples per stochastic_hypergradient call: 1 xi + 1 zeta + Q zeta_j.
constexpr long hypergrad_samples(int Q) { return static_cast<long>(Q) + 2; }

// Monte-Carlo estimate of || mean of n_draws hypergradient draws at
// (x, y*(x)) - exact hypergradient ||. Requires both exact capabilities.
double measure_bias(const BilevelOracle& oracle, const Vec& x,
                    const NeumannConfig& cfg, int n_draws,
                    RandomStream& stream);

}  // namespace fedbilevel
