#pragma once

#include "fedbilevel/hypergrad.hpp"
#include "fedbilevel/problems.hpp"
#include "fedbilevel/random.hpp"
#include "fedbilevel/types.hpp"

namespace fedbilevel {

enum class Algorithm { LocalBSGM, LocalBSGVRM };

// Per-device hyperparameters shared by both algorithms. alpha/beta weight the
// momentum (LocalBSGM) or recursive correction (LocalBSGVRM), rho1/rho2 scale
// the upper/lower updates, p is the averaging period, B the LocalBSGVRM init
// batch size.
struct HyperParams {
  double alpha = 1.0;
  double beta = 1.0;
  double rho1 = 0.1;
  double rho2 = 0.1;
  int p = 1;
  int B = 16;
  NeumannConfig neumann;

  void validate(const SmoothnessConstants& sc) const;
};

// Step-size schedule: fixed eta, or the decaying form
//
//   eta_t = (K^(2/3) / L_hat) / (w + t)^(1/3),
//   w + t = max(2 + t, 200^3 K^2 p^3, 8 rho1^3 L_Phi^3 K^2 / L_hat^3)
//
// which is positive and non-increasing in t.
struct StepSchedule {
  enum class Kind { Fixed, Decaying };

  static StepSchedule fixed(double eta);
  static StepSchedule decaying(int K, int p, double L_hat, double rho1,
                               double L_Phi);

  double eta(long t) const;

  Kind kind = Kind::Fixed;
  double eta_fixed = 0.0;
  // decaying-form parameters
  int K = 1;
  int p = 1;
  double L_hat = 1.0;
  double rho1 = 0.0;
  double L_Phi = 0.0;
};

// Gradient-tracking state one device carries between iterations. prev_x and
// prev_y are only populated for LocalBSGVRM, whose correction re-evaluates
// the previous iterate on the current sample.
struct EstimatorState {
  Vec u;
  Vec v;
  Vec prev_x;
  Vec prev_y;
  bool has_prev = false;
};

// LocalBSGM estimator. Init draws one sample of each gradient; the step is
// the exponential average
//   u <- (1 - alpha*eta) u + alpha*eta * hypergradient draw
//   v <- (1 - beta*eta)  v + beta*eta  * lower gradient draw
// requiring alpha*eta <= 1 and beta*eta <= 1 (the boundary degenerates to a
// fresh draw and is allowed; beyond it the combination is no longer convex).
EstimatorState bsgm_init(const BilevelOracle& oracle, const Vec& x,
                         const Vec& y, const NeumannConfig& neumann,
                         RandomStream& stream);
void bsgm_estimator_step(EstimatorState& state, const Vec& x, const Vec& y,
                         double eta, const HyperParams& hp,
                         const BilevelOracle& oracle, RandomStream& stream);

// LocalBSGVRM estimator. Init averages a batch of B draws and records the
// iterate; the step applies the recursive variance-reduced update
//   u <- (1 - alpha*eta_prev^2) (u - D(x_prev)) + D(x)
// where both evaluations of D reuse the same sample (the stream position is
// replayed), and similarly for v with the lower gradient.
EstimatorState bsgvrm_init(const BilevelOracle& oracle, const Vec& x,
                           const Vec& y, const NeumannConfig& neumann, int B,
                           RandomStream& stream);
void bsgvrm_estimator_step(EstimatorState& state, const Vec& x, const Vec& y,
                           double eta_prev, const HyperParams& hp,
                           const BilevelOracle& oracle, RandomStream& stream);

// x <- x - rho1 * eta * u,  y <- y - rho2 * eta * v.
void local_update(Vec& x, Vec& y, const EstimatorState& state, double eta,
                  const HyperParams& hp);

// Named rate derivations from the convergence analysis; each returns the
// largest hyperparameters satisfying its defining inequalities.
//   BsgmFixed     LocalBSGM with a fixed step (strict caps applied at 0.99x)
//   BsgvrmFixed   LocalBSGVRM with a fixed step
//   BsgvrmDecay   LocalBSGVRM with the decaying schedule above
enum class RatePreset { BsgmFixed, BsgvrmFixed, BsgvrmDecay };

struct RateDerivation {
  HyperParams hp;
  StepSchedule schedule;
};

// alpha/beta overrides apply where the preset leaves them free (BsgmFixed
// defaults both to 1; the other presets pin them). B overrides the default
// init batch. Pass 0 to keep defaults.
RateDerivation theorem_hyperparams(const SmoothnessConstants& sc,
                                   const DerivedConstants& dc,
                                   const NeumannConfig& neumann, int K, int p,
                                   RatePreset preset, double alpha_override = 0,
                                   double beta_override = 0, int B_override = 0);

// Re-checks every defining inequality of the preset against a derivation.
// Used by the self-consistency suite; returns false on any violation.
bool audit_rate_derivation(const RateDerivation& d,
                           const SmoothnessConstants& sc,
                           const DerivedConstants& dc, int K, int p,
                           RatePreset preset);

Algorithm parse_algorithm(const std::string& name);
const char* algorithm_name(Algorithm a);

}  // namespace fedbilevel
