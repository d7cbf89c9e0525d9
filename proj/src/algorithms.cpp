#include "fedbilevel/algorithms.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fedbilevel {

namespace {

// Backoff applied where a derivation states a strict inequality; the largest
// admissible value is taken as 99% of the open bound.
constexpr double kStrictBackoff = 0.99;

void require_mixing_weight(double w, const char* name) {
  if (!(w >= 0.0) || w > 1.0) {
    throw std::invalid_argument(std::string("estimator step: ") + name +
                                " must lie in [0, 1], got " +
                                std::to_string(w));
  }
}

}  // namespace

void HyperParams::validate(const SmoothnessConstants& sc) const {
  if (!(alpha > 0.0) || !(beta > 0.0)) {
    throw std::invalid_argument("HyperParams: alpha and beta must be positive");
  }
  if (!(rho1 > 0.0) || !(rho2 > 0.0)) {
    throw std::invalid_argument("HyperParams: rho1 and rho2 must be positive");
  }
  if (p < 1) {
    throw std::invalid_argument("HyperParams: averaging period p must be >= 1");
  }
  if (B < 1) {
    throw std::invalid_argument("HyperParams: init batch B must be >= 1");
  }
  neumann.validate_against(sc);
}

StepSchedule StepSchedule::fixed(double eta) {
  if (!(eta > 0.0)) {
    throw std::invalid_argument("StepSchedule: fixed eta must be positive");
  }
  StepSchedule s;
  s.kind = Kind::Fixed;
  s.eta_fixed = eta;
  return s;
}

StepSchedule StepSchedule::decaying(int K, int p, double L_hat, double rho1,
                                    double L_Phi) {
  if (K < 1 || p < 1) {
    throw std::invalid_argument("StepSchedule: K and p must be >= 1");
  }
  if (!(L_hat > 0.0) || !(rho1 > 0.0) || !(L_Phi > 0.0)) {
    throw std::invalid_argument(
        "StepSchedule: L_hat, rho1, L_Phi must be positive");
  }
  StepSchedule s;
  s.kind = Kind::Decaying;
  s.K = K;
  s.p = p;
  s.L_hat = L_hat;
  s.rho1 = rho1;
  s.L_Phi = L_Phi;
  return s;
}

double StepSchedule::eta(long t) const {
  if (t < 0) {
    throw std::invalid_argument("StepSchedule: t must be >= 0");
  }
  if (kind == Kind::Fixed) {
    return eta_fixed;
  }
  const double Kd = static_cast<double>(K);
  const double pd = static_cast<double>(p);
  const double warm = 200.0 * 200.0 * 200.0 * Kd * Kd * pd * pd * pd;
  const double drift = 8.0 * std::pow(rho1 * L_Phi / L_hat, 3) * Kd * Kd;
  const double base =
      std::max({2.0 + static_cast<double>(t), warm, drift});
  return (std::pow(Kd, 2.0 / 3.0) / L_hat) / std::cbrt(base);
}

EstimatorState bsgm_init(const BilevelOracle& oracle, const Vec& x,
                         const Vec& y, const NeumannConfig& neumann,
                         RandomStream& stream) {
  EstimatorState st;
  st.u = stochastic_hypergradient(oracle, x, y, neumann, stream);
  st.v = oracle.grad_y_g(OracleQuery{x, y, stream});
  st.has_prev = false;
  return st;
}

void bsgm_estimator_step(EstimatorState& state, const Vec& x, const Vec& y,
                         double eta, const HyperParams& hp,
                         const BilevelOracle& oracle, RandomStream& stream) {
  const double wu = hp.alpha * eta;
  const double wv = hp.beta * eta;
  require_mixing_weight(wu, "alpha*eta");
  require_mixing_weight(wv, "beta*eta");
  const Vec grad = stochastic_hypergradient(oracle, x, y, hp.neumann, stream);
  state.u = (1.0 - wu) * state.u + wu * grad;
  const Vec gy = oracle.grad_y_g(OracleQuery{x, y, stream});
  state.v = (1.0 - wv) * state.v + wv * gy;
}

EstimatorState bsgvrm_init(const BilevelOracle& oracle, const Vec& x,
                           const Vec& y, const NeumannConfig& neumann, int B,
                           RandomStream& stream) {
  if (B < 1) {
    throw std::invalid_argument("bsgvrm_init: batch size B must be >= 1");
  }
  EstimatorState st;
  st.u = Vec::Zero(oracle.dim_x());
  for (int b = 0; b < B; ++b) {
    st.u += stochastic_hypergradient(oracle, x, y, neumann, stream);
  }
  st.u /= static_cast<double>(B);
  st.v = Vec::Zero(oracle.dim_y());
  for (int b = 0; b < B; ++b) {
    st.v += oracle.grad_y_g(OracleQuery{x, y, stream});
  }
  st.v /= static_cast<double>(B);
  st.prev_x = x;
  st.prev_y = y;
  st.has_prev = true;
  return st;
}

void bsgvrm_estimator_step(EstimatorState& state, const Vec& x, const Vec& y,
                           double eta_prev, const HyperParams& hp,
                           const BilevelOracle& oracle, RandomStream& stream) {
  if (!state.has_prev) {
    throw std::logic_error(
        "bsgvrm_estimator_step: state carries no previous iterate (was the "
        "state initialized with bsgvrm_init?)");
  }
  const double wu = hp.alpha * eta_prev * eta_prev;
  const double wv = hp.beta * eta_prev * eta_prev;
  require_mixing_weight(wu, "alpha*eta_prev^2");
  require_mixing_weight(wv, "beta*eta_prev^2");

  // Both hypergradient evaluations reuse one sample: replay the stream
  // position for the previous iterate, advance it with the current one.
  RandomStream replay = stream;
  const Vec d_prev = stochastic_hypergradient(oracle, state.prev_x,
                                              state.prev_y, hp.neumann, replay);
  const Vec d_curr = stochastic_hypergradient(oracle, x, y, hp.neumann, stream);
  state.u = (1.0 - wu) * (state.u - d_prev) + d_curr;

  replay = stream;
  const Vec g_prev =
      oracle.grad_y_g(OracleQuery{state.prev_x, state.prev_y, replay});
  const Vec g_curr = oracle.grad_y_g(OracleQuery{x, y, stream});
  state.v = (1.0 - wv) * (state.v - g_prev) + g_curr;

  state.prev_x = x;
  state.prev_y = y;
}

void local_update(Vec& x, Vec& y, const EstimatorState& state, double eta,
                  const HyperParams& hp) {
  x -= hp.rho1 * eta * state.u;
  y -= hp.rho2 * eta * state.v;
}

namespace {

double bsgm_eta_cap(const HyperParams& hp, const DerivedConstants& dc,
                    int p) {
  const double pd = static_cast<double>(p);
  const double pair_alpha = std::pow(hp.alpha * hp.alpha + hp.beta * hp.beta,
                                     0.25);
  const double pair_rho =
      std::pow(hp.rho1 * hp.rho1 + hp.rho2 * hp.rho2, 0.25);
  return std::min({1.0 / hp.alpha, 1.0 / hp.beta, 1.0 / (2.0 * hp.rho1 * dc.L_Phi),
                   1.0 / (3.0 * pd * pair_alpha * pair_rho *
                          std::sqrt(dc.L_hat)),
                   1.0});
}

// Shared denominator of the variance-reduced fixed-step caps.
double vr_cap_denominator(const SmoothnessConstants& sc,
                          const DerivedConstants& dc, double alpha,
                          double beta, int K) {
  const double Kd = static_cast<double>(K);
  const double kappa =
      16.0 * dc.L_hat * dc.L_hat / (alpha * Kd) +
      2000.0 * sc.L1 * sc.L1 * dc.L_tilde * dc.L_tilde /
          (3.0 * beta * sc.mu * sc.mu * Kd);
  const double inner =
      4.0 + 1000.0 * dc.L_tilde * dc.L_tilde / (3.0 * sc.mu * sc.mu) + kappa;
  return kappa + (12.0 / 25.0) * inner;
}

}  // namespace

RateDerivation theorem_hyperparams(const SmoothnessConstants& sc,
                                   const DerivedConstants& dc,
                                   const NeumannConfig& neumann, int K, int p,
                                   RatePreset preset, double alpha_override,
                                   double beta_override, int B_override) {
  if (K < 1 || p < 1) {
    throw std::invalid_argument("theorem_hyperparams: K and p must be >= 1");
  }
  const double Kd = static_cast<double>(K);
  RateDerivation out;
  out.hp.neumann = neumann;
  out.hp.p = p;
  out.hp.B = B_override > 0 ? B_override : 16;

  switch (preset) {
    case RatePreset::BsgmFixed: {
      HyperParams& hp = out.hp;
      hp.alpha = alpha_override > 0 ? alpha_override : 1.0;
      hp.beta = beta_override > 0 ? beta_override : 1.0;
      const double a2 = hp.alpha * hp.alpha;
      const double b2 = hp.beta * hp.beta;
      hp.rho2 = std::min(
          (6.0 * dc.L_tilde * dc.L_tilde / sc.mu) /
              (4.0 * dc.L_hat * dc.L_hat / a2 +
               400.0 * sc.L1 * sc.L1 * dc.L_tilde * dc.L_tilde /
                   (3.0 * b2 * sc.mu * sc.mu)),
          1.0 / (6.0 * sc.L1));
      hp.rho1 = std::min(
          3.0 * hp.rho2 * sc.mu * sc.mu / (50.0 * sc.L1 * dc.L_tilde),
          0.25 / std::sqrt(4.0 * dc.L_hat * dc.L_hat / a2 +
                           500.0 * sc.L1 * sc.L1 * dc.L_tilde * dc.L_tilde /
                               (3.0 * b2 * sc.mu * sc.mu)));
      const double eta = kStrictBackoff * bsgm_eta_cap(hp, dc, p);
      out.hp.B = 1;  // LocalBSGM always initializes from a single draw
      out.schedule = StepSchedule::fixed(eta);
      break;
    }
    case RatePreset::BsgvrmFixed: {
      HyperParams& hp = out.hp;
      const double cap = dc.L_hat * dc.L_hat / Kd;
      hp.alpha = alpha_override > 0 ? alpha_override : cap;
      hp.beta = beta_override > 0 ? beta_override : cap;
      if (hp.alpha > cap || hp.beta > cap) {
        throw std::invalid_argument(
            "theorem_hyperparams: alpha/beta above the L_hat^2/K cap");
      }
      const double denom = vr_cap_denominator(sc, dc, hp.alpha, hp.beta, K);
      hp.rho2 = std::min({1.0 / (6.0 * sc.L1),
                          (15.0 * dc.L_tilde * dc.L_tilde / sc.mu) / denom,
                          10.0});
      hp.rho1 = std::min({hp.rho2 * sc.mu * sc.mu /
                              (20.0 * dc.L_tilde * sc.L1),
                          0.5 / std::sqrt(denom), 10.0});
      const double eta =
          std::min({1.0 / std::sqrt(hp.alpha), 1.0 / std::sqrt(hp.beta),
                    1.0 / (200.0 * static_cast<double>(p) * dc.L_hat)});
      out.schedule = StepSchedule::fixed(eta);
      break;
    }
    case RatePreset::BsgvrmDecay: {
      HyperParams& hp = out.hp;
      const double pinned =
          dc.L_hat * dc.L_hat / (3.0 * static_cast<double>(p) * Kd * Kd) +
          dc.L_hat * dc.L_hat / Kd;
      hp.alpha = pinned;
      hp.beta = pinned;
      hp.rho2 = std::min({15.0 * sc.mu / 1174.0, 1.0 / (6.0 * sc.L1), 10.0});
      hp.rho1 = std::min({hp.rho2 * sc.mu * sc.mu / (60.0 * sc.L1 * sc.L1),
                          sc.mu / (100.0 * dc.L_tilde), 10.0});
      out.schedule =
          StepSchedule::decaying(K, p, dc.L_hat, hp.rho1, dc.L_Phi);
      break;
    }
  }
  out.hp.validate(sc);
  return out;
}

bool audit_rate_derivation(const RateDerivation& d,
                           const SmoothnessConstants& sc,
                           const DerivedConstants& dc, int K, int p,
                           RatePreset preset) {
  constexpr double tol = 1e-12;  // absorb roundoff in the re-derived caps
  const HyperParams& hp = d.hp;
  const double Kd = static_cast<double>(K);
  auto le = [](double v, double cap) { return v <= cap * (1.0 + 1e-12); };

  switch (preset) {
    case RatePreset::BsgmFixed: {
      const double a2 = hp.alpha * hp.alpha, b2 = hp.beta * hp.beta;
      const double rho2_cap = std::min(
          (6.0 * dc.L_tilde * dc.L_tilde / sc.mu) /
              (4.0 * dc.L_hat * dc.L_hat / a2 +
               400.0 * sc.L1 * sc.L1 * dc.L_tilde * dc.L_tilde /
                   (3.0 * b2 * sc.mu * sc.mu)),
          1.0 / (6.0 * sc.L1));
      const double rho1_cap = std::min(
          3.0 * hp.rho2 * sc.mu * sc.mu / (50.0 * sc.L1 * dc.L_tilde),
          0.25 / std::sqrt(4.0 * dc.L_hat * dc.L_hat / a2 +
                           500.0 * sc.L1 * sc.L1 * dc.L_tilde * dc.L_tilde /
                               (3.0 * b2 * sc.mu * sc.mu)));
      const double eta = d.schedule.eta(0);
      return le(hp.rho2, rho2_cap) && le(hp.rho1, rho1_cap) &&
             eta < bsgm_eta_cap(hp, dc, p) - tol &&
             d.schedule.kind == StepSchedule::Kind::Fixed;
    }
    case RatePreset::BsgvrmFixed: {
      const double cap = dc.L_hat * dc.L_hat / Kd;
      const double denom = vr_cap_denominator(sc, dc, hp.alpha, hp.beta, K);
      const double rho2_cap =
          std::min({1.0 / (6.0 * sc.L1),
                    (15.0 * dc.L_tilde * dc.L_tilde / sc.mu) / denom, 10.0});
      const double rho1_cap =
          std::min({hp.rho2 * sc.mu * sc.mu / (20.0 * dc.L_tilde * sc.L1),
                    0.5 / std::sqrt(denom), 10.0});
      const double eta = d.schedule.eta(0);
      const double eta_cap =
          std::min({1.0 / std::sqrt(hp.alpha), 1.0 / std::sqrt(hp.beta),
                    1.0 / (200.0 * static_cast<double>(p) * dc.L_hat)});
      return le(hp.alpha, cap) && le(hp.beta, cap) && le(hp.rho2, rho2_cap) &&
             le(hp.rho1, rho1_cap) && le(eta, eta_cap) &&
             d.schedule.kind == StepSchedule::Kind::Fixed;
    }
    case RatePreset::BsgvrmDecay: {
      const double pinned =
          dc.L_hat * dc.L_hat / (3.0 * static_cast<double>(p) * Kd * Kd) +
          dc.L_hat * dc.L_hat / Kd;
      const double rho2_cap =
          std::min({15.0 * sc.mu / 1174.0, 1.0 / (6.0 * sc.L1), 10.0});
      const double rho1_cap =
          std::min({hp.rho2 * sc.mu * sc.mu / (60.0 * sc.L1 * sc.L1),
                    sc.mu / (100.0 * dc.L_tilde), 10.0});
      bool ok = std::abs(hp.alpha - pinned) <= tol * (1.0 + pinned) &&
                std::abs(hp.beta - pinned) <= tol * (1.0 + pinned) &&
                le(hp.rho2, rho2_cap) && le(hp.rho1, rho1_cap) &&
                d.schedule.kind == StepSchedule::Kind::Decaying;
      // The schedule must keep the correction weights inside [0, 1] from the
      // first step on; eta is non-increasing so checking t=0 suffices.
      const double eta0 = d.schedule.eta(0);
      ok = ok && hp.alpha * eta0 * eta0 < 1.0 && hp.beta * eta0 * eta0 < 1.0;
      return ok;
    }
  }
  return false;
}

Algorithm parse_algorithm(const std::string& name) {
  if (name == "bsgm" || name == "LocalBSGM" || name == "localbsgm") {
    return Algorithm::LocalBSGM;
  }
  if (name == "bsgvrm" || name == "LocalBSGVRM" || name == "localbsgvrm") {
    return Algorithm::LocalBSGVRM;
  }
  throw std::invalid_argument("unknown algorithm '" + name +
                              "' (expected bsgm or bsgvrm)");
}

const char* algorithm_name(Algorithm a) {
  return a == Algorithm::LocalBSGM ? "bsgm" : "bsgvrm";
}

}  // namespace fedbilevel
