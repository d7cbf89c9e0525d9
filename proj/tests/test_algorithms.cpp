#include <cmath>
#include <stdexcept>

#include "doctest.h"
#include "fedbilevel/algorithms.hpp"
#include "fedbilevel/problems.hpp"

using namespace fedbilevel;

namespace {

// Scalar noise-free instance: A = 2, B = 1, b = 1, y_c = 1, lambda = 1.
// y*(x) = (x+1)/2, hypergradient (5x-1)/4, minimizer x* = 1/5.
QuadQuadOracle scalar_problem() {
  Mat A(1, 1), B(1, 1);
  A << 2.0;
  B << 1.0;
  return QuadQuadOracle(A, B, Vec::Ones(1), Vec::Ones(1), 1.0, 0.0);
}

NeumannConfig deep_series() { return NeumannConfig{0.45, 40}; }

SmoothnessConstants frozen_constants() {
  SmoothnessConstants sc;
  sc.mu = 1.0;
  sc.L0 = 1.0;
  sc.L1 = 2.0;
  sc.sigma = 0.5;
  return sc;
}

}  // namespace

TEST_CASE("algorithms: moving-average step mixes with weight alpha*eta") {
  auto o = scalar_problem();
  const NeumannConfig nc = deep_series();
  HyperParams hp;
  hp.alpha = 2.0;
  hp.beta = 1.0;
  hp.neumann = nc;
  RandomStream s{1, 0, 0};
  Vec x0(1), y0(1);
  x0 << 1.0;
  y0 << 0.0;
  EstimatorState st = bsgm_init(o, x0, y0, nc, s);
  // Noise-free draws are exact evaluations of the assembled estimator.
  RandomStream probe{9, 9, 0};
  const Vec d0 = stochastic_hypergradient(o, x0, y0, nc, probe);
  CHECK((st.u - d0).norm() < 1e-12);
  CHECK(st.v[0] == doctest::Approx(2.0 * 0.0 - 1.0 - 1.0));

  Vec x1(1), y1(1);
  x1 << 0.5;
  y1 << 0.25;
  bsgm_estimator_step(st, x1, y1, 0.25, hp, o, s);
  const Vec d1 = stochastic_hypergradient(o, x1, y1, nc, probe);
  const Vec g1 = Vec::Constant(1, 2.0 * 0.25 - 0.5 - 1.0);
  // wu = 0.5, wv = 0.25.
  CHECK(st.u[0] == doctest::Approx(0.5 * d0[0] + 0.5 * d1[0]));
  CHECK(st.v[0] == doctest::Approx(0.75 * -2.0 + 0.25 * g1[0]));
}

TEST_CASE("algorithms: mixing weight 1 replaces the estimate outright") {
  auto o = scalar_problem();
  const NeumannConfig nc = deep_series();
  HyperParams hp;
  hp.alpha = 2.0;
  hp.beta = 2.0;
  hp.neumann = nc;
  RandomStream s{3, 0, 0};
  EstimatorState st = bsgm_init(o, Vec::Zero(1), Vec::Zero(1), nc, s);
  st.u[0] = 123.0;  // must be forgotten entirely at weight 1
  st.v[0] = -7.0;
  Vec x(1), y(1);
  x << 2.0;
  y << 1.0;
  bsgm_estimator_step(st, x, y, 0.5, hp, o, s);
  RandomStream probe{5, 5, 0};
  CHECK(st.u[0] ==
        doctest::Approx(stochastic_hypergradient(o, x, y, nc, probe)[0]));
  CHECK(st.v[0] == doctest::Approx(2.0 * 1.0 - 2.0 - 1.0));

  // Weights above 1 are rejected.
  CHECK_THROWS_AS(bsgm_estimator_step(st, x, y, 0.6, hp, o, s),
                  std::invalid_argument);
}

TEST_CASE("algorithms: moving-average iteration reaches the fixed point") {
  auto o = scalar_problem();
  const NeumannConfig nc = deep_series();
  HyperParams hp;
  hp.alpha = 1.0;
  hp.beta = 1.0;
  hp.rho1 = 0.3;
  hp.rho2 = 0.5;
  hp.neumann = nc;
  const double eta = 0.5;
  RandomStream s{7, 0, 0};
  Vec x = Vec::Zero(1), y = Vec::Zero(1);
  EstimatorState st = bsgm_init(o, x, y, nc, s);
  for (int t = 0; t < 2000; ++t) {
    bsgm_estimator_step(st, x, y, eta, hp, o, s);
    local_update(x, y, st, eta, hp);
  }
  CHECK(x[0] == doctest::Approx(0.2).epsilon(1e-8));
  CHECK(y[0] == doctest::Approx(0.6).epsilon(1e-8));
}

TEST_CASE("algorithms: variance-reduced estimator is exact without noise") {
  auto o = scalar_problem();
  const NeumannConfig nc = deep_series();
  HyperParams hp;
  hp.alpha = 3.0;
  hp.beta = 3.0;
  hp.rho1 = 0.2;
  hp.rho2 = 0.4;
  hp.neumann = nc;
  RandomStream s{11, 0, 0};
  Vec x = Vec::Constant(1, 1.5);
  Vec y = o.exact_lower_solution(x);
  EstimatorState st = bsgvrm_init(o, x, y, nc, 4, s);
  const double eta = 0.3;
  for (int t = 0; t < 100; ++t) {
    local_update(x, y, st, eta, hp);
    bsgvrm_estimator_step(st, x, y, eta, hp, o, s);
    RandomStream probe{1, 1, 0};
    CHECK((st.u - stochastic_hypergradient(o, x, y, nc, probe)).norm() <
          1e-12);
    const double gy = 2.0 * y[0] - x[0] - 1.0;
    CHECK(std::abs(st.v[0] - gy) < 1e-12);
  }
}

TEST_CASE("algorithms: variance-reduced step needs an initialized state") {
  auto o = scalar_problem();
  HyperParams hp;
  hp.neumann = deep_series();
  EstimatorState st;  // never passed through bsgvrm_init
  RandomStream s{0, 0, 0};
  CHECK_THROWS_AS(
      bsgvrm_estimator_step(st, Vec::Zero(1), Vec::Zero(1), 0.1, hp, o, s),
      std::logic_error);
  CHECK_THROWS_AS(bsgvrm_init(o, Vec::Zero(1), Vec::Zero(1), hp.neumann, 0, s),
                  std::invalid_argument);
}

TEST_CASE("algorithms: local update applies the two-timescale steps") {
  HyperParams hp;
  hp.rho1 = 0.25;
  hp.rho2 = 0.5;
  EstimatorState st;
  st.u = Vec::Constant(2, 2.0);
  st.v = Vec::Constant(3, -1.0);
  Vec x = Vec::Ones(2), y = Vec::Zero(3);
  local_update(x, y, st, 0.4, hp);
  CHECK(x[0] == doctest::Approx(1.0 - 0.4 * 0.25 * 2.0));
  CHECK(y[0] == doctest::Approx(0.0 + 0.4 * 0.5 * 1.0));
}

TEST_CASE("algorithms: fixed-step preset matches the frozen derivation") {
  // Values recomputed independently from the stated formulas.
  const SmoothnessConstants sc = frozen_constants();
  NeumannConfig nc{0.45, 2};
  const DerivedConstants dc = derived_constants(sc, nc);
  CHECK(dc.L_hat == doctest::Approx(15.53319027115808).epsilon(1e-14));
  CHECK(dc.G == doctest::Approx(95.3849).epsilon(1e-14));

  const RateDerivation d =
      theorem_hyperparams(sc, dc, nc, 4, 4, RatePreset::BsgmFixed);
  CHECK(d.hp.alpha == 1.0);
  CHECK(d.hp.beta == 1.0);
  CHECK(d.hp.B == 1);
  CHECK(d.hp.rho1 ==
        doctest::Approx(5.3557826583724768e-05).epsilon(1e-14));
  CHECK(d.hp.rho2 == doctest::Approx(0.010711565316744954).epsilon(1e-14));
  CHECK(d.schedule.eta(0) ==
        doctest::Approx(0.17007361153004619).epsilon(1e-14));
  CHECK(d.schedule.eta(1000) == d.schedule.eta(0));
  CHECK(audit_rate_derivation(d, sc, dc, 4, 4, RatePreset::BsgmFixed));
}

TEST_CASE("algorithms: variance-reduced presets match the frozen derivation") {
  const SmoothnessConstants sc = frozen_constants();
  NeumannConfig nc{0.45, 2};
  const DerivedConstants dc = derived_constants(sc, nc);

  const RateDerivation f =
      theorem_hyperparams(sc, dc, nc, 4, 4, RatePreset::BsgvrmFixed);
  CHECK(f.hp.alpha == doctest::Approx(60.320000000000007).epsilon(1e-14));
  CHECK(f.hp.beta == doctest::Approx(f.hp.alpha));
  CHECK(f.hp.rho1 ==
        doctest::Approx(0.00034722222222222218).epsilon(1e-14));
  CHECK(f.hp.rho2 == doctest::Approx(1.0 / 12.0).epsilon(1e-14));
  CHECK(f.schedule.eta(5) ==
        doctest::Approx(8.0472844160094485e-05).epsilon(1e-14));
  CHECK(audit_rate_derivation(f, sc, dc, 4, 4, RatePreset::BsgvrmFixed));

  const RateDerivation g =
      theorem_hyperparams(sc, dc, nc, 4, 4, RatePreset::BsgvrmDecay);
  CHECK(g.hp.alpha == doctest::Approx(61.576666666666675).epsilon(1e-14));
  CHECK(g.hp.rho1 ==
        doctest::Approx(5.323679727427598e-05).epsilon(1e-14));
  CHECK(g.hp.rho2 == doctest::Approx(0.012776831345826235).epsilon(1e-14));
  // The schedule starts on its warmup plateau and later decays as t^(-1/3).
  CHECK(g.schedule.eta(0) ==
        doctest::Approx(8.0472844160094526e-05).epsilon(1e-12));
  CHECK(audit_rate_derivation(g, sc, dc, 4, 4, RatePreset::BsgvrmDecay));
}

TEST_CASE("algorithms: preset overrides reach the free parameters only") {
  const SmoothnessConstants sc = frozen_constants();
  NeumannConfig nc{0.45, 2};
  const DerivedConstants dc = derived_constants(sc, nc);
  const RateDerivation d = theorem_hyperparams(
      sc, dc, nc, 2, 1, RatePreset::BsgmFixed, 2.0, 0.5, 0);
  CHECK(d.hp.alpha == 2.0);
  CHECK(d.hp.beta == 0.5);
  CHECK(d.hp.B == 1);  // forced: the moving-average method has no init batch
  const RateDerivation v = theorem_hyperparams(
      sc, dc, nc, 2, 1, RatePreset::BsgvrmFixed, 0.0, 0.0, 64);
  CHECK(v.hp.B == 64);
}

TEST_CASE("algorithms: audit rejects tampered derivations") {
  const SmoothnessConstants sc = frozen_constants();
  NeumannConfig nc{0.45, 2};
  const DerivedConstants dc = derived_constants(sc, nc);
  for (RatePreset preset :
       {RatePreset::BsgmFixed, RatePreset::BsgvrmFixed,
        RatePreset::BsgvrmDecay}) {
    RateDerivation d = theorem_hyperparams(sc, dc, nc, 4, 4, preset);
    CHECK(audit_rate_derivation(d, sc, dc, 4, 4, preset));
    d.hp.rho1 *= 4.0;
    CHECK_FALSE(audit_rate_derivation(d, sc, dc, 4, 4, preset));
  }
}

TEST_CASE("algorithms: decaying schedule is monotone with bounded weights") {
  const SmoothnessConstants sc = frozen_constants();
  NeumannConfig nc{0.45, 2};
  const DerivedConstants dc = derived_constants(sc, nc);
  const RateDerivation d =
      theorem_hyperparams(sc, dc, nc, 3, 2, RatePreset::BsgvrmDecay);
  double prev = d.schedule.eta(0);
  for (long t = 1; t <= 200000; t = t * 3 / 2 + 1) {
    const double e = d.schedule.eta(t);
    CHECK(e <= prev);
    CHECK(d.hp.alpha * e * e < 1.0);
    prev = e;
  }
  CHECK_THROWS_AS(d.schedule.eta(-1), std::invalid_argument);
}

TEST_CASE("algorithms: schedule and parameter validation") {
  CHECK_THROWS_AS(StepSchedule::fixed(0.0), std::invalid_argument);
  CHECK_THROWS_AS(StepSchedule::decaying(0, 1, 1.0, 0.1, 1.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(StepSchedule::decaying(1, 1, -1.0, 0.1, 1.0),
                  std::invalid_argument);
  CHECK(StepSchedule::fixed(0.2).eta(12345) == 0.2);

  SmoothnessConstants sc = frozen_constants();
  HyperParams hp;
  hp.neumann = NeumannConfig{0.45, 2};
  CHECK_NOTHROW(hp.validate(sc));
  hp.alpha = 0.0;
  CHECK_THROWS_AS(hp.validate(sc), std::invalid_argument);
  hp.alpha = 1.0;
  hp.p = 0;
  CHECK_THROWS_AS(hp.validate(sc), std::invalid_argument);
  hp.p = 1;
  hp.B = 0;
  CHECK_THROWS_AS(hp.validate(sc), std::invalid_argument);
}

TEST_CASE("algorithms: names parse both ways") {
  CHECK(parse_algorithm("bsgm") == Algorithm::LocalBSGM);
  CHECK(parse_algorithm("bsgvrm") == Algorithm::LocalBSGVRM);
  CHECK(algorithm_name(Algorithm::LocalBSGM) == std::string("bsgm"));
  CHECK(algorithm_name(Algorithm::LocalBSGVRM) == std::string("bsgvrm"));
  CHECK_THROWS_AS(parse_algorithm("sgd"), std::invalid_argument);
}
