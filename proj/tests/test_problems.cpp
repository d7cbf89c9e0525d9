#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <Eigen/Dense>

#include "doctest.h"
#include "fedbilevel/finite_diff.hpp"
#include "fedbilevel/problems.hpp"

using namespace fedbilevel;

namespace {

// 1-d instance with A = 2, B = 1, b = 0, y_c = 0: y*(x) = x/2.
QuadQuadOracle scalar_oracle(double lambda = 0.0, double noise = 0.0) {
  Mat A(1, 1), B(1, 1);
  A << 2.0;
  B << 1.0;
  return QuadQuadOracle(A, B, Vec::Zero(1), Vec::Zero(1), lambda, noise);
}

Vec vec2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

}  // namespace

TEST_CASE("quadquad: noise-free derivatives match hand values") {
  auto o = scalar_oracle(/*lambda=*/0.5);
  RandomStream s{1, 0, 0};
  Vec x(1), y(1);
  x << 1.0;
  y << 1.0;
  // grad_y g = A y - (B x + b) = 2 - 1.
  CHECK(o.grad_y_g(OracleQuery{x, y, s})[0] == doctest::Approx(1.0));
  // grad_x f = lambda x.
  CHECK(o.grad_x_f(OracleQuery{x, y, s})[0] == doctest::Approx(0.5));
  // grad_y f = y - y_c.
  CHECK(o.grad_y_f(OracleQuery{x, y, s})[0] == doctest::Approx(1.0));
  CHECK(o.upper_value(x, y) == doctest::Approx(0.5 + 0.5 * 0.5 * 1.0));
}

TEST_CASE("quadquad: second-order products are the declared matrices") {
  Mat A = vec2(2.0, 3.0).asDiagonal();
  Mat B = 2.0 * Mat::Identity(2, 2);
  QuadQuadOracle o(A, B, Vec::Zero(2), Vec::Zero(2), 0.0, 0.0);
  RandomStream s{1, 0, 0};
  const Vec x = vec2(0.0, 0.0);
  const Vec y = vec2(0.0, 0.0);
  const Vec hv = o.hvp_yy_g(OracleQuery{x, y, s}, vec2(1.0, 1.0));
  CHECK(hv[0] == doctest::Approx(2.0));
  CHECK(hv[1] == doctest::Approx(3.0));
  // Mixed block of g is -B', so the product maps v to -B'v.
  const Vec jv = o.jvp_xy_g(OracleQuery{x, y, s}, vec2(1.0, 2.0));
  CHECK(jv[0] == doctest::Approx(-2.0));
  CHECK(jv[1] == doctest::Approx(-4.0));
}

TEST_CASE("quadquad: exact lower solution solves the linear system") {
  Mat A = vec2(1.0, 2.0).asDiagonal();
  Mat B = Mat::Identity(2, 2);
  Vec b = vec2(1.0, 1.0);
  QuadQuadOracle o(A, B, b, Vec::Zero(2), 0.0, 0.0);
  const Vec ystar = o.exact_lower_solution(vec2(1.0, 1.0));
  CHECK(ystar[0] == doctest::Approx(2.0));
  CHECK(ystar[1] == doctest::Approx(1.0));
}

TEST_CASE("quadquad: exact hypergradient matches the scalar closed form") {
  // With A = 2, B = 1, b = y_c = 0, lambda = 0: F(x) = x^2 / 8.
  auto o = scalar_oracle();
  Vec x(1);
  x << 4.0;
  CHECK(o.exact_hypergradient(x)[0] == doctest::Approx(1.0));

  // And against central differences of the implied objective.
  auto implied = [&](const Vec& z) {
    return o.upper_value(z, o.exact_lower_solution(z));
  };
  const Vec fd = finite_diff_grad(implied, x);
  CHECK(fd[0] == doctest::Approx(1.0).epsilon(1e-7));
}

TEST_CASE("quadquad: generated instances honor the declared spectrum") {
  QuadQuadConfig cfg;
  cfg.dim_x = 6;
  cfg.dim_y = 8;
  cfg.mu = 0.5;
  cfg.L1 = 3.0;
  cfg.b_scale = 1.0;
  cfg.yc_scale = 2.0;
  cfg.gen_seed = 77;
  QuadQuadOracle o(cfg);
  CHECK(o.dim_x() == 6);
  CHECK(o.dim_y() == 8);
  CHECK(o.A().isApprox(o.A().transpose(), 1e-12));
  Eigen::SelfAdjointEigenSolver<Mat> es(o.A());
  CHECK(es.eigenvalues().minCoeff() == doctest::Approx(0.5));
  CHECK(es.eigenvalues().maxCoeff() == doctest::Approx(3.0));
  CHECK(o.constants().mu == doctest::Approx(0.5));
  CHECK(o.constants().L1 >= 3.0);

  // Same seed regenerates the same instance, different seed does not.
  QuadQuadOracle same(cfg);
  CHECK((o.A() - same.A()).norm() == 0.0);
  cfg.gen_seed = 78;
  QuadQuadOracle other(cfg);
  CHECK((o.A() - other.A()).norm() > 0.0);
}

TEST_CASE("quadquad: stochastic gradients are unbiased with matching variance") {
  QuadQuadConfig cfg;
  cfg.dim_x = 4;
  cfg.dim_y = 4;
  cfg.b_scale = 1.0;
  cfg.noise_std = 0.7;
  cfg.gen_seed = 5;
  QuadQuadOracle o(cfg);
  RandomStream s{21, 0, 0};
  const Vec x = Vec::Ones(4);
  const Vec y = Vec::Ones(4);

  RandomStream clean{21, 0, 0};
  QuadQuadOracle noiseless(o.A(), o.B(), o.b(), o.y_c(), 0.0, 0.0);
  const Vec mean_g = noiseless.grad_y_g(OracleQuery{x, y, clean});

  const int n = 40000;
  Vec acc = Vec::Zero(4);
  double dev2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const Vec g = o.grad_y_g(OracleQuery{x, y, s});
    acc += g;
    dev2 += (g - mean_g).squaredNorm();
  }
  acc /= n;
  // CLT band: the per-draw deviation has total variance noise_std^2.
  CHECK((acc - mean_g).norm() < 5.0 * 0.7 / std::sqrt(static_cast<double>(n)));
  CHECK(std::abs(dev2 / n - 0.49) < 5.0 * 0.49 * std::sqrt(8.0 / n));
}

TEST_CASE("quadquad: correction flip negates exactly the correction term") {
  QuadQuadConfig cfg;
  cfg.dim_x = 3;
  cfg.dim_y = 3;
  cfg.lambda = 0.8;
  cfg.b_scale = 1.0;
  cfg.yc_scale = 1.0;
  cfg.gen_seed = 9;
  QuadQuadOracle plain(cfg);
  cfg.flip_hypergradient_correction = true;
  QuadQuadOracle flipped(cfg);
  const Vec x = vec2(1.0, -2.0).homogeneous();  // (1, -2, 1)
  const Vec sum = plain.exact_hypergradient(x) + flipped.exact_hypergradient(x);
  // The lambda*x part survives in both, the correction cancels.
  CHECK((sum - 2.0 * 0.8 * x).norm() < 1e-12);
}

TEST_CASE("quadquad: invalid construction is rejected") {
  Mat bad(2, 2);
  bad << 1.0, 0.5, 0.0, 1.0;  // not symmetric
  CHECK_THROWS_AS(
      QuadQuadOracle(bad, Mat::Identity(2, 2), Vec::Zero(2), Vec::Zero(2), 0.0,
                     0.0),
      std::invalid_argument);
  Mat indef = vec2(1.0, -1.0).asDiagonal();
  CHECK_THROWS_AS(
      QuadQuadOracle(indef, Mat::Identity(2, 2), Vec::Zero(2), Vec::Zero(2),
                     0.0, 0.0),
      std::invalid_argument);
  QuadQuadConfig cfg;
  cfg.mu = 2.0;
  cfg.L1 = 1.0;
  CHECK_THROWS_AS(QuadQuadOracle{cfg}, std::invalid_argument);

  auto o = scalar_oracle();
  RandomStream s{0, 0, 0};
  CHECK_THROWS_AS(o.grad_y_g(OracleQuery{Vec::Zero(2), Vec::Zero(1), s}),
                  std::invalid_argument);
  CHECK_THROWS_AS(o.exact_lower_solution(Vec::Zero(3)), std::invalid_argument);
}

TEST_CASE("dataset: csv loader round-trips and validates") {
  const char* path = "test_dataset_tmp.csv";
  {
    std::ofstream f(path);
    f << "f0,f1,target\n";
    f << "1.0,2.0,3.0\n";
    f << "4.0,5.0,6.0\n";
    f << "7.0,8.0,9.0\n";
  }
  const Dataset d = load_csv_dataset(path);
  CHECK(d.rows() == 3);
  CHECK(d.cols() == 2);
  CHECK(d.features(1, 1) == doctest::Approx(5.0));
  CHECK(d.targets[2] == doctest::Approx(9.0));

  // Target column selected by name, not position.
  {
    std::ofstream f(path);
    f << "target,f0\n0.5,1.5\n2.5,3.5\n";
  }
  const Dataset d2 = load_csv_dataset(path);
  CHECK(d2.targets[0] == doctest::Approx(0.5));
  CHECK(d2.features(1, 0) == doctest::Approx(3.5));

  CHECK_THROWS_AS(load_csv_dataset("no_such_file.csv"), std::runtime_error);
  CHECK_THROWS_AS(load_csv_dataset(path, "absent"), std::runtime_error);
  {
    std::ofstream f(path);
    f << "f0,target\n1.0\n";  // ragged row
  }
  CHECK_THROWS_AS(load_csv_dataset(path), std::runtime_error);
  {
    std::ofstream f(path);
    f << "f0,target\nx,1.0\n";  // non-numeric cell
  }
  CHECK_THROWS_AS(load_csv_dataset(path), std::runtime_error);
  std::remove(path);
}

TEST_CASE("dataset: synthesis is deterministic in the seed") {
  const Dataset a = synth_dataset(50, 6, 0.1, 4);
  const Dataset b = synth_dataset(50, 6, 0.1, 4);
  const Dataset c = synth_dataset(50, 6, 0.1, 5);
  CHECK(a.rows() == 50);
  CHECK(a.cols() == 6);
  CHECK((a.features - b.features).norm() == 0.0);
  CHECK((a.targets - b.targets).norm() == 0.0);
  CHECK((a.features - c.features).norm() > 0.0);
}

TEST_CASE("ridge: deterministic rows expose the closed-form gradients") {
  // Every row identical, so sampled and mean gradients coincide.
  Dataset d;
  d.features.resize(4, 2);
  d.targets.resize(4);
  for (int i = 0; i < 4; ++i) {
    d.features.row(i) << 1.0, 2.0;
    d.targets[i] = 3.0;
  }
  RidgeHyperConfig cfg;
  cfg.train_fraction = 0.5;
  RidgeHyperOracle o(d, cfg);
  RandomStream s{1, 0, 0};
  const Vec x = vec2(0.0, std::log(2.0));
  const Vec y = vec2(1.0, 1.0);

  // grad_y g = a (a'y - t) + exp(x) .* y with a = (1,2), t = 3.
  const Vec gy = o.grad_y_g(OracleQuery{x, y, s});
  CHECK(gy[0] == doctest::Approx(0.0 + 1.0));
  CHECK(gy[1] == doctest::Approx(0.0 + 2.0));
  // grad_y f = a (a'y - t) on the validation split, identical rows again.
  const Vec fy = o.grad_y_f(OracleQuery{x, y, s});
  CHECK(fy[0] == doctest::Approx(0.0));
  // hvp adds the diagonal regularizer.
  const Vec hv = o.hvp_yy_g(OracleQuery{x, y, s}, vec2(1.0, 0.0));
  CHECK(hv[0] == doctest::Approx(1.0 + 1.0));
  CHECK(hv[1] == doctest::Approx(2.0 + 0.0));
  // jvp is diag(exp(x) .* y) applied to v.
  const Vec jv = o.jvp_xy_g(OracleQuery{x, y, s}, vec2(1.0, 1.0));
  CHECK(jv[0] == doctest::Approx(1.0));
  CHECK(jv[1] == doctest::Approx(2.0));
  // f never depends on x directly.
  CHECK(o.grad_x_f(OracleQuery{x, y, s}).norm() == 0.0);
}

TEST_CASE("ridge: exact lower solution zeroes the mean lower gradient") {
  const Dataset d = synth_dataset(60, 5, 0.2, 11);
  RidgeHyperOracle o(d, RidgeHyperConfig{});
  RandomStream s{2, 0, 0};
  const Vec x = Vec::Constant(5, -0.3);
  const Vec ystar = o.exact_lower_solution(x);
  // Average many sampled gradients at y*; the mean must vanish.
  Vec acc = Vec::Zero(5);
  const int n = 20000;
  for (int i = 0; i < n; ++i) acc += o.grad_y_g(OracleQuery{x, ystar, s});
  CHECK((acc / n).norm() < 5.0 * o.constants().sigma / std::sqrt(double(n)));
}

TEST_CASE("ridge: exact hypergradient matches finite differences") {
  const Dataset d = synth_dataset(80, 4, 0.1, 23);
  RidgeHyperOracle o(d, RidgeHyperConfig{});
  const Vec x = Vec::Constant(4, 0.2);
  auto implied = [&](const Vec& z) {
    return o.upper_value(z, o.exact_lower_solution(z));
  };
  const Vec fd = finite_diff_grad(implied, x);
  const Vec hg = o.exact_hypergradient(x);
  CHECK((fd - hg).norm() <= 1e-6 * (1.0 + hg.norm()));
}

TEST_CASE("ridge: construction validates the split") {
  Dataset d = synth_dataset(10, 3, 0.1, 1);
  RidgeHyperConfig cfg;
  cfg.train_fraction = 1.5;
  CHECK_THROWS_AS(RidgeHyperOracle(d, cfg), std::invalid_argument);
  Dataset tiny;
  tiny.features.resize(1, 2);
  tiny.targets.resize(1);
  CHECK_THROWS_AS(RidgeHyperOracle(tiny, RidgeHyperConfig{}),
                  std::invalid_argument);
}
