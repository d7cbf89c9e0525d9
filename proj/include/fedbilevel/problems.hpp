#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "fedbilevel/random.hpp"
#include "fedbilevel/types.hpp"

namespace fedbilevel {

// Smoothness/convexity constants a problem declares about itself over its
// bounded reference region ||x||, ||y|| <= region_radius:
//   mu   strong convexity of the lower objective in y
//   L0   bound on the upper gradient norm
//   L1   Lipschitz constant of both gradients (and lower Hessian norm bound)
//   L21  Lipschitz constant of the mixed second derivative
//   L22  Lipschitz constant of the lower Hessian
//   sigma  bound on sqrt(E ||stochastic gradient - mean gradient||^2)
struct SmoothnessConstants {
  double mu = 1.0;
  double L0 = 1.0;
  double L1 = 1.0;
  double L21 = 0.0;
  double L22 = 0.0;
  double sigma = 0.0;

  // Throws std::invalid_argument if mu <= 0, L1 < mu, or anything negative.
  void validate() const;
};

// One stochastic oracle query: an evaluation point plus the stream the call
// may consume draws from. Streams advance by a per-operation count that is
// fixed for a given problem, so two calls starting from equal stream states
// see the same sample.
struct OracleQuery {
  const Vec& x;
  const Vec& y;
  RandomStream& stream;
};

// Stochastic first/second-order oracle of one bilevel problem
//
//   min_x  F(x) = f(x, y*(x))   s.t.  y*(x) = argmin_y g(x, y)
//
// f is the upper objective (sampled via xi), g the lower objective (sampled
// via zeta). All devices in a federation share one oracle instance and differ
// only in the streams they pass in; implementations must therefore be
// state-free across calls (const methods, no caches keyed by call order).
class BilevelOracle {
 public:
  virtual ~BilevelOracle() = default;

  virtual Eigen::Index dim_x() const = 0;
  virtual Eigen::Index dim_y() const = 0;
  virtual double noise_std() const = 0;
  virtual const SmoothnessConstants& constants() const = 0;

  virtual bool has_exact_lower_solution() const { return false; }
  virtual bool has_exact_hypergradient() const { return false; }

  // Stochastic derivative oracles. Each call consumes a fixed number of
  // counter ticks: grad_x_f / grad_y_f consume upper_draws() and share the
  // same sample when called with equal stream states; the lower-level calls
  // consume lower_draws() each.
  virtual Vec grad_x_f(const OracleQuery& q) const = 0;
  virtual Vec grad_y_f(const OracleQuery& q) const = 0;
  virtual Vec grad_y_g(const OracleQuery& q) const = 0;
  // Lower Hessian-vector product d^2g/dy^2 * v (matrix-free).
  virtual Vec hvp_yy_g(const OracleQuery& q, const Vec& v) const = 0;
  // Mixed product d^2g/dxdy * v, mapping a y-space vector into x-space.
  virtual Vec jvp_xy_g(const OracleQuery& q, const Vec& v) const = 0;

  // Counter ticks consumed per upper / lower sample draw.
  virtual std::uint64_t upper_draws() const = 0;
  virtual std::uint64_t lower_draws() const = 0;

  // Mean upper objective value E_xi f(x, y; xi). Deliberately value-only:
  // composing it with exact_lower_solution gives an implied-objective oracle
  // that shares no code with the assembled hypergradient.
  virtual double upper_value(const Vec& x, const Vec& y) const = 0;

  // Optional closed forms; throw CapabilityError when the corresponding
  // has_* flag is false.
  virtual Vec exact_lower_solution(const Vec& x) const;
  virtual Vec exact_hypergradient(const Vec& x) const;

  // Fault-injection hook for suite sensitivity checks: the assembled
  // hypergradient (exact and stochastic) multiplies its correction term by
  // this sign. +1 in every real configuration.
  virtual double correction_sign() const { return 1.0; }

 protected:
  // Shared argument validation for implementations.
  void check_dims(const Vec& x, const Vec& y) const;
  void check_vec(const Vec& v, Eigen::Index want, const char* what) const;
};

// ---------------------------------------------------------------------------
// Quadratic/quadratic test family with closed-form everything:
//
//   g(x, y; zeta) = 1/2 y'Ay - y'(Bx + b + zeta)
//   f(x, y; xi)   = 1/2 ||y - y_c||^2 + lambda/2 ||x||^2 + xi'y
//
// A is symmetric with spectrum inside [mu, L1]; both noise vectors are
// Gaussian with total variance noise_std^2 (per-entry std noise_std/sqrt(d)),
// so the declared sigma matches E||zeta||^2 exactly. y*(x) = A^{-1}(Bx + b).
// ---------------------------------------------------------------------------
struct QuadQuadConfig {
  Eigen::Index dim_x = 10;
  Eigen::Index dim_y = 10;
  double mu = 1.0;
  double L1 = 2.0;
  double lambda = 1.0;       // upper-level ridge weight
  double b_scale = 0.0;      // entries of b drawn N(0, b_scale^2)
  double B_scale = 1.0;      // B = B_scale * I (rectangular identity)
  double yc_scale = 0.0;     // entries of y_c drawn N(0, yc_scale^2)
  double noise_std = 0.0;
  double region_radius = 10.0;
  std::uint64_t gen_seed = 1234;  // stream seed for generating A, b, y_c
  bool flip_hypergradient_correction = false;  // fault-injection mode
};

class QuadQuadOracle final : public BilevelOracle {
 public:
  explicit QuadQuadOracle(const QuadQuadConfig& cfg);

  // Construct from explicit matrices (used by hand-computed tests).
  QuadQuadOracle(Mat A, Mat B, Vec b, Vec y_c, double lambda,
                 double noise_std, double region_radius = 10.0);

  Eigen::Index dim_x() const override { return B_.cols(); }
  Eigen::Index dim_y() const override { return A_.rows(); }
  double noise_std() const override { return noise_std_; }
  const SmoothnessConstants& constants() const override { return sc_; }

  bool has_exact_lower_solution() const override { return true; }
  bool has_exact_hypergradient() const override { return true; }

  Vec grad_x_f(const OracleQuery& q) const override;
  Vec grad_y_f(const OracleQuery& q) const override;
  Vec grad_y_g(const OracleQuery& q) const override;
  Vec hvp_yy_g(const OracleQuery& q, const Vec& v) const override;
  Vec jvp_xy_g(const OracleQuery& q, const Vec& v) const override;

  std::uint64_t upper_draws() const override {
    return static_cast<std::uint64_t>(dim_y());
  }
  std::uint64_t lower_draws() const override {
    return static_cast<std::uint64_t>(dim_y());
  }

  double upper_value(const Vec& x, const Vec& y) const override;
  Vec exact_lower_solution(const Vec& x) const override;
  Vec exact_hypergradient(const Vec& x) const override;

  double correction_sign() const override { return flip_ ? -1.0 : 1.0; }

  const Mat& A() const { return A_; }
  const Mat& B() const { return B_; }
  const Vec& b() const { return b_; }
  const Vec& y_c() const { return y_c_; }
  double lambda() const { return lambda_; }

 private:
  void finish_setup(double region_radius);

  Mat A_;
  Mat B_;
  Vec b_;
  Vec y_c_;
  double lambda_ = 0.0;
  double noise_std_ = 0.0;
  double entry_std_ = 0.0;  // noise_std / sqrt(dim_y)
  bool flip_ = false;
  SmoothnessConstants sc_;
  Eigen::LLT<Mat> A_llt_;
};

// ---------------------------------------------------------------------------
// Hyperparameter tuning for ridge regression: x holds per-feature log
// regularization weights, y the regression coefficients.
//
//   g(x, y; i) = 1/2 (a_i'y - t_i)^2 + 1/2 sum_j exp(x_j) y_j^2   (train row i)
//   f(x, y; j) = 1/2 (a_j'y - t_j)^2                              (val row j)
//
// Rows are drawn uniformly from the respective split. Closed forms exist via
// the normal equations, so the exact metric is available for monitoring.
// ---------------------------------------------------------------------------
struct Dataset {
  Mat features;  // one row per sample
  Vec targets;

  Eigen::Index rows() const { return features.rows(); }
  Eigen::Index cols() const { return features.cols(); }
};

// Load a dataset from CSV: UTF-8, comma separated, header row, one column
// named `target_column`, all remaining columns numeric features. Throws
// std::runtime_error naming the offending row/column on malformed input.
Dataset load_csv_dataset(const std::string& path,
                         const std::string& target_column = "target");

// Standard normal features, targets from a random linear model plus noise.
Dataset synth_dataset(Eigen::Index n_samples, Eigen::Index n_features,
                      double target_noise, std::uint64_t gen_seed);

struct RidgeHyperConfig {
  double train_fraction = 0.7;
  std::uint64_t split_seed = 17;
  double region_radius = 2.0;  // declared constants cover ||x||_inf <= radius
};

class RidgeHyperOracle final : public BilevelOracle {
 public:
  RidgeHyperOracle(Dataset data, const RidgeHyperConfig& cfg);

  Eigen::Index dim_x() const override { return n_features_; }
  Eigen::Index dim_y() const override { return n_features_; }
  double noise_std() const override { return sc_.sigma; }
  const SmoothnessConstants& constants() const override { return sc_; }

  bool has_exact_lower_solution() const override { return true; }
  bool has_exact_hypergradient() const override { return true; }

  Vec grad_x_f(const OracleQuery& q) const override;
  Vec grad_y_f(const OracleQuery& q) const override;
  Vec grad_y_g(const OracleQuery& q) const override;
  Vec hvp_yy_g(const OracleQuery& q, const Vec& v) const override;
  Vec jvp_xy_g(const OracleQuery& q, const Vec& v) const override;

  std::uint64_t upper_draws() const override { return 1; }
  std::uint64_t lower_draws() const override { return 1; }

  double upper_value(const Vec& x, const Vec& y) const override;
  Vec exact_lower_solution(const Vec& x) const override;
  Vec exact_hypergradient(const Vec& x) const override;

  // Full-split means, used by unbiasedness tests and the closed forms.
  Vec full_grad_y_g(const Vec& x, const Vec& y) const;
  Vec full_grad_y_f(const Vec& y) const;

  Eigen::Index train_rows() const { return train_.rows(); }
  Eigen::Index val_rows() const { return val_.rows(); }

 private:
  Mat lower_hessian(const Vec& x) const;

  Dataset train_;
  Dataset val_;
  Eigen::Index n_features_ = 0;
  Mat train_gram_;   // mean of a_i a_i' over the training split
  Vec train_rhs_;    // mean of a_i t_i
  Mat val_gram_;
  Vec val_rhs_;
  double region_radius_ = 2.0;
  SmoothnessConstants sc_;
};

}  // namespace fedbilevel
