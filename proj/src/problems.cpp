#include "fedbilevel/problems.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <utility>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>

namespace fedbilevel {

namespace {

// Reserved stream ids for non-device consumers. Device streams use the
// device index, so anything far above a plausible device count is safe.
constexpr std::uint64_t kMatrixGenStream = 1000000007ull;
constexpr std::uint64_t kDataGenStream = 1000000009ull;
constexpr std::uint64_t kSplitStream = 1000000011ull;

double spectral_norm(const Mat& m) {
  if (m.rows() == 0 || m.cols() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Mat> es(m.transpose() * m);
  return std::sqrt(std::max(0.0, es.eigenvalues().maxCoeff()));
}

}  // namespace

void SmoothnessConstants::validate() const {
  if (!(mu > 0.0)) {
    throw std::invalid_argument("SmoothnessConstants: mu must be positive");
  }
  if (L1 < mu) {
    throw std::invalid_argument("SmoothnessConstants: L1 must be >= mu");
  }
  if (L0 < 0.0 || L21 < 0.0 || L22 < 0.0 || sigma < 0.0) {
    throw std::invalid_argument(
        "SmoothnessConstants: L0, L21, L22, sigma must be non-negative");
  }
}

Vec BilevelOracle::exact_lower_solution(const Vec&) const {
  throw CapabilityError("oracle does not provide an exact lower solution");
}

Vec BilevelOracle::exact_hypergradient(const Vec&) const {
  throw CapabilityError("oracle does not provide an exact hypergradient");
}

void BilevelOracle::check_dims(const Vec& x, const Vec& y) const {
  if (x.size() != dim_x()) {
    throw std::invalid_argument("oracle query: x has dimension " +
                                std::to_string(x.size()) + ", expected " +
                                std::to_string(dim_x()));
  }
  if (y.size() != dim_y()) {
    throw std::invalid_argument("oracle query: y has dimension " +
                                std::to_string(y.size()) + ", expected " +
                                std::to_string(dim_y()));
  }
}

void BilevelOracle::check_vec(const Vec& v, Eigen::Index want,
                              const char* what) const {
  if (v.size() != want) {
    throw std::invalid_argument(std::string("oracle query: ") + what +
                                " has dimension " + std::to_string(v.size()) +
                                ", expected " + std::to_string(want));
  }
}

// ---------------------------------------------------------------------------
// QuadQuadOracle
// ---------------------------------------------------------------------------

QuadQuadOracle::QuadQuadOracle(const QuadQuadConfig& cfg) {
  if (cfg.dim_x < 1 || cfg.dim_y < 1) {
    throw std::invalid_argument("QuadQuad: dimensions must be positive");
  }
  if (!(cfg.mu > 0.0) || cfg.L1 < cfg.mu) {
    throw std::invalid_argument("QuadQuad: need 0 < mu <= L1");
  }
  if (cfg.noise_std < 0.0 || cfg.lambda < 0.0) {
    throw std::invalid_argument("QuadQuad: lambda and noise_std must be >= 0");
  }

  const Eigen::Index d = cfg.dim_y;
  RandomStream gen{cfg.gen_seed, kMatrixGenStream, 0};

  // A = U diag(eigs) U' with a random orthogonal U and eigenvalues pinned to
  // the declared interval endpoints so mu and L1 are tight.
  Vec eigs(d);
  eigs[0] = cfg.mu;
  if (d > 1) eigs[d - 1] = cfg.L1;
  for (Eigen::Index i = 1; i + 1 < d; ++i) {
    eigs[i] = cfg.mu + (cfg.L1 - cfg.mu) * uniform01(gen);
  }
  Mat G(d, d);
  for (Eigen::Index c = 0; c < d; ++c) {
    G.col(c) = gaussian_vec(gen, d, 1.0);
  }
  const Mat U = Eigen::HouseholderQR<Mat>(G).householderQ();
  A_ = U * eigs.asDiagonal() * U.transpose();
  A_ = 0.5 * (A_ + A_.transpose());  // keep exactly symmetric

  B_ = Mat::Zero(cfg.dim_y, cfg.dim_x);
  for (Eigen::Index i = 0; i < std::min(cfg.dim_x, cfg.dim_y); ++i) {
    B_(i, i) = cfg.B_scale;
  }
  b_ = gaussian_vec(gen, d, cfg.b_scale);
  y_c_ = gaussian_vec(gen, d, cfg.yc_scale);
  lambda_ = cfg.lambda;
  noise_std_ = cfg.noise_std;
  flip_ = cfg.flip_hypergradient_correction;

  sc_.mu = cfg.mu;
  sc_.L1 = cfg.L1;
  finish_setup(cfg.region_radius);
}

QuadQuadOracle::QuadQuadOracle(Mat A, Mat B, Vec b, Vec y_c, double lambda,
                               double noise_std, double region_radius)
    : A_(std::move(A)),
      B_(std::move(B)),
      b_(std::move(b)),
      y_c_(std::move(y_c)),
      lambda_(lambda),
      noise_std_(noise_std) {
  if (A_.rows() != A_.cols() || !A_.isApprox(A_.transpose(), 1e-12)) {
    throw std::invalid_argument("QuadQuad: A must be symmetric");
  }
  if (B_.rows() != A_.rows() || b_.size() != A_.rows() ||
      y_c_.size() != A_.rows()) {
    throw std::invalid_argument("QuadQuad: inconsistent matrix dimensions");
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(A_);
  sc_.mu = es.eigenvalues().minCoeff();
  sc_.L1 = es.eigenvalues().maxCoeff();
  if (!(sc_.mu > 0.0)) {
    throw std::invalid_argument("QuadQuad: A must be positive definite");
  }
  finish_setup(region_radius);
}

void QuadQuadOracle::finish_setup(double region_radius) {
  entry_std_ = noise_std_ / std::sqrt(static_cast<double>(A_.rows()));
  // The declared L1 also has to dominate the coupling block so the
  // hypergradient bias bound L0*L1/mu * (1-theta*mu)^(Q+1) is valid.
  sc_.L1 = std::max(sc_.L1, spectral_norm(B_));
  const double r = region_radius;
  // sup over ||x||,||y|| <= r of ||(lambda x, y - y_c)||, noise-free part.
  sc_.L0 = std::hypot(lambda_ * r, r + y_c_.norm());
  sc_.L21 = 0.0;  // both second derivatives are constant matrices
  sc_.L22 = 0.0;
  sc_.sigma = noise_std_;
  sc_.validate();
  A_llt_.compute(A_);
  if (A_llt_.info() != Eigen::Success) {
    throw std::invalid_argument("QuadQuad: A is not positive definite");
  }
}

Vec QuadQuadOracle::grad_x_f(const OracleQuery& q) const {
  check_dims(q.x, q.y);
  // The xi sample only enters the y-gradient; skipping keeps this call
  // aligned with grad_y_f so both see the same sample at equal stream state.
  skip_draws(q.stream, upper_draws());
  return lambda_ * q.x;
}

Vec QuadQuadOracle::grad_y_f(const OracleQuery& q) const {
  check_dims(q.x, q.y);
  const Vec xi = gaussian_vec(q.stream, dim_y(), entry_std_);
  return q.y - y_c_ + xi;
}

Vec QuadQuadOracle::grad_y_g(const OracleQuery& q) const {
  check_dims(q.x, q.y);
  const Vec zeta = gaussian_vec(q.stream, dim_y(), entry_std_);
  return A_ * q.y - B_ * q.x - b_ - zeta;
}

Vec QuadQuadOracle::hvp_yy_g(const OracleQuery& q, const Vec& v) const {
  check_dims(q.x, q.y);
  check_vec(v, dim_y(), "hvp input");
  skip_draws(q.stream, lower_draws());  // Hessian is sample-independent
  return A_ * v;
}

Vec QuadQuadOracle::jvp_xy_g(const OracleQuery& q, const Vec& v) const {
  check_dims(q.x, q.y);
  check_vec(v, dim_y(), "jvp input");
  skip_draws(q.stream, lower_draws());
  return -B_.transpose() * v;
}

double QuadQuadOracle::upper_value(const Vec& x, const Vec& y) const {
  check_dims(x, y);
  return 0.5 * (y - y_c_).squaredNorm() + 0.5 * lambda_ * x.squaredNorm();
}

Vec QuadQuadOracle::exact_lower_solution(const Vec& x) const {
  check_vec(x, dim_x(), "x");
  return A_llt_.solve(B_ * x + b_);
}

Vec QuadQuadOracle::exact_hypergradient(const Vec& x) const {
  check_vec(x, dim_x(), "x");
  const Vec ystar = exact_lower_solution(x);
  const Vec correction = B_.transpose() * A_llt_.solve(ystar - y_c_);
  return lambda_ * x + correction_sign() * correction;
}

// ---------------------------------------------------------------------------
// Dataset loading / synthesis
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

double parse_cell(const std::string& raw, std::size_t row, std::size_t col) {
  const std::string cell = trim(raw);
  double value = 0.0;
  const char* first = cell.data();
  const char* last = first + cell.size();
  const auto res = std::from_chars(first, last, value);
  if (res.ec != std::errc() || res.ptr != last || cell.empty()) {
    throw std::runtime_error("CSV parse error at data row " +
                             std::to_string(row) + ", column " +
                             std::to_string(col) + ": '" + cell +
                             "' is not numeric");
  }
  return value;
}

}  // namespace

Dataset load_csv_dataset(const std::string& path,
                         const std::string& target_column) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open CSV file: " + path);
  }
  std::string line;
  if (!std::getline(in, line)) {
    throw std::runtime_error("CSV file is empty: " + path);
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> header = split_csv_line(line);
  std::ptrdiff_t target_idx = -1;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (trim(header[i]) == target_column) {
      target_idx = static_cast<std::ptrdiff_t>(i);
      break;
    }
  }
  if (target_idx < 0) {
    throw std::runtime_error("CSV file " + path + " has no column named '" +
                             target_column + "'");
  }
  const std::size_t n_cols = header.size();
  if (n_cols < 2) {
    throw std::runtime_error("CSV file " + path +
                             " needs at least one feature column");
  }

  std::vector<std::vector<double>> feature_rows;
  std::vector<double> targets;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    ++row;
    const std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != n_cols) {
      throw std::runtime_error(
          "CSV parse error at data row " + std::to_string(row) + ": got " +
          std::to_string(cells.size()) + " cells, header has " +
          std::to_string(n_cols));
    }
    std::vector<double> feats;
    feats.reserve(n_cols - 1);
    for (std::size_t c = 0; c < n_cols; ++c) {
      const double v = parse_cell(cells[c], row, c + 1);
      if (static_cast<std::ptrdiff_t>(c) == target_idx) {
        targets.push_back(v);
      } else {
        feats.push_back(v);
      }
    }
    feature_rows.push_back(std::move(feats));
  }
  if (feature_rows.empty()) {
    throw std::runtime_error("CSV file " + path + " has no data rows");
  }

  Dataset data;
  data.features.resize(static_cast<Eigen::Index>(feature_rows.size()),
                       static_cast<Eigen::Index>(n_cols - 1));
  data.targets.resize(static_cast<Eigen::Index>(targets.size()));
  for (Eigen::Index i = 0; i < data.features.rows(); ++i) {
    for (Eigen::Index j = 0; j < data.features.cols(); ++j) {
      data.features(i, j) = feature_rows[static_cast<std::size_t>(i)]
                                        [static_cast<std::size_t>(j)];
    }
    data.targets[i] = targets[static_cast<std::size_t>(i)];
  }
  return data;
}

Dataset synth_dataset(Eigen::Index n_samples, Eigen::Index n_features,
                      double target_noise, std::uint64_t gen_seed) {
  if (n_samples < 2 || n_features < 1) {
    throw std::invalid_argument(
        "synth_dataset: need at least 2 samples and 1 feature");
  }
  RandomStream gen{gen_seed, kDataGenStream, 0};
  Dataset data;
  data.features.resize(n_samples, n_features);
  for (Eigen::Index i = 0; i < n_samples; ++i) {
    data.features.row(i) = gaussian_vec(gen, n_features, 1.0).transpose();
  }
  const Vec coef = gaussian_vec(gen, n_features, 1.0);
  const Vec noise = gaussian_vec(gen, n_samples, target_noise);
  data.targets = data.features * coef + noise;
  return data;
}

// ---------------------------------------------------------------------------
// RidgeHyperOracle
// ---------------------------------------------------------------------------

RidgeHyperOracle::RidgeHyperOracle(Dataset data, const RidgeHyperConfig& cfg) {
  const Eigen::Index n = data.rows();
  if (n != data.targets.size()) {
    throw std::invalid_argument("RidgeHyper: feature/target row mismatch");
  }
  if (n < 2 || data.cols() < 1) {
    throw std::invalid_argument("RidgeHyper: need >= 2 rows and >= 1 feature");
  }
  if (!(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0)) {
    throw std::invalid_argument(
        "RidgeHyper: train_fraction must be in (0, 1)");
  }
  n_features_ = data.cols();
  region_radius_ = cfg.region_radius;

  // Seeded shuffle, then cut into train/validation (both non-empty).
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  RandomStream shuffle{cfg.split_seed, kSplitStream, 0};
  for (std::size_t i = order.size() - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(uniform_index(shuffle, i + 1));
    std::swap(order[i], order[j]);
  }
  Eigen::Index n_train = static_cast<Eigen::Index>(
      std::lround(cfg.train_fraction * static_cast<double>(n)));
  n_train = std::clamp<Eigen::Index>(n_train, 1, n - 1);

  auto take = [&](Eigen::Index from, Eigen::Index count) {
    Dataset split;
    split.features.resize(count, n_features_);
    split.targets.resize(count);
    for (Eigen::Index i = 0; i < count; ++i) {
      const Eigen::Index src = order[static_cast<std::size_t>(from + i)];
      split.features.row(i) = data.features.row(src);
      split.targets[i] = data.targets[src];
    }
    return split;
  };
  train_ = take(0, n_train);
  val_ = take(n_train, n - n_train);

  train_gram_ = train_.features.transpose() * train_.features /
                static_cast<double>(train_.rows());
  train_rhs_ = train_.features.transpose() * train_.targets /
               static_cast<double>(train_.rows());
  val_gram_ = val_.features.transpose() * val_.features /
              static_cast<double>(val_.rows());
  val_rhs_ = val_.features.transpose() * val_.targets /
             static_cast<double>(val_.rows());

  // Conservative declared constants over ||x||_inf <= r, ||y|| <= r. They are
  // data-dependent worst cases, not tuned values; the family exists to
  // exercise the pipeline on a non-quadratic instance.
  const double r = region_radius_;
  const double er = std::exp(r);
  double max_row_sq = 0.0;
  double l0 = 0.0;
  double sig_sq = 0.0;
  for (Eigen::Index i = 0; i < train_.rows(); ++i) {
    const double a = train_.features.row(i).norm();
    max_row_sq = std::max(max_row_sq, a * a);
    const double dev = a * (a * r + std::abs(train_.targets[i]));
    sig_sq += dev * dev;
  }
  sig_sq /= static_cast<double>(train_.rows());
  for (Eigen::Index j = 0; j < val_.rows(); ++j) {
    const double a = val_.features.row(j).norm();
    max_row_sq = std::max(max_row_sq, a * a);
    l0 = std::max(l0, a * (a * r + std::abs(val_.targets[j])));
  }
  sc_.mu = std::exp(-r);
  sc_.L1 = max_row_sq + er;
  sc_.L0 = l0;
  sc_.L21 = er * (r + 1.0);
  sc_.L22 = er;
  sc_.sigma = std::sqrt(sig_sq);
  sc_.validate();
}

Mat RidgeHyperOracle::lower_hessian(const Vec& x) const {
  Mat h = train_gram_;
  h.diagonal() += x.array().exp().matrix();
  return h;
}

Vec RidgeHyperOracle::grad_x_f(const OracleQuery& q) const {
  check_dims(q.x, q.y);
  skip_draws(q.stream, upper_draws());  // f does not depend on x directly
  return Vec::Zero(dim_x());
}

Vec RidgeHyperOracle::grad_y_f(const OracleQuery& q) const {
  check_dims(q.x, q.y);
  const auto j = static_cast<Eigen::Index>(
      uniform_index(q.stream, static_cast<std::uint64_t>(val_.rows())));
  const auto a = val_.features.row(j);
  return a.transpose() * (a.dot(q.y) - val_.targets[j]);
}

Vec RidgeHyperOracle::grad_y_g(const OracleQuery& q) const {
  check_dims(q.x, q.y);
  const auto i = static_cast<Eigen::Index>(
      uniform_index(q.stream, static_cast<std::uint64_t>(train_.rows())));
  const auto a = train_.features.row(i);
  return a.transpose() * (a.dot(q.y) - train_.targets[i]) +
         (q.x.array().exp() * q.y.array()).matrix();
}

Vec RidgeHyperOracle::hvp_yy_g(const OracleQuery& q, const Vec& v) const {
  check_dims(q.x, q.y);
  check_vec(v, dim_y(), "hvp input");
  const auto i = static_cast<Eigen::Index>(
      uniform_index(q.stream, static_cast<std::uint64_t>(train_.rows())));
  const auto a = train_.features.row(i);
  return a.transpose() * a.dot(v) + (q.x.array().exp() * v.array()).matrix();
}

Vec RidgeHyperOracle::jvp_xy_g(const OracleQuery& q, const Vec& v) const {
  check_dims(q.x, q.y);
  check_vec(v, dim_y(), "jvp input");
  // d2g/dxdy = diag(exp(x) .* y) regardless of the sampled row; consume the
  // draw anyway so stream alignment matches the other lower-level calls.
  skip_draws(q.stream, lower_draws());
  return (q.x.array().exp() * q.y.array() * v.array()).matrix();
}

double RidgeHyperOracle::upper_value(const Vec& x, const Vec& y) const {
  check_dims(x, y);
  const Vec resid = val_.features * y - val_.targets;
  return 0.5 * resid.squaredNorm() / static_cast<double>(val_.rows());
}

Vec RidgeHyperOracle::exact_lower_solution(const Vec& x) const {
  check_vec(x, dim_x(), "x");
  return Eigen::LLT<Mat>(lower_hessian(x)).solve(train_rhs_);
}

Vec RidgeHyperOracle::exact_hypergradient(const Vec& x) const {
  check_vec(x, dim_x(), "x");
  const Vec ystar = exact_lower_solution(x);
  const Vec gy = val_gram_ * ystar - val_rhs_;
  const Vec z = Eigen::LLT<Mat>(lower_hessian(x)).solve(gy);
  const Vec correction = -(x.array().exp() * ystar.array() * z.array());
  return correction_sign() * correction;
}

Vec RidgeHyperOracle::full_grad_y_g(const Vec& x, const Vec& y) const {
  return train_gram_ * y - train_rhs_ +
         (x.array().exp() * y.array()).matrix();
}

Vec RidgeHyperOracle::full_grad_y_f(const Vec& y) const {
  return val_gram_ * y - val_rhs_;
}

}  // namespace fedbilevel
