#include "fedbilevel/finite_diff.hpp"

#include <stdexcept>

namespace fedbilevel {

double default_fd_step(const Vec& point) {
  const double scale =
      point.size() == 0 ? 0.0 : point.cwiseAbs().maxCoeff();
  return 1e-5 * (1.0 + scale);
}

Vec finite_diff_grad(const std::function<double(const Vec&)>& fn,
                     const Vec& point, double h) {
  if (h <= 0.0) {
    throw std::invalid_argument("finite_diff_grad: step h must be positive");
  }
  Vec grad(point.size());
  Vec probe = point;
  for (Eigen::Index i = 0; i < point.size(); ++i) {
    const double xi = point[i];
    probe[i] = xi + h;
    const double fp = fn(probe);
    probe[i] = xi - h;
    const double fm = fn(probe);
    probe[i] = xi;
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

}  // namespace fedbilevel
