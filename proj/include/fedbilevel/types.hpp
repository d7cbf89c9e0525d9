#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace fedbilevel {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Thrown when an optional oracle capability (exact lower solution, exact
// hypergradient) is queried on a problem that does not provide it.
class CapabilityError : public std::logic_error {
 public:
  explicit CapabilityError(const std::string& what) : std::logic_error(what) {}
};

// Thrown by the federated driver when an iterate or estimator state exceeds
// the divergence guard. Carries enough context to diagnose a blow-up.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(long t, int device, double norm)
      : std::runtime_error("state diverged at iteration " + std::to_string(t) +
                           " on device " + std::to_string(device) +
                           " (max-norm " + std::to_string(norm) + " exceeds guard)"),
        iteration(t),
        device_id(device),
        state_norm(norm) {}

  long iteration;
  int device_id;
  double state_norm;
};

}  // namespace fedbilevel
