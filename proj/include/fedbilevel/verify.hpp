#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace fedbilevel {

// One invariant check: the measured value, the threshold it is compared
// against, and the direction baked into `pass`. Thresholds are part of the
// report so failures carry their margin.
struct VerifyCheck {
  std::string name;
  double measured = 0.0;
  double threshold = 0.0;
  bool pass = false;
};

// Runs the full verification suite (gradient cross-checks, Neumann
// contraction, truncation-bias bounds, estimator exactness, federation
// consensus/mean preservation, schedule cross-check, determinism replays).
// fault_inject flips the sign of the hypergradient correction term inside
// the QuadQuad instance under test; only the gradient cross-check on that
// problem is expected to fail then.
std::vector<VerifyCheck> run_verification(bool fault_inject);

// Prints the machine-readable report (csv: check,measured,threshold,status)
// and returns the number of failing checks.
int print_verification_report(const std::vector<VerifyCheck>& checks,
                              std::ostream& os);

}  // namespace fedbilevel
