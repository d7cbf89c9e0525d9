#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "fedbilevel/algorithms.hpp"
#include "fedbilevel/problems.hpp"

namespace fedbilevel {

// State one simulated device carries: its iterate, estimator state, and its
// own counter-based stream (stream_id = device index), so device draws are
// independent of execution order and worker count.
struct DeviceState {
  int id = 0;
  Vec x;
  Vec y;
  EstimatorState est;
  RandomStream stream;
  long long samples = 0;  // oracle draws consumed so far
};

struct FederationConfig {
  int K = 1;          // number of devices
  int p = 1;          // averaging period (p = 1 averages every iteration)
  long T = 100;       // iterations
  std::uint64_t seed = 0;
  Algorithm algorithm = Algorithm::LocalBSGM;
  HyperParams hp;
  StepSchedule schedule = StepSchedule::fixed(0.1);
  int bytes_per_scalar = 8;
  // Count the server broadcast as well as the upload (default); disable to
  // report upload-only bytes.
  bool count_broadcast = true;
  int workers = 1;    // device-phase worker threads (1 = serial)
  // Debug mode: every device draws from stream 0, making all devices
  // identical and averaging a no-op.
  bool force_shared_stream = false;
  // Initial iterates; empty vectors mean zeros. LocalBSGVRM replaces y0 with
  // the exact lower solution at x0 (or a warm-started approximation when the
  // problem has no closed form), as its estimator assumes.
  Vec x0;
  Vec y0;
  double divergence_guard = 1e6;
  // Read-only instrumentation hooks fired around each averaging step, used
  // by the verification suite to measure consensus and mean preservation.
  // They run on the main thread and must not mutate the devices.
  std::function<void(long t, const std::vector<DeviceState>&)> before_average;
  std::function<void(long t, const std::vector<DeviceState>&)> after_average;

  void validate(const BilevelOracle& oracle) const;
};

// One trace row per iteration. grad_norm_sq / lower_gap_sq are measured at
// the device-averaged iterate at the start of iteration t (NaN when the
// problem lacks closed forms); the cumulative counters reflect the state at
// the end of the iteration. metric_partial is the running prefix mean of
// grad_norm_sq + L_tilde^2 * lower_gap_sq.
struct IterationRecord {
  long t = 0;
  double eta = 0.0;
  double grad_norm_sq = 0.0;
  double lower_gap_sq = 0.0;
  double metric_partial = 0.0;
  long long samples_cumulative = 0;  // per device
  long long bytes_cumulative = 0;    // federation total, both directions
  long long rounds_cumulative = 0;
};

struct RunTrace {
  std::vector<IterationRecord> rows;
  // Copies of the run shape so the trace stands alone for accounting.
  int K = 1;
  int p = 1;
  long T = 0;
  Eigen::Index dim_x = 0;
  Eigen::Index dim_y = 0;
  int bytes_per_scalar = 8;
  int comm_directions = 2;  // 2 = upload + broadcast, 1 = upload only
  double L_tilde = 0.0;
  bool has_exact_metric = false;
  // Time average of the metric over all T iterations (the quantity the
  // convergence analysis bounds). NaN without exact closed forms.
  double final_metric = 0.0;
};

// Runs the federated simulation. Throws DivergenceError if any device state
// exceeds the divergence guard, std::invalid_argument on bad configuration.
RunTrace run(const FederationConfig& cfg, const BilevelOracle& oracle);

// Averages (u, v, x, y) across devices in device-index order and resets
// every device to the averages. prev iterates stay local.
void average_and_reset(std::vector<DeviceState>& devices);

// Time-averaged metric 1/T sum_t (grad_norm_sq_t + L_tilde^2 * gap_sq_t).
// Throws CapabilityError when the trace lacks exact measurements.
double convergence_metric(const RunTrace& trace, double L_tilde);

struct Accounting {
  long long samples_per_device = 0;
  long long rounds = 0;
  long long bytes = 0;         // total for the configured directions
  long long bytes_upload = 0;  // one direction, reported separately
};

// Final counters of a finished run: per-device oracle draws, communication
// rounds floor(T/p), and exchanged bytes
//   rounds * K * 2 * (dim_x + dim_y) * bytes_per_scalar * directions
// (the averaging payload u, v, x, y; directions = 2 unless broadcast
// counting is disabled).
Accounting accounting(const RunTrace& trace);

}  // namespace fedbilevel
