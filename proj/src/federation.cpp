#include "fedbilevel/federation.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace fedbilevel {

namespace {

// Reserved stream id for the lower-level warm start; device streams use
// their device index, so any large prime keeps them disjoint.
constexpr std::uint64_t kWarmStartStream = 1000000021ULL;

// LocalBSGVRM assumes y starts at the lower solution for x0. Without a
// closed form, approximate it by plain SGD on g with the standard 1/L1 step;
// the contraction factor (1 - mu/L1) per step makes ~30 condition numbers of
// iterations plenty to reach the noise floor.
Vec lower_init(const BilevelOracle& oracle, const Vec& x0, const Vec& y0,
               std::uint64_t seed, long long* draws) {
  if (oracle.has_exact_lower_solution()) {
    *draws = 0;
    return oracle.exact_lower_solution(x0);
  }
  const SmoothnessConstants& sc = oracle.constants();
  const double step = 1.0 / sc.L1;
  const long n_steps =
      static_cast<long>(std::ceil(30.0 * sc.L1 / sc.mu));
  RandomStream stream{seed, kWarmStartStream, 0};
  Vec y = y0;
  for (long i = 0; i < n_steps; ++i) {
    y -= step * oracle.grad_y_g(OracleQuery{x0, y, stream});
  }
  *draws = n_steps;
  return y;
}

struct DevicePhaseArgs {
  const BilevelOracle* oracle;
  const FederationConfig* cfg;
  long t;
  double eta;
  double eta_prev;
};

// Advances one device through iteration t: estimator init (t = 0) or step,
// then the local update. Each device touches only its own state, so devices
// can run on any worker without changing the result.
void step_device(DeviceState& d, const DevicePhaseArgs& a) {
  const HyperParams& hp = a.cfg->hp;
  const long per_draw = hypergrad_samples(hp.neumann.Q) + 1;
  if (a.cfg->algorithm == Algorithm::LocalBSGM) {
    if (a.t == 0) {
      d.est = bsgm_init(*a.oracle, d.x, d.y, hp.neumann, d.stream);
    } else {
      bsgm_estimator_step(d.est, d.x, d.y, a.eta, hp, *a.oracle, d.stream);
    }
    d.samples += per_draw;
  } else {
    if (a.t == 0) {
      d.est = bsgvrm_init(*a.oracle, d.x, d.y, hp.neumann, hp.B, d.stream);
      d.samples += static_cast<long long>(hp.B) * per_draw;
    } else {
      bsgvrm_estimator_step(d.est, d.x, d.y, a.eta_prev, hp, *a.oracle,
                            d.stream);
      d.samples += 2 * per_draw;
    }
  }
  local_update(d.x, d.y, d.est, a.eta, hp);
}

void device_phase(std::vector<DeviceState>& devices,
                  const DevicePhaseArgs& args, int workers) {
  const int K = static_cast<int>(devices.size());
  if (workers <= 1 || K == 1) {
    for (DeviceState& d : devices) {
      step_device(d, args);
    }
    return;
  }
  const int n_threads = std::min(workers, K);
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(n_threads));
  for (int w = 0; w < n_threads; ++w) {
    // Contiguous chunks; thread w owns devices [lo, hi).
    const int lo = static_cast<int>(static_cast<long long>(K) * w / n_threads);
    const int hi =
        static_cast<int>(static_cast<long long>(K) * (w + 1) / n_threads);
    pool.emplace_back([&devices, &args, lo, hi] {
      for (int k = lo; k < hi; ++k) {
        step_device(devices[static_cast<std::size_t>(k)], args);
      }
    });
  }
  for (std::thread& th : pool) {
    th.join();
  }
}

void check_divergence(const std::vector<DeviceState>& devices, long t,
                      double guard) {
  for (const DeviceState& d : devices) {
    const double nx = d.x.norm();
    const double ny = d.y.norm();
    if (!std::isfinite(nx) || !std::isfinite(ny) || nx > guard || ny > guard) {
      const double worst = std::isfinite(nx) && std::isfinite(ny)
                               ? std::max(nx, ny)
                               : std::numeric_limits<double>::infinity();
      throw DivergenceError(t, d.id, worst);
    }
  }
}

}  // namespace

void FederationConfig::validate(const BilevelOracle& oracle) const {
  if (K < 1) {
    throw std::invalid_argument("FederationConfig: K must be >= 1");
  }
  if (p < 1) {
    throw std::invalid_argument("FederationConfig: p must be >= 1");
  }
  if (T < 1) {
    throw std::invalid_argument("FederationConfig: T must be >= 1");
  }
  if (bytes_per_scalar < 1) {
    throw std::invalid_argument(
        "FederationConfig: bytes_per_scalar must be >= 1");
  }
  if (workers < 1) {
    throw std::invalid_argument("FederationConfig: workers must be >= 1");
  }
  if (!(divergence_guard > 0.0)) {
    throw std::invalid_argument(
        "FederationConfig: divergence_guard must be positive");
  }
  if (x0.size() != 0 && x0.size() != oracle.dim_x()) {
    throw std::invalid_argument(
        "FederationConfig: x0 has size " + std::to_string(x0.size()) +
        ", problem has dim_x " + std::to_string(oracle.dim_x()));
  }
  if (y0.size() != 0 && y0.size() != oracle.dim_y()) {
    throw std::invalid_argument(
        "FederationConfig: y0 has size " + std::to_string(y0.size()) +
        ", problem has dim_y " + std::to_string(oracle.dim_y()));
  }
  if (hp.p != p) {
    throw std::invalid_argument(
        "FederationConfig: hp.p (" + std::to_string(hp.p) +
        ") disagrees with the federation period p (" + std::to_string(p) +
        ")");
  }
  hp.validate(oracle.constants());
}

void average_and_reset(std::vector<DeviceState>& devices) {
  if (devices.empty()) {
    throw std::invalid_argument("average_and_reset: no devices");
  }
  const double inv_k = 1.0 / static_cast<double>(devices.size());
  Vec x_bar = devices[0].x;
  Vec y_bar = devices[0].y;
  Vec u_bar = devices[0].est.u;
  Vec v_bar = devices[0].est.v;
  for (std::size_t k = 1; k < devices.size(); ++k) {
    x_bar += devices[k].x;
    y_bar += devices[k].y;
    u_bar += devices[k].est.u;
    v_bar += devices[k].est.v;
  }
  x_bar *= inv_k;
  y_bar *= inv_k;
  u_bar *= inv_k;
  v_bar *= inv_k;
  for (DeviceState& d : devices) {
    d.x = x_bar;
    d.y = y_bar;
    d.est.u = u_bar;
    d.est.v = v_bar;
    // prev iterates stay local: the recursive correction always compares
    // against what this device actually evaluated last.
  }
}

RunTrace run(const FederationConfig& cfg, const BilevelOracle& oracle) {
  cfg.validate(oracle);
  const SmoothnessConstants& sc = oracle.constants();
  const DerivedConstants dc = derived_constants(sc, cfg.hp.neumann);

  const Eigen::Index dx = oracle.dim_x();
  const Eigen::Index dy = oracle.dim_y();
  Vec x0 = cfg.x0.size() ? cfg.x0 : Vec(Vec::Zero(dx));
  Vec y0 = cfg.y0.size() ? cfg.y0 : Vec(Vec::Zero(dy));
  long long init_draws = 0;
  if (cfg.algorithm == Algorithm::LocalBSGVRM) {
    y0 = lower_init(oracle, x0, y0, cfg.seed, &init_draws);
  }

  std::vector<DeviceState> devices(static_cast<std::size_t>(cfg.K));
  for (int k = 0; k < cfg.K; ++k) {
    DeviceState& d = devices[static_cast<std::size_t>(k)];
    d.id = k;
    d.x = x0;
    d.y = y0;
    d.stream = RandomStream{
        cfg.seed,
        cfg.force_shared_stream ? 0ULL : static_cast<std::uint64_t>(k), 0};
    d.samples = init_draws;
  }

  const bool exact = oracle.has_exact_hypergradient() &&
                     oracle.has_exact_lower_solution();
  const double nan = std::numeric_limits<double>::quiet_NaN();

  RunTrace trace;
  trace.K = cfg.K;
  trace.p = cfg.p;
  trace.T = cfg.T;
  trace.dim_x = dx;
  trace.dim_y = dy;
  trace.bytes_per_scalar = cfg.bytes_per_scalar;
  trace.comm_directions = cfg.count_broadcast ? 2 : 1;
  trace.L_tilde = dc.L_tilde;
  trace.has_exact_metric = exact;
  trace.rows.reserve(static_cast<std::size_t>(cfg.T));

  const long long payload_bytes_per_round = static_cast<long long>(cfg.K) * 2 *
                                            (dx + dy) * cfg.bytes_per_scalar *
                                            trace.comm_directions;
  const double inv_k = 1.0 / static_cast<double>(cfg.K);
  double metric_sum = 0.0;
  long long rounds = 0;

  for (long t = 0; t < cfg.T; ++t) {
    const double eta = cfg.schedule.eta(t);
    const double eta_prev = t > 0 ? cfg.schedule.eta(t - 1) : eta;

    IterationRecord row;
    row.t = t;
    row.eta = eta;
    if (exact) {
      // Measure at the device average before the update, matching the
      // iterate the analysis tracks.
      Vec x_bar = devices[0].x;
      Vec y_bar = devices[0].y;
      for (std::size_t k = 1; k < devices.size(); ++k) {
        x_bar += devices[k].x;
        y_bar += devices[k].y;
      }
      x_bar *= inv_k;
      y_bar *= inv_k;
      row.grad_norm_sq = oracle.exact_hypergradient(x_bar).squaredNorm();
      row.lower_gap_sq =
          (y_bar - oracle.exact_lower_solution(x_bar)).squaredNorm();
      metric_sum +=
          row.grad_norm_sq + dc.L_tilde * dc.L_tilde * row.lower_gap_sq;
      row.metric_partial = metric_sum / static_cast<double>(t + 1);
    } else {
      row.grad_norm_sq = nan;
      row.lower_gap_sq = nan;
      row.metric_partial = nan;
    }

    device_phase(devices, DevicePhaseArgs{&oracle, &cfg, t, eta, eta_prev},
                 cfg.workers);
    check_divergence(devices, t, cfg.divergence_guard);

    if ((t + 1) % cfg.p == 0) {
      if (cfg.before_average) {
        cfg.before_average(t, devices);
      }
      average_and_reset(devices);
      if (cfg.after_average) {
        cfg.after_average(t, devices);
      }
      ++rounds;
    }

    row.samples_cumulative = devices[0].samples;
    row.rounds_cumulative = rounds;
    row.bytes_cumulative = rounds * payload_bytes_per_round;
    trace.rows.push_back(row);
  }

  trace.final_metric = exact ? metric_sum / static_cast<double>(cfg.T) : nan;
  return trace;
}

double convergence_metric(const RunTrace& trace, double L_tilde) {
  if (!trace.has_exact_metric) {
    throw CapabilityError(
        "convergence_metric: trace was recorded without exact closed forms");
  }
  if (trace.rows.empty()) {
    throw std::invalid_argument("convergence_metric: empty trace");
  }
  double sum = 0.0;
  for (const IterationRecord& r : trace.rows) {
    sum += r.grad_norm_sq + L_tilde * L_tilde * r.lower_gap_sq;
  }
  return sum / static_cast<double>(trace.rows.size());
}

Accounting accounting(const RunTrace& trace) {
  if (trace.rows.empty()) {
    throw std::invalid_argument("accounting: empty trace");
  }
  const IterationRecord& last = trace.rows.back();
  Accounting a;
  a.samples_per_device = last.samples_cumulative;
  a.rounds = last.rounds_cumulative;
  a.bytes = last.bytes_cumulative;
  a.bytes_upload = last.bytes_cumulative / trace.comm_directions;
  return a;
}

}  // namespace fedbilevel
