#include "fedbilevel/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <thread>

#include "fedbilevel/csv_io.hpp"
#include "fedbilevel/hypergrad.hpp"

namespace fedbilevel {

namespace {

// Stream id for the bias probe draws; disjoint from device ids and the
// generator streams used by the problems module.
constexpr std::uint64_t kBiasProbeStream = 1000000033ULL;

long parse_count(const std::string& s, const char* what, long lo) {
  long v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || v < lo) {
    throw std::invalid_argument(std::string("sweep value '") + s +
                                "' is not a valid " + what);
  }
  return v;
}

// Everything one swept value needs: the adjusted experiment description and
// the hyperparameters resolved for it.
struct ValuePlan {
  std::string label;
  ExperimentConfig cfg;
  RateDerivation rate;
};

std::vector<ValuePlan> make_plans(const ExperimentConfig& base, SweepAxis axis,
                                  const std::vector<std::string>& values,
                                  const SmoothnessConstants& sc) {
  std::vector<ValuePlan> plans;
  plans.reserve(values.size());

  switch (axis) {
    case SweepAxis::Devices: {
      std::vector<int> ks;
      for (const std::string& v : values) {
        ks.push_back(static_cast<int>(parse_count(v, "device count (>= 1)", 1)));
      }
      // The rate statements scale the fixed step linearly with the device
      // count; anchor it so the largest K uses the full derived step. The
      // remaining hyperparameters are K-independent.
      const int k_ref = *std::max_element(ks.begin(), ks.end());
      const bool scale = base.scale_eta_with_k && base.schedule == "fixed" &&
                         base.mode == "theorem";
      RateDerivation ref;
      double eta_ref = 0.0;
      if (scale) {
        ref = resolve_algorithm(base, sc, k_ref, base.p);
        eta_ref = ref.schedule.eta(0);
      }
      for (std::size_t i = 0; i < ks.size(); ++i) {
        ValuePlan plan;
        plan.label = values[i];
        plan.cfg = base;
        plan.cfg.K = ks[i];
        if (scale) {
          plan.rate = ref;
          plan.rate.schedule = StepSchedule::fixed(
              eta_ref * static_cast<double>(ks[i]) / k_ref);
        } else {
          plan.rate = resolve_algorithm(plan.cfg, sc, ks[i], base.p);
        }
        plans.push_back(std::move(plan));
      }
      break;
    }
    case SweepAxis::Period: {
      for (const std::string& v : values) {
        ValuePlan plan;
        plan.label = v;
        plan.cfg = base;
        plan.cfg.p = static_cast<int>(parse_count(v, "period (>= 1)", 1));
        plan.rate = resolve_algorithm(plan.cfg, sc, base.K, plan.cfg.p);
        plans.push_back(std::move(plan));
      }
      break;
    }
    case SweepAxis::NeumannQ: {
      for (const std::string& v : values) {
        ValuePlan plan;
        plan.label = v;
        plan.cfg = base;
        const int q = static_cast<int>(parse_count(v, "Neumann depth (>= 0)", 0));
        plan.cfg.Q = q;
        plan.rate = resolve_algorithm(plan.cfg, sc, base.K, base.p, q);
        plans.push_back(std::move(plan));
      }
      break;
    }
    case SweepAxis::AlgorithmChoice: {
      for (const std::string& v : values) {
        ValuePlan plan;
        plan.label = v;
        plan.cfg = base;
        plan.cfg.algorithm = parse_algorithm(v);
        plan.rate = resolve_algorithm(plan.cfg, sc, base.K, base.p);
        plans.push_back(std::move(plan));
      }
      break;
    }
  }
  return plans;
}

}  // namespace

SweepAxis parse_axis(const std::string& name) {
  if (name == "K" || name == "k" || name == "devices") {
    return SweepAxis::Devices;
  }
  if (name == "p" || name == "period") {
    return SweepAxis::Period;
  }
  if (name == "Q" || name == "q") {
    return SweepAxis::NeumannQ;
  }
  if (name == "algorithm") {
    return SweepAxis::AlgorithmChoice;
  }
  throw std::invalid_argument("unknown sweep axis '" + name +
                              "' (expected K, p, Q, or algorithm)");
}

const char* axis_name(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::Devices: return "K";
    case SweepAxis::Period: return "p";
    case SweepAxis::NeumannQ: return "Q";
    case SweepAxis::AlgorithmChoice: return "algorithm";
  }
  return "?";
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, SweepAxis axis,
                                const std::vector<std::string>& values,
                                double epsilon, int workers, bool timings) {
  if (values.empty()) {
    throw std::invalid_argument("sweep needs at least one value");
  }
  if (!(epsilon > 0.0)) {
    throw std::invalid_argument("epsilon must be positive");
  }
  if (workers < 1) {
    throw std::invalid_argument("workers must be >= 1");
  }

  const std::unique_ptr<BilevelOracle> oracle = make_oracle(cfg);
  const std::vector<ValuePlan> plans =
      make_plans(cfg, axis, values, oracle->constants());
  const std::size_t n_seeds = cfg.seeds.size();
  const std::size_t n_jobs = plans.size() * n_seeds;

  // Jobs are (value, seed) pairs indexed value-major. Each runs its
  // federation single-threaded; results land in preassigned slots, so the
  // outcome is identical for any worker count.
  std::vector<RunTrace> traces(n_jobs);
  std::vector<double> seconds(n_jobs, 0.0);
  auto run_job = [&](std::size_t j) {
    const ValuePlan& plan = plans[j / n_seeds];
    const std::uint64_t seed = cfg.seeds[j % n_seeds];
    FederationConfig fc =
        build_federation_config(plan.cfg, *oracle, seed, plan.rate);
    fc.workers = 1;
    const auto t0 = std::chrono::steady_clock::now();
    traces[j] = run(fc, *oracle);
    const auto t1 = std::chrono::steady_clock::now();
    seconds[j] = std::chrono::duration<double>(t1 - t0).count();
  };

  const int n_threads =
      static_cast<int>(std::min<std::size_t>(workers, n_jobs));
  if (n_threads <= 1) {
    for (std::size_t j = 0; j < n_jobs; ++j) {
      run_job(j);
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(n_threads));
    for (int w = 0; w < n_threads; ++w) {
      pool.emplace_back([&] {
        for (std::size_t j = next.fetch_add(1); j < n_jobs;
             j = next.fetch_add(1)) {
          run_job(j);
        }
      });
    }
    for (std::thread& th : pool) {
      th.join();
    }
  }

  std::vector<SweepRow> rows(plans.size());
  for (std::size_t vi = 0; vi < plans.size(); ++vi) {
    const RunTrace* seed_traces = &traces[vi * n_seeds];
    SweepRow& row = rows[vi];
    row.value = plans[vi].label;

    double metric_sum = 0.0;
    for (std::size_t s = 0; s < n_seeds; ++s) {
      metric_sum += seed_traces[s].final_metric;
    }
    row.final_metric = metric_sum / static_cast<double>(n_seeds);

    // First t where the seed-averaged running metric crosses epsilon. The
    // prefix mean of the seed average equals the seed average of prefix
    // means, so averaging the stored metric_partial column is exact.
    const long T = plans[vi].cfg.T;
    for (long t = 0; t < T; ++t) {
      double avg = 0.0;
      for (std::size_t s = 0; s < n_seeds; ++s) {
        avg += seed_traces[s].rows[static_cast<std::size_t>(t)].metric_partial;
      }
      avg /= static_cast<double>(n_seeds);
      if (avg <= epsilon) {
        const IterationRecord& r =
            seed_traces[0].rows[static_cast<std::size_t>(t)];
        row.iterations_to_eps = t;
        row.samples_to_eps = r.samples_cumulative;
        row.rounds_to_eps = r.rounds_cumulative;
        break;
      }
    }

    if (timings) {
      for (std::size_t s = 0; s < n_seeds; ++s) {
        row.wall_time_s += seconds[vi * n_seeds + s];
      }
    }

    if (axis == SweepAxis::NeumannQ) {
      const NeumannConfig& nm = plans[vi].rate.hp.neumann;
      const Eigen::Index dx = oracle->dim_x();
      const Vec probe = cfg.x0_fill != 0.0
                            ? Vec(Vec::Constant(dx, cfg.x0_fill))
                            : Vec(Vec::Ones(dx));
      RandomStream bias_stream{cfg.seeds[0], kBiasProbeStream, 0};
      const int n_draws = oracle->noise_std() == 0.0 ? 1 : 2000;
      row.has_bias = true;
      row.bias = measure_bias(*oracle, probe, nm, n_draws, bias_stream);
      row.delta_q = derived_constants(oracle->constants(), nm).Delta_Q;
    }
  }

  if (axis == SweepAxis::Devices) {
    // Speedup relative to the K=1 row (first row if K=1 was not swept).
    std::size_t ref = 0;
    for (std::size_t vi = 0; vi < rows.size(); ++vi) {
      if (rows[vi].value == "1") {
        ref = vi;
        break;
      }
    }
    const long ref_iters = rows[ref].iterations_to_eps;
    for (SweepRow& row : rows) {
      if (ref_iters > 0 && row.iterations_to_eps > 0) {
        row.has_speedup = true;
        row.speedup = static_cast<double>(ref_iters) /
                      static_cast<double>(row.iterations_to_eps);
      }
    }
  }
  return rows;
}

void write_sweep_csv(const std::string& path, SweepAxis axis, double epsilon,
                     const std::vector<std::uint64_t>& seeds,
                     const std::vector<SweepRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot open output file: " + path);
  }
  out << "axis,value,final_metric,iterations_to_eps,samples_to_eps,"
         "rounds_to_eps,speedup,bias,delta_q,wall_time_s\n";
  for (const SweepRow& row : rows) {
    out << axis_name(axis) << ',' << row.value << ','
        << format_double(row.final_metric) << ',' << row.iterations_to_eps
        << ',' << row.samples_to_eps << ',' << row.rounds_to_eps << ',';
    if (row.has_speedup) {
      out << format_double(row.speedup);
    }
    out << ',';
    if (row.has_bias) {
      out << format_double(row.bias);
    }
    out << ',';
    if (row.has_bias) {
      out << format_double(row.delta_q);
    }
    out << ',' << format_double(row.wall_time_s) << '\n';
  }
  out << "# summary\n";
  out << "# axis = " << axis_name(axis) << '\n';
  out << "# epsilon = " << format_double(epsilon) << '\n';
  out << "# seeds =";
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    out << (s == 0 ? " " : ",") << seeds[s];
  }
  out << '\n';
  if (!out) {
    throw std::runtime_error("write failed: " + path);
  }
}

}  // namespace fedbilevel
