#pragma once

#include <string>
#include <vector>

#include "fedbilevel/config.hpp"

namespace fedbilevel {

// Sweep axes: device count, averaging period, Neumann depth, or algorithm
// choice. Values arrive as strings from the CLI and are parsed per axis.
enum class SweepAxis { Devices, Period, NeumannQ, AlgorithmChoice };

SweepAxis parse_axis(const std::string& name);  // "K" | "p" | "Q" | "algorithm"
const char* axis_name(SweepAxis axis);

// One output row per swept value, aggregated over all configured seeds.
// iterations_to_eps is the first iteration index t at which the seed-averaged
// running (prefix-mean) metric is <= epsilon, or -1 if never; samples/rounds
// are the cumulative counters at that row. speedup is only populated for the
// device axis (relative to the K=1 row, falling back to the first row);
// bias/delta_q only for the Neumann axis.
struct SweepRow {
  std::string value;
  double final_metric = 0.0;
  long iterations_to_eps = -1;
  long long samples_to_eps = -1;
  long long rounds_to_eps = -1;
  bool has_speedup = false;
  double speedup = 0.0;
  bool has_bias = false;
  double bias = 0.0;
  double delta_q = 0.0;
  double wall_time_s = 0.0;
};

// Runs |values| x |seeds| federation jobs (each single-threaded; `workers`
// parallelizes across jobs) and aggregates. Results are ordered by value
// then seed regardless of completion order, so output is deterministic for
// any worker count.
std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, SweepAxis axis,
                                const std::vector<std::string>& values,
                                double epsilon, int workers, bool timings);

// Sweep CSV: fixed column set
//   axis,value,final_metric,iterations_to_eps,samples_to_eps,rounds_to_eps,
//   speedup,bias,delta_q,wall_time_s
// with empty cells where a column does not apply to the axis, then a
// '#'-prefixed summary block. wall_time_s is 0 unless timings was enabled.
void write_sweep_csv(const std::string& path, SweepAxis axis, double epsilon,
                     const std::vector<std::uint64_t>& seeds,
                     const std::vector<SweepRow>& rows);

}  // namespace fedbilevel
