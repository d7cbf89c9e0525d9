#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedbilevel/federation.hpp"

namespace fedbilevel {

// Shortest round-trip decimal rendering (std::to_chars), so output is
// reproducible across runs and platforms with the same libc++abi. NaN and
// infinities print as "nan" / "inf" / "-inf".
std::string format_double(double v);

// Per-iteration trace CSV, one row per (seed, t), followed by the comment
// summary block. Columns:
//   seed,t,eta,grad_norm_sq,lower_gap_sq,metric_partial,
//   samples_cumulative,bytes_cumulative,rounds_cumulative
// wall_times holds one entry per seed in seconds; it is rendered as 0 unless
// timings is set so default output stays byte-identical across reruns.
void write_run_csv(const std::string& path,
                   const std::vector<std::uint64_t>& seeds,
                   const std::vector<RunTrace>& traces, bool timings,
                   const std::vector<double>& wall_times);

}  // namespace fedbilevel
