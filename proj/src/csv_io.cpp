#include "fedbilevel/csv_io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace fedbilevel {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void write_run_csv(const std::string& path,
                   const std::vector<std::uint64_t>& seeds,
                   const std::vector<RunTrace>& traces, bool timings,
                   const std::vector<double>& wall_times) {
  if (seeds.size() != traces.size()) {
    throw std::invalid_argument("write_run_csv: seeds/traces size mismatch");
  }
  if (!wall_times.empty() && wall_times.size() != traces.size()) {
    throw std::invalid_argument(
        "write_run_csv: wall_times size must match traces");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot open output file: " + path);
  }
  out << "seed,t,eta,grad_norm_sq,lower_gap_sq,metric_partial,"
         "samples_cumulative,bytes_cumulative,rounds_cumulative\n";
  for (std::size_t s = 0; s < traces.size(); ++s) {
    for (const IterationRecord& r : traces[s].rows) {
      out << seeds[s] << ',' << r.t << ',' << format_double(r.eta) << ','
          << format_double(r.grad_norm_sq) << ','
          << format_double(r.lower_gap_sq) << ','
          << format_double(r.metric_partial) << ',' << r.samples_cumulative
          << ',' << r.bytes_cumulative << ',' << r.rounds_cumulative << '\n';
    }
  }

  // Summary block: every line '#'-prefixed so plain CSV readers can skip it.
  out << "# summary\n";
  double metric_sum = 0.0;
  bool any_metric = false;
  out << "# final_metric_per_seed =";
  for (std::size_t s = 0; s < traces.size(); ++s) {
    out << (s == 0 ? " " : ",") << format_double(traces[s].final_metric);
    if (traces[s].has_exact_metric) {
      metric_sum += traces[s].final_metric;
      any_metric = true;
    }
  }
  out << '\n';
  const double metric_mean =
      any_metric ? metric_sum / static_cast<double>(traces.size())
                 : std::numeric_limits<double>::quiet_NaN();
  out << "# final_metric_mean = " << format_double(metric_mean) << '\n';
  const Accounting acct = accounting(traces.front());
  out << "# samples_per_device = " << acct.samples_per_device << '\n';
  out << "# rounds = " << acct.rounds << '\n';
  out << "# bytes = " << acct.bytes << '\n';
  out << "# bytes_upload = " << acct.bytes_upload << '\n';
  double wall = 0.0;
  if (timings) {
    for (const double w : wall_times) wall += w;
  }
  out << "# wall_time_s = " << format_double(wall) << '\n';
  if (!out) {
    throw std::runtime_error("write failed: " + path);
  }
}

}  // namespace fedbilevel
