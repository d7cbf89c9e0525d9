// Command-line front end: run (single experiment), sweep (one axis, many
// values), verify (invariant suite). See README for config and CSV formats.
#include <chrono>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedbilevel/config.hpp"
#include "fedbilevel/csv_io.hpp"
#include "fedbilevel/sweep.hpp"
#include "fedbilevel/verify.hpp"

namespace {

int cmd_run(const std::string& config_path, const std::string& out_override,
            int workers_override, bool timings_flag) {
  using namespace fedbilevel;
  ExperimentConfig cfg = ExperimentConfig::from_file(config_path);
  if (!out_override.empty()) {
    cfg.out_path = out_override;
  }
  if (workers_override > 0) {
    cfg.workers = workers_override;
  }
  const bool timings = timings_flag || cfg.timings;

  const auto oracle = make_oracle(cfg);
  std::vector<RunTrace> traces;
  std::vector<double> seconds;
  traces.reserve(cfg.seeds.size());
  for (const std::uint64_t seed : cfg.seeds) {
    const FederationConfig fc = build_federation_config(cfg, *oracle, seed);
    const auto t0 = std::chrono::steady_clock::now();
    traces.push_back(run(fc, *oracle));
    const auto t1 = std::chrono::steady_clock::now();
    seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  write_run_csv(cfg.out_path, cfg.seeds, traces, timings, seconds);
  std::cout << "wrote " << cfg.out_path << " (" << cfg.seeds.size()
            << " seeds x " << cfg.T << " iterations)\n";
  return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& axis_name_in,
              const std::vector<std::string>& values, double epsilon_override,
              const std::string& out_override, int workers_override,
              bool timings_flag) {
  using namespace fedbilevel;
  ExperimentConfig cfg = ExperimentConfig::from_file(config_path);
  const SweepAxis axis = parse_axis(axis_name_in);
  const double epsilon = epsilon_override > 0 ? epsilon_override : cfg.epsilon;
  const std::string out_path =
      !out_override.empty() ? out_override : cfg.out_path;
  const int workers = workers_override > 0 ? workers_override : cfg.workers;
  const bool timings = timings_flag || cfg.timings;

  const std::vector<SweepRow> rows =
      run_sweep(cfg, axis, values, epsilon, workers, timings);
  write_sweep_csv(out_path, axis, epsilon, cfg.seeds, rows);
  std::cout << "wrote " << out_path << " (" << rows.size() << " values x "
            << cfg.seeds.size() << " seeds)\n";
  return 0;
}

int cmd_verify(bool fault_inject) {
  using namespace fedbilevel;
  const std::vector<VerifyCheck> checks = run_verification(fault_inject);
  const int failures = print_verification_report(checks, std::cout);
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated bilevel optimization simulator"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_path;
  std::string axis;
  std::vector<std::string> values;
  double epsilon = 0.0;
  int workers = 0;
  bool timings = false;
  bool fault_inject = false;

  CLI::App* run_cmd =
      app.add_subcommand("run", "run one experiment, write the trace CSV");
  run_cmd->add_option("--config", config_path, "experiment config file")
      ->required();
  run_cmd->add_option("--out", out_path, "output CSV (overrides output.path)");
  run_cmd->add_option("--workers", workers,
                      "device-phase worker threads (overrides config)");
  run_cmd->add_flag("--timings", timings,
                    "include wall-clock times (output is then not "
                    "reproducible byte-for-byte)");

  CLI::App* sweep_cmd = app.add_subcommand(
      "sweep", "sweep one axis over a value list, write the summary CSV");
  sweep_cmd->add_option("--config", config_path, "experiment config file")
      ->required();
  sweep_cmd->add_option("--axis", axis, "K | p | Q | algorithm")->required();
  sweep_cmd
      ->add_option("--values", values,
                   "comma-separated values, e.g. 1,2,4,8")
      ->required()
      ->delimiter(',');
  sweep_cmd->add_option("--epsilon", epsilon,
                        "target for iterations-to-epsilon (overrides "
                        "output.epsilon)");
  sweep_cmd->add_option("--out", out_path, "output CSV (overrides output.path)");
  sweep_cmd->add_option("--workers", workers,
                        "parallel (value, seed) jobs (overrides config)");
  sweep_cmd->add_flag("--timings", timings,
                      "fill the wall_time_s column (output is then not "
                      "reproducible byte-for-byte)");

  CLI::App* verify_cmd =
      app.add_subcommand("verify", "run the invariant suite, print a report");
  verify_cmd->add_flag("--fault-inject", fault_inject,
                       "flip the hypergradient correction sign to prove the "
                       "suite catches it (test only)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) {
      return cmd_run(config_path, out_path, workers, timings);
    }
    if (sweep_cmd->parsed()) {
      return cmd_sweep(config_path, axis, values, epsilon, out_path, workers,
                       timings);
    }
    return cmd_verify(fault_inject);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
