#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "fedbilevel/federation.hpp"
#include "fedbilevel/problems.hpp"

namespace fedbilevel {

// Declarative experiment description, parsed from an INI-style file with
// [problem] / [federation] / [algorithm] / [output] sections. Every field
// below doubles as the documented default; unknown keys are rejected so
// typos fail loudly. See README for the full key reference.
struct ExperimentConfig {
  // [problem]
  std::string family = "quadquad";  // "quadquad" | "ridgehyper"
  QuadQuadConfig quad;              // keys: dim_x, dim_y, mu, l1, lambda,
                                    // b_scale, coupling_scale, yc_scale,
                                    // noise_std, region_radius, gen_seed
  RidgeHyperConfig ridge;           // keys: train_fraction, split_seed,
                                    // region_radius (shared key)
  std::string csv_path;             // ridgehyper: dataset file, "" = synthesize
  std::string target_column = "target";
  long synth_samples = 200;
  long synth_features = 10;
  double synth_noise = 0.1;

  // [federation]
  int K = 4;           // key: devices
  int p = 4;           // key: period
  long T = 1000;       // key: iterations
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  int workers = 1;
  int bytes_per_scalar = 8;
  bool count_broadcast = true;
  double divergence_guard = 1e6;
  double x0_fill = 0.0;  // key: x0, every coordinate set to this value
  double y0_fill = 0.0;  // key: y0
  bool force_shared_stream = false;

  // [algorithm]
  Algorithm algorithm = Algorithm::LocalBSGM;  // key: name
  std::string mode = "theorem";                // "theorem" | "manual"
  std::string schedule = "fixed";              // "fixed" | "decaying"
  double theta = 0.0;  // 0 = auto: 0.9 / L1 of the problem
  int Q = 2;           // key: q
  double alpha = 0.0;  // 0 = preset default (theorem) / 1 (manual)
  double beta = 0.0;
  int batch = 0;       // 0 = default 16
  double eta = 0.0;    // manual mode only, required there
  double rho1 = 0.0;   // manual mode only, required there
  double rho2 = 0.0;   // manual mode only, required there
  // Sweeps over the device count scale a fixed theorem step linearly in K
  // (the rate statements use eta growing with K); set false to freeze eta.
  bool scale_eta_with_k = true;

  // [output]
  std::string out_path = "trace.csv";  // key: path
  double epsilon = 1e-2;
  bool timings = false;  // include wall-clock times in outputs

  static ExperimentConfig from_file(const std::string& path);
  // Throws std::invalid_argument naming the offending section.key.
  void validate() const;
};

// Instantiates the configured problem. fault_inject flips the sign of the
// hypergradient correction term inside the QuadQuad oracle (verification
// suite only; rejected for other families).
std::unique_ptr<BilevelOracle> make_oracle(const ExperimentConfig& cfg,
                                           bool fault_inject = false);

// Hyperparameters plus schedule for a given shape. K/p/Q are passed
// explicitly so sweeps can override them; Q < 0 means "use cfg.Q".
RateDerivation resolve_algorithm(const ExperimentConfig& cfg,
                                 const SmoothnessConstants& sc, int K, int p,
                                 int Q_override = -1);

// Assembles the per-seed federation run from the experiment description.
FederationConfig build_federation_config(const ExperimentConfig& cfg,
                                         const BilevelOracle& oracle,
                                         std::uint64_t seed);

// Same, but with pre-resolved hyperparameters (sweeps rescale the schedule
// before building runs).
FederationConfig build_federation_config(const ExperimentConfig& cfg,
                                         const BilevelOracle& oracle,
                                         std::uint64_t seed,
                                         const RateDerivation& rate);

}  // namespace fedbilevel
