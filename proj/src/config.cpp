#include "fedbilevel/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "fedbilevel/hypergrad.hpp"

namespace fedbilevel {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0;
  std::size_t b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

// Parsed file: section -> key -> value, all strings. Duplicate keys within a
// section are rejected to keep configs unambiguous.
using Sections = std::map<std::string, std::map<std::string, std::string>>;

Sections parse_ini(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::invalid_argument("cannot open config file: " + path);
  }
  Sections out;
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#' || stripped[0] == ';') {
      continue;
    }
    if (stripped.front() == '[') {
      if (stripped.back() != ']' || stripped.size() < 3) {
        throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                    ": malformed section header");
      }
      section = trim(stripped.substr(1, stripped.size() - 2));
      out[section];
      continue;
    }
    const std::size_t eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                  ": expected 'key = value'");
    }
    if (section.empty()) {
      throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                  ": key outside any [section]");
    }
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (key.empty()) {
      throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                  ": empty key");
    }
    if (!out[section].emplace(key, value).second) {
      throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                  ": duplicate key '" + section + "." + key +
                                  "'");
    }
  }
  return out;
}

// Typed getters. Each records the key as consumed so leftovers can be
// reported as unknown keys afterwards.
class SectionReader {
 public:
  SectionReader(const Sections& sections, std::string name)
      : name_(std::move(name)) {
    auto it = sections.find(name_);
    if (it != sections.end()) {
      kv_ = &it->second;
    }
  }

  bool has(const std::string& key) const {
    return kv_ && kv_->count(key) > 0;
  }

  std::string get_string(const std::string& key, const std::string& dflt) {
    const std::string* raw = fetch(key);
    return raw ? *raw : dflt;
  }

  double get_double(const std::string& key, double dflt) {
    const std::string* raw = fetch(key);
    if (!raw) return dflt;
    try {
      std::size_t pos = 0;
      const double v = std::stod(*raw, &pos);
      if (pos != raw->size()) throw std::invalid_argument("");
      return v;
    } catch (const std::exception&) {
      throw std::invalid_argument(name_ + "." + key + ": '" + *raw +
                                  "' is not a number");
    }
  }

  long get_long(const std::string& key, long dflt) {
    const std::string* raw = fetch(key);
    if (!raw) return dflt;
    long v = 0;
    const auto [p, ec] = std::from_chars(raw->data(), raw->data() + raw->size(), v);
    if (ec != std::errc() || p != raw->data() + raw->size()) {
      throw std::invalid_argument(name_ + "." + key + ": '" + *raw +
                                  "' is not an integer");
    }
    return v;
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t dflt) {
    const std::string* raw = fetch(key);
    if (!raw) return dflt;
    std::uint64_t v = 0;
    const auto [p, ec] = std::from_chars(raw->data(), raw->data() + raw->size(), v);
    if (ec != std::errc() || p != raw->data() + raw->size()) {
      throw std::invalid_argument(name_ + "." + key + ": '" + *raw +
                                  "' is not an unsigned integer");
    }
    return v;
  }

  bool get_bool(const std::string& key, bool dflt) {
    const std::string* raw = fetch(key);
    if (!raw) return dflt;
    std::string v = *raw;
    std::transform(v.begin(), v.end(), v.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    if (v == "true" || v == "yes" || v == "1" || v == "on") return true;
    if (v == "false" || v == "no" || v == "0" || v == "off") return false;
    throw std::invalid_argument(name_ + "." + key + ": '" + *raw +
                                "' is not a boolean");
  }

  std::vector<std::uint64_t> get_u64_list(const std::string& key,
                                          std::vector<std::uint64_t> dflt) {
    const std::string* raw = fetch(key);
    if (!raw) return dflt;
    std::vector<std::uint64_t> out;
    std::stringstream ss(*raw);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item.empty()) continue;
      std::uint64_t v = 0;
      const auto [p, ec] =
          std::from_chars(item.data(), item.data() + item.size(), v);
      if (ec != std::errc() || p != item.data() + item.size()) {
        throw std::invalid_argument(name_ + "." + key + ": '" + item +
                                    "' is not an unsigned integer");
      }
      out.push_back(v);
    }
    if (out.empty()) {
      throw std::invalid_argument(name_ + "." + key + ": empty list");
    }
    return out;
  }

  void reject_unknown() const {
    if (!kv_) return;
    for (const auto& [key, value] : *kv_) {
      if (!consumed_.count(key)) {
        throw std::invalid_argument("unknown config key '" + name_ + "." +
                                    key + "'");
      }
    }
  }

 private:
  const std::string* fetch(const std::string& key) {
    consumed_.insert(key);
    if (!kv_) return nullptr;
    auto it = kv_->find(key);
    return it == kv_->end() ? nullptr : &it->second;
  }

  std::string name_;
  const std::map<std::string, std::string>* kv_ = nullptr;
  std::set<std::string> consumed_;
};

void require(bool ok, const std::string& message) {
  if (!ok) {
    throw std::invalid_argument(message);
  }
}

}  // namespace

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  const Sections sections = parse_ini(path);
  for (const auto& [name, kv] : sections) {
    if (name != "problem" && name != "federation" && name != "algorithm" &&
        name != "output") {
      throw std::invalid_argument("unknown config section [" + name + "]");
    }
  }

  ExperimentConfig cfg;

  SectionReader problem(sections, "problem");
  cfg.family = problem.get_string("family", cfg.family);
  cfg.quad.dim_x = problem.get_long("dim_x", cfg.quad.dim_x);
  cfg.quad.dim_y = problem.get_long("dim_y", cfg.quad.dim_y);
  cfg.quad.mu = problem.get_double("mu", cfg.quad.mu);
  cfg.quad.L1 = problem.get_double("l1", cfg.quad.L1);
  cfg.quad.lambda = problem.get_double("lambda", cfg.quad.lambda);
  cfg.quad.b_scale = problem.get_double("b_scale", cfg.quad.b_scale);
  cfg.quad.B_scale = problem.get_double("coupling_scale", cfg.quad.B_scale);
  cfg.quad.yc_scale = problem.get_double("yc_scale", cfg.quad.yc_scale);
  cfg.quad.noise_std = problem.get_double("noise_std", cfg.quad.noise_std);
  const bool radius_given = problem.has("region_radius");
  cfg.quad.region_radius =
      problem.get_double("region_radius", cfg.quad.region_radius);
  cfg.quad.gen_seed = problem.get_u64("gen_seed", cfg.quad.gen_seed);
  if (radius_given) {
    // Shared key; each family keeps its own default otherwise.
    cfg.ridge.region_radius = cfg.quad.region_radius;
  }
  cfg.ridge.train_fraction =
      problem.get_double("train_fraction", cfg.ridge.train_fraction);
  cfg.ridge.split_seed = problem.get_u64("split_seed", cfg.ridge.split_seed);
  cfg.csv_path = problem.get_string("csv", cfg.csv_path);
  cfg.target_column = problem.get_string("target_column", cfg.target_column);
  cfg.synth_samples = problem.get_long("synth_samples", cfg.synth_samples);
  cfg.synth_features = problem.get_long("synth_features", cfg.synth_features);
  cfg.synth_noise = problem.get_double("synth_noise", cfg.synth_noise);
  problem.reject_unknown();

  SectionReader federation(sections, "federation");
  cfg.K = static_cast<int>(federation.get_long("devices", cfg.K));
  cfg.p = static_cast<int>(federation.get_long("period", cfg.p));
  cfg.T = federation.get_long("iterations", cfg.T);
  cfg.seeds = federation.get_u64_list("seeds", cfg.seeds);
  cfg.workers = static_cast<int>(federation.get_long("workers", cfg.workers));
  cfg.bytes_per_scalar = static_cast<int>(
      federation.get_long("bytes_per_scalar", cfg.bytes_per_scalar));
  cfg.count_broadcast =
      federation.get_bool("count_broadcast", cfg.count_broadcast);
  cfg.divergence_guard =
      federation.get_double("divergence_guard", cfg.divergence_guard);
  cfg.x0_fill = federation.get_double("x0", cfg.x0_fill);
  cfg.y0_fill = federation.get_double("y0", cfg.y0_fill);
  cfg.force_shared_stream =
      federation.get_bool("force_shared_stream", cfg.force_shared_stream);
  federation.reject_unknown();

  SectionReader algorithm(sections, "algorithm");
  cfg.algorithm = parse_algorithm(algorithm.get_string("name", "bsgm"));
  cfg.mode = algorithm.get_string("mode", cfg.mode);
  cfg.schedule = algorithm.get_string("schedule", cfg.schedule);
  const std::string theta = algorithm.get_string("theta", "auto");
  if (theta != "auto") {
    try {
      std::size_t pos = 0;
      cfg.theta = std::stod(theta, &pos);
      if (pos != theta.size()) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw std::invalid_argument("algorithm.theta: '" + theta +
                                  "' is neither a number nor 'auto'");
    }
  }
  cfg.Q = static_cast<int>(algorithm.get_long("q", cfg.Q));
  cfg.alpha = algorithm.get_double("alpha", cfg.alpha);
  cfg.beta = algorithm.get_double("beta", cfg.beta);
  cfg.batch = static_cast<int>(algorithm.get_long("batch", cfg.batch));
  cfg.eta = algorithm.get_double("eta", cfg.eta);
  cfg.rho1 = algorithm.get_double("rho1", cfg.rho1);
  cfg.rho2 = algorithm.get_double("rho2", cfg.rho2);
  cfg.scale_eta_with_k =
      algorithm.get_bool("scale_eta_with_k", cfg.scale_eta_with_k);
  algorithm.reject_unknown();

  SectionReader output(sections, "output");
  cfg.out_path = output.get_string("path", cfg.out_path);
  cfg.epsilon = output.get_double("epsilon", cfg.epsilon);
  cfg.timings = output.get_bool("timings", cfg.timings);
  output.reject_unknown();

  cfg.validate();
  return cfg;
}

void ExperimentConfig::validate() const {
  require(family == "quadquad" || family == "ridgehyper",
          "problem.family must be 'quadquad' or 'ridgehyper', got '" + family +
              "'");
  require(quad.dim_x >= 1 && quad.dim_y >= 1,
          "problem.dim_x and problem.dim_y must be >= 1");
  require(quad.mu > 0.0, "problem.mu must be positive");
  require(quad.L1 >= quad.mu, "problem.l1 must be >= problem.mu");
  require(quad.noise_std >= 0.0, "problem.noise_std must be >= 0");
  require(quad.region_radius > 0.0, "problem.region_radius must be positive");
  require(ridge.train_fraction > 0.0 && ridge.train_fraction < 1.0,
          "problem.train_fraction must lie in (0, 1)");
  require(synth_samples >= 2, "problem.synth_samples must be >= 2");
  require(synth_features >= 1, "problem.synth_features must be >= 1");
  require(synth_noise >= 0.0, "problem.synth_noise must be >= 0");

  require(K >= 1, "federation.devices must be >= 1");
  require(p >= 1, "federation.period must be >= 1");
  require(T >= 1, "federation.iterations must be >= 1");
  require(!seeds.empty(), "federation.seeds must not be empty");
  require(workers >= 1, "federation.workers must be >= 1");
  require(bytes_per_scalar >= 1, "federation.bytes_per_scalar must be >= 1");
  require(divergence_guard > 0.0,
          "federation.divergence_guard must be positive");

  require(mode == "theorem" || mode == "manual",
          "algorithm.mode must be 'theorem' or 'manual', got '" + mode + "'");
  require(schedule == "fixed" || schedule == "decaying",
          "algorithm.schedule must be 'fixed' or 'decaying', got '" +
              schedule + "'");
  require(Q >= 0, "algorithm.q must be >= 0");
  require(theta >= 0.0, "algorithm.theta must be positive or 'auto'");
  require(alpha >= 0.0, "algorithm.alpha must be >= 0 (0 = default)");
  require(beta >= 0.0, "algorithm.beta must be >= 0 (0 = default)");
  require(batch >= 0, "algorithm.batch must be >= 0 (0 = default)");
  if (mode == "manual") {
    require(eta > 0.0, "algorithm.eta must be set (> 0) in manual mode");
    require(rho1 > 0.0, "algorithm.rho1 must be set (> 0) in manual mode");
    require(rho2 > 0.0, "algorithm.rho2 must be set (> 0) in manual mode");
    require(schedule == "fixed",
            "algorithm.schedule: manual mode supports only 'fixed'");
  }
  if (algorithm == Algorithm::LocalBSGM) {
    require(schedule == "fixed",
            "algorithm.schedule: the decaying schedule is only derived for "
            "bsgvrm");
  }

  require(!out_path.empty(), "output.path must not be empty");
  require(epsilon > 0.0, "output.epsilon must be positive");
}

std::unique_ptr<BilevelOracle> make_oracle(const ExperimentConfig& cfg,
                                           bool fault_inject) {
  if (cfg.family == "quadquad") {
    QuadQuadConfig qc = cfg.quad;
    qc.flip_hypergradient_correction = fault_inject;
    return std::make_unique<QuadQuadOracle>(qc);
  }
  if (cfg.family == "ridgehyper") {
    if (fault_inject) {
      throw std::invalid_argument(
          "fault injection is only wired into the quadquad family");
    }
    Dataset data = cfg.csv_path.empty()
                       ? synth_dataset(cfg.synth_samples, cfg.synth_features,
                                       cfg.synth_noise, cfg.quad.gen_seed)
                       : load_csv_dataset(cfg.csv_path, cfg.target_column);
    return std::make_unique<RidgeHyperOracle>(std::move(data), cfg.ridge);
  }
  throw std::invalid_argument("problem.family: unknown family '" + cfg.family +
                              "'");
}

RateDerivation resolve_algorithm(const ExperimentConfig& cfg,
                                 const SmoothnessConstants& sc, int K, int p,
                                 int Q_override) {
  NeumannConfig nm;
  nm.theta = cfg.theta > 0.0 ? cfg.theta : 0.9 / sc.L1;
  nm.Q = Q_override >= 0 ? Q_override : cfg.Q;
  nm.validate_against(sc);

  if (cfg.mode == "manual") {
    RateDerivation d;
    d.hp.alpha = cfg.alpha > 0.0 ? cfg.alpha : 1.0;
    d.hp.beta = cfg.beta > 0.0 ? cfg.beta : 1.0;
    d.hp.rho1 = cfg.rho1;
    d.hp.rho2 = cfg.rho2;
    d.hp.p = p;
    d.hp.B = cfg.batch > 0 ? cfg.batch : 16;
    d.hp.neumann = nm;
    d.hp.validate(sc);
    d.schedule = StepSchedule::fixed(cfg.eta);
    return d;
  }

  const DerivedConstants dc = derived_constants(sc, nm);
  RatePreset preset;
  if (cfg.algorithm == Algorithm::LocalBSGM) {
    preset = RatePreset::BsgmFixed;
  } else {
    preset = cfg.schedule == "decaying" ? RatePreset::BsgvrmDecay
                                        : RatePreset::BsgvrmFixed;
  }
  return theorem_hyperparams(sc, dc, nm, K, p, preset, cfg.alpha, cfg.beta,
                             cfg.batch);
}

FederationConfig build_federation_config(const ExperimentConfig& cfg,
                                         const BilevelOracle& oracle,
                                         std::uint64_t seed) {
  const RateDerivation d =
      resolve_algorithm(cfg, oracle.constants(), cfg.K, cfg.p);
  return build_federation_config(cfg, oracle, seed, d);
}

FederationConfig build_federation_config(const ExperimentConfig& cfg,
                                         const BilevelOracle& oracle,
                                         std::uint64_t seed,
                                         const RateDerivation& rate) {
  FederationConfig fc;
  fc.K = cfg.K;
  fc.p = cfg.p;
  fc.T = cfg.T;
  fc.seed = seed;
  fc.algorithm = cfg.algorithm;
  fc.hp = rate.hp;
  fc.schedule = rate.schedule;
  fc.bytes_per_scalar = cfg.bytes_per_scalar;
  fc.count_broadcast = cfg.count_broadcast;
  fc.workers = cfg.workers;
  fc.force_shared_stream = cfg.force_shared_stream;
  fc.divergence_guard = cfg.divergence_guard;
  fc.x0 = Vec::Constant(oracle.dim_x(), cfg.x0_fill);
  fc.y0 = Vec::Constant(oracle.dim_y(), cfg.y0_fill);
  return fc;
}

}  // namespace fedbilevel
