#pragma once

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <json.hpp>

#include "vdqn/envs.hpp"
#include "vdqn/errors.hpp"
#include "vdqn/metrics.hpp"
#include "vdqn/qlearn.hpp"
#include "vdqn/vagents.hpp"
#include "vdqn/version.hpp"

namespace vdqn {

namespace fs = std::filesystem;

enum ExitCode : int { kExitOk = 0, kExitUsage = 2, kExitNumeric = 3, kExitEnvContract = 4 };

// ---------------------------------------------------------------------------
// Text formatting

/// Shortest round-trip decimal form; identical bits give identical text.
inline std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

inline std::string format_fixed(double x, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << x;
  return os.str();
}

inline double parse_double(std::string_view s) {
  double x = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), x);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw InvalidInput("not a number: '" + std::string(s) + "'");
  }
  return x;
}

inline std::vector<std::string> split(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(sep, start);
    out.emplace_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metrics file

inline constexpr std::string_view kMetricsHeader =
    "episode,total_reward,bellman_error,vi_loss,epsilon,steps,iterations_per_sec,wall_ms,posterior_log_sigma_sum";

inline std::string metrics_row(const EpisodeMetrics& m) {
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  std::string row = std::to_string(m.episode);
  row += ',' + format_double(m.total_reward);
  row += ',' + opt(m.bellman_error);
  row += ',' + opt(m.vi_loss);
  row += ',' + opt(m.epsilon);
  row += ',' + std::to_string(m.steps);
  row += ',' + format_double(m.iterations_per_sec);
  row += ',' + std::to_string(m.wall_ms);
  row += ',' + opt(m.posterior_log_sigma_sum);
  return row;
}

inline EpisodeMetrics parse_metrics_row(std::string_view line) {
  const auto f = split(line, ',');
  if (f.size() != 9) throw InvalidInput("metrics row has " + std::to_string(f.size()) + " fields, expected 9");
  auto opt = [](const std::string& s) -> std::optional<double> {
    if (s.empty()) return std::nullopt;
    return parse_double(s);
  };
  EpisodeMetrics m;
  m.episode = static_cast<std::size_t>(std::stoull(f[0]));
  m.total_reward = parse_double(f[1]);
  m.bellman_error = opt(f[2]);
  m.vi_loss = opt(f[3]);
  m.epsilon = opt(f[4]);
  m.steps = static_cast<std::size_t>(std::stoull(f[5]));
  m.iterations_per_sec = parse_double(f[6]);
  m.wall_ms = std::stoll(f[7]);
  m.posterior_log_sigma_sum = opt(f[8]);
  return m;
}

inline std::vector<EpisodeMetrics> read_metrics(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open metrics file " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) {
    throw InvalidInput("metrics file " + path.string() + " has an unexpected header");
  }
  std::vector<EpisodeMetrics> rows;
  while (std::getline(in, line)) {
    if (!line.empty()) rows.push_back(parse_metrics_row(line));
  }
  return rows;
}

/// The metrics text with the two wall-clock columns blanked, for
/// reproducibility comparisons.
inline std::string strip_timing_columns(std::string_view csv) {
  std::string out;
  std::size_t start = 0;
  while (start < csv.size()) {
    std::size_t end = csv.find('\n', start);
    if (end == std::string_view::npos) end = csv.size();
    auto f = split(csv.substr(start, end - start), ',');
    if (f.size() == 9 && f[0] != "episode") {
      f[6].clear();
      f[7].clear();
    }
    for (std::size_t i = 0; i < f.size(); ++i) {
      if (i) out += ',';
      out += f[i];
    }
    out += '\n';
    start = end + 1;
  }
  return out;
}

/// Appends rows and flushes after each one.
class MetricsWriter {
 public:
  explicit MetricsWriter(const fs::path& path) : out_(path, std::ios::trunc) {
    if (!out_) throw InvalidInput("cannot write " + path.string());
    out_ << kMetricsHeader << '\n' << std::flush;
  }
  void write(const EpisodeMetrics& m) { out_ << metrics_row(m) << '\n' << std::flush; }

 private:
  std::ofstream out_;
};

// ---------------------------------------------------------------------------
// Run configuration and manifest

struct RunConfig {
  Algorithm algorithm = Algorithm::DQN;
  std::string environment = "CartPole-v0";
  std::size_t episodes = 200;
  std::size_t timesteps = 200;
  VariationalConfig cfg;

  AgentConfig& agent() { return cfg.agent; }
  const AgentConfig& agent() const { return cfg.agent; }

  void validate() const {
    if (episodes == 0 || timesteps == 0) throw InvalidInput("episodes and timesteps must be at least 1");
    cfg.validate();
    (void)make_env(environment);
  }
};

/// Default learning rate per algorithm, used when --lossrate is not given.
inline double default_learning_rate(Algorithm a) { return is_variational(a) ? 3e-3 : 1e-3; }

inline RunConfig default_run_config(Algorithm a) {
  RunConfig rc;
  rc.algorithm = a;
  rc.agent().learning_rate = default_learning_rate(a);
  return rc;
}

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

using Manifest = std::vector<std::pair<std::string, std::string>>;

/// Every setting that influences a run, as ordered key/value pairs.
inline Manifest make_manifest(const RunConfig& rc, const std::string& started_at = utc_timestamp()) {
  const AgentConfig& a = rc.agent();
  const LikelihoodConfig& l = rc.cfg.likelihood;
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  const AdamConfig adam;
  return {
      {"algorithm", std::string(to_string(rc.algorithm))},
      {"environment", rc.environment},
      {"episodes", std::to_string(rc.episodes)},
      {"timesteps", std::to_string(rc.timesteps)},
      {"learning_rate", format_double(a.learning_rate)},
      {"gamma", format_double(a.gamma)},
      {"tau", format_double(a.tau)},
      {"lambda_entropy", format_double(l.lambda_entropy)},
      {"sigma_lik", format_double(l.sigma_lik)},
      {"batch_size", std::to_string(a.batch_size)},
      {"buffer_capacity", std::to_string(a.buffer_capacity)},
      {"seed", std::to_string(a.seed)},
      {"code_version", std::string(kCodeVersion)},
      {"started_at", started_at},
      {"warmup", std::to_string(a.warmup)},
      {"target_sync_interval", std::to_string(a.target_sync_interval)},
      {"epsilon_start", format_double(a.epsilon_start)},
      {"epsilon_end", format_double(a.epsilon_end)},
      {"epsilon_decay_episodes", std::to_string(a.epsilon_decay_episodes)},
      {"hidden", std::to_string(a.hidden)},
      {"optimizer", a.optimizer == OptimizerKind::Adam ? "adam" : "sgd"},
      {"adam_beta1", format_double(adam.beta1)},
      {"adam_beta2", format_double(adam.beta2)},
      {"adam_eps", format_double(adam.eps)},
      {"updates_per_step", "1"},
      {"mc_samples", std::to_string(l.mc_samples)},
      {"rho_init", format_double(rc.cfg.rho_init)},
      {"grad_clip_norm", format_double(rc.cfg.grad_clip_norm)},
      {"dvdqn_tau", format_double(rc.cfg.dvdqn_tau)},
      {"dvdqn_double_target", b(rc.cfg.dvdqn_double_target)},
      {"dvdqn_damped_sync", b(rc.cfg.dvdqn_damped_sync)},
      {"thompson_resample", rc.cfg.resample_per_step ? "step" : "episode"},
      {"variational_epsilon_greedy", b(rc.cfg.use_epsilon_greedy)},
      {"reward_clipping", "none"},
      {"observation_normalization", "none"},
      {"replay_sampling", "uniform-with-replacement"},
      {"prng", "counter-splitmix64"},
  };
}

inline void write_manifest(const fs::path& path, const Manifest& m) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InvalidInput("cannot write " + path.string());
  for (const auto& [k, v] : m) out << k << " = " << v << '\n';
}

inline std::map<std::string, std::string> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open manifest " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    if (line.empty() || line[0] == '#') continue;
    if (eq == std::string::npos) throw InvalidInput("malformed manifest line: " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return kv;
}

namespace detail {

inline bool parse_bool(const std::string& s) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw InvalidInput("not a boolean: '" + s + "'");
}

inline std::size_t parse_size(const std::string& s) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
    throw InvalidInput("not a non-negative integer: '" + s + "'");
  }
  return static_cast<std::size_t>(std::stoull(s));
}

}  // namespace detail

/// Apply one named setting. Keys are manifest keys; CLI flag spellings
/// (`lossrate`, `lambda`, `sigma`, `buffer`, `sync-interval`, `batch-size`)
/// are accepted as aliases so batch specs can use either.
inline void apply_setting(RunConfig& rc, const std::string& key, const std::string& value) {
  AgentConfig& a = rc.agent();
  LikelihoodConfig& l = rc.cfg.likelihood;
  if (key == "algorithm") rc.algorithm = parse_algorithm(value);
  else if (key == "environment") rc.environment = value;
  else if (key == "episodes") rc.episodes = detail::parse_size(value);
  else if (key == "timesteps") rc.timesteps = detail::parse_size(value);
  else if (key == "learning_rate" || key == "lossrate") a.learning_rate = parse_double(value);
  else if (key == "gamma") a.gamma = parse_double(value);
  else if (key == "tau") a.tau = parse_double(value);
  else if (key == "lambda_entropy" || key == "lambda") l.lambda_entropy = parse_double(value);
  else if (key == "sigma_lik" || key == "sigma") l.sigma_lik = parse_double(value);
  else if (key == "batch_size" || key == "batch-size") a.batch_size = detail::parse_size(value);
  else if (key == "buffer_capacity" || key == "buffer") a.buffer_capacity = detail::parse_size(value);
  else if (key == "seed") a.seed = detail::parse_size(value);
  else if (key == "warmup") a.warmup = detail::parse_size(value);
  else if (key == "target_sync_interval" || key == "sync-interval") a.target_sync_interval = detail::parse_size(value);
  else if (key == "epsilon_start") a.epsilon_start = parse_double(value);
  else if (key == "epsilon_end") a.epsilon_end = parse_double(value);
  else if (key == "epsilon_decay_episodes") a.epsilon_decay_episodes = detail::parse_size(value);
  else if (key == "hidden") a.hidden = detail::parse_size(value);
  else if (key == "optimizer") {
    if (value != "adam" && value != "sgd") throw InvalidInput("optimizer must be adam or sgd");
    a.optimizer = value == "adam" ? OptimizerKind::Adam : OptimizerKind::Sgd;
  } else if (key == "mc_samples") l.mc_samples = detail::parse_size(value);
  else if (key == "rho_init") rc.cfg.rho_init = parse_double(value);
  else if (key == "grad_clip_norm") rc.cfg.grad_clip_norm = parse_double(value);
  else if (key == "dvdqn_tau") rc.cfg.dvdqn_tau = parse_double(value);
  else if (key == "dvdqn_double_target") rc.cfg.dvdqn_double_target = detail::parse_bool(value);
  else if (key == "dvdqn_damped_sync") rc.cfg.dvdqn_damped_sync = detail::parse_bool(value);
  else if (key == "thompson_resample") {
    if (value != "step" && value != "episode") throw InvalidInput("thompson_resample must be step or episode");
    rc.cfg.resample_per_step = value == "step";
  } else if (key == "variational_epsilon_greedy") rc.cfg.use_epsilon_greedy = detail::parse_bool(value);
  else throw InvalidInput("unknown setting '" + key + "'");
}

// Manifest keys that record fixed behaviour rather than settings.
inline bool is_informational_key(const std::string& key) {
  static const std::vector<std::string> keys{"code_version", "started_at",   "adam_beta1",
                                             "adam_beta2",   "adam_eps",     "updates_per_step",
                                             "reward_clipping", "observation_normalization",
                                             "replay_sampling", "prng"};
  return std::find(keys.begin(), keys.end(), key) != keys.end();
}

/// Rebuild a run configuration from a manifest file.
inline RunConfig config_from_manifest(const fs::path& path) {
  const auto kv = read_manifest(path);
  const auto alg = kv.find("algorithm");
  if (alg == kv.end()) throw InvalidInput("manifest lacks an algorithm");
  RunConfig rc = default_run_config(parse_algorithm(alg->second));
  for (const auto& [k, v] : kv) {
    if (!is_informational_key(k)) apply_setting(rc, k, v);
  }
  rc.validate();
  return rc;
}

// ---------------------------------------------------------------------------
// Single run

struct RunOutcome {
  int exit_code = kExitOk;
  std::string error;
  std::vector<EpisodeMetrics> rows;
  double iterations_per_sec = 0.0;  // whole-run steps / wall seconds
};

inline constexpr std::string_view kMetricsFile = "metrics.csv";
inline constexpr std::string_view kManifestFile = "manifest.txt";

/// Train once, writing manifest.txt and metrics.csv into `dir`. Metrics are
/// flushed per episode, so a failed run keeps every completed row.
/// The configuration must already be validated.
inline RunOutcome run_experiment(const RunConfig& rc, const fs::path& dir) {
  fs::create_directories(dir);
  write_manifest(dir / kManifestFile, make_manifest(rc));
  MetricsWriter writer(dir / kMetricsFile);
  RunOutcome outcome;
  auto sink = [&](const EpisodeMetrics& m) {
    writer.write(m);
    outcome.rows.push_back(m);
  };
  const auto t0 = std::chrono::steady_clock::now();
  try {
    auto env = make_env(rc.environment);
    if (is_variational(rc.algorithm)) {
      train(*env, rc.algorithm, rc.cfg, rc.episodes, rc.timesteps, sink);
    } else {
      train(*env, rc.algorithm, rc.agent(), rc.episodes, rc.timesteps, sink);
    }
  } catch (const NumericError& e) {
    outcome.exit_code = kExitNumeric;
    outcome.error = std::string("numeric failure in ") + e.where() + ": " + e.what();
  } catch (const ContractViolation& e) {
    outcome.exit_code = kExitEnvContract;
    outcome.error = std::string("environment contract violation: ") + e.what();
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::size_t steps = 0;
  for (const auto& r : outcome.rows) steps += r.steps;
  outcome.iterations_per_sec = seconds > 0.0 ? static_cast<double>(steps) / seconds : 0.0;
  return outcome;
}

/// Mean total reward of the last `window` rows (all rows if fewer).
inline double final_mean_reward(const std::vector<EpisodeMetrics>& rows, std::size_t window = 20) {
  if (rows.empty()) return 0.0;
  const std::size_t n = std::min(window, rows.size());
  double s = 0.0;
  for (std::size_t i = rows.size() - n; i < rows.size(); ++i) s += rows[i].total_reward;
  return s / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Batch runs

struct BatchSpec {
  std::vector<std::string> algorithms;
  std::vector<std::string> environments;
  std::vector<std::uint64_t> seeds;
  // Each entry is a set of settings applied on top of the per-algorithm
  // defaults; one experiment per entry. Empty means a single `{}` entry.
  std::vector<std::map<std::string, std::string>> overrides;
  std::size_t episodes = 200;
  std::size_t timesteps = 200;
  std::size_t concurrency = 1;
  bool throughput_mode = false;
  std::size_t final_window = 20;
};

inline BatchSpec parse_batch_spec(std::string_view text) {
  BatchSpec spec;
  if (text.find_first_not_of(" \t\r\n") == std::string_view::npos) return spec;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("batch spec is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw InvalidInput("batch spec must be a JSON object");
  try {
    spec.algorithms = j.value("algorithms", std::vector<std::string>{});
    spec.environments = j.value("environments", std::vector<std::string>{});
    spec.seeds = j.value("seeds", std::vector<std::uint64_t>{});
    spec.episodes = j.value("episodes", spec.episodes);
    spec.timesteps = j.value("timesteps", spec.timesteps);
    spec.concurrency = j.value("concurrency", spec.concurrency);
    spec.throughput_mode = j.value("throughput_mode", spec.throughput_mode);
    spec.final_window = j.value("final_window", spec.final_window);
    for (const auto& o : j.value("overrides", nlohmann::json::array())) {
      std::map<std::string, std::string> m;
      for (const auto& [k, v] : o.items()) {
        if (v.is_string()) m[k] = v.get<std::string>();
        else if (v.is_boolean()) m[k] = v.get<bool>() ? "true" : "false";
        else if (v.is_number_integer()) m[k] = std::to_string(v.get<std::int64_t>());
        else if (v.is_number()) m[k] = format_double(v.get<double>());
        else throw InvalidInput("override '" + k + "' must be a scalar");
      }
      spec.overrides.push_back(std::move(m));
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("batch spec has a malformed field: ") + e.what());
  }
  for (const auto& a : spec.algorithms) (void)parse_algorithm(a);
  return spec;
}

struct Experiment {
  std::string run_id;
  std::size_t override_index = 0;
  RunConfig config;
};

/// Expand the cross product algorithms x environments x seeds x overrides.
inline std::vector<Experiment> expand(const BatchSpec& spec) {
  std::vector<std::map<std::string, std::string>> overrides = spec.overrides;
  if (overrides.empty()) overrides.emplace_back();
  std::vector<Experiment> out;
  for (const auto& alg : spec.algorithms) {
    for (const auto& env : spec.environments) {
      for (const auto seed : spec.seeds) {
        for (std::size_t k = 0; k < overrides.size(); ++k) {
          Experiment e;
          e.override_index = k;
          e.config = default_run_config(parse_algorithm(alg));
          e.config.environment = env;
          e.config.episodes = spec.episodes;
          e.config.timesteps = spec.timesteps;
          e.config.agent().seed = seed;
          for (const auto& [key, value] : overrides[k]) apply_setting(e.config, key, value);
          e.run_id = alg + "_" + env + "_s" + std::to_string(seed) + "_o" + std::to_string(k);
          out.push_back(std::move(e));
        }
      }
    }
  }
  return out;
}

struct IndexRow {
  std::string run_id;
  std::string algorithm;
  std::string environment;
  std::uint64_t seed = 0;
  std::size_t override_index = 0;
  int exit_code = 0;
  std::string error;
  std::size_t episodes_completed = 0;
  double final_mean_reward = 0.0;
  double iterations_per_sec = 0.0;
  std::string dir;
};

inline constexpr std::string_view kIndexHeader =
    "run_id,algorithm,environment,seed,override,exit_code,error,episodes_completed,final_mean_reward,"
    "iterations_per_sec,dir";

inline std::string sanitize_field(std::string s) {
  std::replace(s.begin(), s.end(), ',', ';');
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

inline void write_index(const fs::path& path, const std::vector<IndexRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InvalidInput("cannot write " + path.string());
  out << kIndexHeader << '\n';
  for (const auto& r : rows) {
    out << r.run_id << ',' << r.algorithm << ',' << r.environment << ',' << r.seed << ',' << r.override_index << ','
        << r.exit_code << ',' << sanitize_field(r.error) << ',' << r.episodes_completed << ','
        << format_double(r.final_mean_reward) << ',' << format_double(r.iterations_per_sec) << ',' << r.dir << '\n';
  }
}

inline std::vector<IndexRow> read_index(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open index " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kIndexHeader) throw InvalidInput("index has an unexpected header");
  std::vector<IndexRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 11) throw InvalidInput("index row has " + std::to_string(f.size()) + " fields, expected 11");
    IndexRow r;
    r.run_id = f[0];
    r.algorithm = f[1];
    r.environment = f[2];
    r.seed = std::stoull(f[3]);
    r.override_index = std::stoull(f[4]);
    r.exit_code = std::stoi(f[5]);
    r.error = f[6];
    r.episodes_completed = std::stoull(f[7]);
    r.final_mean_reward = parse_double(f[8]);
    r.iterations_per_sec = parse_double(f[9]);
    r.dir = f[10];
    rows.push_back(std::move(r));
  }
  return rows;
}

/// Run every experiment of `spec` under `out_dir/<run_id>/` and write
/// `out_dir/index.csv`. Failed runs are recorded and the batch continues.
inline std::vector<IndexRow> run_batch(const BatchSpec& spec, const fs::path& out_dir,
                                       const std::function<void(const IndexRow&)>& progress = {}) {
  const std::vector<Experiment> experiments = expand(spec);
  std::vector<IndexRow> rows(experiments.size());
  fs::create_directories(out_dir);
  std::atomic<std::size_t> next{0};
  std::mutex progress_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= experiments.size()) return;
      const Experiment& e = experiments[i];
      IndexRow& row = rows[i];
      row.run_id = e.run_id;
      row.algorithm = std::string(to_string(e.config.algorithm));
      row.environment = e.config.environment;
      row.seed = e.config.agent().seed;
      row.override_index = e.override_index;
      row.dir = e.run_id;
      try {
        e.config.validate();
        const RunOutcome o = run_experiment(e.config, out_dir / e.run_id);
        row.exit_code = o.exit_code;
        row.error = o.error;
        row.episodes_completed = o.rows.size();
        row.final_mean_reward = final_mean_reward(o.rows, spec.final_window);
        row.iterations_per_sec = o.iterations_per_sec;
      } catch (const std::exception& ex) {
        row.exit_code = kExitUsage;
        row.error = ex.what();
      }
      if (progress) {
        std::lock_guard lock(progress_mutex);
        progress(row);
      }
    }
  };
  const std::size_t threads = spec.throughput_mode ? 1 : std::max<std::size_t>(1, spec.concurrency);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(threads, experiments.size()); ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  write_index(out_dir / "index.csv", rows);
  return rows;
}

// ---------------------------------------------------------------------------
// Throughput report

struct ThroughputRow {
  std::string algorithm;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; 0 for a single run
  std::size_t runs = 0;
};

struct ThroughputReport {
  std::vector<ThroughputRow> rows;
  std::vector<std::string> warnings;
};

inline double sample_stddev(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

/// Iterations/sec of each run relative to DQN in the same environment.
///
/// A run is compared with the DQN run sharing its environment, seed and
/// override index; when no such run exists, with the mean of that
/// environment's DQN runs. DQN runs are paired with themselves and so
/// report exactly 1. Environments without any DQN run are skipped with a
/// warning. Failed runs are ignored.
inline ThroughputReport throughput_report(const std::vector<IndexRow>& index) {
  ThroughputReport report;
  using Key = std::tuple<std::string, std::uint64_t, std::size_t>;
  std::map<Key, double> paired;
  std::map<std::string, std::vector<double>> env_dqn;
  for (const auto& r : index) {
    if (r.exit_code != kExitOk || !(r.iterations_per_sec > 0.0)) continue;
    if (r.algorithm == "DQN") {
      paired[{r.environment, r.seed, r.override_index}] = r.iterations_per_sec;
      env_dqn[r.environment].push_back(r.iterations_per_sec);
    }
  }
  std::map<std::string, std::vector<double>> ratios;
  std::vector<std::string> skipped;
  for (const auto& r : index) {
    if (r.exit_code != kExitOk || !(r.iterations_per_sec > 0.0)) continue;
    double base = 0.0;
    if (auto it = paired.find({r.environment, r.seed, r.override_index}); it != paired.end()) {
      base = it->second;
    } else if (auto e = env_dqn.find(r.environment); e != env_dqn.end()) {
      for (double x : e->second) base += x;
      base /= static_cast<double>(e->second.size());
    } else {
      if (std::find(skipped.begin(), skipped.end(), r.environment) == skipped.end()) {
        skipped.push_back(r.environment);
        report.warnings.push_back("no DQN baseline for " + r.environment + "; environment excluded");
      }
      continue;
    }
    ratios[r.algorithm].push_back(r.algorithm == "DQN" ? 1.0 : r.iterations_per_sec / base);
  }
  for (Algorithm a : kAllAlgorithms) {
    const auto it = ratios.find(std::string(to_string(a)));
    if (it == ratios.end()) continue;
    ThroughputRow row;
    row.algorithm = it->first;
    row.runs = it->second.size();
    for (double x : it->second) row.mean += x;
    row.mean /= static_cast<double>(row.runs);
    row.stddev = sample_stddev(it->second);
    report.rows.push_back(row);
  }
  return report;
}

inline std::string render_throughput(const ThroughputReport& report) {
  std::ostringstream os;
  os << "algorithm  relative_iterations_per_sec\n";
  for (const auto& r : report.rows) {
    os << std::left << std::setw(11) << r.algorithm << format_fixed(r.mean, 3) << " ± "
       << format_fixed(r.stddev, 3) << '\n';
  }
  for (const auto& w : report.warnings) os << "warning: " << w << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Curve export

struct CurvePoint {
  std::size_t episode = 0;
  double mean = 0.0;
  double stddev = 0.0;  // sample std across seeds, 0 with one seed
  std::size_t seeds = 0;
};

/// Trailing-window mean of the present values; absent when the window holds none.
inline std::vector<std::optional<double>> smooth(const std::vector<std::optional<double>>& xs, std::size_t window) {
  if (window == 0) throw InvalidInput("smoothing window must be positive");
  std::vector<std::optional<double>> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const std::size_t begin = i + 1 >= window ? i + 1 - window : 0;
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t k = begin; k <= i; ++k) {
      if (xs[k]) {
        s += *xs[k];
        ++n;
      }
    }
    if (n) out[i] = s / static_cast<double>(n);
  }
  return out;
}

/// Cross-seed mean and sample std per episode after smoothing each seed.
/// Series of different lengths are truncated to the shortest; a warning is
/// appended when that happens.
inline std::vector<CurvePoint> aggregate_curves(const std::vector<std::vector<std::optional<double>>>& per_seed,
                                                std::size_t window, std::vector<std::string>* warnings = nullptr) {
  if (per_seed.empty()) return {};
  std::size_t len = per_seed.front().size();
  bool mismatch = false;
  for (const auto& s : per_seed) {
    if (s.size() != len) mismatch = true;
    len = std::min(len, s.size());
  }
  if (mismatch && warnings) {
    warnings->push_back("episode counts differ across seeds; truncated to " + std::to_string(len));
  }
  std::vector<std::vector<std::optional<double>>> smoothed;
  for (const auto& s : per_seed) {
    smoothed.push_back(smooth(std::vector<std::optional<double>>(s.begin(), s.begin() + static_cast<long>(len)), window));
  }
  std::vector<CurvePoint> out;
  for (std::size_t i = 0; i < len; ++i) {
    std::vector<double> vals;
    for (const auto& s : smoothed) {
      if (s[i]) vals.push_back(*s[i]);
    }
    if (vals.empty()) continue;
    CurvePoint p;
    p.episode = i;
    p.seeds = vals.size();
    for (double v : vals) p.mean += v;
    p.mean /= static_cast<double>(vals.size());
    p.stddev = sample_stddev(vals);
    out.push_back(p);
  }
  return out;
}

inline const std::vector<std::string>& curve_metrics() {
  static const std::vector<std::string> m{"total_reward", "bellman_error", "vi_loss"};
  return m;
}

inline std::optional<double> metric_value(const EpisodeMetrics& m, const std::string& name) {
  if (name == "total_reward") return m.total_reward;
  if (name == "bellman_error") return m.bellman_error;
  if (name == "vi_loss") return m.vi_loss;
  throw InvalidInput("unknown metric '" + name + "'");
}

/// For each (algorithm, environment) found among `run_dirs`, write
/// `<algorithm>_<environment>_<metric>.csv` with columns
/// episode,mean,std,seeds. Metrics with no values at all are skipped.
/// Returns the written files; warnings are appended to `warnings`.
inline std::vector<fs::path> curve_export(const std::vector<fs::path>& run_dirs, std::size_t window,
                                          const fs::path& out_dir, std::vector<std::string>* warnings = nullptr) {
  std::map<std::pair<std::string, std::string>, std::vector<std::vector<EpisodeMetrics>>> groups;
  for (const auto& dir : run_dirs) {
    const auto kv = read_manifest(dir / kManifestFile);
    groups[{kv.at("algorithm"), kv.at("environment")}].push_back(read_metrics(dir / kMetricsFile));
  }
  fs::create_directories(out_dir);
  std::vector<fs::path> written;
  for (const auto& [key, runs] : groups) {
    for (const auto& metric : curve_metrics()) {
      std::vector<std::vector<std::optional<double>>> series;
      bool any = false;
      for (const auto& rows : runs) {
        std::vector<std::optional<double>> s;
        for (const auto& r : rows) {
          s.push_back(metric_value(r, metric));
          any = any || s.back().has_value();
        }
        series.push_back(std::move(s));
      }
      if (!any) continue;
      std::vector<std::string> local;
      const auto curve = aggregate_curves(series, window, &local);
      if (warnings) {
        for (const auto& w : local) warnings->push_back(key.first + "/" + key.second + "/" + metric + ": " + w);
      }
      const fs::path path = out_dir / (key.first + "_" + key.second + "_" + metric + ".csv");
      std::ofstream out(path, std::ios::trunc);
      out << "episode,mean,std,seeds\n";
      for (const auto& p : curve) {
        out << p.episode << ',' << format_double(p.mean) << ',' << format_double(p.stddev) << ',' << p.seeds << '\n';
      }
      written.push_back(path);
    }
  }
  return written;
}

}  // namespace vdqn
