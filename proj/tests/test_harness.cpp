#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "vdqn/harness.hpp"

using namespace vdqn;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("vdqn_harness_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunConfig quick(Algorithm a, std::uint64_t seed = 1) {
  RunConfig rc = default_run_config(a);
  rc.environment = "CartPole-v0";
  rc.episodes = 4;
  rc.timesteps = 40;
  rc.agent().seed = seed;
  rc.agent().warmup = 16;
  rc.agent().batch_size = 8;
  rc.agent().hidden = 16;
  return rc;
}

int run_cli(const std::string& args) {
  const char* bin = std::getenv("VDQN_RUN_BIN");
  if (!bin) return -1;
  const int status = std::system((std::string(bin) + " " + args + " > /dev/null 2>&1").c_str());
  return WEXITSTATUS(status);
}

IndexRow row(const std::string& alg, const std::string& env, std::uint64_t seed, double ips) {
  IndexRow r;
  r.algorithm = alg;
  r.environment = env;
  r.seed = seed;
  r.iterations_per_sec = ips;
  r.run_id = alg + env + std::to_string(seed);
  return r;
}

}  // namespace

TEST(Format, ShortestRoundTrip) {
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_EQ(format_double(200.0), "200");
  EXPECT_EQ(format_double(1e-3), "0.001");
  for (double x : {1.0 / 3.0, -2.5e-17, 123456.789}) EXPECT_EQ(parse_double(format_double(x)), x);
  EXPECT_THROW(parse_double("1.5x"), InvalidInput);
}

TEST(Metrics, RowFormatAndEmptyOptionalFields) {
  EpisodeMetrics m;
  m.episode = 3;
  m.total_reward = 17;
  m.epsilon = 0.91;
  m.steps = 17;
  m.iterations_per_sec = 850.5;
  m.wall_ms = 19;
  EXPECT_EQ(metrics_row(m), "3,17,,,0.91,17,850.5,19,");
  m.bellman_error = 0.25;
  m.vi_loss = -12.5;
  m.epsilon.reset();
  m.posterior_log_sigma_sum = -3000;
  EXPECT_EQ(metrics_row(m), "3,17,0.25,-12.5,,17,850.5,19,-3000");
  const EpisodeMetrics back = parse_metrics_row(metrics_row(m));
  EXPECT_EQ(back.bellman_error, m.bellman_error);
  EXPECT_EQ(back.vi_loss, m.vi_loss);
  EXPECT_FALSE(back.epsilon.has_value());
  EXPECT_EQ(back.wall_ms, 19);
  EXPECT_EQ(back.posterior_log_sigma_sum, -3000.0);
}

TEST(Metrics, StripTimingColumns) {
  const std::string csv = std::string(kMetricsHeader) + "\n0,10,,,1,10,500.25,20,\n1,12,0.5,,0.97,12,600,20,-9\n";
  EXPECT_EQ(strip_timing_columns(csv),
            std::string(kMetricsHeader) + "\n0,10,,,1,10,,,\n1,12,0.5,,0.97,12,,,-9\n");
}

TEST(Manifest, CompleteAndRoundTrips) {
  RunConfig rc = default_run_config(Algorithm::DVDQN);
  rc.environment = "Acrobot-v1";
  rc.agent().seed = 99;
  rc.agent().learning_rate = 0.0123;
  rc.cfg.dvdqn_tau = 0.4;
  rc.cfg.resample_per_step = true;
  const auto m = make_manifest(rc, "2026-01-01T00:00:00Z");
  std::set<std::string> keys;
  for (const auto& [k, v] : m) keys.insert(k);
  for (const char* k : {"algorithm", "environment", "episodes", "timesteps", "learning_rate", "gamma", "tau",
                        "lambda_entropy", "sigma_lik", "batch_size", "buffer_capacity", "seed", "code_version",
                        "started_at", "warmup", "target_sync_interval", "epsilon_start", "epsilon_end",
                        "epsilon_decay_episodes", "hidden", "optimizer", "mc_samples", "rho_init", "grad_clip_norm",
                        "dvdqn_tau", "dvdqn_double_target", "dvdqn_damped_sync", "thompson_resample",
                        "variational_epsilon_greedy", "reward_clipping", "observation_normalization"}) {
    EXPECT_TRUE(keys.count(k)) << k;
  }
  const fs::path dir = scratch("manifest");
  fs::create_directories(dir);
  write_manifest(dir / "manifest.txt", m);
  const RunConfig back = config_from_manifest(dir / "manifest.txt");
  EXPECT_EQ(make_manifest(back, "2026-01-01T00:00:00Z"), m);
}

TEST(Manifest, RejectsUnknownKeysAndBadValues) {
  RunConfig rc;
  EXPECT_THROW(apply_setting(rc, "nonsense", "1"), InvalidInput);
  EXPECT_THROW(apply_setting(rc, "batch_size", "-3"), InvalidInput);
  EXPECT_THROW(apply_setting(rc, "algorithm", "BAD"), InvalidInput);
  apply_setting(rc, "lossrate", "0.01");
  EXPECT_EQ(rc.agent().learning_rate, 0.01);
}

TEST(RunExperiment, WritesManifestAndOneRowPerEpisode) {
  const fs::path dir = scratch("single");
  const RunConfig rc = quick(Algorithm::VDQN);
  const RunOutcome o = run_experiment(rc, dir);
  EXPECT_EQ(o.exit_code, kExitOk);
  ASSERT_TRUE(fs::exists(dir / "manifest.txt"));
  const auto rows = read_metrics(dir / "metrics.csv");
  ASSERT_EQ(rows.size(), 4u);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].episode, i);
    if (rows[i].iterations_per_sec > 0.0) {
      const double implied_ms = 1000.0 * static_cast<double>(rows[i].steps) / rows[i].iterations_per_sec;
      EXPECT_LE(std::abs(implied_ms - static_cast<double>(rows[i].wall_ms)), 1.0);
    }
  }
}

TEST(RunExperiment, SameColumnsForAllAlgorithms) {
  for (Algorithm a : kAllAlgorithms) {
    const fs::path dir = scratch(std::string("cols_") + std::string(to_string(a)));
    run_experiment(quick(a), dir);
    const std::string text = slurp(dir / "metrics.csv");
    std::istringstream in(text);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, kMetricsHeader);
    while (std::getline(in, line)) {
      const auto f = split(line, ',');
      ASSERT_EQ(f.size(), 9u);
      if (!is_variational(a)) {
        EXPECT_TRUE(f[3].empty());
        EXPECT_TRUE(f[8].empty());
      }
    }
  }
}

TEST(RunExperiment, ReexecutionFromManifestIsByteIdentical) {
  const fs::path a = scratch("repro_a"), b = scratch("repro_b");
  run_experiment(quick(Algorithm::DVDQN, 7), a);
  run_experiment(config_from_manifest(a / "manifest.txt"), b);
  EXPECT_EQ(strip_timing_columns(slurp(a / "metrics.csv")), strip_timing_columns(slurp(b / "metrics.csv")));
}

TEST(RunExperiment, NumericFailureKeepsCompletedRows) {
  const fs::path dir = scratch("overflow");
  RunConfig rc = quick(Algorithm::DQN);
  rc.episodes = 50;
  rc.agent().learning_rate = 1e300;
  rc.agent().optimizer = OptimizerKind::Sgd;
  const RunOutcome o = run_experiment(rc, dir);
  EXPECT_EQ(o.exit_code, kExitNumeric);
  EXPECT_FALSE(o.error.empty());
  EXPECT_LT(o.rows.size(), 50u);
  EXPECT_EQ(read_metrics(dir / "metrics.csv").size(), o.rows.size());
}

TEST(Cli, AppendixInvocationAndErrors) {
  if (!std::getenv("VDQN_RUN_BIN")) GTEST_SKIP() << "VDQN_RUN_BIN not set";
  const fs::path dir = scratch("cli");
  EXPECT_EQ(run_cli("--algorithm DQN --environment CartPole-v0 --episodes 200 --timesteps 200 --lossrate 1e-2 "
                    "--seed 3 --out " + dir.string()),
            0);
  EXPECT_EQ(read_metrics(dir / "metrics.csv").size(), 200u);

  const fs::path bad = scratch("cli_bad");
  EXPECT_EQ(run_cli("--algorithm BAD --environment CartPole-v0 --out " + bad.string()), kExitUsage);
  EXPECT_FALSE(fs::exists(bad));
  EXPECT_EQ(run_cli("--algorithm DQN --environment Nowhere-v0 --out " + bad.string()), kExitUsage);
  EXPECT_FALSE(fs::exists(bad));
  EXPECT_EQ(run_cli("--algorithm DQN --environment CartPole-v0 --gamma 3 --out " + bad.string()), kExitUsage);
  EXPECT_FALSE(fs::exists(bad));

  const fs::path s1 = scratch("cli_s1"), s2 = scratch("cli_s2");
  const std::string common = "--algorithm VDQN --environment CartPole-v0 --episodes 5 --timesteps 60 --seed 7 --out ";
  ASSERT_EQ(run_cli(common + s1.string()), 0);
  ASSERT_EQ(run_cli(common + s2.string()), 0);
  EXPECT_EQ(strip_timing_columns(slurp(s1 / "metrics.csv")), strip_timing_columns(slurp(s2 / "metrics.csv")));

  const fs::path re = scratch("cli_re");
  ASSERT_EQ(run_cli("--manifest " + (s1 / "manifest.txt").string() + " --out " + re.string()), 0);
  EXPECT_EQ(strip_timing_columns(slurp(s1 / "metrics.csv")), strip_timing_columns(slurp(re / "metrics.csv")));
}

TEST(Cli, BadAlgorithmMessageListsNames) {
  try {
    parse_algorithm("BAD");
    FAIL();
  } catch (const InvalidInput& e) {
    for (const char* n : {"DQN", "DDQN", "VDQN", "DVDQN"}) EXPECT_NE(std::string(e.what()).find(n), std::string::npos);
  }
}

TEST(Batch, SpecParsingAndExpansion) {
  const BatchSpec spec = parse_batch_spec(R"({
    "algorithms": ["DQN", "VDQN"], "environments": ["CartPole-v0", "Acrobot-v1"], "seeds": [1, 2, 3],
    "overrides": [{"lossrate": 0.01}, {"gamma": 0.95, "thompson_resample": "step"}], "episodes": 7
  })");
  const auto ex = expand(spec);
  ASSERT_EQ(ex.size(), 2u * 2 * 3 * 2);
  std::set<std::string> ids;
  for (const auto& e : ex) ids.insert(e.run_id);
  EXPECT_EQ(ids.size(), ex.size());
  EXPECT_EQ(ex[0].config.agent().learning_rate, 0.01);
  EXPECT_EQ(ex[1].config.agent().gamma, 0.95);
  EXPECT_TRUE(ex[1].config.cfg.resample_per_step);
  EXPECT_EQ(ex[0].config.episodes, 7u);
  EXPECT_THROW(parse_batch_spec("{not json"), InvalidInput);
  EXPECT_THROW(parse_batch_spec(R"({"algorithms": ["BAD"]})"), InvalidInput);
}

TEST(Batch, DriverScaleIsEighty) {
  std::ifstream in(fs::path(VDQN_SOURCE_DIR) / "experiments" / "drive80.json");
  ASSERT_TRUE(in);
  std::stringstream ss;
  ss << in.rdbuf();
  EXPECT_EQ(expand(parse_batch_spec(ss.str())).size(), 80u);
}

TEST(Batch, EmptySpecGivesEmptyIndex) {
  const fs::path dir = scratch("empty");
  const auto rows = run_batch(parse_batch_spec(""), dir);
  EXPECT_TRUE(rows.empty());
  EXPECT_EQ(slurp(dir / "index.csv"), std::string(kIndexHeader) + "\n");
  EXPECT_TRUE(run_batch(parse_batch_spec("{}"), dir).empty());
}

TEST(Batch, FourAlgorithmsOneEnvOneSeedWithFailureRecorded) {
  const fs::path dir = scratch("four");
  BatchSpec spec;
  spec.algorithms = {"DQN", "DDQN", "VDQN", "DVDQN"};
  spec.environments = {"CartPole-v0"};
  spec.seeds = {1};
  spec.episodes = 3;
  spec.timesteps = 30;
  spec.concurrency = 2;
  spec.overrides = {{{"warmup", "10"}, {"batch_size", "8"}, {"hidden", "8"}}};
  const auto rows = run_batch(spec, dir);
  ASSERT_EQ(rows.size(), 4u);
  for (const auto& r : rows) {
    EXPECT_EQ(r.exit_code, 0) << r.error;
    EXPECT_EQ(r.episodes_completed, 3u);
    EXPECT_TRUE(fs::exists(dir / r.dir / "metrics.csv"));
    EXPECT_TRUE(fs::exists(dir / r.dir / "manifest.txt"));
  }
  const auto back = read_index(dir / "index.csv");
  ASSERT_EQ(back.size(), 4u);
  EXPECT_EQ(back[2].algorithm, "VDQN");
  EXPECT_EQ(back[2].final_mean_reward, rows[2].final_mean_reward);

  spec.environments = {"CartPole-v0", "Nowhere-v0"};
  spec.algorithms = {"DQN"};
  const auto mixed = run_batch(spec, scratch("mixed"));
  ASSERT_EQ(mixed.size(), 2u);
  EXPECT_EQ(mixed[0].exit_code, 0);
  EXPECT_EQ(mixed[1].exit_code, kExitUsage);
  EXPECT_NE(mixed[1].error.find("Nowhere-v0"), std::string::npos);
}

TEST(Throughput, OnlyDqnRows) {
  const auto rep = throughput_report({row("DQN", "A", 1, 1000), row("DQN", "A", 2, 1500), row("DQN", "B", 1, 90)});
  ASSERT_EQ(rep.rows.size(), 1u);
  EXPECT_EQ(rep.rows[0].mean, 1.0);
  EXPECT_EQ(rep.rows[0].stddev, 0.0);
  EXPECT_NE(render_throughput(rep).find("DQN        1.000 ± 0.000"), std::string::npos);
}

TEST(Throughput, EqualRatesAndHalfRate) {
  auto rep = throughput_report({row("DQN", "A", 1, 800), row("DDQN", "A", 1, 800)});
  ASSERT_EQ(rep.rows.size(), 2u);
  EXPECT_EQ(rep.rows[1].mean, 1.0);
  rep = throughput_report({row("DQN", "A", 1, 800), row("DQN", "A", 2, 600), row("DQN", "B", 1, 90),
                           row("VDQN", "A", 1, 400), row("VDQN", "A", 2, 300), row("VDQN", "B", 1, 45)});
  ASSERT_EQ(rep.rows.size(), 2u);
  EXPECT_EQ(rep.rows[1].algorithm, "VDQN");
  EXPECT_NEAR(rep.rows[1].mean, 0.5, 1e-15);
  EXPECT_NEAR(rep.rows[1].stddev, 0.0, 1e-15);
  EXPECT_NE(render_throughput(rep).find("VDQN       0.500 ± 0.000"), std::string::npos);
}

TEST(Throughput, FallbackToEnvironmentMeanAndMissingBaseline) {
  const auto rep = throughput_report(
      {row("DQN", "A", 1, 100), row("DQN", "A", 2, 300), row("DDQN", "A", 9, 100), row("DDQN", "C", 1, 50)});
  ASSERT_EQ(rep.rows.size(), 2u);
  EXPECT_NEAR(rep.rows[1].mean, 0.5, 1e-15);
  EXPECT_EQ(rep.rows[1].runs, 1u);
  ASSERT_EQ(rep.warnings.size(), 1u);
  EXPECT_NE(rep.warnings[0].find("C"), std::string::npos);
}

TEST(Throughput, SampleStandardDeviation) {
  const auto rep = throughput_report(
      {row("DQN", "A", 1, 100), row("DQN", "A", 2, 100), row("DDQN", "A", 1, 50), row("DDQN", "A", 2, 100)});
  EXPECT_NEAR(rep.rows[1].mean, 0.75, 1e-15);
  EXPECT_NEAR(rep.rows[1].stddev, std::sqrt(0.125), 1e-15);
}

TEST(Curves, SingleSeedHasZeroBand) {
  const auto c = aggregate_curves({{1.0, 2.0, 3.0}}, 2);
  ASSERT_EQ(c.size(), 3u);
  for (const auto& p : c) EXPECT_EQ(p.stddev, 0.0);
  EXPECT_EQ(c[2].mean, 2.5);
}

TEST(Curves, TwoConstantSeeds) {
  const auto c = aggregate_curves({{0.0, 0.0, 0.0}, {2.0, 2.0, 2.0}}, 3);
  for (const auto& p : c) {
    EXPECT_EQ(p.mean, 1.0);
    EXPECT_NEAR(p.stddev, std::sqrt(2.0), 1e-15);
    EXPECT_EQ(p.seeds, 2u);
  }
}

TEST(Curves, WindowOneIsIdentity) {
  const std::vector<std::optional<double>> xs{3.0, std::nullopt, -1.0, 7.5};
  const auto c = aggregate_curves({xs}, 1);
  ASSERT_EQ(c.size(), 3u);
  EXPECT_EQ(c[0].mean, 3.0);
  EXPECT_EQ(c[1].episode, 2u);
  EXPECT_EQ(c[1].mean, -1.0);
  EXPECT_EQ(c[2].mean, 7.5);
}

TEST(Curves, MismatchedLengthsTruncateWithWarning) {
  std::vector<std::string> w;
  const auto c = aggregate_curves({{1.0, 1.0, 1.0, 1.0}, {3.0, 3.0}}, 1, &w);
  EXPECT_EQ(c.size(), 2u);
  EXPECT_EQ(w.size(), 1u);
}

TEST(Curves, ExportWritesOneFilePerMetric) {
  const fs::path runs = scratch("curve_runs");
  run_experiment(quick(Algorithm::VDQN, 1), runs / "a");
  run_experiment(quick(Algorithm::VDQN, 2), runs / "b");
  run_experiment(quick(Algorithm::DQN, 1), runs / "c");
  const fs::path out = scratch("curve_out");
  std::vector<std::string> warnings;
  const auto files = curve_export({runs / "a", runs / "b", runs / "c"}, 2, out, &warnings);
  std::set<std::string> names;
  for (const auto& f : files) names.insert(f.filename().string());
  EXPECT_TRUE(names.count("VDQN_CartPole-v0_total_reward.csv"));
  EXPECT_TRUE(names.count("VDQN_CartPole-v0_vi_loss.csv"));
  EXPECT_TRUE(names.count("DQN_CartPole-v0_total_reward.csv"));
  EXPECT_FALSE(names.count("DQN_CartPole-v0_vi_loss.csv"));
  EXPECT_TRUE(warnings.empty());
  const std::string text = slurp(out / "VDQN_CartPole-v0_total_reward.csv");
  EXPECT_EQ(text.substr(0, text.find('\n')), "episode,mean,std,seeds");
}
