// vdqn-run: one training run.
//
//   vdqn-run --algorithm DQN --environment CartPole-v0 --episodes 200 --timesteps 200 --lossrate 1e-2
//   vdqn-run --manifest runs/x/manifest.txt --out runs/x-again

#include <CLI11.hpp>

#include <iostream>
#include <optional>

#include "vdqn/harness.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Train one DQN/DDQN/VDQN/DVDQN agent and record per-episode metrics"};
  std::optional<std::string> algorithm, environment, manifest, out;
  std::optional<std::size_t> episodes, timesteps, batch_size, buffer, sync_interval;
  std::optional<double> lossrate, gamma, tau, lambda, sigma;
  std::optional<std::uint64_t> seed;
  app.add_option("--algorithm", algorithm, "DQN | DDQN | VDQN | DVDQN");
  app.add_option("--environment", environment, "CartPole-v0 | CartPole-v1 | MountainCar-v0 | Acrobot-v1");
  app.add_option("--episodes", episodes);
  app.add_option("--timesteps", timesteps, "step cap per episode");
  app.add_option("--lossrate", lossrate, "learning rate");
  app.add_option("--seed", seed);
  app.add_option("--gamma", gamma);
  app.add_option("--tau", tau, "Polyak coefficient for target syncs");
  app.add_option("--lambda", lambda, "entropy weight");
  app.add_option("--sigma", sigma, "likelihood scale");
  app.add_option("--batch-size", batch_size);
  app.add_option("--buffer", buffer, "replay capacity");
  app.add_option("--sync-interval", sync_interval, "steps between target syncs");
  app.add_option("--out", out, "output directory (default runs/<algorithm>_<environment>_s<seed>)");
  app.add_option("--manifest", manifest, "re-execute the run described by a manifest file");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : vdqn::kExitUsage;
  }

  vdqn::RunConfig rc;
  try {
    if (manifest) {
      rc = vdqn::config_from_manifest(*manifest);
      if (algorithm || environment) throw vdqn::InvalidInput("--manifest cannot be combined with --algorithm or --environment");
    } else {
      if (!algorithm || !environment) throw vdqn::InvalidInput("--algorithm and --environment are required");
      rc = vdqn::default_run_config(vdqn::parse_algorithm(*algorithm));
      rc.environment = *environment;
    }
    auto set = [&](const char* key, const auto& opt) {
      if (!opt) return;
      if constexpr (std::is_floating_point_v<std::decay_t<decltype(*opt)>>) {
        vdqn::apply_setting(rc, key, vdqn::format_double(*opt));
      } else {
        vdqn::apply_setting(rc, key, std::to_string(*opt));
      }
    };
    set("episodes", episodes);
    set("timesteps", timesteps);
    set("learning_rate", lossrate);
    set("seed", seed);
    set("gamma", gamma);
    set("tau", tau);
    set("lambda_entropy", lambda);
    set("sigma_lik", sigma);
    set("batch_size", batch_size);
    set("buffer_capacity", buffer);
    set("target_sync_interval", sync_interval);
    rc.validate();
  } catch (const std::exception& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return vdqn::kExitUsage;
  }

  const std::string dir = out ? *out
                              : "runs/" + std::string(vdqn::to_string(rc.algorithm)) + "_" + rc.environment + "_s" +
                                    std::to_string(rc.agent().seed);
  try {
    const vdqn::RunOutcome o = vdqn::run_experiment(rc, dir);
    if (o.exit_code != vdqn::kExitOk) {
      std::cerr << o.error << " (after " << o.rows.size() << " episodes)\n";
      return o.exit_code;
    }
    std::cout << dir << ": " << o.rows.size() << " episodes, final-20 mean reward "
              << vdqn::format_fixed(vdqn::final_mean_reward(o.rows), 2) << ", "
              << vdqn::format_fixed(o.iterations_per_sec, 1) << " it/s\n";
  } catch (const vdqn::InvalidInput& e) {
    std::cerr << "error: " << e.what() << '\n';
    return vdqn::kExitUsage;
  }
  return vdqn::kExitOk;
}
