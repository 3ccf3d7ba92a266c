#pragma once

#include <Eigen/Core>

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vdqn/envs.hpp"
#include "vdqn/errors.hpp"
#include "vdqn/replay.hpp"
#include "vdqn/rng.hpp"

namespace vdqn {

enum class Algorithm { DQN, DDQN, VDQN, DVDQN };

inline constexpr std::array<Algorithm, 4> kAllAlgorithms{Algorithm::DQN, Algorithm::DDQN, Algorithm::VDQN,
                                                         Algorithm::DVDQN};

inline std::string_view to_string(Algorithm a) {
  switch (a) {
    case Algorithm::DQN: return "DQN";
    case Algorithm::DDQN: return "DDQN";
    case Algorithm::VDQN: return "VDQN";
    case Algorithm::DVDQN: return "DVDQN";
  }
  return "?";
}

inline Algorithm parse_algorithm(std::string_view name) {
  for (Algorithm a : kAllAlgorithms) {
    if (to_string(a) == name) return a;
  }
  throw InvalidInput("unknown algorithm '" + std::string(name) + "'; expected one of DQN, DDQN, VDQN, DVDQN");
}

inline bool is_variational(Algorithm a) { return a == Algorithm::VDQN || a == Algorithm::DVDQN; }

/// One row per completed episode.
struct EpisodeMetrics {
  std::size_t episode = 0;
  double total_reward = 0.0;
  std::optional<double> bellman_error;  // absent when no training step ran
  std::optional<double> vi_loss;        // variational agents only
  std::optional<double> epsilon;        // epsilon-greedy agents only
  std::size_t steps = 0;
  double iterations_per_sec = 0.0;
  std::int64_t wall_ms = 0;
  // Mean sum of rho over the episode's training steps (posterior spread
  // telemetry, variational agents only).
  std::optional<double> posterior_log_sigma_sum;
};

/// Receives each row as soon as its episode completes.
using MetricsSink = std::function<void(const EpisodeMetrics&)>;

/// What a single learning update reports.
struct StepStats {
  double bellman_error = 0.0;
  std::optional<double> vi_loss;
  std::optional<double> log_sigma_sum;
};

// RNG stream ids derived from a run seed.
namespace streams {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kEnv = 2;
inline constexpr std::uint64_t kAct = 3;
inline constexpr std::uint64_t kReplay = 4;
inline constexpr std::uint64_t kPosterior = 5;
inline constexpr std::uint64_t kUpdate = 6;
}  // namespace streams

/// Drives `agent` through `episodes` episodes of at most `timesteps` steps.
///
/// Agent requirements:
///   void begin_episode(std::size_t episode);
///   std::optional<double> epsilon() const;
///   int act(const Eigen::VectorXd& observation);
///   std::optional<StepStats> learn(Transition t);   // push + maybe update + maybe sync
template <class Agent>
std::vector<EpisodeMetrics> run_episodes(Environment& env, Agent& agent, std::uint64_t seed, std::size_t episodes,
                                         std::size_t timesteps, const MetricsSink& sink) {
  if (episodes == 0 || timesteps == 0) throw InvalidInput("episodes and timesteps must be at least 1");
  CounterRng env_rng = CounterRng(seed).split(streams::kEnv);
  std::vector<EpisodeMetrics> rows;
  rows.reserve(episodes);
  for (std::size_t ep = 0; ep < episodes; ++ep) {
    const auto t0 = std::chrono::steady_clock::now();
    agent.begin_episode(ep);
    EnvState s = env.reset(env_rng());
    EpisodeMetrics row;
    row.episode = ep;
    row.epsilon = agent.epsilon();
    double bellman_sum = 0.0, vi_sum = 0.0, spread_sum = 0.0;
    std::size_t updates = 0, vi_updates = 0, spread_updates = 0;
    while (row.steps < timesteps && !s.done) {
      const int action = agent.act(s.observation);
      StepResult r = env.step(action);
      row.total_reward += r.reward;
      ++row.steps;
      if (auto stats = agent.learn(Transition{s.observation, action, r.reward, r.state.observation, r.terminal})) {
        bellman_sum += stats->bellman_error;
        ++updates;
        if (stats->vi_loss) {
          vi_sum += *stats->vi_loss;
          ++vi_updates;
        }
        if (stats->log_sigma_sum) {
          spread_sum += *stats->log_sigma_sum;
          ++spread_updates;
        }
      }
      s = std::move(r.state);
    }
    if (updates > 0) row.bellman_error = bellman_sum / static_cast<double>(updates);
    if (vi_updates > 0) row.vi_loss = vi_sum / static_cast<double>(vi_updates);
    if (spread_updates > 0) row.posterior_log_sigma_sum = spread_sum / static_cast<double>(spread_updates);
    const auto elapsed = std::chrono::steady_clock::now() - t0;
    const double seconds = std::chrono::duration<double>(elapsed).count();
    row.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(elapsed).count();
    row.iterations_per_sec = seconds > 0.0 ? static_cast<double>(row.steps) / seconds : 0.0;
    if (sink) sink(row);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace vdqn
