#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vdqn/ad.hpp"
#include "vdqn/envs.hpp"
#include "vdqn/errors.hpp"
#include "vdqn/metrics.hpp"
#include "vdqn/replay.hpp"
#include "vdqn/rng.hpp"

namespace vdqn {

/// Settings shared by every agent. Defaults are the values a run uses when
/// nothing is overridden; the harness writes all of them to the manifest.
struct AgentConfig {
  double gamma = 0.99;
  double learning_rate = 1e-3;
  double epsilon_start = 1.0;
  double epsilon_end = 0.1;
  std::size_t epsilon_decay_episodes = 30;
  double tau = 1.0;
  std::size_t target_sync_interval = 100;
  std::size_t batch_size = 64;
  std::size_t buffer_capacity = 50000;
  std::size_t warmup = 500;
  std::size_t hidden = 100;
  OptimizerKind optimizer = OptimizerKind::Adam;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw InvalidInput("gamma must lie in [0, 1]");
    if (!(learning_rate > 0.0)) throw InvalidInput("learning rate must be positive");
    if (!(tau > 0.0 && tau <= 1.0)) throw InvalidInput("tau must lie in (0, 1]");
    if (!(epsilon_end <= epsilon_start)) throw InvalidInput("epsilon_end must not exceed epsilon_start");
    if (!(epsilon_end >= 0.0 && epsilon_start <= 1.0)) throw InvalidInput("epsilon bounds must lie in [0, 1]");
    if (target_sync_interval == 0) throw InvalidInput("target sync interval must be positive");
    if (batch_size == 0) throw InvalidInput("batch size must be positive");
    if (buffer_capacity < batch_size) throw InvalidInput("buffer capacity must hold at least one batch");
    if (hidden == 0) throw InvalidInput("hidden width must be positive");
  }
};

/// Linear decay from epsilon_start at episode 0 to epsilon_end at
/// epsilon_decay_episodes, flat afterwards.
inline double epsilon_at(std::size_t episode, const AgentConfig& cfg) {
  if (cfg.epsilon_decay_episodes == 0 || episode >= cfg.epsilon_decay_episodes) return cfg.epsilon_end;
  const double frac = static_cast<double>(episode) / static_cast<double>(cfg.epsilon_decay_episodes);
  return cfg.epsilon_start + frac * (cfg.epsilon_end - cfg.epsilon_start);
}

/// Index of the largest entry; ties go to the lowest index.
inline int argmax(const Eigen::VectorXd& q) {
  if (q.size() == 0) throw InvalidInput("argmax of an empty vector");
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < q.size(); ++i) {
    if (q[i] > q[best]) best = i;
  }
  return static_cast<int>(best);
}

inline int epsilon_greedy(const Eigen::VectorXd& q, double epsilon, CounterRng& rng) {
  if (q.size() == 0) throw InvalidInput("epsilon_greedy needs at least one action");
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw InvalidInput("epsilon must lie in [0, 1]");
  if (epsilon > 0.0 && rng.uniform() < epsilon) {
    return static_cast<int>(rng.below(static_cast<std::uint64_t>(q.size())));
  }
  return argmax(q);
}

// Target rules on precomputed Q tables (actions x N, one column per next state).

/// r + gamma * max_a q_next(a), zero bootstrap where done.
inline Eigen::VectorXd max_targets(const Batch& batch, const Eigen::MatrixXd& q_next, double gamma) {
  Eigen::VectorXd y = batch.rewards;
  for (Eigen::Index j = 0; j < y.size(); ++j) {
    if (!batch.dones[static_cast<std::size_t>(j)]) y[j] += gamma * q_next.col(j).maxCoeff();
  }
  return y;
}

/// r + gamma * q_eval(argmax_a q_select(a)), zero bootstrap where done.
inline Eigen::VectorXd decoupled_targets(const Batch& batch, const Eigen::MatrixXd& q_select,
                                         const Eigen::MatrixXd& q_eval, double gamma) {
  Eigen::VectorXd y = batch.rewards;
  for (Eigen::Index j = 0; j < y.size(); ++j) {
    if (!batch.dones[static_cast<std::size_t>(j)]) {
      y[j] += gamma * q_eval(argmax(q_select.col(j)), j);
    }
  }
  return y;
}

inline Eigen::VectorXd dqn_targets(const Batch& batch, const NetShape& shape, const NetParams& target,
                                   double gamma) {
  if (batch.size() == 0) throw InvalidInput("empty batch");
  return max_targets(batch, forward_batch(shape, target, batch.next_states), gamma);
}

/// Action chosen by the active network, valued by the target network.
inline Eigen::VectorXd ddqn_targets(const Batch& batch, const NetShape& shape, const NetParams& active,
                                    const NetParams& target, double gamma) {
  if (batch.size() == 0) throw InvalidInput("empty batch");
  return decoupled_targets(batch, forward_batch(shape, active, batch.next_states),
                           forward_batch(shape, target, batch.next_states), gamma);
}

/// Mean squared gap between Q(s_j, a_j) and target_j. Targets are constants.
inline LossAndGradient bellman_loss(const Batch& batch, const NetShape& shape, const NetParams& active,
                                    const Eigen::VectorXd& targets) {
  if (static_cast<std::size_t>(targets.size()) != batch.size()) {
    throw InvalidInput("one target per transition required");
  }
  Matrix target_row = targets.transpose();
  return grad(shape, active, batch.states, [&](Tape& t, Tape::Var out) {
    auto chosen = t.pick(out, batch.actions);
    return t.mean(t.square(t.sub(chosen, t.constant(target_row))));
  });
}

/// tau * active + (1 - tau) * target, elementwise.
inline NetParams sync_target(const NetParams& active, const NetParams& target, double tau) {
  if (active.size() != target.size()) throw InvalidInput("sync_target: parameter lengths differ");
  if (!(tau > 0.0 && tau <= 1.0)) throw InvalidInput("tau must lie in (0, 1]");
  if (tau == 1.0) return active;
  return NetParams(tau * active.values + (1.0 - tau) * target.values);
}

// ---------------------------------------------------------------------------
// Tabular oracle

struct TabularQ {
  Eigen::MatrixXd table;  // states x actions
  double alpha = 0.1;

  TabularQ(std::size_t n_states, std::size_t n_actions, double alpha_)
      : table(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_states), static_cast<Eigen::Index>(n_actions))),
        alpha(alpha_) {
    if (!(alpha_ >= 0.0 && alpha_ <= 1.0)) throw InvalidInput("alpha must lie in [0, 1]");
  }
};

/// Q(s,a) <- (1 - alpha) Q(s,a) + alpha (r + gamma max_a' Q(s',a')).
/// `s_next` empty means terminal (no bootstrap).
inline void tabular_update(TabularQ& tq, std::size_t s, int a, double r, std::optional<std::size_t> s_next,
                           double gamma) {
  const auto rows = static_cast<std::size_t>(tq.table.rows());
  if (s >= rows || a < 0 || a >= tq.table.cols() || (s_next && *s_next >= rows)) {
    throw InvalidInput("tabular_update: index out of range");
  }
  const double bootstrap = s_next ? tq.table.row(static_cast<Eigen::Index>(*s_next)).maxCoeff() : 0.0;
  double& q = tq.table(static_cast<Eigen::Index>(s), a);
  q = (1.0 - tq.alpha) * q + tq.alpha * (r + gamma * bootstrap);
}

// ---------------------------------------------------------------------------
// Deterministic-network agents

/// Active/target network pair with its optimizer; one update per call.
class DqnLearner {
 public:
  DqnLearner(NetShape shape, NetParams init, bool double_q, AgentConfig cfg)
      : shape_(shape), active_(std::move(init)), target_(active_), double_q_(double_q), cfg_(cfg) {
    optimizer_.kind = cfg_.optimizer;
  }

  const NetShape& shape() const { return shape_; }
  const NetParams& active() const { return active_; }
  const NetParams& target() const { return target_; }
  void set_active(NetParams p) { active_ = std::move(p); }
  void set_target(NetParams p) { target_ = std::move(p); }

  Eigen::VectorXd targets(const Batch& batch) const {
    return double_q_ ? ddqn_targets(batch, shape_, active_, target_, cfg_.gamma)
                     : dqn_targets(batch, shape_, target_, cfg_.gamma);
  }

  /// One gradient step on the Bellman loss; returns the pre-step loss.
  double train_step(const Batch& batch) {
    const Eigen::VectorXd y = targets(batch);
    LossAndGradient lg = bellman_loss(batch, shape_, active_, y);
    optimizer_.step(active_.values, lg.gradient, cfg_.learning_rate);
    return lg.loss;
  }

  void sync() { target_ = sync_target(active_, target_, cfg_.tau); }

 private:
  NetShape shape_;
  NetParams active_;
  NetParams target_;
  bool double_q_;
  AgentConfig cfg_;
  Optimizer optimizer_;
};

/// Epsilon-greedy agent with replay; plugs into run_episodes.
class DqnAgent {
 public:
  DqnAgent(const EnvSpec& env, Algorithm algorithm, const AgentConfig& cfg)
      : cfg_(cfg),
        buffer_(cfg.buffer_capacity),
        learner_(make_learner(env, algorithm, cfg)),
        act_rng_(CounterRng(cfg.seed).split(streams::kAct)),
        replay_rng_(CounterRng(cfg.seed).split(streams::kReplay)) {}

  void begin_episode(std::size_t episode) { epsilon_ = epsilon_at(episode, cfg_); }
  std::optional<double> epsilon() const { return epsilon_; }

  int act(const Eigen::VectorXd& obs) {
    return epsilon_greedy(forward(learner_.shape(), learner_.active(), obs), epsilon_, act_rng_);
  }

  std::optional<StepStats> learn(Transition t) {
    buffer_.push(std::move(t));
    ++global_step_;
    std::optional<StepStats> stats;
    if (buffer_.size() >= std::max(cfg_.warmup, cfg_.batch_size)) {
      stats = StepStats{learner_.train_step(buffer_.sample_batch(cfg_.batch_size, replay_rng_)), {}, {}};
    }
    if (global_step_ % cfg_.target_sync_interval == 0) learner_.sync();
    return stats;
  }

  const DqnLearner& learner() const { return learner_; }
  const ReplayBuffer& buffer() const { return buffer_; }

 private:
  static DqnLearner make_learner(const EnvSpec& env, Algorithm algorithm, const AgentConfig& cfg) {
    cfg.validate();
    if (is_variational(algorithm)) throw InvalidInput("DqnAgent handles DQN and DDQN only");
    const NetShape shape{env.obs_dim, cfg.hidden, env.n_actions};
    CounterRng init_rng = CounterRng(cfg.seed).split(streams::kInit);
    return DqnLearner(shape, init_params(shape, init_rng), algorithm == Algorithm::DDQN, cfg);
  }

  AgentConfig cfg_;
  ReplayBuffer buffer_;
  DqnLearner learner_;
  CounterRng act_rng_;
  CounterRng replay_rng_;
  double epsilon_ = 1.0;
  std::size_t global_step_ = 0;
};

/// Full DQN/DDQN training run. One row per episode, also pushed to `sink`.
inline std::vector<EpisodeMetrics> train(Environment& env, Algorithm algorithm, const AgentConfig& cfg,
                                         std::size_t episodes, std::size_t timesteps, const MetricsSink& sink = {}) {
  DqnAgent agent(env.spec(), algorithm, cfg);
  return run_episodes(env, agent, cfg.seed, episodes, timesteps, sink);
}

}  // namespace vdqn
