#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <optional>
#include <vector>

#include "vdqn/ad.hpp"
#include "vdqn/envs.hpp"
#include "vdqn/metrics.hpp"
#include "vdqn/qlearn.hpp"
#include "vdqn/replay.hpp"
#include "vdqn/rng.hpp"
#include "vdqn/varinf.hpp"

namespace vdqn {

struct VariationalConfig {
  AgentConfig agent;
  LikelihoodConfig likelihood;
  // DVDQN: damping applied to posterior-target syncs, and the two mechanisms
  // that make up DVDQN, each switchable on its own.
  double dvdqn_tau = 0.25;
  bool dvdqn_double_target = true;
  bool dvdqn_damped_sync = true;
  // Thompson sampling cadence: false draws one policy per episode.
  bool resample_per_step = false;
  // Ablation only; variational agents explore through posterior samples.
  bool use_epsilon_greedy = false;
  double grad_clip_norm = 10.0;  // <= 0 disables
  double rho_init = -3.0;

  void validate() const {
    agent.validate();
    likelihood.validate();
    if (!(dvdqn_tau > 0.0 && dvdqn_tau <= 1.0)) throw InvalidInput("dvdqn_tau must lie in (0, 1]");
  }
};

/// Greedy action under a sampled parameter vector.
inline int act(const Eigen::VectorXd& state, const NetShape& shape, const NetParams& theta) {
  return argmax(forward(shape, theta, state));
}

/// Targets from one draw theta- ~ q(phi_target): r + gamma max_a Q(s', a).
inline Eigen::VectorXd vdqn_targets(const Batch& batch, const NetShape& shape, const VariationalParams& phi_target,
                                    double gamma, CounterRng& rng) {
  if (batch.size() == 0) throw InvalidInput("empty batch");
  const ThetaSample target = sample_theta(phi_target, rng);
  return dqn_targets(batch, shape, target.theta, gamma);
}

/// Select with theta ~ q(phi_active), evaluate with theta- ~ q(phi_target).
/// The active draw is taken from `rng` first.
inline Eigen::VectorXd dvdqn_targets(const Batch& batch, const NetShape& shape, const VariationalParams& phi_active,
                                     const VariationalParams& phi_target, double gamma, CounterRng& rng) {
  if (batch.size() == 0) throw InvalidInput("empty batch");
  const ThetaSample select = sample_theta(phi_active, rng);
  const ThetaSample eval = sample_theta(phi_target, rng);
  return ddqn_targets(batch, shape, select.theta, eval.theta, gamma);
}

/// Polyak blend of both mu and rho: tau * phi + (1 - tau) * phi_target.
inline VariationalParams update_variational_target(const VariationalParams& phi, const VariationalParams& phi_target,
                                                   double tau) {
  if (phi.size() != phi_target.size()) throw InvalidInput("posterior dimensions differ");
  if (!(tau > 0.0 && tau <= 1.0)) throw InvalidInput("tau must lie in (0, 1]");
  if (tau == 1.0) return phi;
  return VariationalParams(tau * phi.mu + (1.0 - tau) * phi_target.mu,
                           tau * phi.rho + (1.0 - tau) * phi_target.rho);
}

/// Active and target posteriors with their optimizer.
class VariationalLearner {
 public:
  VariationalLearner(NetShape shape, VariationalParams init, bool double_target, double sync_tau,
                     VariationalConfig cfg)
      : shape_(shape),
        phi_(std::move(init)),
        phi_target_(phi_),
        double_target_(double_target),
        sync_tau_(sync_tau),
        cfg_(std::move(cfg)) {
    optimizer_.kind = cfg_.agent.optimizer;
  }

  const NetShape& shape() const { return shape_; }
  const VariationalParams& phi() const { return phi_; }
  const VariationalParams& phi_target() const { return phi_target_; }
  void set_phi(VariationalParams p) { phi_ = std::move(p); }
  void set_phi_target(VariationalParams p) { phi_target_ = std::move(p); }

  Eigen::VectorXd targets(const Batch& batch, CounterRng& rng) const {
    return double_target_ ? dvdqn_targets(batch, shape_, phi_, phi_target_, cfg_.agent.gamma, rng)
                          : vdqn_targets(batch, shape_, phi_target_, cfg_.agent.gamma, rng);
  }

  /// One step on (mu, rho). Returns the pre-step objective and residual.
  StepStats train_step(const Batch& batch, CounterRng& rng) {
    const Eigen::VectorXd y = targets(batch, rng);
    const ElboResult r = elbo_loss(batch, shape_, phi_, y, cfg_.likelihood, rng);
    const Eigen::Index d = phi_.mu.size();
    Vector packed(2 * d), g(2 * d);
    packed << phi_.mu, phi_.rho;
    g << r.grad_mu, r.grad_rho;
    clip_global_norm(g, cfg_.grad_clip_norm);
    optimizer_.step(packed, g, cfg_.agent.learning_rate);
    phi_.mu = packed.head(d);
    phi_.rho = packed.tail(d);
    if (!phi_.all_finite()) throw NumericError("optimizer", "posterior parameters became non-finite");
    return StepStats{r.bellman, r.loss, phi_.rho.sum()};
  }

  void sync() { phi_target_ = update_variational_target(phi_, phi_target_, sync_tau_); }

 private:
  NetShape shape_;
  VariationalParams phi_;
  VariationalParams phi_target_;
  bool double_target_;
  double sync_tau_;
  VariationalConfig cfg_;
  Optimizer optimizer_;
};

/// Thompson-sampling agent for VDQN / DVDQN; plugs into run_episodes.
class VariationalAgent {
 public:
  VariationalAgent(const EnvSpec& env, Algorithm algorithm, const VariationalConfig& cfg)
      : cfg_(cfg),
        buffer_(cfg.agent.buffer_capacity),
        learner_(make_learner(env, algorithm, cfg)),
        act_rng_(CounterRng(cfg.agent.seed).split(streams::kAct)),
        replay_rng_(CounterRng(cfg.agent.seed).split(streams::kReplay)),
        posterior_rng_(CounterRng(cfg.agent.seed).split(streams::kPosterior)),
        update_rng_(CounterRng(cfg.agent.seed).split(streams::kUpdate)) {}

  void begin_episode(std::size_t episode) {
    episode_ = episode;
    step_in_episode_ = 0;
    if (cfg_.use_epsilon_greedy) epsilon_ = epsilon_at(episode, cfg_.agent);
    theta_episode_ = sample_theta(learner_.phi(), posterior_rng_).theta;
  }

  std::optional<double> epsilon() const { return epsilon_; }

  int act(const Eigen::VectorXd& obs) {
    if (cfg_.resample_per_step && step_in_episode_++ > 0) {
      theta_episode_ = sample_theta(learner_.phi(), posterior_rng_).theta;
    }
    const Eigen::VectorXd q = forward(learner_.shape(), theta_episode_, obs);
    return epsilon_ ? epsilon_greedy(q, *epsilon_, act_rng_) : argmax(q);
  }

  std::optional<StepStats> learn(Transition t) {
    buffer_.push(std::move(t));
    ++global_step_;
    std::optional<StepStats> stats;
    if (buffer_.size() >= std::max(cfg_.agent.warmup, cfg_.agent.batch_size)) {
      stats = learner_.train_step(buffer_.sample_batch(cfg_.agent.batch_size, replay_rng_), update_rng_);
    }
    if (global_step_ % cfg_.agent.target_sync_interval == 0) learner_.sync();
    return stats;
  }

  const VariationalLearner& learner() const { return learner_; }
  const NetParams& theta_episode() const { return theta_episode_; }

 private:
  static VariationalLearner make_learner(const EnvSpec& env, Algorithm algorithm, const VariationalConfig& cfg) {
    cfg.validate();
    if (!is_variational(algorithm)) throw InvalidInput("VariationalAgent handles VDQN and DVDQN only");
    const NetShape shape{env.obs_dim, cfg.agent.hidden, env.n_actions};
    CounterRng init_rng = CounterRng(cfg.agent.seed).split(streams::kInit);
    const bool dvdqn = algorithm == Algorithm::DVDQN;
    const bool double_target = dvdqn && cfg.dvdqn_double_target;
    const double tau = dvdqn && cfg.dvdqn_damped_sync ? cfg.dvdqn_tau : cfg.agent.tau;
    return VariationalLearner(shape, VariationalParams::init(shape, init_rng, cfg.rho_init), double_target, tau, cfg);
  }

  VariationalConfig cfg_;
  ReplayBuffer buffer_;
  VariationalLearner learner_;
  CounterRng act_rng_;
  CounterRng replay_rng_;
  CounterRng posterior_rng_;
  CounterRng update_rng_;
  NetParams theta_episode_;
  std::optional<double> epsilon_;
  std::size_t episode_ = 0;
  std::size_t global_step_ = 0;
  std::size_t step_in_episode_ = 0;
};

/// Full VDQN/DVDQN training run.
inline std::vector<EpisodeMetrics> train(Environment& env, Algorithm algorithm, const VariationalConfig& cfg,
                                         std::size_t episodes, std::size_t timesteps, const MetricsSink& sink = {}) {
  VariationalAgent agent(env.spec(), algorithm, cfg);
  return run_episodes(env, agent, cfg.agent.seed, episodes, timesteps, sink);
}

}  // namespace vdqn
