#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vdqn/errors.hpp"
#include "vdqn/rng.hpp"

namespace vdqn {

struct EnvSpec {
  std::string name;
  std::size_t obs_dim = 0;
  std::size_t n_actions = 0;
  std::size_t max_steps = 0;
  std::optional<double> solved_threshold;
};

struct EnvState {
  Eigen::VectorXd observation;
  std::size_t step_count = 0;
  bool done = false;
};

struct StepResult {
  EnvState state;
  double reward = 0.0;
  bool done = false;
  // Episode ended by the physics (no bootstrap past this step). `done` is
  // also set when only the step cap was hit.
  bool terminal = false;
};

/// Episodic environment with a discrete action set. Subclasses provide the
/// dynamics; this base enforces the step cap and the done/reset contract.
class Environment {
 public:
  virtual ~Environment() = default;

  const EnvSpec& spec() const { return spec_; }
  const EnvState& state() const { return state_; }

  EnvState reset(std::uint64_t seed) {
    CounterRng rng(seed);
    state_.observation = initial(rng);
    state_.step_count = 0;
    state_.done = false;
    started_ = true;
    return state_;
  }

  StepResult step(int action) {
    if (!started_) throw ContractViolation(spec_.name + ": step before reset");
    if (state_.done) throw ContractViolation(spec_.name + ": step on a finished episode");
    if (action < 0 || static_cast<std::size_t>(action) >= spec_.n_actions) {
      throw InvalidInput(spec_.name + ": action " + std::to_string(action) + " out of range");
    }
    const Outcome o = advance(action);
    state_.observation = o.observation;
    ++state_.step_count;
    const bool capped = state_.step_count >= spec_.max_steps;
    state_.done = o.terminal || capped;
    return StepResult{state_, o.reward, state_.done, o.terminal};
  }

 protected:
  struct Outcome {
    Eigen::VectorXd observation;
    double reward;
    bool terminal;
  };

  explicit Environment(EnvSpec spec) : spec_(std::move(spec)) {}

  virtual Eigen::VectorXd initial(CounterRng& rng) = 0;
  virtual Outcome advance(int action) = 0;

 private:
  EnvSpec spec_;
  EnvState state_;
  bool started_ = false;
};

/// Cart-pole balancing, explicit Euler integration.
class CartPole final : public Environment {
 public:
  static constexpr double kGravity = 9.8;
  static constexpr double kMassCart = 1.0;
  static constexpr double kMassPole = 0.1;
  static constexpr double kTotalMass = kMassCart + kMassPole;
  static constexpr double kHalfLength = 0.5;
  static constexpr double kPoleMassLength = kMassPole * kHalfLength;
  static constexpr double kForceMag = 10.0;
  static constexpr double kTau = 0.02;
  static constexpr double kThetaThreshold = 12.0 * 2.0 * std::numbers::pi / 360.0;
  static constexpr double kXThreshold = 2.4;

  explicit CartPole(std::size_t max_steps = 200, std::string name = "CartPole-v0",
                    std::optional<double> solved = 195.0)
      : Environment(EnvSpec{std::move(name), 4, 2, max_steps, solved}) {}

  /// One Euler step of the cart-pole equations of motion from `s`.
  static std::array<double, 4> dynamics(const std::array<double, 4>& s, int action) {
    const auto [x, x_dot, theta, theta_dot] = s;
    const double force = action == 1 ? kForceMag : -kForceMag;
    const double cos_t = std::cos(theta);
    const double sin_t = std::sin(theta);
    const double temp = (force + kPoleMassLength * theta_dot * theta_dot * sin_t) / kTotalMass;
    const double theta_acc =
        (kGravity * sin_t - cos_t * temp) / (kHalfLength * (4.0 / 3.0 - kMassPole * cos_t * cos_t / kTotalMass));
    const double x_acc = temp - kPoleMassLength * theta_acc * cos_t / kTotalMass;
    return {x + kTau * x_dot, x_dot + kTau * x_acc, theta + kTau * theta_dot, theta_dot + kTau * theta_acc};
  }

  /// Place the system in an arbitrary state (tests, replays).
  void set_physical_state(const std::array<double, 4>& s) { s_ = s; }

 protected:
  Eigen::VectorXd initial(CounterRng& rng) override {
    for (double& v : s_) v = rng.uniform(-0.05, 0.05);
    return observe();
  }

  Outcome advance(int action) override {
    s_ = dynamics(s_, action);
    const bool terminal = s_[0] < -kXThreshold || s_[0] > kXThreshold || s_[2] < -kThetaThreshold ||
                          s_[2] > kThetaThreshold;
    return {observe(), 1.0, terminal};
  }

 private:
  Eigen::VectorXd observe() const { return Eigen::Vector4d(s_[0], s_[1], s_[2], s_[3]); }

  std::array<double, 4> s_{};
};

/// Under-powered car in a valley; reach position 0.5.
class MountainCar final : public Environment {
 public:
  static constexpr double kMinPosition = -1.2;
  static constexpr double kMaxPosition = 0.6;
  static constexpr double kMaxSpeed = 0.07;
  static constexpr double kGoalPosition = 0.5;
  static constexpr double kGoalVelocity = 0.0;
  static constexpr double kForce = 0.001;
  static constexpr double kGravity = 0.0025;

  explicit MountainCar(std::size_t max_steps = 200)
      : Environment(EnvSpec{"MountainCar-v0", 2, 3, max_steps, -110.0}) {}

  static std::array<double, 2> dynamics(const std::array<double, 2>& s, int action) {
    auto [position, velocity] = s;
    velocity += (action - 1) * kForce + std::cos(3.0 * position) * (-kGravity);
    velocity = std::clamp(velocity, -kMaxSpeed, kMaxSpeed);
    position += velocity;
    position = std::clamp(position, kMinPosition, kMaxPosition);
    if (position == kMinPosition && velocity < 0.0) velocity = 0.0;
    return {position, velocity};
  }

  void set_physical_state(const std::array<double, 2>& s) { s_ = s; }

 protected:
  Eigen::VectorXd initial(CounterRng& rng) override {
    s_ = {rng.uniform(-0.6, -0.4), 0.0};
    return Eigen::Vector2d(s_[0], s_[1]);
  }

  Outcome advance(int action) override {
    s_ = dynamics(s_, action);
    const bool terminal = s_[0] >= kGoalPosition && s_[1] >= kGoalVelocity;
    return {Eigen::Vector2d(s_[0], s_[1]), -1.0, terminal};
  }

 private:
  std::array<double, 2> s_{};
};

/// Two-link under-actuated pendulum, swing the tip above the bar.
class Acrobot final : public Environment {
 public:
  static constexpr double kDt = 0.2;
  static constexpr double kLinkLength1 = 1.0;
  static constexpr double kLinkMass1 = 1.0;
  static constexpr double kLinkMass2 = 1.0;
  static constexpr double kLinkCom1 = 0.5;
  static constexpr double kLinkCom2 = 0.5;
  static constexpr double kLinkMoi = 1.0;
  static constexpr double kMaxVel1 = 4.0 * std::numbers::pi;
  static constexpr double kMaxVel2 = 9.0 * std::numbers::pi;
  static constexpr double kGravity = 9.8;
  static constexpr std::array<double, 3> kTorques{-1.0, 0.0, 1.0};

  using State = std::array<double, 4>;

  explicit Acrobot(std::size_t max_steps = 500)
      : Environment(EnvSpec{"Acrobot-v1", 6, 3, max_steps, -100.0}) {}

  static State derivatives(const State& s, double torque) {
    constexpr double m1 = kLinkMass1, m2 = kLinkMass2, l1 = kLinkLength1;
    constexpr double lc1 = kLinkCom1, lc2 = kLinkCom2, i1 = kLinkMoi, i2 = kLinkMoi, g = kGravity;
    constexpr double half_pi = std::numbers::pi / 2.0;
    const auto [theta1, theta2, dtheta1, dtheta2] = s;
    const double d1 = m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * std::cos(theta2)) + i1 + i2;
    const double d2 = m2 * (lc2 * lc2 + l1 * lc2 * std::cos(theta2)) + i2;
    const double phi2 = m2 * lc2 * g * std::cos(theta1 + theta2 - half_pi);
    const double phi1 = -m2 * l1 * lc2 * dtheta2 * dtheta2 * std::sin(theta2) -
                        2.0 * m2 * l1 * lc2 * dtheta2 * dtheta1 * std::sin(theta2) +
                        (m1 * lc1 + m2 * l1) * g * std::cos(theta1 - half_pi) + phi2;
    const double ddtheta2 = (torque + d2 / d1 * phi1 - m2 * l1 * lc2 * dtheta1 * dtheta1 * std::sin(theta2) - phi2) /
                            (m2 * lc2 * lc2 + i2 - d2 * d2 / d1);
    const double ddtheta1 = -(d2 * ddtheta2 + phi1) / d1;
    return {dtheta1, dtheta2, ddtheta1, ddtheta2};
  }

  /// One classical RK4 step of length kDt with constant torque.
  static State rk4(const State& s, double torque) {
    auto axpy = [](const State& y, double h, const State& k) {
      return State{y[0] + h * k[0], y[1] + h * k[1], y[2] + h * k[2], y[3] + h * k[3]};
    };
    const double h = kDt;
    const State k1 = derivatives(s, torque);
    const State k2 = derivatives(axpy(s, h / 2.0, k1), torque);
    const State k3 = derivatives(axpy(s, h / 2.0, k2), torque);
    const State k4 = derivatives(axpy(s, h, k3), torque);
    State out;
    for (std::size_t i = 0; i < 4; ++i) out[i] = s[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    return out;
  }

  static double wrap(double x, double lo, double hi) {
    const double span = hi - lo;
    while (x > hi) x -= span;
    while (x < lo) x += span;
    return x;
  }

  static State dynamics(const State& s, int action) {
    State ns = rk4(s, kTorques[static_cast<std::size_t>(action)]);
    ns[0] = wrap(ns[0], -std::numbers::pi, std::numbers::pi);
    ns[1] = wrap(ns[1], -std::numbers::pi, std::numbers::pi);
    ns[2] = std::clamp(ns[2], -kMaxVel1, kMaxVel1);
    ns[3] = std::clamp(ns[3], -kMaxVel2, kMaxVel2);
    return ns;
  }

  void set_physical_state(const State& s) { s_ = s; }

 protected:
  Eigen::VectorXd initial(CounterRng& rng) override {
    for (double& v : s_) v = rng.uniform(-0.1, 0.1);
    return observe();
  }

  Outcome advance(int action) override {
    s_ = dynamics(s_, action);
    const bool terminal = -std::cos(s_[0]) - std::cos(s_[1] + s_[0]) > 1.0;
    return {observe(), terminal ? 0.0 : -1.0, terminal};
  }

 private:
  Eigen::VectorXd observe() const {
    Eigen::VectorXd o(6);
    o << std::cos(s_[0]), std::sin(s_[0]), std::cos(s_[1]), std::sin(s_[1]), s_[2], s_[3];
    return o;
  }

  State s_{};
};

/// Linear chain 0 .. n-1. Action 0 moves left (walls at 0), action 1 moves
/// right; with probability `slip` the move is reversed. Entering state n-1
/// pays 1 and ends the episode. Observation is the state index.
class ChainMdp final : public Environment {
 public:
  ChainMdp(std::size_t n_states, double slip, std::size_t max_steps = 100)
      : Environment(EnvSpec{"Chain-" + std::to_string(n_states), 1, 2, max_steps, std::nullopt}),
        n_(n_states),
        slip_(slip) {
    if (n_states < 2) throw InvalidInput("chain needs at least 2 states");
    if (!(slip >= 0.0 && slip < 0.5)) throw InvalidInput("slip must lie in [0, 0.5)");
  }

  std::size_t n_states() const { return n_; }
  double slip() const { return slip_; }
  std::size_t position() const { return pos_; }

 protected:
  Eigen::VectorXd initial(CounterRng& rng) override {
    rng_ = rng.split(1);
    pos_ = 0;
    return observe();
  }

  Outcome advance(int action) override {
    bool right = action == 1;
    if (slip_ > 0.0 && rng_.uniform() < slip_) right = !right;
    pos_ = right ? pos_ + 1 : (pos_ == 0 ? 0 : pos_ - 1);
    const bool terminal = pos_ == n_ - 1;
    return {observe(), terminal ? 1.0 : 0.0, terminal};
  }

 private:
  Eigen::VectorXd observe() const { return Eigen::VectorXd::Constant(1, static_cast<double>(pos_)); }

  std::size_t n_;
  double slip_;
  std::size_t pos_ = 0;
  CounterRng rng_;
};

/// Q* of the chain by value iteration: rows are the n-1 non-terminal states,
/// columns are {left, right}.
inline Eigen::MatrixXd chain_q_star(std::size_t n_states, double slip, double gamma, double tol = 1e-14,
                                    std::size_t max_iters = 100000) {
  const std::size_t m = n_states - 1;
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m), 2);
  auto value = [&](std::size_t s) { return s == n_states - 1 ? 0.0 : q.row(static_cast<Eigen::Index>(s)).maxCoeff(); };
  auto backup = [&](std::size_t s, bool right) {
    const std::size_t to = right ? s + 1 : (s == 0 ? 0 : s - 1);
    const double r = to == n_states - 1 ? 1.0 : 0.0;
    return r + gamma * value(to);
  };
  for (std::size_t it = 0; it < max_iters; ++it) {
    Eigen::MatrixXd next(q.rows(), 2);
    for (std::size_t s = 0; s < m; ++s) {
      for (int a = 0; a < 2; ++a) {
        const bool right = a == 1;
        next(static_cast<Eigen::Index>(s), a) = (1.0 - slip) * backup(s, right) + slip * backup(s, !right);
      }
    }
    const double delta = (next - q).cwiseAbs().maxCoeff();
    q = next;
    if (delta < tol) break;
  }
  return q;
}

/// Sup-norm residual of the Bellman optimality equation for a chain Q table.
inline double chain_bellman_residual(const Eigen::MatrixXd& q, std::size_t n_states, double slip, double gamma) {
  auto value = [&](std::size_t s) { return s == n_states - 1 ? 0.0 : q.row(static_cast<Eigen::Index>(s)).maxCoeff(); };
  double worst = 0.0;
  for (std::size_t s = 0; s + 1 < n_states; ++s) {
    for (int a = 0; a < 2; ++a) {
      double expect = 0.0;
      for (int flip = 0; flip < 2; ++flip) {
        const bool right = (a == 1) != (flip == 1);
        const double p = flip == 1 ? slip : 1.0 - slip;
        const std::size_t to = right ? s + 1 : (s == 0 ? 0 : s - 1);
        expect += p * ((to == n_states - 1 ? 1.0 : 0.0) + gamma * value(to));
      }
      worst = std::max(worst, std::abs(q(static_cast<Eigen::Index>(s), a) - expect));
    }
  }
  return worst;
}

inline const std::vector<std::string>& control_env_names() {
  static const std::vector<std::string> names{"CartPole-v0", "CartPole-v1", "MountainCar-v0", "Acrobot-v1"};
  return names;
}

/// Construct an environment by its public identifier.
inline std::unique_ptr<Environment> make_env(std::string_view name) {
  if (name == "CartPole-v0") return std::make_unique<CartPole>(200, "CartPole-v0", 195.0);
  if (name == "CartPole-v1") return std::make_unique<CartPole>(500, "CartPole-v1", 475.0);
  if (name == "MountainCar-v0") return std::make_unique<MountainCar>(200);
  if (name == "Acrobot-v1") return std::make_unique<Acrobot>(500);
  if (name.starts_with("Chain-")) {
    const std::string n(name.substr(6));
    if (!n.empty() && n.find_first_not_of("0123456789") == std::string::npos) {
      return std::make_unique<ChainMdp>(std::stoul(n), 0.0);
    }
  }
  throw InvalidInput("unknown environment '" + std::string(name) +
                     "'; expected one of CartPole-v0, CartPole-v1, MountainCar-v0, Acrobot-v1");
}

}  // namespace vdqn
