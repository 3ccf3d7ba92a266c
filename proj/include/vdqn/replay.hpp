#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "vdqn/errors.hpp"
#include "vdqn/rng.hpp"

namespace vdqn {

/// One interaction record. `done` means next_state is terminal: targets
/// never bootstrap through it. Hitting the step cap alone does not set it.
struct Transition {
  Eigen::VectorXd state;
  int action = 0;
  double reward = 0.0;
  Eigen::VectorXd next_state;
  bool done = false;

  friend bool operator==(const Transition& a, const Transition& b) {
    return a.action == b.action && a.reward == b.reward && a.done == b.done &&
           a.state.size() == b.state.size() && a.state == b.state && a.next_state.size() == b.next_state.size() &&
           a.next_state == b.next_state;
  }
};

/// Column-stacked view of a list of transitions, the form the losses consume.
struct Batch {
  Eigen::MatrixXd states;       // obs_dim x N
  std::vector<int> actions;
  Eigen::VectorXd rewards;
  Eigen::MatrixXd next_states;  // obs_dim x N
  std::vector<bool> dones;

  std::size_t size() const { return actions.size(); }

  static Batch from(std::span<const Transition> ts) {
    if (ts.empty()) throw InvalidInput("batch must be nonempty");
    const auto dim = ts.front().state.size();
    const auto n = static_cast<Eigen::Index>(ts.size());
    Batch b;
    b.states.resize(dim, n);
    b.next_states.resize(dim, n);
    b.rewards.resize(n);
    b.actions.reserve(ts.size());
    b.dones.reserve(ts.size());
    for (Eigen::Index j = 0; j < n; ++j) {
      const Transition& t = ts[static_cast<std::size_t>(j)];
      if (t.state.size() != dim || t.next_state.size() != dim) {
        throw InvalidInput("batch transitions disagree on state dimension");
      }
      b.states.col(j) = t.state;
      b.next_states.col(j) = t.next_state;
      b.rewards[j] = t.reward;
      b.actions.push_back(t.action);
      b.dones.push_back(t.done);
    }
    return b;
  }
};

/// Fixed-capacity FIFO of transitions with uniform with-replacement sampling.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw InvalidInput("replay capacity must be positive");
    storage_.reserve(std::min<std::size_t>(capacity, 1 << 16));
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return storage_.size(); }

  void push(Transition t) {
    if (t.state.size() != t.next_state.size()) {
      throw InvalidInput("transition state and next_state dimensions differ");
    }
    if (storage_.size() < capacity_) {
      storage_.push_back(std::move(t));
    } else {
      storage_[head_] = std::move(t);
      head_ = (head_ + 1) % capacity_;
    }
  }

  /// i-th oldest transition currently held.
  const Transition& at(std::size_t i) const { return storage_.at((head_ + i) % storage_.size()); }

  std::vector<Transition> contents() const {
    std::vector<Transition> out;
    out.reserve(size());
    for (std::size_t i = 0; i < size(); ++i) out.push_back(at(i));
    return out;
  }

  std::vector<Transition> sample(std::size_t n, CounterRng& rng) const {
    if (n == 0) throw InvalidInput("sample size must be positive");
    if (storage_.size() < n) {
      throw InsufficientData("replay holds " + std::to_string(storage_.size()) + " transitions, " +
                             std::to_string(n) + " requested");
    }
    std::vector<Transition> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(storage_[rng.below(storage_.size())]);
    return out;
  }

  Batch sample_batch(std::size_t n, CounterRng& rng) const {
    const auto ts = sample(n, rng);
    return Batch::from(ts);
  }

 private:
  std::size_t capacity_;
  std::vector<Transition> storage_;
  std::size_t head_ = 0;
};

}  // namespace vdqn
