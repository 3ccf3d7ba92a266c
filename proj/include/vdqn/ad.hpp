#pragma once

#include <Eigen/Core>

#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vdqn/errors.hpp"
#include "vdqn/rng.hpp"

namespace vdqn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Two equal-width rectified hidden layers between `input_dim` and `output_dim`.
struct NetShape {
  std::size_t input_dim = 0;
  std::size_t hidden = 100;
  std::size_t output_dim = 0;

  std::size_t parameter_count() const {
    return (input_dim + 1) * hidden + (hidden + 1) * hidden + (hidden + 1) * output_dim;
  }

  // Offsets into the canonical flat layout:
  // W1 (hidden x input, row-major), b1, W2 (hidden x hidden), b2, W3 (output x hidden), b3.
  std::size_t w1() const { return 0; }
  std::size_t b1() const { return w1() + hidden * input_dim; }
  std::size_t w2() const { return b1() + hidden; }
  std::size_t b2() const { return w2() + hidden * hidden; }
  std::size_t w3() const { return b2() + hidden; }
  std::size_t b3() const { return w3() + output_dim * hidden; }

  void validate() const {
    if (input_dim == 0 || hidden == 0 || output_dim == 0) {
      throw InvalidInput("NetShape: every dimension must be positive");
    }
  }

  friend bool operator==(const NetShape&, const NetShape&) = default;
};

/// Flat weight/bias vector in the canonical layout of its NetShape.
struct NetParams {
  Vector values;

  NetParams() = default;
  explicit NetParams(Vector v) : values(std::move(v)) {}
  static NetParams zeros(const NetShape& shape) {
    return NetParams(Vector::Zero(static_cast<Eigen::Index>(shape.parameter_count())));
  }

  std::size_t size() const { return static_cast<std::size_t>(values.size()); }
  bool all_finite() const { return values.allFinite(); }

  friend bool operator==(const NetParams& a, const NetParams& b) {
    return a.values.size() == b.values.size() && a.values == b.values;
  }
};

namespace detail {

inline void check_params(const NetShape& shape, const NetParams& params) {
  shape.validate();
  if (params.size() != shape.parameter_count()) {
    throw InvalidInput("parameter vector has length " + std::to_string(params.size()) +
                       ", shape expects " + std::to_string(shape.parameter_count()));
  }
}

inline auto block(const Vector& v, std::size_t offset, std::size_t rows, std::size_t cols) {
  return Eigen::Map<const RowMajorMatrix>(v.data() + offset, static_cast<Eigen::Index>(rows),
                                          static_cast<Eigen::Index>(cols));
}

inline auto segment(const Vector& v, std::size_t offset, std::size_t n) {
  return v.segment(static_cast<Eigen::Index>(offset), static_cast<Eigen::Index>(n));
}

}  // namespace detail

/// Scaled Gaussian initialization: weights ~ N(0, 1/fan_in), biases 0.
inline NetParams init_params(const NetShape& shape, CounterRng& rng) {
  shape.validate();
  NetParams p = NetParams::zeros(shape);
  auto fill = [&](std::size_t offset, std::size_t rows, std::size_t fan_in) {
    const double std_dev = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = 0; i < rows * fan_in; ++i) {
      p.values[static_cast<Eigen::Index>(offset + i)] = std_dev * rng.normal();
    }
  };
  fill(shape.w1(), shape.hidden, shape.input_dim);
  fill(shape.w2(), shape.hidden, shape.hidden);
  fill(shape.w3(), shape.output_dim, shape.hidden);
  return p;
}

/// Batched forward pass. `states` holds one sample per column (input_dim x N);
/// the result holds one Q vector per column (output_dim x N).
inline Matrix forward_batch(const NetShape& shape, const NetParams& params, const Matrix& states) {
  detail::check_params(shape, params);
  if (static_cast<std::size_t>(states.rows()) != shape.input_dim) {
    throw InvalidInput("state dimension " + std::to_string(states.rows()) + " != input_dim " +
                       std::to_string(shape.input_dim));
  }
  const Vector& v = params.values;
  Matrix h1 = detail::block(v, shape.w1(), shape.hidden, shape.input_dim) * states;
  h1.colwise() += detail::segment(v, shape.b1(), shape.hidden);
  h1 = h1.cwiseMax(0.0);
  Matrix h2 = detail::block(v, shape.w2(), shape.hidden, shape.hidden) * h1;
  h2.colwise() += detail::segment(v, shape.b2(), shape.hidden);
  h2 = h2.cwiseMax(0.0);
  Matrix out = detail::block(v, shape.w3(), shape.output_dim, shape.hidden) * h2;
  out.colwise() += detail::segment(v, shape.b3(), shape.output_dim);
  return out;
}

/// Q values for a single state.
inline Vector forward(const NetShape& shape, const NetParams& params, std::span<const double> state) {
  if (state.size() != shape.input_dim) {
    throw InvalidInput("state dimension " + std::to_string(state.size()) + " != input_dim " +
                       std::to_string(shape.input_dim));
  }
  Matrix s = Eigen::Map<const Matrix>(state.data(), static_cast<Eigen::Index>(state.size()), 1);
  return forward_batch(shape, params, s).col(0);
}

inline Vector forward(const NetShape& shape, const NetParams& params, const Vector& state) {
  return forward(shape, params, std::span<const double>(state.data(), static_cast<std::size_t>(state.size())));
}

// ---------------------------------------------------------------------------
// Reverse-mode tape

/// Records matrix-valued primitives and replays them backwards.
///
/// Supported primitives: constant, leaf, matmul, column-broadcast bias add,
/// relu, add, sub, square, mean, sum, scale, shift, exp, log, and `pick`
/// (select one row per column). Every primitive checks its output for
/// non-finite entries and throws NumericError naming itself.
class Tape {
 public:
  struct Var {
    std::size_t id;
  };

  Var constant(Matrix value) { return push("constant", std::move(value), false, {}); }
  Var leaf(Matrix value) { return push("leaf", std::move(value), true, {}); }

  Var matmul(Var a, Var b) {
    return push("matmul", value(a) * value(b), needs(a, b), [a, b](Tape& t, std::size_t self) {
      const Matrix& g = t.nodes_[self].grad;
      if (t.nodes_[a.id].requires_grad) t.accumulate(a, g * t.value(b).transpose());
      if (t.nodes_[b.id].requires_grad) t.accumulate(b, t.value(a).transpose() * g);
    });
  }

  /// x (r x c) plus column vector b (r x 1) added to every column.
  Var add_bias(Var x, Var b) {
    if (value(b).cols() != 1 || value(b).rows() != value(x).rows()) {
      throw InvalidInput("add_bias: bias must be a column matching the input rows");
    }
    Matrix out = value(x);
    out.colwise() += value(b).col(0);
    return push("add_bias", std::move(out), needs(x, b), [x, b](Tape& t, std::size_t self) {
      const Matrix& g = t.nodes_[self].grad;
      if (t.nodes_[x.id].requires_grad) t.accumulate(x, g);
      if (t.nodes_[b.id].requires_grad) t.accumulate(b, g.rowwise().sum());
    });
  }

  Var relu(Var x) {
    return push("relu", value(x).cwiseMax(0.0), needs(x), [x](Tape& t, std::size_t self) {
      const Matrix& g = t.nodes_[self].grad;
      t.accumulate(x, (t.value(x).array() > 0.0).select(g.array(), 0.0).matrix());
    });
  }

  Var add(Var a, Var b) {
    same_shape("add", a, b);
    return push("add", value(a) + value(b), needs(a, b), [a, b](Tape& t, std::size_t self) {
      const Matrix& g = t.nodes_[self].grad;
      if (t.nodes_[a.id].requires_grad) t.accumulate(a, g);
      if (t.nodes_[b.id].requires_grad) t.accumulate(b, g);
    });
  }

  Var sub(Var a, Var b) {
    same_shape("sub", a, b);
    return push("sub", value(a) - value(b), needs(a, b), [a, b](Tape& t, std::size_t self) {
      const Matrix& g = t.nodes_[self].grad;
      if (t.nodes_[a.id].requires_grad) t.accumulate(a, g);
      if (t.nodes_[b.id].requires_grad) t.accumulate(b, -g);
    });
  }

  Var square(Var x) {
    return push("square", value(x).array().square().matrix(), needs(x), [x](Tape& t, std::size_t self) {
      t.accumulate(x, (2.0 * t.value(x).array() * t.nodes_[self].grad.array()).matrix());
    });
  }

  Var exp(Var x) {
    return push("exp", value(x).array().exp().matrix(), needs(x), [x](Tape& t, std::size_t self) {
      t.accumulate(x, (t.value(Var{self}).array() * t.nodes_[self].grad.array()).matrix());
    });
  }

  Var log(Var x) {
    return push("log", value(x).array().log().matrix(), needs(x), [x](Tape& t, std::size_t self) {
      t.accumulate(x, (t.nodes_[self].grad.array() / t.value(x).array()).matrix());
    });
  }

  Var scale(Var x, double c) {
    return push("scale", c * value(x), needs(x),
                [x, c](Tape& t, std::size_t self) { t.accumulate(x, c * t.nodes_[self].grad); });
  }

  Var shift(Var x, double c) {
    Matrix out = value(x).array() + c;
    return push("shift", std::move(out), needs(x),
                [x](Tape& t, std::size_t self) { t.accumulate(x, t.nodes_[self].grad); });
  }

  Var sum(Var x) {
    Matrix out(1, 1);
    out(0, 0) = value(x).sum();
    return push("sum", std::move(out), needs(x), [x](Tape& t, std::size_t self) {
      const double g = t.nodes_[self].grad(0, 0);
      t.accumulate(x, Matrix::Constant(t.value(x).rows(), t.value(x).cols(), g));
    });
  }

  Var mean(Var x) {
    const auto n = static_cast<double>(value(x).size());
    if (n == 0) throw InvalidInput("mean of an empty matrix");
    Matrix out(1, 1);
    out(0, 0) = value(x).sum() / n;
    return push("mean", std::move(out), needs(x), [x, n](Tape& t, std::size_t self) {
      const double g = t.nodes_[self].grad(0, 0) / n;
      t.accumulate(x, Matrix::Constant(t.value(x).rows(), t.value(x).cols(), g));
    });
  }

  /// From q (A x N) select q(rows[j], j), giving a 1 x N row.
  Var pick(Var q, std::vector<int> rows) {
    const Matrix& qv = value(q);
    if (static_cast<Eigen::Index>(rows.size()) != qv.cols()) {
      throw InvalidInput("pick: need one row index per column");
    }
    Matrix out(1, qv.cols());
    for (Eigen::Index j = 0; j < qv.cols(); ++j) {
      const int r = rows[static_cast<std::size_t>(j)];
      if (r < 0 || r >= qv.rows()) throw InvalidInput("pick: row index out of range");
      out(0, j) = qv(r, j);
    }
    return push("pick", std::move(out), needs(q), [q, rows = std::move(rows)](Tape& t, std::size_t self) {
      const Matrix& g = t.nodes_[self].grad;
      Matrix dq = Matrix::Zero(t.value(q).rows(), t.value(q).cols());
      for (Eigen::Index j = 0; j < dq.cols(); ++j) dq(rows[static_cast<std::size_t>(j)], j) = g(0, j);
      t.accumulate(q, dq);
    });
  }

  const Matrix& value(Var v) const { return nodes_.at(v.id).value; }

  /// Gradient of the last `backward` output w.r.t. v (zero if v was not reached).
  const Matrix& gradient(Var v) const { return nodes_.at(v.id).grad; }

  double scalar(Var v) const {
    const Matrix& m = value(v);
    if (m.size() != 1) throw InvalidInput("scalar(): node is not 1x1");
    return m(0, 0);
  }

  void backward(Var output) {
    if (value(output).size() != 1) throw InvalidInput("backward: output must be a scalar");
    for (auto& n : nodes_) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    nodes_[output.id].grad(0, 0) = 1.0;
    for (std::size_t i = output.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backprop && n.requires_grad) n.backprop(*this, i);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    std::function<void(Tape&, std::size_t)> backprop;
  };

  bool needs(Var a) const { return nodes_[a.id].requires_grad; }
  bool needs(Var a, Var b) const { return needs(a) || needs(b); }

  void same_shape(const char* op, Var a, Var b) const {
    if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols()) {
      throw InvalidInput(std::string(op) + ": operand shapes differ");
    }
  }

  template <typename M>
  void accumulate(Var v, const M& g) {
    nodes_[v.id].grad += g;
  }

  Var push(const char* op, Matrix value, bool requires_grad, std::function<void(Tape&, std::size_t)> backprop) {
    if (!value.allFinite()) {
      throw NumericError(op, std::string("non-finite value produced by primitive '") + op + "'");
    }
    nodes_.push_back(Node{std::move(value), Matrix(), requires_grad, std::move(backprop)});
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

/// Network parameters bound as tape leaves.
struct NetVars {
  Tape::Var w1, b1, w2, b2, w3, b3;
};

inline NetVars bind(Tape& tape, const NetShape& shape, const NetParams& params) {
  detail::check_params(shape, params);
  const Vector& v = params.values;
  return NetVars{
      tape.leaf(detail::block(v, shape.w1(), shape.hidden, shape.input_dim)),
      tape.leaf(detail::segment(v, shape.b1(), shape.hidden)),
      tape.leaf(detail::block(v, shape.w2(), shape.hidden, shape.hidden)),
      tape.leaf(detail::segment(v, shape.b2(), shape.hidden)),
      tape.leaf(detail::block(v, shape.w3(), shape.output_dim, shape.hidden)),
      tape.leaf(detail::segment(v, shape.b3(), shape.output_dim)),
  };
}

/// affine -> relu -> affine -> relu -> affine on a batch (input_dim x N).
inline Tape::Var apply(Tape& tape, const NetVars& net, Tape::Var states) {
  auto h1 = tape.relu(tape.add_bias(tape.matmul(net.w1, states), net.b1));
  auto h2 = tape.relu(tape.add_bias(tape.matmul(net.w2, h1), net.b2));
  return tape.add_bias(tape.matmul(net.w3, h2), net.b3);
}

/// Pack leaf gradients back into the canonical flat layout.
inline Vector flat_gradient(const Tape& tape, const NetShape& shape, const NetVars& net) {
  Vector g(static_cast<Eigen::Index>(shape.parameter_count()));
  auto put_matrix = [&](std::size_t offset, Tape::Var v) {
    const Matrix& m = tape.gradient(v);
    Eigen::Map<RowMajorMatrix>(g.data() + offset, m.rows(), m.cols()) = m;
  };
  auto put_vector = [&](std::size_t offset, Tape::Var v) {
    const Matrix& m = tape.gradient(v);
    g.segment(static_cast<Eigen::Index>(offset), m.rows()) = m.col(0);
  };
  put_matrix(shape.w1(), net.w1);
  put_vector(shape.b1(), net.b1);
  put_matrix(shape.w2(), net.w2);
  put_vector(shape.b2(), net.b2);
  put_matrix(shape.w3(), net.w3);
  put_vector(shape.b3(), net.b3);
  return g;
}

struct LossAndGradient {
  double loss = 0.0;
  Vector gradient;
};

/// A loss over network outputs: receives the tape and the (output_dim x N)
/// output node, returns a 1x1 node.
using LossFn = std::function<Tape::Var(Tape&, Tape::Var outputs)>;

/// dLoss/dtheta for `loss_fn` applied to the network outputs on `states`.
inline LossAndGradient grad(const NetShape& shape, const NetParams& params, const Matrix& states,
                            const LossFn& loss_fn) {
  if (static_cast<std::size_t>(states.rows()) != shape.input_dim) {
    throw InvalidInput("state dimension " + std::to_string(states.rows()) + " != input_dim " +
                       std::to_string(shape.input_dim));
  }
  Tape tape;
  const NetVars net = bind(tape, shape, params);
  const Tape::Var out = apply(tape, net, tape.constant(states));
  const Tape::Var loss = loss_fn(tape, out);
  tape.backward(loss);
  Vector g = flat_gradient(tape, shape, net);
  if (!g.allFinite()) throw NumericError("backward", "non-finite gradient");
  return {tape.scalar(loss), std::move(g)};
}

// ---------------------------------------------------------------------------
// Optimizers

struct AdamState {
  Vector m;
  Vector v;
  std::uint64_t step = 0;

  friend bool operator==(const AdamState& a, const AdamState& b) {
    return a.step == b.step && a.m.size() == b.m.size() && a.m == b.m && a.v == b.v;
  }
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// In-place Adam update on `params`. A non-finite gradient is rejected
/// before any state changes.
inline void adam_step(Vector& params, const Vector& gradient, AdamState& state, double learning_rate,
                      const AdamConfig& cfg = {}) {
  if (!(learning_rate > 0.0)) throw InvalidInput("learning rate must be positive");
  if (gradient.size() != params.size()) throw InvalidInput("gradient length differs from parameters");
  if (!gradient.allFinite()) throw NumericError("adam_step", "non-finite gradient rejected");
  if (state.m.size() != params.size()) {
    state.m = Vector::Zero(params.size());
    state.v = Vector::Zero(params.size());
    state.step = 0;
  }
  ++state.step;
  state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * gradient;
  state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * gradient.cwiseAbs2();
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  params.array() -= learning_rate * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + cfg.eps);
}

inline void adam_step(NetParams& params, const Vector& gradient, AdamState& state, double learning_rate,
                      const AdamConfig& cfg = {}) {
  adam_step(params.values, gradient, state, learning_rate, cfg);
}

inline void sgd_step(Vector& params, const Vector& gradient, double learning_rate) {
  if (!(learning_rate > 0.0)) throw InvalidInput("learning rate must be positive");
  if (gradient.size() != params.size()) throw InvalidInput("gradient length differs from parameters");
  if (!gradient.allFinite()) throw NumericError("sgd_step", "non-finite gradient rejected");
  params -= learning_rate * gradient;
}

enum class OptimizerKind { Adam, Sgd };

/// Optimizer choice plus its state, owned by one training loop.
struct Optimizer {
  OptimizerKind kind = OptimizerKind::Adam;
  AdamState adam;

  void step(Vector& params, const Vector& gradient, double learning_rate) {
    if (kind == OptimizerKind::Adam) {
      adam_step(params, gradient, adam, learning_rate);
    } else {
      sgd_step(params, gradient, learning_rate);
    }
  }
};

/// Scale `g` down so its Euclidean norm is at most `max_norm`. Returns the
/// pre-clip norm. max_norm <= 0 disables clipping.
inline double clip_global_norm(Vector& g, double max_norm) {
  const double norm = g.norm();
  if (max_norm > 0.0 && norm > max_norm) g *= max_norm / norm;
  return norm;
}

// ---------------------------------------------------------------------------
// Checkpoint envelope: three little-endian int64 shape fields
// (input, hidden, output) followed by little-endian float64 arrays.

namespace detail {

inline std::uint64_t to_little(std::uint64_t x) {
  if constexpr (std::endian::native == std::endian::big) {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((x >> (8 * i)) & 0xffULL) << (8 * (7 - i));
    return r;
  } else {
    return x;
  }
}

inline void write_u64(std::ostream& out, std::uint64_t x) {
  x = to_little(x);
  out.write(reinterpret_cast<const char*>(&x), sizeof x);
}

inline std::uint64_t read_u64(std::istream& in) {
  std::uint64_t x = 0;
  if (!in.read(reinterpret_cast<char*>(&x), sizeof x)) throw InvalidInput("checkpoint truncated");
  return to_little(x);
}

inline void write_array(std::ostream& out, const Vector& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) write_u64(out, std::bit_cast<std::uint64_t>(v[i]));
}

inline Vector read_array(std::istream& in, std::size_t n) {
  Vector v(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = std::bit_cast<double>(read_u64(in));
  return v;
}

}  // namespace detail

inline void write_shape(std::ostream& out, const NetShape& shape) {
  detail::write_u64(out, shape.input_dim);
  detail::write_u64(out, shape.hidden);
  detail::write_u64(out, shape.output_dim);
}

inline NetShape read_shape(std::istream& in) {
  NetShape shape;
  shape.input_dim = detail::read_u64(in);
  shape.hidden = detail::read_u64(in);
  shape.output_dim = detail::read_u64(in);
  shape.validate();
  return shape;
}

inline void save_params(std::ostream& out, const NetShape& shape, const NetParams& params) {
  detail::check_params(shape, params);
  write_shape(out, shape);
  detail::write_array(out, params.values);
}

inline std::pair<NetShape, NetParams> load_params(std::istream& in) {
  NetShape shape = read_shape(in);
  NetParams params(detail::read_array(in, shape.parameter_count()));
  if (!params.all_finite()) throw InvalidInput("checkpoint contains non-finite parameters");
  return {shape, std::move(params)};
}

}  // namespace vdqn
