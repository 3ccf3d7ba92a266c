#pragma once

#include <Eigen/Core>

#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <span>
#include <utility>

#include "vdqn/ad.hpp"
#include "vdqn/errors.hpp"
#include "vdqn/qlearn.hpp"
#include "vdqn/replay.hpp"
#include "vdqn/rng.hpp"

namespace vdqn {

/// Mean-field Gaussian over network parameters: theta_i ~ N(mu_i, exp(rho_i)^2).
struct VariationalParams {
  Vector mu;
  Vector rho;

  VariationalParams() = default;
  VariationalParams(Vector mu_, Vector rho_) : mu(std::move(mu_)), rho(std::move(rho_)) {
    if (mu.size() != rho.size()) throw InvalidInput("mu and rho lengths differ");
  }

  /// mu from the scaled Gaussian initializer, every rho set to `rho0`.
  static VariationalParams init(const NetShape& shape, CounterRng& rng, double rho0 = -3.0) {
    NetParams m = init_params(shape, rng);
    const auto d = m.values.size();
    return VariationalParams(std::move(m.values), Vector::Constant(d, rho0));
  }

  std::size_t size() const { return static_cast<std::size_t>(mu.size()); }
  Vector sigma() const { return rho.array().exp(); }
  bool all_finite() const { return mu.allFinite() && rho.allFinite(); }

  friend bool operator==(const VariationalParams& a, const VariationalParams& b) {
    return a.mu.size() == b.mu.size() && a.mu == b.mu && a.rho == b.rho;
  }
};

struct LikelihoodConfig {
  double sigma_lik = 0.01;
  double lambda_entropy = 1.0;
  std::size_t mc_samples = 1;

  void validate() const {
    if (!(sigma_lik > 0.0)) throw InvalidInput("sigma_lik must be positive");
    if (!(lambda_entropy >= 0.0)) throw InvalidInput("lambda_entropy must be non-negative");
    if (mc_samples == 0) throw InvalidInput("mc_samples must be positive");
  }
};

struct ThetaSample {
  NetParams theta;
  Vector noise;
};

/// Reparameterized draw: theta = mu + exp(rho) * noise, noise ~ N(0, I).
inline ThetaSample sample_theta(const VariationalParams& phi, CounterRng& rng) {
  Vector noise(phi.mu.size());
  for (Eigen::Index i = 0; i < noise.size(); ++i) noise[i] = rng.normal();
  Vector theta = phi.mu.array() + phi.rho.array().exp() * noise.array();
  return {NetParams(std::move(theta)), std::move(noise)};
}

/// Closed-form entropy of the diagonal Gaussian: d/2 ln(2 pi e) + sum(rho).
inline double entropy(const VariationalParams& phi) {
  const double d = static_cast<double>(phi.size());
  return 0.5 * d * std::log(2.0 * std::numbers::pi * std::numbers::e) + phi.rho.sum();
}

/// log q(theta) under phi, for Monte Carlo checks of the entropy.
inline double log_density(const VariationalParams& phi, const Vector& theta) {
  const double d = static_cast<double>(phi.size());
  const Eigen::ArrayXd z = (theta - phi.mu).array() / phi.rho.array().exp();
  return -0.5 * d * std::log(2.0 * std::numbers::pi) - phi.rho.sum() - 0.5 * z.square().sum();
}

struct ElboResult {
  double loss = 0.0;        // likelihood - lambda * entropy
  double likelihood = 0.0;  // mean squared residual / (2 sigma_lik^2), averaged over draws
  double bellman = 0.0;     // mean squared residual, averaged over draws
  double entropy = 0.0;
  Vector grad_mu;
  Vector grad_rho;
};

/// Entropy-regularized Bellman objective for a fixed set of targets.
///
/// Draws cfg.mc_samples parameter vectors from phi, scores each with the
/// Gaussian negative log-likelihood of the Bellman residuals (scale
/// 1 / (2 sigma_lik^2), constant dropped), and subtracts lambda * entropy.
/// With an improper uniform prior, KL(q || p) equals -entropy up to a
/// constant, so this is the KL objective up to an additive constant.
/// Gradients are exact reparameterization gradients for the draws taken.
inline ElboResult elbo_loss(const Batch& batch, const NetShape& shape, const VariationalParams& phi,
                            const Vector& targets, const LikelihoodConfig& cfg, CounterRng& rng) {
  cfg.validate();
  if (batch.size() == 0) throw InvalidInput("empty batch");
  if (phi.size() != shape.parameter_count()) throw InvalidInput("variational parameters do not match shape");
  const double scale = 1.0 / (2.0 * cfg.sigma_lik * cfg.sigma_lik);
  const double per_draw = 1.0 / static_cast<double>(cfg.mc_samples);
  const Vector sigma = phi.sigma();

  ElboResult out;
  out.grad_mu = Vector::Zero(phi.mu.size());
  out.grad_rho = Vector::Zero(phi.mu.size());
  for (std::size_t k = 0; k < cfg.mc_samples; ++k) {
    const ThetaSample draw = sample_theta(phi, rng);
    const LossAndGradient lg = bellman_loss(batch, shape, draw.theta, targets);
    out.bellman += per_draw * lg.loss;
    const double w = per_draw * scale;
    out.grad_mu += w * lg.gradient;
    out.grad_rho.array() += w * lg.gradient.array() * sigma.array() * draw.noise.array();
  }
  out.likelihood = scale * out.bellman;
  out.entropy = entropy(phi);
  if (!std::isfinite(out.likelihood)) throw NumericError("likelihood", "non-finite likelihood term");
  if (!std::isfinite(out.entropy)) throw NumericError("entropy", "non-finite entropy term");
  out.loss = out.likelihood - cfg.lambda_entropy * out.entropy;
  out.grad_rho.array() -= cfg.lambda_entropy;
  if (!out.grad_mu.allFinite() || !out.grad_rho.allFinite()) {
    throw NumericError("likelihood", "non-finite variational gradient");
  }
  return out;
}

struct WindowStats {
  double mean = 0.0;
  double variance = 0.0;  // unbiased; 0 for a single value
};

/// Mean and unbiased variance of a nonempty window (Welford).
inline WindowStats vi_loss_metric(std::span<const double> window) {
  if (window.empty()) throw InvalidInput("vi_loss_metric needs a nonempty window");
  double mean = 0.0, m2 = 0.0;
  std::size_t n = 0;
  for (double x : window) {
    ++n;
    const double delta = x - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta * (x - mean);
  }
  return {mean, n > 1 ? m2 / static_cast<double>(n - 1) : 0.0};
}

/// Trailing-window statistics over a sequence, one entry per position.
inline std::vector<WindowStats> trailing_stats(std::span<const double> xs, std::size_t window = 20) {
  if (window == 0) throw InvalidInput("window must be positive");
  std::vector<WindowStats> out;
  out.reserve(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const std::size_t begin = i + 1 >= window ? i + 1 - window : 0;
    out.push_back(vi_loss_metric(xs.subspan(begin, i + 1 - begin)));
  }
  return out;
}

/// Checkpoint: shape prefix, then mu, then rho, all little-endian.
inline void save_variational(std::ostream& out, const NetShape& shape, const VariationalParams& phi) {
  if (phi.size() != shape.parameter_count()) throw InvalidInput("variational parameters do not match shape");
  write_shape(out, shape);
  detail::write_array(out, phi.mu);
  detail::write_array(out, phi.rho);
}

inline std::pair<NetShape, VariationalParams> load_variational(std::istream& in) {
  const NetShape shape = read_shape(in);
  Vector mu = detail::read_array(in, shape.parameter_count());
  Vector rho = detail::read_array(in, shape.parameter_count());
  VariationalParams phi(std::move(mu), std::move(rho));
  if (!phi.all_finite()) throw InvalidInput("checkpoint contains non-finite parameters");
  return {shape, std::move(phi)};
}

}  // namespace vdqn
