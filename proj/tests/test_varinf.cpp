#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "oracles.hpp"
#include "vdqn/varinf.hpp"

using namespace vdqn;

namespace {

VariationalParams random_phi(CounterRng& rng, std::size_t d, double rho_lo = -3.0, double rho_hi = -1.0) {
  Vector rho(static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < rho.size(); ++i) rho[i] = rng.uniform(rho_lo, rho_hi);
  return VariationalParams(oracle::random_vector(rng, d, 0.5), rho);
}

// Loss at packed (mu; rho) with a copy of `rng`, so every evaluation sees the same noise.
double elbo_at(const Vector& packed, const Batch& b, const NetShape& shape, const Vector& y, const LikelihoodConfig& cfg,
               const CounterRng& rng) {
  const auto d = packed.size() / 2;
  CounterRng r = rng;
  return elbo_loss(b, shape, VariationalParams(packed.head(d), packed.tail(d)), y, cfg, r).loss;
}

}  // namespace

TEST(Sample, ZeroVarianceCollapse) {
  CounterRng rng(1);
  VariationalParams phi(oracle::random_vector(rng, 50, 1.0), Vector::Constant(50, -30.0));
  const auto s = sample_theta(phi, rng);
  EXPECT_LT((s.theta.values - phi.mu).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Sample, ReparameterizationAndDeterminism) {
  CounterRng rng(2);
  const VariationalParams phi = random_phi(rng, 20);
  CounterRng a(5), b(5);
  const auto s1 = sample_theta(phi, a);
  const auto s2 = sample_theta(phi, b);
  EXPECT_EQ(s1.theta, s2.theta);
  EXPECT_EQ(s1.noise, s2.noise);
  const Vector expect = phi.mu.array() + phi.rho.array().exp() * s1.noise.array();
  EXPECT_EQ(s1.theta.values, expect);
}

TEST(Sample, MomentsOneDimensional) {
  VariationalParams phi(Vector::Constant(1, 2.0), Vector::Constant(1, std::log(0.5)));
  CounterRng rng(3);
  std::vector<double> xs;
  for (int i = 0; i < 100000; ++i) xs.push_back(sample_theta(phi, rng).theta.values[0]);
  const auto [mean, var] = oracle::two_pass_mean_var(xs);
  EXPECT_NEAR(mean, 2.0, 0.005);
  EXPECT_NEAR(std::sqrt(var), 0.5, 0.005);
}

TEST(Entropy, StandardNormal) {
  VariationalParams phi(Vector::Zero(1), Vector::Zero(1));
  EXPECT_NEAR(entropy(phi), 1.4189385332046727, 1e-12);
}

TEST(Entropy, ScaleShiftAndMuInvariance) {
  CounterRng rng(4);
  VariationalParams phi = random_phi(rng, 30);
  const double h = entropy(phi);
  VariationalParams doubled(phi.mu, (phi.rho.array() + std::log(2.0)).matrix());
  EXPECT_NEAR(entropy(doubled), h + 30.0 * std::log(2.0), 1e-10);
  VariationalParams moved(oracle::random_vector(rng, 30, 5.0), phi.rho);
  EXPECT_EQ(entropy(moved), h);
}

TEST(Entropy, MonteCarloAgrees) {
  CounterRng rng(5);
  const VariationalParams phi = random_phi(rng, 3, -1.0, 0.5);
  double acc = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) acc -= log_density(phi, sample_theta(phi, rng).theta.values);
  EXPECT_NEAR(acc / n, entropy(phi), 0.02);
}

TEST(Elbo, ZeroResidualCases) {
  // Targets equal to the sampled network's own outputs make every residual zero.
  CounterRng rng(6);
  const NetShape shape{3, 5, 2};
  const VariationalParams phi = random_phi(rng, shape.parameter_count());
  const Batch b = oracle::random_batch(rng, 3, 2, 8);
  CounterRng draw(7);
  CounterRng peek = draw;
  const NetParams theta = sample_theta(phi, peek).theta;
  const Matrix q = forward_batch(shape, theta, b.states);
  Vector y(8);
  for (Eigen::Index j = 0; j < 8; ++j) y[j] = q(b.actions[static_cast<std::size_t>(j)], j);

  LikelihoodConfig no_bonus{0.01, 0.0, 1};
  CounterRng r1 = draw;
  EXPECT_NEAR(elbo_loss(b, shape, phi, y, no_bonus, r1).loss, 0.0, 1e-18);
  LikelihoodConfig bonus{0.01, 1.0, 1};
  CounterRng r2 = draw;
  EXPECT_NEAR(elbo_loss(b, shape, phi, y, bonus, r2).loss, -entropy(phi), 1e-9);
}

TEST(Elbo, GradientMatchesFiniteDifferencesCommonRandomNumbers) {
  const NetShape shape{4, 8, 2};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    CounterRng rng(seed + 50);
    const VariationalParams phi = random_phi(rng, shape.parameter_count());
    const Batch b = oracle::random_batch(rng, 4, 2, 8);
    const Vector y = oracle::random_vector(rng, 8, 1.0);
    const LikelihoodConfig cfg{0.5, 0.7, 2};
    const CounterRng noise(seed + 900);
    CounterRng r = noise;
    const ElboResult res = elbo_loss(b, shape, phi, y, cfg, r);
    Vector packed(2 * phi.mu.size()), g(2 * phi.mu.size());
    packed << phi.mu, phi.rho;
    g << res.grad_mu, res.grad_rho;
    const Vector fd =
        oracle::finite_difference([&](const Vector& x) { return elbo_at(x, b, shape, y, cfg, noise); }, packed);
    EXPECT_LT(oracle::max_relative_error(g, fd), 1e-4) << "seed " << seed;
  }
}

TEST(Elbo, PriorEquivalenceConstantOffset) {
  // NLL + KL(q || uniform) written directly; KL to an improper uniform density c is -H(q) - ln c.
  const NetShape shape{2, 4, 2};
  const double log_c = -3.7;
  std::vector<double> offsets;
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    CounterRng rng(seed);
    const VariationalParams phi = random_phi(rng, shape.parameter_count());
    const Batch b = oracle::random_batch(rng, 2, 2, 6);
    const Vector y = oracle::random_vector(rng, 6, 1.0);
    const LikelihoodConfig cfg{0.1, 1.0, 1};
    CounterRng r1(seed + 1), r2(seed + 1);
    const double loss = elbo_loss(b, shape, phi, y, cfg, r1).loss;
    const NetParams theta = sample_theta(phi, r2).theta;
    const double nll = oracle::bellman_loss(2, 4, 2, theta.values, b, y) / (2.0 * 0.01);
    const double d = static_cast<double>(phi.size());
    const double h = 0.5 * d * (1.0 + std::log(2.0 * std::numbers::pi)) + phi.rho.sum();
    offsets.push_back((nll + (-h - log_c)) - loss);
  }
  for (double o : offsets) EXPECT_NEAR(o, offsets.front(), 1e-8);
}

TEST(Elbo, ZeroVarianceBellmanTermMatchesDeterministic) {
  CounterRng rng(9);
  const NetShape shape{4, 8, 2};
  const VariationalParams phi(oracle::random_vector(rng, shape.parameter_count(), 0.5),
                              Vector::Constant(static_cast<Eigen::Index>(shape.parameter_count()), -30.0));
  const Batch b = oracle::random_batch(rng, 4, 2, 16);
  const Vector y = oracle::random_vector(rng, 16, 1.0);
  CounterRng r(10);
  const ElboResult res = elbo_loss(b, shape, phi, y, LikelihoodConfig{}, r);
  EXPECT_NEAR(res.bellman, bellman_loss(b, shape, NetParams(phi.mu), y).loss, 1e-8);
}

TEST(Elbo, ExpectedGradientMatchesAveragedLossDifferences) {
  // Average the reparameterized gradient over many draws and compare with
  // finite differences of the loss averaged over the same draws.
  const NetShape shape{2, 3, 2};
  CounterRng rng(11);
  const VariationalParams phi = random_phi(rng, shape.parameter_count(), -1.5, -0.5);
  const Batch b = oracle::random_batch(rng, 2, 2, 4);
  const Vector y = oracle::random_vector(rng, 4, 1.0);
  const LikelihoodConfig cfg{1.0, 1.0, 1};
  const int draws = 1000;
  const auto d = phi.mu.size();
  Vector packed(2 * d);
  packed << phi.mu, phi.rho;
  Vector mean_g = Vector::Zero(2 * d), sq_g = Vector::Zero(2 * d);
  for (int k = 0; k < draws; ++k) {
    CounterRng r(1000 + static_cast<std::uint64_t>(k));
    const ElboResult res = elbo_loss(b, shape, phi, y, cfg, r);
    Vector g(2 * d);
    g << res.grad_mu, res.grad_rho;
    mean_g += g / draws;
    sq_g += g.cwiseAbs2() / draws;
  }
  const Vector se = ((sq_g - mean_g.cwiseAbs2()).cwiseMax(0.0) / (draws - 1)).cwiseSqrt();
  const Vector fd = oracle::finite_difference(
      [&](const Vector& x) {
        double s = 0.0;
        for (int k = 0; k < draws; ++k) s += elbo_at(x, b, shape, y, cfg, CounterRng(1000 + static_cast<std::uint64_t>(k)));
        return s / draws;
      },
      packed, 1e-5);
  for (Eigen::Index i = 0; i < fd.size(); ++i) {
    EXPECT_LE(std::abs(mean_g[i] - fd[i]), 2.0 * se[i] + 1e-6) << "coordinate " << i;
  }
}

TEST(Elbo, LargerEntropyWeightGivesLargerSpread) {
  // One scalar weight fit to noiseless targets: the identity through a (1,1,1) net with fixed positive input.
  const NetShape shape{1, 1, 1};
  const Batch b = Batch::from(std::vector<Transition>{
      Transition{Vector::Constant(1, 1.0), 0, 0.0, Vector::Constant(1, 1.0), true}});
  const Vector y = Vector::Constant(1, 1.0);
  double prev = -1e300;
  for (double lambda : {0.0, 0.5, 1.0, 2.0}) {
    Vector mu(shape.parameter_count());
    mu << 1.0, 0.0, 1.0, 0.0, 0.5, 0.0;
    VariationalParams phi(mu, Vector::Constant(6, -3.0));
    const LikelihoodConfig cfg{0.1, lambda, 4};
    AdamState st;
    CounterRng r(13);
    for (int it = 0; it < 4000; ++it) {
      const ElboResult res = elbo_loss(b, shape, phi, y, cfg, r);
      Vector packed(12), g(12);
      packed << phi.mu, phi.rho;
      g << res.grad_mu, res.grad_rho;
      clip_global_norm(g, 10.0);
      adam_step(packed, g, st, 1e-2);
      phi = VariationalParams(packed.head(6), packed.tail(6));
    }
    const double spread = phi.rho.sum();
    EXPECT_GT(spread, prev) << "lambda " << lambda;
    prev = spread;
  }
}

TEST(Elbo, ErrorsAndValidation) {
  const NetShape shape{1, 1, 1};
  const Batch b = Batch::from(std::vector<Transition>{
      Transition{Vector::Constant(1, 1.0), 0, 0.0, Vector::Constant(1, 1.0), true}});
  VariationalParams phi(Vector::Zero(6), Vector::Zero(6));
  CounterRng r(1);
  EXPECT_THROW(elbo_loss(b, shape, phi, Vector::Zero(1), LikelihoodConfig{0.0, 1.0, 1}, r), InvalidInput);
  EXPECT_THROW(elbo_loss(b, NetShape{2, 1, 1}, phi, Vector::Zero(1), LikelihoodConfig{}, r), InvalidInput);
  VariationalParams huge(Vector::Constant(6, 1e200), Vector::Zero(6));
  EXPECT_THROW(elbo_loss(b, shape, huge, Vector::Zero(1), LikelihoodConfig{}, r), NumericError);
  EXPECT_THROW(VariationalParams(Vector::Zero(2), Vector::Zero(3)), InvalidInput);
}

TEST(ViLossMetric, Cases) {
  const std::vector<double> constant(7, 3.25);
  EXPECT_EQ(vi_loss_metric(constant).variance, 0.0);
  const std::vector<double> two{1.0, 3.0};
  EXPECT_DOUBLE_EQ(vi_loss_metric(two).mean, 2.0);
  EXPECT_DOUBLE_EQ(vi_loss_metric(two).variance, 2.0);
  EXPECT_EQ(vi_loss_metric(std::vector<double>{5.0}).variance, 0.0);
  EXPECT_THROW(vi_loss_metric(std::vector<double>{}), InvalidInput);
}

TEST(ViLossMetric, MatchesTwoPassOracle) {
  CounterRng rng(14);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> xs;
    const auto n = 2 + rng.below(40);
    for (std::uint64_t i = 0; i < n; ++i) xs.push_back(rng.uniform(-100, 100));
    const auto [m, v] = oracle::two_pass_mean_var(xs);
    const auto s = vi_loss_metric(xs);
    EXPECT_NEAR(s.mean, m, 1e-12 * std::max(1.0, std::abs(m)));
    EXPECT_NEAR(s.variance, v, 1e-12 * std::max(1.0, v));
  }
}

TEST(ViLossMetric, TrailingWindow) {
  const std::vector<double> xs{1, 2, 3, 4, 5};
  const auto st = trailing_stats(xs, 2);
  ASSERT_EQ(st.size(), 5u);
  EXPECT_EQ(st[0].mean, 1.0);
  EXPECT_EQ(st[0].variance, 0.0);
  EXPECT_EQ(st[4].mean, 4.5);
  EXPECT_EQ(st[4].variance, 0.5);
}

TEST(Checkpoint, VariationalRoundTrip) {
  CounterRng rng(15);
  const NetShape shape{2, 3, 2};
  const VariationalParams phi = random_phi(rng, shape.parameter_count());
  std::stringstream ss;
  save_variational(ss, shape, phi);
  EXPECT_EQ(ss.str().size(), 8u * (3 + 2 * shape.parameter_count()));
  const auto [s2, p2] = load_variational(ss);
  EXPECT_EQ(s2, shape);
  EXPECT_EQ(p2, phi);
}

TEST(Init, RhoConstantMuScaled) {
  CounterRng rng(16);
  const NetShape shape{4, 100, 2};
  const auto phi = VariationalParams::init(shape, rng);
  EXPECT_TRUE((phi.rho.array() == -3.0).all());
  EXPECT_NEAR(phi.sigma()[0], 0.0498, 1e-4);
}
