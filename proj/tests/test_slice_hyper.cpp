#include "envbo/hyper.hpp"

#include <gtest/gtest.h>

using namespace envbo;

TEST(Slice, StandardNormalMoments) {
  SliceConfig cfg;
  cfg.burn_in = 500;
  const auto chain =
      slice_sample([](const Vector& x) { return -0.5 * x.squaredNorm(); }, Vector::Zero(1), 10000, cfg, 42);
  ASSERT_EQ(chain.samples.size(), 10000u);
  double m = 0.0, s = 0.0;
  for (const auto& x : chain.samples) m += x[0];
  m /= 10000;
  for (const auto& x : chain.samples) s += (x[0] - m) * (x[0] - m);
  s /= 9999;
  EXPECT_NEAR(m, 0.0, 0.05);
  EXPECT_NEAR(s, 1.0, 0.1);
}

TEST(Slice, UniformKolmogorovSmirnov) {
  SliceConfig cfg;
  cfg.burn_in = 100;
  cfg.thin = 2;
  auto logp = [](const Vector& x) { return (x[0] >= 0.0 && x[0] <= 1.0) ? 0.0 : -kInf; };
  const auto chain = slice_sample(logp, Vector::Constant(1, 0.5), 10000, cfg, 3);
  std::vector<double> v;
  for (const auto& x : chain.samples) v.push_back(x[0]);
  std::sort(v.begin(), v.end());
  double ks = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double n = static_cast<double>(v.size());
    ks = std::max({ks, std::abs(v[i] - i / n), std::abs(v[i] - (i + 1) / n)});
  }
  EXPECT_LT(ks, 0.02);
}

TEST(Slice, SharpTargetStaysNearMode) {
  auto logp = [](const Vector& x) { return -0.5 * (x[0] - 2.0) * (x[0] - 2.0) / 1e-10; };
  SliceConfig cfg;
  const auto chain = slice_sample(logp, Vector::Constant(1, 2.0), 1, cfg, 5);
  ASSERT_EQ(chain.samples.size(), 1u);
  EXPECT_NEAR(chain.samples[0][0], 2.0, 1e-3);
}

TEST(Slice, DeterministicAndRejectsBadStart) {
  auto logp = [](const Vector& x) { return -0.5 * x.squaredNorm() - std::abs(x[1]); };
  SliceConfig cfg;
  const auto a = slice_sample(logp, Vector::Zero(2), 20, cfg, 11);
  const auto b = slice_sample(logp, Vector::Zero(2), 20, cfg, 11);
  for (std::size_t i = 0; i < a.samples.size(); ++i) EXPECT_EQ(a.samples[i], b.samples[i]);
  auto bad = [](const Vector&) { return -kInf; };
  try {
    slice_sample(bad, Vector::Zero(1), 1, cfg, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidStart);
  }
}

namespace {

std::vector<Observation> sine_data(int n) {
  std::vector<Observation> data;
  for (int i = 0; i < n; ++i) {
    Observation o;
    o.location = Vector::Constant(1, i / (n - 1.0));
    o.value = std::sin(6.0 * o.location[0]);
    data.push_back(o);
  }
  return data;
}

}  // namespace

TEST(Mixture, SingleComponentIsTheGp) {
  KernelSpec s;
  s.amplitude = 1.0;
  s.lengthscales = Vector::Constant(1, 0.3);
  auto set = HyperPosteriorSet::single(fit(sine_data(6), s));
  const Vector x = Vector::Constant(1, 0.37);
  const auto mix = marginal_posterior(set, x);
  auto [m, v] = set.states[0].mean_variance(x);
  EXPECT_NEAR(mix.mean(), m, 1e-12);
  EXPECT_NEAR(mix.variance(), v, 1e-12);
}

TEST(Mixture, TotalVarianceForTwoComponents) {
  Mixture mix;
  mix.means = Vector(2);
  mix.means << 0.0, 2.0;
  mix.variances = Vector(2);
  mix.variances << 1.0, 3.0;
  EXPECT_DOUBLE_EQ(mix.mean(), 1.0);
  EXPECT_DOUBLE_EQ(mix.variance(), 3.0);
}

TEST(Hyper, SamplerProducesPositiveDeterministicDraws) {
  const auto data = sine_data(8);
  const auto prior = HyperPrior::for_data(Vector::Ones(1), data, false);
  HyperConfig cfg;
  cfg.burn_in = 30;
  cfg.thin = 3;
  HyperSampler a(cfg), b(cfg);
  const auto sa = a.sample(data, prior, 17);
  const auto sb = b.sample(data, prior, 17);
  ASSERT_EQ(sa.k(), 8);
  for (int i = 0; i < sa.k(); ++i) {
    EXPECT_GT(sa.draws[i].amplitude, 0.0);
    EXPECT_GT(sa.draws[i].lengthscales[0], 0.0);
    EXPECT_EQ(sa.draws[i].amplitude, sb.draws[i].amplitude);
    EXPECT_TRUE(std::isfinite(sa.log_posteriors[i]));
  }
  ASSERT_TRUE(a.warm_state().has_value());
  // The fast value-only likelihood agrees with the general path.
  const Vector theta = *a.warm_state();
  Matrix locs(1, 8);
  Vector y(8);
  for (int i = 0; i < 8; ++i) {
    locs(0, i) = data[i].location[0];
    y[i] = data[i].value;
  }
  EXPECT_NEAR(value_log_marginal_likelihood(locs, y, prior.to_spec(theta)),
              GPState::fit(data, prior.to_spec(theta)).log_marginal_likelihood(), 1e-9);
  // Warm start reuses the chain state and still yields K draws.
  EXPECT_EQ(a.sample(data, prior, 18).k(), 8);
}

TEST(Hyper, PriorDensityIsBounded) {
  const auto prior = HyperPrior::for_data(Vector::Ones(2), sine_data(4), true);
  Vector theta = prior.prior_mode();
  EXPECT_TRUE(std::isfinite(prior.log_density(theta)));
  theta[1] += 9.0;
  EXPECT_EQ(prior.log_density(theta), -kInf);
  EXPECT_NEAR(prior.lengthscales[1].log_mean, 0.0, 1e-12);
}
