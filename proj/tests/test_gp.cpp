#include "envbo/gp.hpp"

#include <gtest/gtest.h>

#include <numbers>

using namespace envbo;

namespace {

KernelSpec make_spec(double a, std::initializer_list<double> h, double noise = 0.0) {
  KernelSpec s;
  s.amplitude = a;
  s.lengthscales = Vector(static_cast<Eigen::Index>(h.size()));
  Eigen::Index i = 0;
  for (double v : h) s.lengthscales[i++] = v;
  s.noise_sd = noise;
  return s;
}

Observation value_at(std::initializer_list<double> x, double y) {
  Observation o;
  o.location = Vector(static_cast<Eigen::Index>(x.size()));
  Eigen::Index i = 0;
  for (double v : x) o.location[i++] = v;
  o.value = y;
  return o;
}

std::vector<Observation> five_points() {
  const double pts[5][2] = {{0.1, 0.2}, {0.5, -0.3}, {-0.4, 0.7}, {0.9, 0.9}, {-0.8, -0.6}};
  std::vector<Observation> data;
  for (const auto& p : pts) data.push_back(value_at({p[0], p[1]}, std::sin(3 * p[0]) + p[1] * p[1]));
  return data;
}

}  // namespace

TEST(GP, SingleNoiseFreeObservationInterpolates) {
  const auto s = make_spec(2.0, {0.3});
  auto gp = fit({value_at({0.4}, 1.7)}, s);
  auto [m, v] = gp.mean_variance(Vector::Constant(1, 0.4));
  EXPECT_NEAR(m, 1.7, 1e-9);
  EXPECT_NEAR(v, 0.0, 1e-8 * s.amplitude);
}

TEST(GP, DuplicateNoisyLocationsAverage) {
  const auto s = make_spec(1.5, {0.3}, 0.4);
  FitOptions opts;
  opts.mean = MeanPolicy::Zero;
  auto gp = fit({value_at({0.2}, 1.0), value_at({0.2}, 3.0)}, s, opts);
  // Zero-mean two-point algebra: m = 2A / (2A + sigma^2) * mean(y).
  const double expected = 2 * 1.5 / (2 * 1.5 + 0.16) * 2.0;
  EXPECT_NEAR(gp.mean(Vector::Constant(1, 0.2)), expected, 1e-9);
}

TEST(GP, FivePointsMatchLinearAlgebraOracle) {
  const auto s = make_spec(1.0, {0.5, 0.8});
  const auto data = five_points();
  auto gp = fit(data, s);
  for (const auto& o : data) EXPECT_NEAR(gp.mean(o.location), o.value, 1e-6 * s.amplitude);
  Vector q(2);
  q << 0.2, 0.4;
  // Frozen from a numpy solve with the same kernel and centred mean.
  EXPECT_NEAR(gp.mean(q), 0.45622260562090944, 1e-7);
  EXPECT_NEAR(gp.variance(q), 0.13700664844133215, 1e-7);
}

TEST(GP, PriorReversionFarFromData) {
  const auto s = make_spec(1.3, {0.2, 0.2});
  auto gp = fit(five_points(), s);
  Vector far(2);
  far << 10.0, -9.0;
  auto [m, v] = gp.mean_variance(far);
  EXPECT_NEAR(m, gp.mean_offset(), 1e-6 * s.amplitude);
  EXPECT_NEAR(v, s.amplitude, 1e-6 * s.amplitude);
}

TEST(GP, JointValueAndGradientAtTrainingPoint) {
  const auto s = make_spec(1.0, {0.5, 0.8});
  const auto data = five_points();
  auto gp = fit(data, s);
  auto [mean, cov] = gp.posterior({{data[0].location, DerivKind::value()}, {data[0].location, DerivKind::grad(0)}});
  EXPECT_NEAR(mean[0], data[0].value, 1e-6);
  EXPECT_NEAR(cov(0, 0), 0.0, 1e-8);
  EXPECT_GT(cov(1, 1), 0.0);
}

TEST(GP, GradientMeanMatchesFiniteDifferences) {
  const auto s = make_spec(1.0, {0.5, 0.8});
  auto gp = fit(five_points(), s);
  Rng rng(2);
  for (int t = 0; t < 10; ++t) {
    Vector x = rng.normal_vector(2) * 0.5;
    Vector g;
    gp.mean_and_grad(x, 2, &g);
    for (int i = 0; i < 2; ++i) {
      const double step = 1e-5 * s.lengthscales[i];
      Vector xp = x, xm = x;
      xp[i] += step;
      xm[i] -= step;
      const double fd = (gp.mean(xp) - gp.mean(xm)) / (2 * step);
      EXPECT_LT(std::abs(g[i] - fd), 1e-4 * std::max(std::abs(fd), 1e-2)) << i;
    }
    const Matrix h = gp.mean_hessian(x, 2);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        const double step = 1e-5 * s.lengthscales[j];
        Vector xp = x, xm = x;
        xp[j] += step;
        xm[j] -= step;
        const double fd = (gp.mean(xp, DerivKind::grad(i)) - gp.mean(xm, DerivKind::grad(i))) / (2 * step);
        EXPECT_LT(std::abs(h(i, j) - fd), 1e-4 * std::max(std::abs(fd), 1e-1));
      }
  }
}

TEST(GP, PosteriorCovarianceIsPsdAndBounded) {
  const auto s = make_spec(0.8, {0.4, 0.6}, 0.05);
  auto gp = fit(five_points(), s);
  Rng rng(7);
  std::vector<Query> qs;
  for (int i = 0; i < 6; ++i) {
    Vector x = rng.normal_vector(2);
    qs.push_back({x, DerivKind::value()});
    qs.push_back({x, DerivKind::grad(1)});
  }
  qs.push_back({qs[0].location, DerivKind::hess(0, 0)});
  qs.push_back({qs[0].location, DerivKind::hess(0, 1)});
  auto [mean, cov] = gp.posterior(qs);
  EXPECT_GE(min_eigenvalue(cov), -1e-8 * s.amplitude);
  for (int i = 0; i < 200; ++i) {
    Vector x = rng.normal_vector(2) * 2;
    const double v = gp.variance(x);
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, s.amplitude + s.noise_sd * s.noise_sd + 1e-8 * s.amplitude);
  }
}

TEST(GP, LogMarginalLikelihoodSinglePoint) {
  const double a = 1.4, sigma = 0.3;
  const auto s = make_spec(a, {0.5}, sigma);
  FitOptions zero;
  zero.mean = MeanPolicy::Zero;
  const double lml = log_marginal_likelihood({value_at({0.0}, 0.0)}, s, zero);
  EXPECT_NEAR(lml, -0.5 * std::log(2 * std::numbers::pi * (a + sigma * sigma)), 1e-8);
}

TEST(GP, LogMarginalLikelihoodPenalisesScale) {
  const auto s = make_spec(1.0, {0.5}, 0.1);
  std::vector<Observation> small = {value_at({0.0}, 0.5), value_at({2.0}, -0.5)};
  std::vector<Observation> big = {value_at({0.0}, 5.0), value_at({2.0}, -5.0)};
  EXPECT_LT(log_marginal_likelihood(big, s), log_marginal_likelihood(small, s));
}

TEST(GP, LogMarginalLikelihoodFactorisesWhenFarApart) {
  const auto s = make_spec(1.0, {0.1}, 0.2);
  FitOptions zero;
  zero.mean = MeanPolicy::Zero;
  const double joint = log_marginal_likelihood({value_at({0.0}, 0.7), value_at({50.0}, -1.1)}, s, zero);
  const double split = log_marginal_likelihood({value_at({0.0}, 0.7)}, s, zero) +
                       log_marginal_likelihood({value_at({50.0}, -1.1)}, s, zero);
  EXPECT_NEAR(joint, split, 1e-6);
}

TEST(GP, DerivativeObservationsConstrainSlope) {
  const auto s = make_spec(1.0, {0.5});
  Observation slope;
  slope.location = Vector::Constant(1, 0.0);
  slope.kind = DerivKind::grad(0);
  slope.value = 2.0;
  auto gp = fit({value_at({0.0}, 0.0), slope}, s);
  EXPECT_NEAR(gp.mean(Vector::Constant(1, 0.0), DerivKind::grad(0)), 2.0, 1e-6);
  EXPECT_GT(gp.mean(Vector::Constant(1, 0.05)), 0.0);
}

TEST(GP, Errors) {
  const auto s = make_spec(1.0, {0.5});
  EXPECT_THROW(fit({}, s), Error);
  Matrix indefinite(2, 2);
  indefinite << 1.0, 2.0, 2.0, 1.0;
  try {
    jittered_cholesky(indefinite, 1.0);
    FAIL() << "expected ill-conditioned error";
  } catch (const IllConditionedError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::IllConditioned);
    EXPECT_NEAR(e.final_jitter(), 1e-4, 1e-12);
  }
}

TEST(GP, MeanGradientAgreesWithGradientQueries) {
  const auto s = make_spec(1.3, {0.5, 0.8});
  auto gp = fit(five_points(), s);
  Rng rng(8);
  for (int t = 0; t < 10; ++t) {
    const Vector x = rng.normal_vector(2) * 0.5;
    Vector g;
    const double m = gp.mean_and_grad(x, 1, &g);
    ASSERT_EQ(g.size(), 1);
    const auto [mean, cov] = gp.posterior({{x, DerivKind::value()}, {x, DerivKind::grad(0)}});
    EXPECT_NEAR(m, mean[0], 1e-12);
    EXPECT_NEAR(g[0], mean[1], 1e-10 * (1.0 + std::abs(mean[1])));
  }
}
