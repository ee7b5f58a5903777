#include "envbo/pes.hpp"

#include <gtest/gtest.h>

#include <numbers>

using namespace envbo;

namespace {

KernelSpec iso(double a, int d, double h, double noise) {
  KernelSpec s;
  s.amplitude = a;
  s.lengthscales = Vector::Constant(d, h);
  s.noise_sd = noise;
  return s;
}

Observation obs(double x, double y) {
  Observation o;
  o.location = Vector::Constant(1, x);
  o.value = y;
  return o;
}

Vector v1(double x) { return Vector::Constant(1, x); }

PesConfig no_global_min() {
  PesConfig cfg;
  cfg.global_min_constraint = false;
  return cfg;
}

}  // namespace

TEST(Entropy, Examples) {
  EXPECT_NEAR(gaussian_entropy(1.0 / (2 * std::numbers::pi * std::numbers::e)), 0.0, 1e-14);
  EXPECT_NEAR(gaussian_entropy(1.0), 1.4189385332046727, 1e-14);
  EXPECT_NEAR(gaussian_entropy(4.0 * 0.37) - gaussian_entropy(0.37), std::log(2.0), 1e-14);
  EXPECT_THROW(gaussian_entropy(0.0), Error);
}

TEST(Pes, ConstraintBlockLayout) {
  const auto q = constraint_queries(Vector::Zero(3), 3);
  ASSERT_EQ(q.size(), 10u);
  EXPECT_TRUE(q[0].kind.is_value());
  EXPECT_EQ(q[3].kind, DerivKind::grad(2));
  EXPECT_EQ(q[4].kind, DerivKind::hess(0, 0));
  EXPECT_EQ(q[9].kind, DerivKind::hess(1, 2));
}

TEST(Pes, IndependentCandidateGainsNothing) {
  auto set = HyperPosteriorSet::single(fit({obs(0.0, 0.3)}, iso(1.0, 1, 0.1, 0.01)));
  const auto ctx = context_from_minimizers(set, {{v1(0.5)}}, 1, PesConfig{}, 0.3);
  EXPECT_NEAR(delta_entropy(ctx, v1(20.0)).value, 0.0, 1e-10);
}

TEST(Pes, NoiseFreeTrainingPointGainsNothing) {
  auto set = HyperPosteriorSet::single(fit({obs(0.0, 0.3), obs(0.6, -0.2)}, iso(1.0, 1, 0.4, 0.0)));
  const auto ctx = context_from_minimizers(set, {{v1(0.3)}}, 1, no_global_min(), -0.2);
  EXPECT_NEAR(delta_entropy(ctx, v1(0.6)).value, 0.0, 1e-6);
}

TEST(Pes, MatchesMonteCarloConditioning) {
  // One observation, minimizer draw at xd with zero slope and non-negative
  // curvature. The oracle samples posterior paths on a fine grid around xd
  // using only value covariances, keeps paths whose finite-difference slope
  // is near zero and curvature non-negative, and measures var f(x).
  const double a = 1.0, h = 0.5, noise = 0.1, xd = 0.4, x = 0.7, delta = 0.01;
  const KernelSpec spec = iso(a, 1, h, noise);
  auto set = HyperPosteriorSet::single(fit({obs(0.0, 0.0)}, spec, {MeanPolicy::Zero}));
  const auto ctx = context_from_minimizers(set, {{v1(xd)}}, 1, no_global_min(), 0.0);
  const double dh = delta_entropy(ctx, v1(x)).value;

  const std::vector<double> grid = {xd - delta, xd, xd + delta, x};
  auto kf = [&](double p, double q) { return matern52(v1(p), v1(q), spec); };
  Matrix prior(4, 4);
  Vector cross(4);
  for (int i = 0; i < 4; ++i) {
    cross[i] = kf(grid[i], 0.0);
    for (int j = 0; j < 4; ++j) prior(i, j) = kf(grid[i], grid[j]);
  }
  const double kyy = a + noise * noise;
  const Matrix post = prior - cross * cross.transpose() / kyy;  // y = 0, so the mean is zero
  const Matrix l = jittered_cholesky(post, a, 1e-12).first;
  Rng rng(123);
  const double v_prior = post(3, 3);
  const double slope_sd = std::sqrt((post(2, 2) + post(0, 0) - 2 * post(0, 2))) / (2 * delta);
  double s1 = 0.0, s2 = 0.0;
  long kept = 0;
  for (int t = 0; t < 1000000; ++t) {
    const Vector f = l * rng.normal_vector(4);
    const double slope = (f[2] - f[0]) / (2 * delta);
    const double curv = (f[2] - 2 * f[1] + f[0]) / (delta * delta);
    if (std::abs(slope) < 0.02 * slope_sd && curv >= 0.0) {
      s1 += f[3];
      s2 += f[3] * f[3];
      ++kept;
    }
  }
  ASSERT_GT(kept, 2000);
  const double mean = s1 / kept;
  const double v_mc = s2 / kept - mean * mean;
  const double dh_mc = 0.5 * std::log(v_prior + noise * noise) - 0.5 * std::log(v_mc + noise * noise);
  EXPECT_GT(dh, 0.05);
  EXPECT_NEAR(dh, dh_mc, 0.1 * dh_mc);
}

TEST(Pes, ConditionedVarianceNeverExceedsPrior) {
  std::vector<Observation> data;
  for (int i = 0; i < 6; ++i) {
    Observation o;
    o.location = Vector(2);
    o.location << std::cos(i), std::sin(2.0 * i);
    o.value = o.location.squaredNorm() + 0.3 * o.location[0];
    data.push_back(o);
  }
  HyperPrior prior = HyperPrior::for_data(Vector::Constant(2, 2.0), data, false);
  HyperConfig hc;
  hc.k = 3;
  hc.burn_in = 20;
  hc.thin = 2;
  HyperSampler sampler(hc);
  const auto set = sampler.sample(data, prior, 4);
  const Box box = Box::uniform(2, -1.0, 1.0);
  double inc = kInf;
  for (const auto& o : data) inc = std::min(inc, o.value);
  const auto ctx = build_context(set, box, PesConfig{}, 9, inc);
  EXPECT_GT(ctx.n_valid(), 0);
  Rng rng(3);
  for (int t = 0; t < 200; ++t) {
    const auto dh = delta_entropy(ctx, rng.uniform_in(box));
    EXPECT_FALSE(dh.clamped);
    EXPECT_GE(dh.value, 0.0);
    EXPECT_TRUE(std::isfinite(dh.value));
  }
}

TEST(Acquisition, Algebra) {
  EXPECT_EQ(acquisition(0.0, 3.0), 0.0);
  EXPECT_DOUBLE_EQ(acquisition(0.8, 0.5), 2.0 * acquisition(0.8, 1.0));
  EXPECT_DOUBLE_EQ(acquisition(0.8, 1.0), 0.8);
  EXPECT_THROW(acquisition(1.0, 0.0), Error);
}

TEST(Acquisition, ConstantSurfaceReturnsTieBreakPoint) {
  // Minimizer draw and data far outside the box: zero gain everywhere.
  auto set = HyperPosteriorSet::single(fit({obs(50.0, 0.0)}, iso(1.0, 1, 0.1, 0.01)));
  auto ctx = context_from_minimizers(set, {{v1(51.0)}}, 1, no_global_min(), 0.0);
  const Box box = Box::uniform(1, -1.0, 1.0);
  const auto choice = optimize_acquisition(ctx, box, false, [](const Vector&) { return 1.0; }, 1);
  EXPECT_EQ(choice.x[0], -1.0);
  EXPECT_EQ(choice.value, 0.0);
}

TEST(Acquisition, TieBreakPrefersLowFidelityThenLexicographic) {
  Vector a(2), b(2), c(2);
  a << 0.5, 0.0;
  b << 0.1, 0.5;
  c << 0.2, 0.0;
  EXPECT_TRUE(better_candidate(1.0, a, 1.0, b, true));
  EXPECT_TRUE(better_candidate(1.0, c, 1.0, a, true));
  EXPECT_TRUE(better_candidate(2.0, b, 1.0, c, true));
  EXPECT_TRUE(better_candidate(1.0, b, 1.0, a, false));
}

TEST(Acquisition, FindsGridOracleMaximum) {
  auto set = HyperPosteriorSet::single(
      fit({obs(-0.8, 1.0), obs(-0.2, 0.4), obs(0.5, 0.9), obs(0.9, 1.3)}, iso(1.0, 1, 0.3, 0.01)));
  const auto ctx = context_from_minimizers(set, {{v1(0.15)}}, 1, PesConfig{}, 0.4);
  const Box box = Box::uniform(1, -1.0, 1.0);
  const auto choice = optimize_acquisition(ctx, box, false, [](const Vector&) { return 1.0; }, 2);
  double best = -kInf, arg = 0.0;
  for (int i = 0; i <= 200000; ++i) {
    const double x = -1.0 + 2.0 * i / 200000.0;
    const double v = delta_entropy(ctx, v1(x)).value;
    if (v > best) {
      best = v;
      arg = x;
    }
  }
  EXPECT_NEAR(choice.x[0], arg, 1e-2 * 0.3);
  EXPECT_GE(choice.value, best - 1e-9);
  EXPECT_EQ(choice.x.size(), 1);
}

TEST(Acquisition, CostScalingLeavesChoiceUnchanged) {
  std::vector<Observation> data;
  for (double x : {0.1, 0.5, 0.9})
    for (double s : {0.0, 0.6}) {
      Observation o;
      o.location = Vector(2);
      o.location << x, s;
      o.value = std::sin(5 * x) + 0.3 * s;
      data.push_back(o);
    }
  KernelSpec spec;
  spec.amplitude = 1.0;
  spec.lengthscales = Vector(2);
  spec.lengthscales << 0.3, 1.0;
  spec.noise_sd = 0.01;
  auto set = HyperPosteriorSet::single(fit(data, spec));
  const auto ctx = context_from_minimizers(set, {{v1(0.65)}}, 1, no_global_min(), kInf);
  const Box box = Box::unit(2);
  auto cost = [](const Vector& x) { return std::exp(-2.0 * x[1]); };
  const auto a = optimize_acquisition(ctx, box, true, cost, 3);
  const auto b = optimize_acquisition(ctx, box, true, [&](const Vector& x) { return 7.5 * cost(x); }, 3);
  EXPECT_LT((a.x - b.x).norm(), 1e-6);
  EXPECT_NEAR(a.value, 7.5 * b.value, 1e-9 * a.value);
}
