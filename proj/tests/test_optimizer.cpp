#include "envbo/optimizer.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace envbo;

namespace {

Problem bowl_1d() {
  Problem p;
  p.x_box = Box(Vector::Constant(1, -1.0), Vector::Constant(1, 1.0));
  p.value = [](const Vector& x, double s) { return (x[0] - 0.3) * (x[0] - 0.3) + 0.2 * s; };
  p.cost = [](const Vector&, double s) { return std::exp(-3.0 * s); };
  p.f_star = 0.0;
  return p;
}

ExperimentConfig fast_config(Mode mode) {
  ExperimentConfig cfg;
  cfg.mode = mode;
  cfg.clock = OverheadClock::None;
  cfg.hyper.k = 2;
  cfg.hyper.burn_in = 10;
  cfg.hyper.thin = 2;
  cfg.pes.n_min_draws = 3;
  cfg.pes.support_m = 20;
  cfg.n_init = 6;
  cfg.seed = 11;
  return cfg;
}

}  // namespace

TEST(InitialDesign, FidelityCounts) {
  ExperimentConfig cfg;
  cfg.mode = Mode::EnvPES;
  cfg.n_init = 20;
  const auto design = initial_design(cfg, Box::unit(2));
  ASSERT_EQ(design.size(), 20u);
  int n50 = 0, n75 = 0, n875 = 0;
  for (const auto& [x, s] : design) {
    n50 += s == 0.5;
    n75 += s == 0.75;
    n875 += s == 0.875;
  }
  EXPECT_EQ(n50, 7);
  EXPECT_EQ(n75, 7);
  EXPECT_EQ(n875, 6);
  // The same x is evaluated at each fidelity.
  EXPECT_EQ(design[0].first, design[1].first);
  EXPECT_EQ(design[1].first, design[2].first);
}

TEST(InitialDesign, FullFidelityOnly) {
  ExperimentConfig cfg;
  cfg.mode = Mode::PES;
  cfg.n_init = 20;
  for (const auto& [x, s] : initial_design(cfg, Box::unit(3))) {
    EXPECT_EQ(s, 0.0);
    EXPECT_TRUE(Box::unit(3).contains(x));
  }
}

TEST(Optimizer, BudgetAndAccounting) {
  ExperimentConfig cfg = fast_config(Mode::EnvPES);
  cfg.budget_s = 12.0;
  const Trace tr = run(cfg, bowl_1d());
  ASSERT_TRUE(tr.error.empty()) << tr.error;
  ASSERT_GT(tr.rows.size(), 6u);
  double cum_eval = 0.0, cum_total = 0.0;
  for (std::size_t i = 0; i < tr.rows.size(); ++i) {
    const auto& r = tr.rows[i];
    cum_eval += r.eval_cost_s;
    cum_total += r.eval_cost_s + r.overhead_s;
    EXPECT_NEAR(r.cum_eval_cost_s, cum_eval, 1e-12);
    EXPECT_NEAR(r.cum_total_cost_s, cum_total, 1e-12);
    EXPECT_GE(r.s, 0.0);
    EXPECT_LE(r.s, 1.0);
    EXPECT_EQ(r.step, static_cast<int>(i));
    // Every row before the last is under budget, otherwise the loop would have stopped.
    if (i + 1 < tr.rows.size()) { EXPECT_LT(r.cum_total_cost_s, cfg.budget_s); }
  }
  EXPECT_GE(tr.rows.back().cum_total_cost_s, cfg.budget_s);
  // Rows from the last init evaluation onward carry a recommendation.
  for (std::size_t i = 5; i < tr.rows.size(); ++i) {
    ASSERT_EQ(tr.rows[i].x_rec.size(), 1);
    EXPECT_TRUE(std::isfinite(tr.rows[i].immediate_regret));
    EXPECT_GE(tr.rows[i].immediate_regret, 0.0);
  }
  for (std::size_t i = 0; i < 5; ++i) EXPECT_TRUE(std::isnan(tr.rows[i].immediate_regret));
}

TEST(Optimizer, Deterministic) {
  ExperimentConfig cfg = fast_config(Mode::EnvPES);
  cfg.budget_s = 9.0;
  std::ostringstream a, b;
  write_trace_csv(a, run(cfg, bowl_1d()));
  write_trace_csv(b, run(cfg, bowl_1d()));
  EXPECT_EQ(a.str(), b.str());
}

TEST(Optimizer, PesFindsBowlMinimum) {
  ExperimentConfig cfg = fast_config(Mode::PES);
  cfg.budget_s = 14.0;  // unit cost at s = 0 after the exp cost
  const Trace tr = run(cfg, bowl_1d());
  ASSERT_TRUE(tr.error.empty()) << tr.error;
  EXPECT_EQ(tr.rows.size(), 14u);
  for (const auto& r : tr.rows) EXPECT_EQ(r.s, 0.0);
  EXPECT_LT(tr.rows.back().immediate_regret, 1e-3);
}

TEST(Optimizer, EiRuns) {
  ExperimentConfig cfg = fast_config(Mode::EI);
  cfg.budget_s = 10.0;
  const Trace tr = run(cfg, bowl_1d());
  ASSERT_TRUE(tr.error.empty()) << tr.error;
  EXPECT_EQ(tr.rows.size(), 10u);
  EXPECT_LT(tr.rows.back().immediate_regret, 1e-2);
}

TEST(Optimizer, RecommendationNearDeepObservation) {
  // An isolated deep observation at s = 0 pulls the posterior minimum to it.
  Problem p = bowl_1d();
  p.value = [](const Vector& x, double) { return std::abs(x[0] + 0.5) < 1e-9 ? -5.0 : 0.0; };
  ExperimentConfig cfg = fast_config(Mode::PES);
  Optimizer opt(cfg, p);
  opt.initialize();
  std::vector<Observation> data = opt.data();
  Observation deep;
  deep.location = Vector::Constant(1, -0.5);
  deep.value = -5.0;
  data.push_back(deep);
  HyperSampler sampler(cfg.hyper);
  const auto set =
      sampler.sample(data, HyperPrior::for_data(p.x_box.width(), data, false), 5);
  const auto [x, flag] = opt.recommend(set);
  EXPECT_TRUE(flag.empty());
  EXPECT_NEAR(x[0], -0.5, 0.05);
}

TEST(Optimizer, MaxEvalsStops) {
  ExperimentConfig cfg = fast_config(Mode::PES);
  cfg.budget_s = 1e9;
  cfg.max_evals = 8;
  const Trace tr = run(cfg, bowl_1d());
  EXPECT_EQ(tr.rows.size(), 8u);
}

TEST(TraceCsv, HeaderAndPrecision) {
  Trace tr;
  tr.dim = 2;
  TraceRow r;
  r.x = Vector::Constant(2, 0.1);
  r.y = 1.0 / 3.0;
  r.flag("init");
  tr.rows.push_back(r);
  std::ostringstream out;
  write_trace_csv(out, tr);
  const std::string s = out.str();
  EXPECT_EQ(s.substr(0, s.find('\n')),
            "step,x0,x1,s,y,eval_cost_s,overhead_s,xrec0,xrec1,rec_mean,immediate_regret,cum_eval_cost_s,"
            "cum_total_cost_s,predicted_cost_s,n_remaining,flags");
  EXPECT_NE(s.find("0.33333333333333331"), std::string::npos);
  EXPECT_NE(s.find(",init\n"), std::string::npos);
}
