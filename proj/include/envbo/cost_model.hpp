#pragma once

// Evaluation-cost and overhead models, and the budget-aware cost divisor of
// the acquisition.

#include "envbo/hyper.hpp"
#include "envbo/optim.hpp"

namespace envbo {

struct CostRecord {
  Vector location;  // model input space, fidelity last when present
  double cost = 0.0;
};

/// GP on log evaluation cost with MAP hyperparameters.
class CostGP {
 public:
  CostGP() = default;
  explicit CostGP(GPState gp) : gp_(std::move(gp)) {}

  double log_mean(const Vector& x) const { return gp_.mean(x); }
  double predict(const Vector& x) const { return std::exp(log_mean(x)); }
  const GPState& state() const { return gp_; }

 private:
  GPState gp_;
};

struct CostFitOptions {
  int restarts = 5;
  double noise_rel = 1e-2;
  NelderMeadOptions nm{1500, 1e-10, 1e-8, 0.5};
};

inline CostGP fit_cost_gp(const std::vector<CostRecord>& records, const Box& box, std::uint64_t seed,
                          bool fidelity_axis = true, const CostFitOptions& opts = {}) {
  if (records.size() < 2) throw Error(ErrorKind::InvalidRecord, "cost model needs at least two records");
  std::vector<Observation> data;
  for (const auto& r : records) {
    if (!(r.cost > 0.0) || !std::isfinite(r.cost)) throw Error(ErrorKind::InvalidRecord, "costs must be positive");
    Observation o;
    o.location = r.location;
    o.value = std::log(r.cost);
    data.push_back(std::move(o));
  }
  const HyperPrior prior = HyperPrior::for_data(box.width(), data, fidelity_axis, opts.noise_rel);
  auto neg = [&](const Vector& theta) {
    const double lp = hyper_log_posterior(data, prior, theta);
    return std::isfinite(lp) ? -lp : kInf;
  };
  Rng rng(seed);
  Vector best = prior.prior_mode();
  double best_v = neg(best);
  for (int r = 0; r < opts.restarts; ++r) {
    Vector start = prior.prior_mode();
    if (r > 0) start += rng.normal_vector(start.size());
    const LocalResult res = nelder_mead(neg, start, opts.nm);
    if (res.value < best_v) {
      best_v = res.value;
      best = res.x;
    }
  }
  return CostGP(GPState::fit(data, prior.to_spec(best)));
}

struct GammaPrior {
  double shape = 2.0;
  double rate = 1.0;
  double log_density(double x) const { return x > 0.0 ? (shape - 1.0) * std::log(x) - rate * x : -kInf; }
  double mode() const { return (shape - 1.0) / rate; }
};

/// Overhead per step modeled as theta0 + theta1 n^theta2 plus N(0, theta3^2) noise.
struct OverheadModel {
  double theta0 = 0.0, theta1 = 0.0, theta2 = 1.0, theta3 = 0.0;
  bool prior_only = true;

  double mean(double n) const { return std::max(0.0, theta0 + theta1 * std::pow(std::max(n, 0.0), theta2)); }
};

struct OverheadPriors {
  GammaPrior theta0, theta1, theta2, theta3;

  static OverheadPriors for_history(const std::vector<double>& history) {
    double med = history.empty() ? 1.0 : median(history);
    double sd = 0.0;
    if (history.size() > 1) {
      double m = 0.0;
      for (double h : history) m += h;
      m /= static_cast<double>(history.size());
      for (double h : history) sd += (h - m) * (h - m);
      sd = std::sqrt(sd / static_cast<double>(history.size() - 1));
    }
    med = std::max(med, 1e-9);
    sd = std::max(sd, 1e-3 * med);
    return {{2.0, 2.0 / med}, {2.0, 20.0}, {2.0, 1.0}, {2.0, 2.0 / sd}};
  }
};

/// MAP fit of the overhead growth model. theta3 is profiled at the residual
/// sd (floored relative to the history scale).
inline OverheadModel fit_overhead_map(const std::vector<double>& history) {
  const OverheadPriors pri = OverheadPriors::for_history(history);
  OverheadModel out;
  if (history.size() < 3) {
    out.theta0 = history.empty() ? 0.0 : pri.theta0.mode();
    out.theta1 = history.empty() ? 0.0 : pri.theta1.mode();
    out.theta2 = pri.theta2.mode();
    out.theta3 = history.empty() ? 0.0 : pri.theta3.mode();
    return out;
  }
  const auto t = static_cast<double>(history.size());
  double scale = 0.0;
  for (double h : history) scale = std::max(scale, std::abs(h));
  const double sd_floor = std::max(1e-9 * scale, 1e-300);

  auto residual_sd = [&](double a, double b, double c) {
    double rss = 0.0;
    for (std::size_t n = 0; n < history.size(); ++n) {
      const double r = history[n] - (a + b * std::pow(static_cast<double>(n), c));
      rss += r * r;
    }
    return std::max(std::sqrt(rss / t), sd_floor);
  };
  auto neg = [&](const Vector& phi) {
    const double a = std::exp(phi[0]), b = std::exp(phi[1]), c = std::exp(phi[2]);
    if (!std::isfinite(a) || !std::isfinite(b) || !std::isfinite(c) || c > 20.0) return kInf;
    const double sd = residual_sd(a, b, c);
    const double loglik = -t * std::log(sd) - 0.5 * t;
    const double lp = pri.theta0.log_density(a) + pri.theta1.log_density(b) + pri.theta2.log_density(c);
    const double v = -(loglik + lp);
    return std::isfinite(v) ? v : kInf;
  };

  // Least-squares starts for (theta0, theta1) over a theta2 grid.
  std::vector<std::pair<double, Vector>> starts;
  for (double c = 0.25; c <= 3.0 + 1e-12; c += 0.25) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t n = 0; n < history.size(); ++n) {
      const double x = std::pow(static_cast<double>(n), c);
      sx += x;
      sy += history[n];
      sxx += x * x;
      sxy += x * history[n];
    }
    const double det = t * sxx - sx * sx;
    double b = det > 0.0 ? (t * sxy - sx * sy) / det : 0.0;
    b = std::max(b, 1e-6 * std::max(scale, 1e-9));
    const double a = std::max((sy - b * sx) / t, 1e-6 * std::max(scale, 1e-9));
    Vector phi(3);
    phi << std::log(a), std::log(b), std::log(c);
    starts.emplace_back(neg(phi), phi);
  }
  std::sort(starts.begin(), starts.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
  Vector best = starts.front().second;
  double best_v = starts.front().first;
  NelderMeadOptions nm{4000, 1e-14, 1e-10, 0.3};
  for (std::size_t i = 0; i < std::min<std::size_t>(3, starts.size()); ++i) {
    LocalResult r = nelder_mead(neg, starts[i].second, nm);
    // One restart from the result shakes off a collapsed simplex.
    r = nelder_mead(neg, r.x, nm);
    if (r.value < best_v) {
      best_v = r.value;
      best = r.x;
    }
  }
  out.theta0 = std::exp(best[0]);
  out.theta1 = std::exp(best[1]);
  out.theta2 = std::exp(best[2]);
  out.theta3 = residual_sd(out.theta0, out.theta1, out.theta2);
  out.prior_only = false;
  return out;
}

/// Greatest N >= 0 with sum_{n=0..N} (overhead(offset + n) + c_eval) <= budget.
/// `offset` is the absolute index of the current step in the overhead history.
inline long remaining_steps(const OverheadModel& model, double budget, double c_eval, long offset = 0,
                            long cap = 1000000) {
  if (!(budget >= 0.0) || !(c_eval >= 0.0)) throw Error(ErrorKind::Domain, "budget and c_eval must be non-negative");
  double spent = 0.0;
  long n = 0;
  for (; n < cap; ++n) {
    spent += model.mean(static_cast<double>(offset + n)) + c_eval;
    if (spent > budget) break;
  }
  return std::max(0L, n - 1);
}

/// Average predicted overhead over the steps that remain affordable.
inline double mean_future_overhead(const OverheadModel& model, double budget, double c_eval, long offset = 0) {
  const long n = remaining_steps(model, budget, c_eval, offset);
  double sum = 0.0;
  for (long i = 0; i <= n; ++i) sum += model.mean(static_cast<double>(offset + i));
  return sum / static_cast<double>(n + 1);
}

/// Predicted evaluation cost plus mean future overhead, floored at a fraction
/// of the full-fidelity cost.
inline double acquisition_divisor(double predicted_cost, double mean_overhead, double full_fidelity_cost,
                                  double floor_frac = 1e-3) {
  const double floor = floor_frac * full_fidelity_cost;
  const double v = predicted_cost + mean_overhead;
  return std::max(v, std::max(floor, std::numeric_limits<double>::min()));
}

}  // namespace envbo
