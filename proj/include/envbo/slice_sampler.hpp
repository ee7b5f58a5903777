#pragma once

// Univariate-update slice sampling with stepping out and shrinkage, applied
// coordinate by coordinate.

#include "envbo/core.hpp"

#include <functional>

namespace envbo {

using LogDensity = std::function<double(const Vector&)>;

struct SliceConfig {
  int burn_in = 0;
  int thin = 1;
  double step_width = 1.0;
  int max_step_out = 32;  // per side, per coordinate update
};

struct SliceChain {
  std::vector<Vector> samples;
  int capped_brackets = 0;  // step-outs that hit max_step_out
  long evaluations = 0;
};

namespace detail {

inline void slice_update(const LogDensity& logp, Vector& x, double& lp, Eigen::Index i, const SliceConfig& cfg,
                         Rng& rng, SliceChain& chain) {
  const double level = lp - (-std::log(1.0 - rng.uniform()));  // log(u * p(x)), u ~ U(0, 1]
  const double xi = x[i];
  double left = xi - cfg.step_width * rng.uniform();
  double right = left + cfg.step_width;
  auto eval_at = [&](double v) {
    const double saved = x[i];
    x[i] = v;
    const double out = logp(x);
    x[i] = saved;
    ++chain.evaluations;
    return std::isnan(out) ? -kInf : out;
  };
  int steps = 0;
  while (eval_at(left) > level) {
    if (++steps > cfg.max_step_out) {
      ++chain.capped_brackets;
      break;
    }
    left -= cfg.step_width;
  }
  steps = 0;
  while (eval_at(right) > level) {
    if (++steps > cfg.max_step_out) {
      ++chain.capped_brackets;
      break;
    }
    right += cfg.step_width;
  }
  for (int shrink = 0; shrink < 200; ++shrink) {
    const double proposal = left + (right - left) * rng.uniform();
    const double lp_new = eval_at(proposal);
    if (lp_new > level) {
      x[i] = proposal;
      lp = lp_new;
      return;
    }
    if (proposal < xi)
      left = proposal;
    else
      right = proposal;
  }
  // Bracket collapsed onto the current point; keep it.
}

}  // namespace detail

/// Draws `n` states from exp(logdensity) starting at `init`. Deterministic in `seed`.
inline SliceChain slice_sample(const LogDensity& logdensity, const Vector& init, int n, const SliceConfig& cfg,
                               std::uint64_t seed) {
  Vector x = init;
  double lp = logdensity(x);
  if (!std::isfinite(lp)) throw Error(ErrorKind::InvalidStart, "log density is not finite at the initial state");
  if (n < 0 || cfg.thin < 1 || cfg.burn_in < 0 || !(cfg.step_width > 0.0))
    throw Error(ErrorKind::InvalidSpec, "invalid slice sampler configuration");
  Rng rng(seed);
  SliceChain chain;
  chain.samples.reserve(static_cast<std::size_t>(n));
  const long total = static_cast<long>(cfg.burn_in) + static_cast<long>(n) * cfg.thin;
  for (long it = 1; it <= total; ++it) {
    for (Eigen::Index i = 0; i < x.size(); ++i) detail::slice_update(logdensity, x, lp, i, cfg, rng, chain);
    if (it > cfg.burn_in && (it - cfg.burn_in) % cfg.thin == 0) chain.samples.push_back(x);
  }
  return chain;
}

}  // namespace envbo
