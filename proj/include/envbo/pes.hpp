#pragma once

// Predictive entropy search: the expected drop in predictive entropy at a
// candidate once the GP is conditioned on a sampled minimizer, and the
// global search over candidates.

#include "envbo/ep.hpp"
#include "envbo/minimizer_sampler.hpp"

#include <map>

namespace envbo {

struct PesConfig {
  int n_min_draws = 10;  // minimizer draws per hyperparameter draw
  int support_m = 100;
  int max_redraws = 3;
  double clamp_tol = 1e-6;
  bool global_min_constraint = true;
  EpConfig ep{};
};

/// Entropy of a Gaussian with the given variance.
inline double gaussian_entropy(double variance) {
  if (!(variance > 0.0)) throw Error(ErrorKind::Domain, "gaussian_entropy needs a positive variance");
  return 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e * variance);
}

/// Queries making up the constraint block at `x` for the first `d` inputs:
/// value, gradient, Hessian diagonal, then Hessian off-diagonal (i < j).
inline std::vector<Query> constraint_queries(const Vector& x, int d) {
  std::vector<Query> q{{x, DerivKind::value()}};
  for (int i = 0; i < d; ++i) q.push_back({x, DerivKind::grad(i)});
  for (int i = 0; i < d; ++i) q.push_back({x, DerivKind::hess(i, i)});
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j) q.push_back({x, DerivKind::hess(i, j)});
  return q;
}

struct ConditionedDraw {
  Vector x;                      // minimizer draw in the s=0 plane
  std::vector<Query> block;      // constraint block queries at the lifted draw
  Vector location;               // the lifted draw
  std::vector<DerivKind> kinds;  // block kinds in order
  Matrix whitened;               // L^{-1} k(training, block)
  Matrix reduction;              // variance-reduction operator from EP
  bool converged = true;
  int dropped_sites = 0;
};

/// EP-conditions one GP on the minimizing conditions at `x_plane`.
/// Returns nullopt when EP produces an unusable approximation.
inline std::optional<ConditionedDraw> condition_on_minimizer(const GPState& gp, const Vector& x_full, int d,
                                                             const PesConfig& cfg, double incumbent) {
  ConditionedDraw out;
  out.x = x_full.head(d);
  out.block = constraint_queries(x_full, d);
  out.location = x_full;
  for (const auto& q : out.block) out.kinds.push_back(q.kind);
  auto [mean, cov] = gp.posterior(out.block);
  ConstraintBlock block{std::move(mean), std::move(cov), {}, {}};
  for (int i = 0; i < d; ++i) block.equalities.push_back(1 + i);
  for (int i = 0; i < d; ++i) block.inequalities.push_back({1 + d + i, 0.0, Side::AtLeast});
  for (int i = 1 + 2 * d; i < static_cast<int>(out.block.size()); ++i) block.equalities.push_back(i);
  if (cfg.global_min_constraint && std::isfinite(incumbent)) block.inequalities.push_back({0, incumbent, Side::AtMost});
  EpResult ep;
  try {
    ep = ep_condition(block, cfg.ep);
  } catch (const Error&) {
    return std::nullopt;
  }
  if (!ep.valid) return std::nullopt;
  out.reduction = std::move(ep.reduction);
  out.converged = ep.converged;
  out.dropped_sites = ep.dropped_sites;
  out.whitened = gp.whiten(gp.cross_cov(out.block));
  return out;
}

struct AcquisitionContext {
  HyperPosteriorSet set;
  std::vector<std::vector<ConditionedDraw>> draws;  // per hyper draw
  int d = 0;
  double clamp_tol = 1e-6;
  std::vector<Vector> support;  // s=0 plane support points, when built from the mixture
  bool support_fallback = false;
  int ep_failures = 0;
  int ep_nonconverged = 0;

  int n_valid() const {
    int n = 0;
    for (const auto& d : draws) n += static_cast<int>(d.size());
    return n;
  }
};

/// Context from explicit minimizer locations (one list per hyper draw).
inline AcquisitionContext context_from_minimizers(const HyperPosteriorSet& set,
                                                  const std::vector<std::vector<Vector>>& minimizers, int d,
                                                  const PesConfig& cfg, double incumbent) {
  AcquisitionContext ctx;
  ctx.set = set;
  ctx.d = d;
  ctx.clamp_tol = cfg.clamp_tol;
  ctx.draws.resize(static_cast<std::size_t>(set.k()));
  for (int k = 0; k < set.k() && k < static_cast<int>(minimizers.size()); ++k)
    for (const auto& x : minimizers[static_cast<std::size_t>(k)]) {
      auto c = condition_on_minimizer(set.states[static_cast<std::size_t>(k)], on_plane(set, x), d, cfg, incumbent);
      if (!c) {
        ++ctx.ep_failures;
        continue;
      }
      ctx.ep_nonconverged += !c->converged;
      ctx.draws[static_cast<std::size_t>(k)].push_back(std::move(*c));
    }
  if (ctx.n_valid() == 0) throw Error(ErrorKind::AcquisitionUnavailable, "no usable minimizer draws");
  return ctx;
}

/// Support from the WLH mixture, then per hyper draw the argmins of joint
/// posterior draws on it; EP failures are replaced up to `max_redraws` times.
inline AcquisitionContext build_context(const HyperPosteriorSet& set, const Box& plane_box, const PesConfig& cfg,
                                        std::uint64_t seed, double incumbent) {
  const int d = plane_box.dim();
  AcquisitionContext ctx;
  ctx.set = set;
  ctx.d = d;
  ctx.clamp_tol = cfg.clamp_tol;
  ctx.draws.resize(static_cast<std::size_t>(set.k()));
  const SupportDraw support = wlh_support(set, plane_box, cfg.support_m, mix_seed(seed, 1));
  ctx.support_fallback = support.fallback;
  ctx.support = support.points;
  std::vector<Vector> lifted;
  for (const auto& p : support.points) lifted.push_back(on_plane(set, p));

  Rng rng(mix_seed(seed, 2));
  for (int k = 0; k < set.k(); ++k) {
    const auto& gp = set.states[static_cast<std::size_t>(k)];
    const auto picks = posterior_argmin_draws(gp, lifted, cfg.n_min_draws + cfg.max_redraws, rng);
    std::map<int, std::optional<ConditionedDraw>> cache;
    int failures = 0;
    auto& out = ctx.draws[static_cast<std::size_t>(k)];
    for (int idx : picks) {
      if (static_cast<int>(out.size()) >= cfg.n_min_draws || failures > cfg.max_redraws) break;
      auto it = cache.find(idx);
      if (it == cache.end())
        it = cache.emplace(idx, condition_on_minimizer(gp, lifted[static_cast<std::size_t>(idx)], d, cfg, incumbent))
                 .first;
      if (!it->second) {
        ++failures;
        ++ctx.ep_failures;
        continue;
      }
      ctx.ep_nonconverged += !it->second->converged;
      out.push_back(*it->second);
    }
  }
  if (ctx.n_valid() == 0) throw Error(ErrorKind::AcquisitionUnavailable, "every minimizer draw failed EP");
  return ctx;
}

struct DeltaH {
  double value = 0.0;
  bool clamped = false;  // raw estimate was below -clamp_tol
};

/// Mean over hyper and minimizer draws of the entropy drop of y at `x_full`.
inline DeltaH delta_entropy(const AcquisitionContext& ctx, const Vector& x_full) {
  double total = 0.0;
  int count = 0;
  for (int k = 0; k < ctx.set.k(); ++k) {
    const auto& draws = ctx.draws[static_cast<std::size_t>(k)];
    if (draws.empty()) continue;
    const GPState& gp = ctx.set.states[static_cast<std::size_t>(k)];
    const KernelSpec& spec = gp.spec();
    const Vector w = gp.whiten(gp.cross_cov(x_full));
    const double v = std::max(0.0, spec.amplitude - w.squaredNorm());
    const double noise2 = spec.noise_sd * spec.noise_sd;
    const double floor = 1e-12 * spec.amplitude;
    const double before = 0.5 * std::log(std::max(v + noise2, floor));
    for (const auto& dr : draws) {
      const Vector c = kernel_column(dr.location, dr.kinds, x_full, spec) - dr.whitened.transpose() * w;
      const double vc = std::max(0.0, v - c.dot(dr.reduction * c));
      total += before - 0.5 * std::log(std::max(vc + noise2, floor));
      ++count;
    }
  }
  if (count == 0) throw Error(ErrorKind::AcquisitionUnavailable, "no usable minimizer draws");
  DeltaH out;
  out.value = total / count;
  if (out.value < 0.0) {
    out.clamped = out.value < -ctx.clamp_tol;
    out.value = 0.0;
  }
  return out;
}

inline double acquisition(double delta_h, double cost_divisor) {
  if (!(cost_divisor > 0.0)) throw Error(ErrorKind::Domain, "cost divisor must be positive");
  return delta_h / cost_divisor;
}

struct AcqSearch {
  int n_local = 5;                                    // local ascents from the best grid points
  std::vector<double> s_grid{0.0, 0.25, 0.5, 0.75, 1.0};  // for lifting support points
  BfgsOptions bfgs{60, 1e-10, 1e-10, 0.25};
};

struct AcqChoice {
  Vector x;  // in the model's input space
  double value = -kInf;
  double delta_h = 0.0;
  int clamped = 0;  // candidates whose entropy drop was clamped
};

/// Larger value first, then lower s (the last coordinate when `fidelity`),
/// then lexicographically smaller x.
inline bool better_candidate(double va, const Vector& a, double vb, const Vector& b, bool fidelity) {
  if (va != vb) return va > vb;
  if (fidelity && a[a.size() - 1] != b[b.size() - 1]) return a[a.size() - 1] < b[b.size() - 1];
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

struct ScoredPoint {
  Vector x;
  double value = -kInf;
};

/// Maximizes `score` over `box`: a low-discrepancy grid of `n_grid` points plus
/// the lower corner and `extra` candidates, then local ascent from the best few.
inline ScoredPoint maximize_on_box(const std::function<double(const Vector&)>& score, const Box& box, bool fidelity,
                                   int n_grid, std::uint64_t seed, const std::vector<Vector>& extra = {},
                                   const AcqSearch& opts = {}) {
  std::vector<Vector> cands{box.lo};
  Halton halton(box.dim(), seed, true);
  for (int i = 0; i < n_grid; ++i) cands.push_back(halton.point(static_cast<std::uint64_t>(i), box));
  for (const auto& e : extra) cands.push_back(box.clamp(e));
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    const double v = score(cands[i]);
    scored.emplace_back(std::isnan(v) ? -kInf : v, i);
  }
  std::sort(scored.begin(), scored.end(), [&](const auto& a, const auto& b) {
    return better_candidate(a.first, cands[a.second], b.first, cands[b.second], fidelity);
  });
  ScoredPoint best{cands[scored.front().second], scored.front().first};
  const ValueGrad neg = with_fd_gradient([&](const Vector& x) { return -score(x); }, box);
  const int n_local = std::min<int>(opts.n_local, static_cast<int>(scored.size()));
  for (int i = 0; i < n_local; ++i) {
    const LocalResult r = minimize_box(neg, cands[scored[static_cast<std::size_t>(i)].second], box, opts.bfgs);
    if (std::isfinite(r.value) && better_candidate(-r.value, r.x, best.value, best.x, fidelity)) {
      best.x = r.x;
      best.value = -r.value;
    }
  }
  return best;
}

/// Global search of ΔH / divisor over `box` (the model's input space); the
/// last coordinate is the fidelity variable when `fidelity` is set. Support
/// points are added as candidates, lifted onto `opts.s_grid` in fidelity mode.
inline AcqChoice optimize_acquisition(const AcquisitionContext& ctx, const Box& box, bool fidelity,
                                      const std::function<double(const Vector&)>& divisor, std::uint64_t seed,
                                      const std::vector<Vector>& support = {}, const AcqSearch& opts = {}) {
  int clamped = 0;
  auto score = [&](const Vector& x) {
    const DeltaH dh = delta_entropy(ctx, x);
    clamped += dh.clamped;
    return acquisition(dh.value, divisor(x));
  };
  const int dim = box.dim();
  std::vector<Vector> extra;
  for (const auto& p : support) {
    if (!fidelity) {
      extra.push_back(p.head(dim));
      continue;
    }
    for (double s : opts.s_grid) {
      Vector x(dim);
      x.head(dim - 1) = p.head(dim - 1);
      x[dim - 1] = s;
      extra.push_back(x);
    }
  }
  const ScoredPoint sp = maximize_on_box(score, box, fidelity, 100 * (ctx.d + 1), seed, extra, opts);
  AcqChoice best;
  best.x = sp.x;
  best.value = sp.value;
  best.delta_h = delta_entropy(ctx, best.x).value;
  best.clamped = clamped;
  return best;
}

}  // namespace envbo
