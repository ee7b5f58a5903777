#pragma once

// Support points for the minimizer distribution: the weighted mixture of
// local-Hessian Gaussians around posterior-mean minima, the slice-sampled
// EI/LCB baselines, posterior argmin tallies, and the support quality metrics.

#include "envbo/hyper.hpp"
#include "envbo/optim.hpp"

#include <chrono>
#include <string>

namespace envbo {

/// Embeds a point of the s=0 plane into the model's input space by padding
/// trailing (fidelity) coordinates with zeros.
inline Vector on_plane(const HyperPosteriorSet& set, const Vector& x) {
  const int full = set.states.front().dim();
  if (full == x.size()) return x;
  Vector out = Vector::Zero(full);
  out.head(x.size()) = x;
  return out;
}

struct LocalMinCandidate {
  Vector x;
  double c = 0.0;
  double sigma2 = 0.0;
  Matrix hess;      // posterior mean Hessian
  Matrix grad_cov;  // posterior covariance of the gradient
};

struct MixtureComponent {
  double weight = 0.0;
  Vector center;
  Matrix cov;
  Matrix factor;  // cov = factor * factor^T
};

struct MinimaSearch {
  int n_starts = 0;  // 0 selects max(20, 10 d)
  std::vector<Vector> starts;  // used instead of the Halton starts when non-empty
  BfgsOptions bfgs{};
  int newton_steps = 5;
  bool moments = true;  // fill sigma2, Hessian and gradient covariance
};

/// Mixture mean and covariance of the gradient at `x` over the hyper draws.
inline std::pair<Vector, Matrix> gradient_moments(const HyperPosteriorSet& set, const Vector& full_x, int d) {
  std::vector<Query> qs;
  for (int i = 0; i < d; ++i) qs.push_back({full_x, DerivKind::grad(i)});
  std::vector<Vector> means;
  Matrix cov = Matrix::Zero(d, d);
  Vector mean = Vector::Zero(d);
  for (const auto& s : set.states) {
    auto [m, c] = s.posterior(qs);
    means.push_back(m);
    mean += m;
    cov += c;
  }
  mean /= set.k();
  cov /= set.k();
  for (const auto& m : means) cov += (m - mean) * (m - mean).transpose() / set.k();
  return {mean, symmetrize(cov)};
}

/// Local minima of the hyper-averaged posterior mean over `box` in the s=0 plane.
inline std::vector<LocalMinCandidate> find_posterior_minima(const HyperPosteriorSet& set, const Box& box,
                                                            std::uint64_t seed, const MinimaSearch& opts = {}) {
  const int d = box.dim();
  const int starts = !opts.starts.empty() ? static_cast<int>(opts.starts.size())
                     : opts.n_starts > 0  ? opts.n_starts
                                          : std::max(20, 10 * d);
  const double hmin = set.min_lengthscale(d);
  const double gscale = set.mean_amplitude() / hmin;
  const double accept_tol = 1e-5 * gscale;

  auto fg = [&](const Vector& x, Vector* g) { return set.mean_and_grad(on_plane(set, x), d, g); };
  BfgsOptions bo = opts.bfgs;
  bo.grad_tol = std::min(bo.grad_tol, 1e-3 * accept_tol);

  Halton halton(d, seed, true);
  std::vector<LocalMinCandidate> found;
  for (int s = 0; s < starts; ++s) {
    const Vector x0 = opts.starts.empty() ? halton.point(static_cast<std::uint64_t>(s), box)
                                          : opts.starts[static_cast<std::size_t>(s)];
    LocalResult r = minimize_box(fg, x0, box, bo);
    if (!std::isfinite(r.value)) continue;
    // Newton polish with the exact mean Hessian on the free coordinates.
    for (int it = 0; it < opts.newton_steps; ++it) {
      const Vector pg = projected_gradient(r.x, r.grad, box);
      if (pg.lpNorm<Eigen::Infinity>() < 1e-3 * accept_tol) break;
      const Matrix h = symmetrize(set.mean_hessian(on_plane(set, r.x), d));
      Eigen::LDLT<Matrix> ldlt(h);
      if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) break;
      const Vector trial = box.clamp(r.x - ldlt.solve(pg));
      Vector g;
      const double f = fg(trial, &g);
      if (!(f <= r.value + 1e-12 * std::abs(r.value))) break;
      r.x = trial;
      r.value = f;
      r.grad = g;
    }
    if (projected_gradient(r.x, r.grad, box).lpNorm<Eigen::Infinity>() >= accept_tol) continue;
    bool duplicate = false;
    for (auto& c : found)
      if ((c.x - r.x).norm() <= 1e-3 * hmin) {
        duplicate = true;
        if (r.value < c.c) {
          c.x = r.x;
          c.c = r.value;
        }
        break;
      }
    if (!duplicate) found.push_back({r.x, r.value, 0.0, {}, {}});
  }
  for (auto& c : found) {
    if (!opts.moments) break;
    const Vector full = on_plane(set, c.x);
    const Mixture mix = marginal_posterior(set, full);
    c.c = mix.mean();
    c.sigma2 = mix.variance();
    c.hess = symmetrize(set.mean_hessian(full, d));
    c.grad_cov = gradient_moments(set, full, d).second;
  }
  std::sort(found.begin(), found.end(), [](const auto& a, const auto& b) {
    if (a.c != b.c) return a.c < b.c;
    return std::lexicographical_compare(a.x.begin(), a.x.end(), b.x.begin(), b.x.end());
  });
  return found;
}

namespace detail {

inline Matrix psd_factor(const Matrix& cov) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrize(cov));
  return eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

}  // namespace detail

/// Gaussian for the local minimum location under the quadratic Taylor model.
/// Returns nullopt when the mean Hessian cannot be repaired into a usable one.
inline std::optional<MixtureComponent> component_from_candidate(const LocalMinCandidate& cand) {
  const Eigen::Index d = cand.x.size();
  const Matrix h = symmetrize(cand.hess);
  const double trace = h.trace();
  if (!h.allFinite() || !(trace > 0.0)) return std::nullopt;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(h);
  const double floor = 1e-6 * trace / static_cast<double>(d);
  const Vector inv_vals = eig.eigenvalues().cwiseMax(floor).cwiseInverse();
  const Matrix hinv = eig.eigenvectors() * inv_vals.asDiagonal() * eig.eigenvectors().transpose();
  MixtureComponent comp;
  comp.center = cand.x;
  comp.cov = symmetrize(hinv * symmetrize(cand.grad_cov) * hinv.transpose());
  comp.factor = detail::psd_factor(comp.cov);
  return comp;
}

/// Probability of each candidate's value lying below the lowest-mean
/// candidate's value, normalized.
inline Vector compute_weights(const std::vector<LocalMinCandidate>& cands) {
  if (cands.empty()) throw Error(ErrorKind::InvalidSpec, "compute_weights needs at least one candidate");
  std::size_t best = 0;
  for (std::size_t i = 1; i < cands.size(); ++i)
    if (cands[i].c < cands[best].c) best = i;
  Vector w(static_cast<Eigen::Index>(cands.size()));
  for (std::size_t i = 0; i < cands.size(); ++i) {
    const double diff = cands[best].c - cands[i].c;
    const double sd = std::sqrt(std::max(0.0, cands[i].sigma2) + std::max(0.0, cands[best].sigma2));
    double p;
    if (sd > 0.0)
      p = normal_cdf(diff / sd);
    else
      p = diff > 0.0 ? 1.0 : (diff == 0.0 ? 0.5 : 0.0);
    w[static_cast<Eigen::Index>(i)] = p;
  }
  return w / w.sum();
}

struct WlhMixture {
  std::vector<MixtureComponent> components;
  int dropped = 0;  // candidates whose Hessian could not be repaired
};

inline WlhMixture build_wlh(const std::vector<LocalMinCandidate>& cands) {
  WlhMixture out;
  std::vector<LocalMinCandidate> kept;
  for (const auto& c : cands) {
    auto comp = component_from_candidate(c);
    if (!comp) {
      ++out.dropped;
      continue;
    }
    out.components.push_back(std::move(*comp));
    kept.push_back(c);
  }
  if (!kept.empty()) {
    const Vector w = compute_weights(kept);
    for (std::size_t i = 0; i < kept.size(); ++i) out.components[i].weight = w[static_cast<Eigen::Index>(i)];
  }
  return out;
}

/// Draws `m` points from the box-restricted mixture: rejection for up to 50
/// attempts per point, then clamping.
inline std::vector<Vector> draw_support(const std::vector<MixtureComponent>& comps, int m, const Box& box,
                                        std::uint64_t seed) {
  if (comps.empty()) throw Error(ErrorKind::InvalidSpec, "draw_support needs at least one component");
  if (m < 1) throw Error(ErrorKind::InvalidSpec, "draw_support needs m >= 1");
  std::vector<double> cumulative;
  double total = 0.0;
  for (const auto& c : comps) cumulative.push_back(total += c.weight);
  Rng rng(seed);
  std::vector<Vector> points;
  points.reserve(static_cast<std::size_t>(m));
  for (int p = 0; p < m; ++p) {
    const double u = rng.uniform() * total;
    std::size_t k = static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), u) -
                                             cumulative.begin());
    k = std::min(k, comps.size() - 1);
    const auto& c = comps[k];
    Vector x;
    bool inside = false;
    for (int attempt = 0; attempt < 50 && !inside; ++attempt) {
      x = c.center + c.factor * rng.normal_vector(c.center.size());
      inside = box.contains(x);
    }
    points.push_back(inside ? x : box.clamp(x));
  }
  return points;
}

/// Indices of the argmin over `points` of `n` joint draws from one GP posterior.
inline std::vector<int> posterior_argmin_draws(const GPState& gp, const std::vector<Vector>& points, int n, Rng& rng) {
  std::vector<Query> qs;
  for (const auto& p : points) qs.push_back({p, DerivKind::value()});
  auto [mean, cov] = gp.posterior(qs);
  const Matrix l = jittered_cholesky(cov, gp.spec().amplitude).first;
  const auto m = static_cast<Eigen::Index>(points.size());
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(n));
  constexpr int kChunk = 512;
  for (int start = 0; start < n; start += kChunk) {
    const int cols = std::min(kChunk, n - start);
    Matrix z(m, cols);
    for (int j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < m; ++i) z(i, j) = rng.normal();
    const Matrix f = (l * z).colwise() + mean;
    for (int j = 0; j < cols; ++j) {
      Eigen::Index arg;
      f.col(j).minCoeff(&arg);
      out.push_back(static_cast<int>(arg));
    }
  }
  return out;
}

/// Tally of posterior argmins over the support; samples cycle through the hyper draws.
inline std::vector<long> draw_minimizer_samples(const HyperPosteriorSet& set, const std::vector<Vector>& support,
                                                int n_samples, std::uint64_t seed) {
  if (support.empty()) throw Error(ErrorKind::InvalidSpec, "draw_minimizer_samples needs a non-empty support");
  std::vector<Vector> full;
  for (const auto& p : support) full.push_back(on_plane(set, p));
  std::vector<long> counts(support.size(), 0);
  Rng rng(seed);
  for (int k = 0; k < set.k(); ++k) {
    const int share = n_samples / set.k() + (k < n_samples % set.k() ? 1 : 0);
    if (share == 0) continue;
    for (int idx : posterior_argmin_draws(set.states[static_cast<std::size_t>(k)], full, share, rng))
      ++counts[static_cast<std::size_t>(idx)];
  }
  return counts;
}

enum class SupportMethod { Uniform, EiSlice, LcbSlice, Wlh };

inline const char* to_string(SupportMethod m) {
  switch (m) {
    case SupportMethod::Uniform: return "uniform";
    case SupportMethod::EiSlice: return "ei-slice";
    case SupportMethod::LcbSlice: return "lcb-slice";
    case SupportMethod::Wlh: return "wlh";
  }
  return "?";
}

struct BaselineConfig {
  int burn_in = 100;
  int thin = 10;
  double step_width = 0.25;  // in unit-cube coordinates
  double lcb_kappa = 2.0;
  int init_candidates = 0;  // 0 selects 100 d
};

struct SupportDraw {
  std::vector<Vector> points;
  bool fallback = false;  // EI vanished and LCB was used, or WLH found no minima and uniform was used
};

/// Expected improvement below `incumbent`, averaged over the hyper draws.
inline double mixture_ei(const HyperPosteriorSet& set, const Vector& full_x, double incumbent) {
  double ei = 0.0;
  for (const auto& s : set.states) {
    auto [m, v] = s.mean_variance(full_x);
    const double sd = std::sqrt(std::max(v, 0.0));
    if (sd <= 0.0) {
      ei += std::max(incumbent - m, 0.0);
      continue;
    }
    const double z = (incumbent - m) / sd;
    ei += (incumbent - m) * normal_cdf(z) + sd * normal_pdf(z);
  }
  return ei / set.k();
}

inline double mixture_lcb(const HyperPosteriorSet& set, const Vector& full_x, double kappa) {
  double m1 = 0.0, m2 = 0.0;
  for (const auto& s : set.states) {
    auto [m, v] = s.mean_variance(full_x);
    m1 += m;
    m2 += v + m * m;
  }
  m1 /= set.k();
  m2 /= set.k();
  return m1 - kappa * std::sqrt(std::max(0.0, m2 - m1 * m1));
}

/// Lowest observed value in the s=0 plane (all value observations when none lie there).
inline double incumbent_value(const HyperPosteriorSet& set, int d) {
  double best = kInf, any = kInf;
  for (const auto& o : set.states.front().data()) {
    if (!o.kind.is_value()) continue;
    any = std::min(any, o.value);
    if (o.location.size() == d || o.location.tail(o.location.size() - d).isZero(0.0)) best = std::min(best, o.value);
  }
  return std::isfinite(best) ? best : any;
}

inline SupportDraw baseline_sampler(const HyperPosteriorSet& set, const Box& box, int m, SupportMethod method,
                                    std::uint64_t seed, const BaselineConfig& cfg = {}) {
  if (m < 1) throw Error(ErrorKind::InvalidSpec, "baseline_sampler needs m >= 1");
  const int d = box.dim();
  SupportDraw out;
  if (method == SupportMethod::Uniform) {
    Rng rng(seed);
    for (int i = 0; i < m; ++i) out.points.push_back(rng.uniform_in(box));
    return out;
  }
  if (method == SupportMethod::Wlh) throw Error(ErrorKind::InvalidSpec, "use wlh_support for the mixture sampler");

  const double incumbent = incumbent_value(set, d);
  double y_max = -kInf;
  for (const auto& o : set.states.front().data())
    if (o.kind.is_value()) y_max = std::max(y_max, o.value);
  const double scale = std::sqrt(set.mean_amplitude());

  bool use_ei = method == SupportMethod::EiSlice;
  auto density = [&](const Vector& u) -> double {
    for (Eigen::Index i = 0; i < u.size(); ++i)
      if (u[i] < 0.0 || u[i] > 1.0) return 0.0;
    const Vector full = on_plane(set, box.from_unit(u));
    if (use_ei) return mixture_ei(set, full, incumbent);
    // Shifted so the surface stays positive: larger where the LCB is lower.
    return std::max(y_max - mixture_lcb(set, full, cfg.lcb_kappa), 1e-12 * scale);
  };

  Halton halton(d, mix_seed(seed, 1), true);
  const int n_init = cfg.init_candidates > 0 ? cfg.init_candidates : 100 * d;
  auto best_start = [&]() {
    Vector best_u = halton.unit_point(0);
    double best_v = -1.0;
    for (int i = 0; i < n_init; ++i) {
      const Vector u = halton.unit_point(i);
      const double v = density(u);
      if (v > best_v) {
        best_v = v;
        best_u = u;
      }
    }
    return std::pair{best_u, best_v};
  };
  auto [init, init_val] = best_start();
  if (use_ei && !(init_val > 0.0)) {
    use_ei = false;
    out.fallback = true;
    std::tie(init, init_val) = best_start();
  }
  SliceConfig sc;
  sc.burn_in = cfg.burn_in;
  sc.thin = cfg.thin;
  sc.step_width = cfg.step_width;
  auto logp = [&](const Vector& u) {
    const double v = density(u);
    return v > 0.0 ? std::log(v) : -kInf;
  };
  const SliceChain chain = slice_sample(logp, init, m, sc, mix_seed(seed, 2));
  for (const auto& u : chain.samples) out.points.push_back(box.clamp(box.from_unit(u)));
  return out;
}

/// WLH support: minima search, mixture construction and draws; uniform when no minima exist.
inline SupportDraw wlh_support(const HyperPosteriorSet& set, const Box& box, int m, std::uint64_t seed,
                               const MinimaSearch& search = {}) {
  const auto cands = find_posterior_minima(set, box, mix_seed(seed, 1), search);
  const WlhMixture mix = build_wlh(cands);
  if (mix.components.empty()) {
    SupportDraw out = baseline_sampler(set, box, m, SupportMethod::Uniform, mix_seed(seed, 2));
    out.fallback = true;
    return out;
  }
  return {draw_support(mix.components, m, box, mix_seed(seed, 2)), false};
}

inline SupportDraw draw_support_points(const HyperPosteriorSet& set, const Box& box, int m, SupportMethod method,
                                       std::uint64_t seed, const BaselineConfig& cfg = {}) {
  if (method == SupportMethod::Wlh) return wlh_support(set, box, m, seed);
  return baseline_sampler(set, box, m, method, seed, cfg);
}

struct SamplerMetrics {
  double kl = 0.0;
  double unused_pct = 0.0;
  double time_s = 0.0;
  double useful_rate = 0.0;
  int n_useful = 0;
};

/// Support quality from argmin tallies: KL(uniform || Dirichlet-MAP multinomial)
/// with concentration 1 + 1/m, unused share, and production rate of useful points.
inline SamplerMetrics sampler_metrics(const std::vector<long>& counts, double elapsed_s) {
  const auto m = static_cast<double>(counts.size());
  if (counts.empty()) throw Error(ErrorKind::InvalidSpec, "sampler_metrics needs at least one support point");
  double n = 0.0;
  for (long c : counts) n += static_cast<double>(c);
  SamplerMetrics out;
  out.time_s = elapsed_s;
  int unused = 0;
  for (long c : counts) {
    const double p = (static_cast<double>(c) + 1.0 / m) / (n + 1.0);
    out.kl += (1.0 / m) * std::log((1.0 / m) / p);
    if (c == 0) ++unused;
    if (static_cast<double>(c) >= n / (10.0 * m)) ++out.n_useful;
  }
  out.unused_pct = 100.0 * unused / m;
  const double numer = std::max(0, out.n_useful - 1);
  out.useful_rate = numer == 0.0 ? 0.0 : (elapsed_s > 0.0 ? numer / elapsed_s : kInf);
  return out;
}

}  // namespace envbo
