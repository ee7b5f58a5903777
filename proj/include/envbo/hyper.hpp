#pragma once

// Hyperparameter marginalization: slice sampling of log-parameters under
// log-Gaussian priors, and the equally weighted K-draw posterior mixture.

#include "envbo/gp.hpp"
#include "envbo/slice_sampler.hpp"

#include <optional>

namespace envbo {

struct LogNormalPrior {
  double log_mean = 0.0;
  double log_sd = 1.0;

  double log_density(double log_value) const {
    const double z = (log_value - log_mean) / log_sd;
    return -0.5 * z * z - std::log(log_sd);
  }
};

/// Independent log-space Gaussian priors on A and each lengthscale.
/// The noise level is either fixed or carries its own prior.
struct HyperPrior {
  LogNormalPrior amplitude;
  std::vector<LogNormalPrior> lengthscales;
  double fixed_noise_sd = 0.0;
  std::optional<LogNormalPrior> noise;

  int dim() const { return static_cast<int>(lengthscales.size()); }
  int n_params() const { return 1 + dim() + (noise ? 1 : 0); }

  void validate() const {
    auto check = [](const LogNormalPrior& p) {
      if (!(p.log_sd > 0.0) || !std::isfinite(p.log_mean))
        throw Error(ErrorKind::InvalidSpec, "log-space prior needs log_sd > 0");
    };
    check(amplitude);
    for (const auto& p : lengthscales) check(p);
    if (noise) check(*noise);
    if (lengthscales.empty()) throw Error(ErrorKind::InvalidSpec, "prior needs at least one lengthscale");
    if (!(fixed_noise_sd >= 0.0)) throw Error(ErrorKind::InvalidSpec, "fixed noise must be non-negative");
  }

  /// Priors scaled to the inputs and the spread of the value observations.
  /// `widths` gives the extent of each input; `fidelity_axis` marks the last
  /// input as the fidelity variable, which gets a longer prior lengthscale.
  static HyperPrior for_data(const Vector& widths, const std::vector<Observation>& data, bool fidelity_axis,
                             double noise_rel = 1e-3) {
    double mean = 0.0, sq = 0.0;
    int n = 0;
    for (const auto& o : data)
      if (o.kind.is_value()) {
        mean += o.value;
        ++n;
      }
    mean = n > 0 ? mean / n : 0.0;
    for (const auto& o : data)
      if (o.kind.is_value()) sq += (o.value - mean) * (o.value - mean);
    double var = n > 1 ? sq / (n - 1) : 1.0;
    if (!(var > 1e-12)) var = 1.0;

    HyperPrior p;
    p.amplitude = {std::log(var), 1.0};
    for (Eigen::Index i = 0; i < widths.size(); ++i) {
      const bool fidelity = fidelity_axis && i == widths.size() - 1;
      p.lengthscales.push_back({std::log((fidelity ? 1.0 : 0.3) * widths[i]), 1.0});
    }
    p.fixed_noise_sd = noise_rel * std::sqrt(var);
    return p;
  }

  KernelSpec to_spec(const Vector& theta) const {
    KernelSpec s;
    s.amplitude = std::exp(theta[0]);
    s.lengthscales = theta.segment(1, dim()).array().exp();
    s.noise_sd = noise ? std::exp(theta[1 + dim()]) : fixed_noise_sd;
    return s;
  }

  Vector to_theta(const KernelSpec& s) const {
    Vector theta(n_params());
    theta[0] = std::log(s.amplitude);
    theta.segment(1, dim()) = s.lengthscales.array().log();
    if (noise) theta[1 + dim()] = std::log(std::max(s.noise_sd, 1e-300));
    return theta;
  }

  Vector prior_mode() const {
    Vector theta(n_params());
    theta[0] = amplitude.log_mean;
    for (int i = 0; i < dim(); ++i) theta[1 + i] = lengthscales[static_cast<std::size_t>(i)].log_mean;
    if (noise) theta[1 + dim()] = noise->log_mean;
    return theta;
  }

  /// Log prior density in theta; -inf beyond 8 prior sds, which bounds the chains.
  double log_density(const Vector& theta) const {
    double lp = 0.0;
    auto add = [&](const LogNormalPrior& p, double v) {
      if (std::abs(v - p.log_mean) > 8.0 * p.log_sd) lp = -kInf;
      if (std::isfinite(lp)) lp += p.log_density(v);
    };
    add(amplitude, theta[0]);
    for (int i = 0; i < dim(); ++i) add(lengthscales[static_cast<std::size_t>(i)], theta[1 + i]);
    if (noise) add(*noise, theta[1 + dim()]);
    return lp;
  }
};

struct HyperConfig {
  int k = 8;
  int burn_in = 100;
  int thin = 10;
  int warm_burn_in = 20;  // used when a previous chain state is available
  double step_width = 1.0;
  double noise_rel = 1e-2;  // fixed noise sd as a fraction of the value spread
};

/// K hyperparameter draws with one fitted GP per draw; mixture weights are 1/K.
struct HyperPosteriorSet {
  std::vector<KernelSpec> draws;
  std::vector<GPState> states;
  std::vector<double> log_posteriors;
  int capped_brackets = 0;

  int k() const { return static_cast<int>(states.size()); }

  static HyperPosteriorSet single(GPState state) {
    HyperPosteriorSet set;
    set.draws.push_back(state.spec());
    set.log_posteriors.push_back(kNaN);
    set.states.push_back(std::move(state));
    return set;
  }

  double mean_amplitude() const {
    double a = 0.0;
    for (const auto& d : draws) a += d.amplitude;
    return a / static_cast<double>(draws.size());
  }

  /// Smallest lengthscale over the first `ndims` inputs across all draws.
  double min_lengthscale(int ndims) const {
    double h = kInf;
    for (const auto& d : draws) h = std::min(h, d.lengthscales.head(ndims).minCoeff());
    return h;
  }

  double mean(const Vector& x, const DerivKind& kind = DerivKind::value()) const {
    double m = 0.0;
    for (const auto& s : states) m += s.mean(x, kind);
    return m / k();
  }

  double mean_and_grad(const Vector& x, int ndims, Vector* grad) const {
    double m = 0.0;
    if (grad) grad->setZero(ndims);
    Vector g;
    for (const auto& s : states) {
      m += s.mean_and_grad(x, ndims, grad ? &g : nullptr);
      if (grad) *grad += g;
    }
    if (grad) *grad /= k();
    return m / k();
  }

  Matrix mean_hessian(const Vector& x, int ndims) const {
    Matrix h = Matrix::Zero(ndims, ndims);
    for (const auto& s : states) h += s.mean_hessian(x, ndims);
    return h / k();
  }
};

struct Mixture {
  Vector means;
  Vector variances;

  int size() const { return static_cast<int>(means.size()); }
  double mean() const { return means.mean(); }
  /// Law of total variance over equally weighted components.
  double variance() const {
    const double m = mean();
    return variances.mean() + (means.array() - m).square().mean();
  }
};

inline Mixture marginal_posterior(const HyperPosteriorSet& set, const Vector& location,
                                  const DerivKind& kind = DerivKind::value()) {
  Mixture mix;
  mix.means.resize(set.k());
  mix.variances.resize(set.k());
  for (int i = 0; i < set.k(); ++i) {
    auto [m, c] = set.states[static_cast<std::size_t>(i)].posterior({{location, kind}});
    mix.means[i] = m[0];
    mix.variances[i] = std::max(0.0, c(0, 0));
  }
  return mix;
}

/// Log posterior of log-hyperparameters given the data; -inf when the fit fails.
inline double hyper_log_posterior(const std::vector<Observation>& data, const HyperPrior& prior, const Vector& theta,
                                  const FitOptions& fit_opts = {}) {
  const double lp = prior.log_density(theta);
  if (!std::isfinite(lp)) return -kInf;
  try {
    const double lml = GPState::fit(data, prior.to_spec(theta), fit_opts).log_marginal_likelihood();
    return std::isfinite(lml) ? lml + lp : -kInf;
  } catch (const Error&) {
    return -kInf;
  }
}

/// Slice-samples hyperparameters, keeping the chain state between calls so
/// each optimizer step warm-starts from the previous best draw.
class HyperSampler {
 public:
  explicit HyperSampler(HyperConfig cfg = {}) : cfg_(cfg) {}

  const HyperConfig& config() const { return cfg_; }
  const std::optional<Vector>& warm_state() const { return warm_; }
  void reset() { warm_.reset(); }

  HyperPosteriorSet sample(const std::vector<Observation>& data, const HyperPrior& prior, std::uint64_t seed,
                           const FitOptions& fit_opts = {}) {
    prior.validate();
    if (cfg_.k < 1) throw Error(ErrorKind::InvalidSpec, "hyper.k must be at least 1");
    const bool values_only =
        std::all_of(data.begin(), data.end(), [](const Observation& o) { return o.kind.is_value() && !o.noise_sd; });
    Matrix locations(prior.dim(), static_cast<Eigen::Index>(data.size()));
    Vector y(static_cast<Eigen::Index>(data.size()));
    for (std::size_t i = 0; i < data.size(); ++i) {
      locations.col(static_cast<Eigen::Index>(i)) = data[i].location;
      y[static_cast<Eigen::Index>(i)] = data[i].value;
    }
    auto logp = [&](const Vector& theta) {
      if (!values_only) return hyper_log_posterior(data, prior, theta, fit_opts);
      const double lp = prior.log_density(theta);
      if (!std::isfinite(lp)) return -kInf;
      try {
        const double lml = value_log_marginal_likelihood(locations, y, prior.to_spec(theta), fit_opts);
        return std::isfinite(lml) ? lml + lp : -kInf;
      } catch (const Error&) {
        return -kInf;
      }
    };
    Vector init = warm_.value_or(prior.prior_mode());
    if (init.size() != prior.n_params() || !std::isfinite(logp(init))) init = prior.prior_mode();
    if (!std::isfinite(logp(init)))
      throw Error(ErrorKind::InvalidStart, "hyperparameter posterior is not finite at the prior mode");

    SliceConfig sc;
    sc.burn_in = warm_ ? cfg_.warm_burn_in : cfg_.burn_in;
    sc.thin = cfg_.thin;
    sc.step_width = cfg_.step_width;
    const SliceChain chain = slice_sample(logp, init, cfg_.k, sc, seed);

    HyperPosteriorSet set;
    set.capped_brackets = chain.capped_brackets;
    double best = -kInf;
    for (const auto& theta : chain.samples) {
      const KernelSpec spec = prior.to_spec(theta);
      set.draws.push_back(spec);
      set.states.push_back(GPState::fit(data, spec, fit_opts));
      const double lp = set.states.back().log_marginal_likelihood() + prior.log_density(theta);
      set.log_posteriors.push_back(lp);
      if (lp > best) {
        best = lp;
        warm_ = theta;
      }
    }
    return set;
  }

 private:
  HyperConfig cfg_;
  std::optional<Vector> warm_;
};

}  // namespace envbo
