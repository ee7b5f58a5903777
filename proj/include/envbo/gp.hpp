#pragma once

// Exact GP regression with mixed value / gradient / Hessian observations.

#include "envbo/kernel.hpp"

#include <optional>
#include <utility>
#include <vector>

namespace envbo {

struct Observation {
  Vector location;  // x followed by s when the model is augmented
  DerivKind kind = DerivKind::value();
  double value = 0.0;
  std::optional<double> noise_sd;  // falls back to the kernel's noise_sd
  double cost = 0.0;
};

struct Query {
  Vector location;
  DerivKind kind = DerivKind::value();
};

enum class MeanPolicy {
  Centered,  // constant prior mean equal to the average of the value observations
  Zero,
};

struct FitOptions {
  MeanPolicy mean = MeanPolicy::Centered;
  double jitter_start = 1e-10;  // relative to the amplitude
  double jitter_max = 1e-4;
};

/// Lower Cholesky factor of `k + jitter * scale * I`, escalating jitter by 10x.
/// Returns the factor and the absolute jitter that succeeded.
inline std::pair<Matrix, double> jittered_cholesky(const Matrix& k, double scale,
                                                   double jitter_start = 1e-10, double jitter_max = 1e-4) {
  const Eigen::Index n = k.rows();
  double rel = jitter_start;
  while (true) {
    const double jitter = rel * scale;
    Matrix kj = k;
    kj.diagonal().array() += jitter;
    Eigen::LLT<Matrix> llt(kj);
    if (llt.info() == Eigen::Success) {
      Matrix l = llt.matrixL();
      bool finite = l.allFinite();
      for (Eigen::Index i = 0; finite && i < n; ++i) finite = l(i, i) > 0.0;
      if (finite) return {std::move(l), jitter};
    }
    if (rel >= jitter_max * (1.0 - 1e-9))
      throw IllConditionedError("Cholesky failed at maximum jitter " + std::to_string(jitter), jitter);
    rel = std::min(rel * 10.0, jitter_max);
  }
}

class GPState {
 public:
  static GPState fit(std::vector<Observation> data, const KernelSpec& spec, const FitOptions& opts = {}) {
    spec.validate();
    if (data.empty()) throw Error(ErrorKind::InvalidRecord, "GP fit needs at least one observation");
    GPState gp;
    gp.spec_ = spec;
    gp.opts_ = opts;
    const auto n = static_cast<Eigen::Index>(data.size());
    const int dim = spec.dim();

    double sum = 0.0;
    int count = 0;
    for (const auto& obs : data) {
      if (obs.location.size() != dim)
        throw Error(ErrorKind::InvalidRecord, "observation dimension does not match kernel");
      if (!obs.location.allFinite() || !std::isfinite(obs.value))
        throw Error(ErrorKind::InvalidRecord, "observation is not finite");
      detail::check_kind(obs.kind, dim);
      if (obs.kind.is_value()) {
        sum += obs.value;
        ++count;
      }
    }
    gp.offset_ = (opts.mean == MeanPolicy::Centered && count > 0) ? sum / count : 0.0;

    Matrix k(n, n);
    Vector y(n);
    for (Eigen::Index a = 0; a < n; ++a) {
      const auto& oa = data[a];
      y[a] = oa.value - (oa.kind.is_value() ? gp.offset_ : 0.0);
      for (Eigen::Index b = 0; b <= a; ++b) {
        const auto& ob = data[b];
        const double v = kernel_eval(oa.location, ob.location, spec, oa.kind, ob.kind);
        k(a, b) = v;
        k(b, a) = v;
      }
      const double sd = oa.noise_sd.value_or(spec.noise_sd);
      k(a, a) += sd * sd;
    }
    auto [l, jitter] = jittered_cholesky(k, spec.amplitude, opts.jitter_start, opts.jitter_max);
    gp.factor_ = std::move(l);
    gp.jitter_ = jitter;
    gp.centered_y_ = y;
    gp.alpha_ = gp.factor_.triangularView<Eigen::Lower>().solve(y);
    gp.factor_.triangularView<Eigen::Lower>().transpose().solveInPlace(gp.alpha_);
    gp.all_values_ = count == static_cast<int>(n);
    gp.data_ = std::move(data);
    return gp;
  }

  const KernelSpec& spec() const { return spec_; }
  const std::vector<Observation>& data() const { return data_; }
  Eigen::Index size() const { return static_cast<Eigen::Index>(data_.size()); }
  int dim() const { return spec_.dim(); }
  double mean_offset() const { return offset_; }
  double jitter() const { return jitter_; }
  const Matrix& gram_factor() const { return factor_; }
  const Vector& alpha() const { return alpha_; }

  /// Column vector of cov(training_j, D f(x)).
  Vector cross_cov(const Vector& x, const DerivKind& kind = DerivKind::value()) const {
    Vector k(size());
    if (kind.is_value() && all_values()) {
      for (Eigen::Index j = 0; j < size(); ++j) k[j] = matern52(data_[j].location, x, spec_);
    } else {
      for (Eigen::Index j = 0; j < size(); ++j)
        k[j] = kernel_eval(data_[j].location, x, spec_, data_[j].kind, kind);
    }
    return k;
  }

  Matrix cross_cov(const std::vector<Query>& queries) const {
    Matrix k(size(), static_cast<Eigen::Index>(queries.size()));
    for (std::size_t q = 0; q < queries.size(); ++q)
      k.col(static_cast<Eigen::Index>(q)) = cross_cov(queries[q].location, queries[q].kind);
    return k;
  }

  /// L^{-1} v for the Gram factor L.
  Vector whiten(const Vector& v) const { return factor_.triangularView<Eigen::Lower>().solve(v); }
  Matrix whiten(const Matrix& v) const { return factor_.triangularView<Eigen::Lower>().solve(v); }

  double prior_mean(const DerivKind& kind) const { return kind.is_value() ? offset_ : 0.0; }

  double mean(const Vector& x, const DerivKind& kind = DerivKind::value()) const {
    return prior_mean(kind) + cross_cov(x, kind).dot(alpha_);
  }

  double variance(const Vector& x, const DerivKind& kind = DerivKind::value()) const {
    const Vector v = whiten(cross_cov(x, kind));
    return std::max(0.0, kernel_eval(x, x, spec_, kind, kind) - v.squaredNorm());
  }

  std::pair<double, double> mean_variance(const Vector& x) const {
    const Vector k = cross_cov(x);
    const Vector v = whiten(k);
    return {offset_ + k.dot(alpha_), std::max(0.0, spec_.amplitude - v.squaredNorm())};
  }

  /// Joint posterior mean and covariance of the queried quantities.
  std::pair<Vector, Matrix> posterior(const std::vector<Query>& queries) const {
    for (const auto& q : queries) {
      if (q.location.size() != dim()) throw Error(ErrorKind::InvalidSpec, "query dimension does not match kernel");
      detail::check_kind(q.kind, dim());
    }
    const auto m = static_cast<Eigen::Index>(queries.size());
    const Matrix kxq = cross_cov(queries);
    Vector mean(m);
    for (Eigen::Index i = 0; i < m; ++i) mean[i] = prior_mean(queries[i].kind) + kxq.col(i).dot(alpha_);
    Matrix cov(m, m);
    for (Eigen::Index i = 0; i < m; ++i)
      for (Eigen::Index j = 0; j <= i; ++j) {
        const double v = kernel_eval(queries[i].location, queries[j].location, spec_, queries[i].kind, queries[j].kind);
        cov(i, j) = v;
        cov(j, i) = v;
      }
    const Matrix v = whiten(kxq);
    cov.noalias() -= v.transpose() * v;
    return {std::move(mean), symmetrize(cov)};
  }

  /// Mean of f and its gradient over the first `ndims` coordinates.
  double mean_and_grad(const Vector& x, int ndims, Vector* grad) const {
    if (grad && all_values()) {
      // d/dx of A f0(r) is A (5/3)(1 + sqrt5 r) exp(-sqrt5 r) (x_j - x) / h^2.
      grad->setZero(ndims);
      double m = 0.0;
      const Vector inv_h2 = spec_.lengthscales.array().square().inverse();
      for (Eigen::Index j = 0; j < size(); ++j) {
        const Vector diff = data_[j].location - x;
        const double r = std::sqrt(diff.cwiseProduct(inv_h2).dot(diff));
        const double e = std::exp(-detail::kSqrt5 * r) * spec_.amplitude * alpha_[j];
        m += (1.0 + detail::kSqrt5 * r + 5.0 / 3.0 * r * r) * e;
        const double g = 5.0 / 3.0 * (1.0 + detail::kSqrt5 * r) * e;
        for (int i = 0; i < ndims; ++i) (*grad)[i] += g * diff[i] * inv_h2[i];
      }
      return offset_ + m;
    }
    if (grad) {
      grad->setZero(ndims);
      for (int i = 0; i < ndims; ++i) (*grad)[i] = cross_cov(x, DerivKind::grad(i)).dot(alpha_);
    }
    return mean(x);
  }

  Matrix mean_hessian(const Vector& x, int ndims) const {
    Matrix h(ndims, ndims);
    for (int i = 0; i < ndims; ++i)
      for (int j = i; j < ndims; ++j) {
        h(i, j) = cross_cov(x, DerivKind::hess(i, j)).dot(alpha_);
        h(j, i) = h(i, j);
      }
    return h;
  }

  double log_marginal_likelihood() const {
    const double n = static_cast<double>(size());
    return -0.5 * centered_y_.dot(alpha_) - factor_.diagonal().array().log().sum() -
           0.5 * n * std::log(2.0 * std::numbers::pi);
  }

 private:
  bool all_values() const { return all_values_; }

  KernelSpec spec_;
  FitOptions opts_;
  std::vector<Observation> data_;
  Matrix factor_;
  Vector alpha_;
  Vector centered_y_;
  double offset_ = 0.0;
  double jitter_ = 0.0;
  bool all_values_ = false;
};

/// Log marginal likelihood for value-only data given as columns of `locations`;
/// the allocation-light path used inside hyperparameter sampling.
inline double value_log_marginal_likelihood(const Matrix& locations, const Vector& y, const KernelSpec& spec,
                                            const FitOptions& opts = {}) {
  const Eigen::Index n = locations.cols();
  const double offset = opts.mean == MeanPolicy::Centered ? y.mean() : 0.0;
  Matrix k(n, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = 0; b < a; ++b) {
      const double v = matern52(locations.col(a), locations.col(b), spec);
      k(a, b) = v;
      k(b, a) = v;
    }
    k(a, a) = spec.amplitude + spec.noise_sd * spec.noise_sd;
  }
  auto [l, jitter] = jittered_cholesky(k, spec.amplitude, opts.jitter_start, opts.jitter_max);
  const Vector z = l.triangularView<Eigen::Lower>().solve((y.array() - offset).matrix());
  return -0.5 * z.squaredNorm() - l.diagonal().array().log().sum() -
         0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
}

inline GPState fit(std::vector<Observation> data, const KernelSpec& spec, const FitOptions& opts = {}) {
  return GPState::fit(std::move(data), spec, opts);
}

inline std::pair<Vector, Matrix> posterior(const GPState& state, const std::vector<Query>& queries) {
  return state.posterior(queries);
}

inline double log_marginal_likelihood(std::vector<Observation> data, const KernelSpec& spec,
                                      const FitOptions& opts = {}) {
  return GPState::fit(std::move(data), spec, opts).log_marginal_likelihood();
}

}  // namespace envbo
