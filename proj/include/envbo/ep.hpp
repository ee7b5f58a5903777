#pragma once

// Gaussian approximation of a GP block conditioned on the conditions that
// make a point a minimizer: zero gradient and zero off-diagonal curvature as
// exact equalities, then non-negative diagonal curvature (and optionally a
// value no larger than the incumbent) as EP sites.

#include "envbo/gp.hpp"

#include <vector>

namespace envbo {

enum class Side {
  AtMost,   // x <= bound
  AtLeast,  // x >= bound
};

struct TruncatedMoments {
  double mean = 0.0;
  double var = 0.0;
  double log_mass = 0.0;
};

/// First two moments of N(mu, var) restricted to one side of `bound`.
inline TruncatedMoments truncated_moments(double mu, double var, double bound, Side side) {
  if (!(var > 0.0) || !std::isfinite(var)) throw Error(ErrorKind::Domain, "truncated_moments needs var > 0");
  const double sd = std::sqrt(var);
  // Reflect the lower-bound case onto an upper bound: x >= b  <=>  -x <= -b.
  const double sign = side == Side::AtMost ? 1.0 : -1.0;
  const double alpha = sign * (bound - mu) / sd;
  const double mass = normal_cdf(alpha);
  if (!(mass >= 1e-300)) throw Error(ErrorKind::NegligibleMass, "truncation keeps less than 1e-300 of the mass");
  const double lambda = normal_pdf(alpha) / mass;
  TruncatedMoments out;
  out.mean = mu - sign * sd * lambda;
  const double shrink = 1.0 - alpha * lambda - lambda * lambda;
  out.var = var * std::clamp(shrink, std::numeric_limits<double>::min(), 1.0);
  out.log_mass = std::log(mass);
  return out;
}

struct Inequality {
  int index = 0;
  double bound = 0.0;
  Side side = Side::AtLeast;
};

/// Joint Gaussian over [f, grad (d), diag Hessian (d), off-diagonal Hessian
/// (i<j)] at a minimizer draw, plus the constraints to impose on it. Any
/// block layout works; the indices in the constraint lists define it.
struct ConstraintBlock {
  Vector mean;
  Matrix cov;
  std::vector<int> equalities;  // entries pinned to zero
  std::vector<Inequality> inequalities;

  Eigen::Index size() const { return mean.size(); }

  void validate() const {
    if (cov.rows() != mean.size() || cov.cols() != mean.size())
      throw Error(ErrorKind::InvalidSpec, "constraint block covariance does not match its mean");
    auto bad = [&](int i) { return i < 0 || i >= mean.size(); };
    for (int i : equalities)
      if (bad(i)) throw Error(ErrorKind::InvalidSpec, "equality index out of range");
    for (const auto& q : inequalities)
      if (bad(q.index)) throw Error(ErrorKind::InvalidSpec, "inequality index out of range");
  }
};

struct EpConfig {
  double damping = 0.5;  // fraction of each proposed site update that is applied
  int max_iters = 50;
  double tol = 1e-6;
};

struct EpResult {
  Vector mean;
  Matrix cov;
  // Per inequality site: natural parameters of the Gaussian site factor.
  Vector site_precision;
  Vector site_shift;
  // Quadratic form giving the variance removed from any jointly Gaussian
  // quantity u: var_after = var_before - c^T reduction c, with c = cov(block, u).
  Matrix reduction;
  bool converged = true;
  bool valid = true;
  int iterations = 0;
  int dropped_sites = 0;
  int negligible_events = 0;
};

namespace detail {

// Posterior over the block after Gaussian pseudo-observations on the
// inequality coordinates `idx` with precisions tau and shifts nu.
inline void apply_sites(const Vector& mu0, const Matrix& cov0, const std::vector<int>& idx, const Vector& tau,
                        const Vector& nu, Vector& mu, Matrix& cov, Matrix* site_operator) {
  const auto p = static_cast<Eigen::Index>(idx.size());
  const Eigen::Index n = mu0.size();
  Matrix cross(n, p);  // cov0[:, idx]
  Matrix inner(p, p);  // cov0[idx, idx]
  Vector mu_i(p);
  for (Eigen::Index a = 0; a < p; ++a) {
    cross.col(a) = cov0.col(idx[a]);
    mu_i[a] = mu0[idx[a]];
    for (Eigen::Index b = 0; b < p; ++b) inner(a, b) = cov0(idx[a], idx[b]);
  }
  const Vector root = tau.cwiseMax(0.0).cwiseSqrt();
  Matrix bmat = Matrix::Identity(p, p) + root.asDiagonal() * inner * root.asDiagonal();
  Eigen::LLT<Matrix> llt(symmetrize(bmat));
  Vector target(p);
  for (Eigen::Index a = 0; a < p; ++a)
    target[a] = root[a] > 0.0 ? nu[a] / root[a] - root[a] * mu_i[a] : 0.0;
  const Matrix scaled = cross * root.asDiagonal();  // n x p
  mu = mu0 + scaled * llt.solve(target);
  cov = cov0 - scaled * llt.solve(scaled.transpose());
  cov = symmetrize(cov);
  if (site_operator) *site_operator = root.asDiagonal() * llt.solve(Matrix(root.asDiagonal()));
}

}  // namespace detail

inline EpResult ep_condition(const ConstraintBlock& block, const EpConfig& cfg = {}) {
  block.validate();
  const Eigen::Index n = block.size();
  EpResult out;
  out.reduction = Matrix::Zero(n, n);

  // Exact conditioning on the equalities.
  Vector mu_e = block.mean;
  Matrix cov_e = symmetrize(block.cov);
  Matrix q_op = Matrix::Identity(n, n);  // maps cov(block, u) to the same after equality conditioning
  const auto m = static_cast<Eigen::Index>(block.equalities.size());
  if (m > 0) {
    Matrix see(m, m), cross(n, m);
    Vector me(m);
    for (Eigen::Index a = 0; a < m; ++a) {
      cross.col(a) = cov_e.col(block.equalities[a]);
      me[a] = mu_e[block.equalities[a]];
      for (Eigen::Index b = 0; b < m; ++b) see(a, b) = cov_e(block.equalities[a], block.equalities[b]);
    }
    const double scale = std::max(see.diagonal().maxCoeff(), 1e-300);
    const Matrix l = jittered_cholesky(see, scale).first;
    auto solve = [&](const Matrix& rhs) {
      return Matrix(l.transpose().triangularView<Eigen::Upper>().solve(l.triangularView<Eigen::Lower>().solve(rhs)));
    };
    const Matrix gain = cross * solve(Matrix::Identity(m, m));  // n x m
    mu_e -= gain * me;
    cov_e -= gain * cross.transpose();
    Matrix select = Matrix::Zero(m, n);
    for (Eigen::Index a = 0; a < m; ++a) select(a, block.equalities[a]) = 1.0;
    q_op -= gain * select;
    out.reduction += select.transpose() * solve(select);
    for (int e : block.equalities) {
      mu_e[e] = 0.0;
      cov_e.row(e).setZero();
      cov_e.col(e).setZero();
    }
    cov_e = symmetrize(cov_e);
  }

  const auto p = static_cast<Eigen::Index>(block.inequalities.size());
  out.site_precision = Vector::Zero(p);
  out.site_shift = Vector::Zero(p);
  if (p == 0) {
    out.mean = mu_e;
    out.cov = cov_e;
    return out;
  }

  std::vector<int> idx;
  Vector scale(p);
  for (const auto& q : block.inequalities) {
    idx.push_back(q.index);
    scale[static_cast<Eigen::Index>(idx.size() - 1)] = std::max(cov_e(q.index, q.index), 1e-300);
  }
  std::vector<int> negligible(static_cast<std::size_t>(p), 0);
  std::vector<bool> dropped(static_cast<std::size_t>(p), false);
  Vector& tau = out.site_precision;
  Vector& nu = out.site_shift;
  Vector mu = mu_e;
  Matrix cov = cov_e;

  out.converged = false;
  for (int it = 0; it < cfg.max_iters; ++it) {
    double change = 0.0;
    for (Eigen::Index a = 0; a < p; ++a) {
      if (dropped[static_cast<std::size_t>(a)]) continue;
      const int i = idx[static_cast<std::size_t>(a)];
      const double marg_var = cov(i, i);
      if (!(marg_var > 0.0)) continue;
      const double cav_prec = 1.0 / marg_var - tau[a];
      if (!(cav_prec > 0.0)) continue;
      const double cav_var = 1.0 / cav_prec;
      const double cav_mean = cav_var * (mu[i] / marg_var - nu[a]);
      TruncatedMoments tm;
      try {
        const auto& q = block.inequalities[static_cast<std::size_t>(a)];
        tm = truncated_moments(cav_mean, cav_var, q.bound, q.side);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::NegligibleMass) throw;
        ++out.negligible_events;
        change = kInf;  // retry next sweep before giving up on the site
        if (++negligible[static_cast<std::size_t>(a)] >= 2) {
          dropped[static_cast<std::size_t>(a)] = true;
          ++out.dropped_sites;
          tau[a] = 0.0;
          nu[a] = 0.0;
          detail::apply_sites(mu_e, cov_e, idx, tau, nu, mu, cov, nullptr);
        }
        continue;
      }
      const double new_tau = std::max(0.0, 1.0 / tm.var - cav_prec);
      const double new_nu = tm.mean / tm.var - cav_mean * cav_prec;
      // The first visit to a site is undamped so a lone site is matched exactly.
      const double step = (tau[a] == 0.0 && nu[a] == 0.0) ? 1.0 : cfg.damping;
      const double upd_tau = (1.0 - step) * tau[a] + step * new_tau;
      const double upd_nu = (1.0 - step) * nu[a] + step * new_nu;
      change = std::max({change, std::abs(upd_tau - tau[a]) * scale[a],
                         std::abs(upd_nu - nu[a]) * std::sqrt(scale[a])});
      tau[a] = upd_tau;
      nu[a] = upd_nu;
      detail::apply_sites(mu_e, cov_e, idx, tau, nu, mu, cov, nullptr);
    }
    out.iterations = it + 1;
    if (change < cfg.tol) {
      out.converged = true;
      break;
    }
  }

  Matrix site_op;
  detail::apply_sites(mu_e, cov_e, idx, tau, nu, mu, cov, &site_op);
  out.mean = mu;
  out.cov = cov;
  Matrix select = Matrix::Zero(p, n);
  for (Eigen::Index a = 0; a < p; ++a) select(a, idx[static_cast<std::size_t>(a)]) = 1.0;
  out.reduction += q_op.transpose() * select.transpose() * site_op * select * q_op;
  out.reduction = symmetrize(out.reduction);
  out.valid = out.mean.allFinite() && out.cov.allFinite() && out.reduction.allFinite();
  return out;
}

}  // namespace envbo
