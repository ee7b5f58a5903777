#pragma once

// Small local optimizers: projected BFGS for box-constrained smooth problems
// and Nelder-Mead for the low-dimensional MAP fits.

#include "envbo/core.hpp"

#include <functional>
#include <numeric>

namespace envbo {

/// Returns f(x) and writes the gradient into `grad` when it is non-null.
using ValueGrad = std::function<double(const Vector& x, Vector* grad)>;

struct LocalResult {
  Vector x;
  double value = kInf;
  Vector grad;
  int iterations = 0;
  bool converged = false;
};

struct BfgsOptions {
  int max_iters = 200;
  double grad_tol = 1e-9;    // on the projected gradient, infinity norm
  double step_tol = 1e-13;   // relative to the box width
  double max_step = 0.25;    // first trial step, as a fraction of the box width
};

/// Projected gradient of `g` at `x`: components pushing out of the box are dropped.
inline Vector projected_gradient(const Vector& x, const Vector& g, const Box& box) {
  Vector pg = g;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (x[i] <= box.lo[i] && g[i] > 0.0) pg[i] = 0.0;
    if (x[i] >= box.hi[i] && g[i] < 0.0) pg[i] = 0.0;
  }
  return pg;
}

inline LocalResult minimize_box(const ValueGrad& fg, const Vector& x0, const Box& box, const BfgsOptions& opts = {}) {
  const Eigen::Index n = x0.size();
  LocalResult res;
  res.x = box.clamp(x0);
  res.value = fg(res.x, &res.grad);
  if (!std::isfinite(res.value)) return res;
  const Vector width = box.width();
  Matrix hinv = Matrix::Identity(n, n);
  bool fresh = true;

  for (res.iterations = 0; res.iterations < opts.max_iters; ++res.iterations) {
    const Vector pg = projected_gradient(res.x, res.grad, box);
    if (pg.lpNorm<Eigen::Infinity>() <= opts.grad_tol) {
      res.converged = true;
      break;
    }
    // Active set: coordinates at a bound whose gradient pushes outwards stay fixed.
    Vector free_mask = Vector::Ones(n);
    for (Eigen::Index i = 0; i < n; ++i)
      if (pg[i] == 0.0 && res.grad[i] != 0.0) free_mask[i] = 0.0;
    Vector dir = -(hinv * pg).cwiseProduct(free_mask);
    if (dir.dot(pg) >= 0.0) {
      hinv.setIdentity();
      fresh = true;
      dir = -pg;
    }
    // Cap the first trial step relative to the box.
    double t = 1.0;
    for (Eigen::Index i = 0; i < n; ++i)
      if (std::abs(dir[i]) * t > opts.max_step * width[i]) t = opts.max_step * width[i] / std::abs(dir[i]);

    Vector x_new, g_new;
    double f_new = kInf;
    bool accepted = false;
    for (int ls = 0; ls < 40; ++ls) {
      x_new = box.clamp(res.x + t * dir);
      f_new = fg(x_new, &g_new);
      if (std::isfinite(f_new) && f_new <= res.value + 1e-4 * res.grad.dot(x_new - res.x)) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) {
      if (!fresh) {
        hinv.setIdentity();
        fresh = true;
        continue;
      }
      break;
    }
    const Vector step = x_new - res.x;
    const Vector dg = g_new - res.grad;
    const bool tiny = (step.array().abs() / width.array()).maxCoeff() < opts.step_tol;
    res.x = x_new;
    res.value = f_new;
    res.grad = g_new;
    if (tiny) {
      res.converged = projected_gradient(res.x, res.grad, box).lpNorm<Eigen::Infinity>() <= 1e3 * opts.grad_tol;
      break;
    }
    const double sy = step.dot(dg);
    if (sy > 1e-14 * step.norm() * dg.norm()) {
      const double rho = 1.0 / sy;
      const Matrix ident = Matrix::Identity(n, n);
      hinv = (ident - rho * step * dg.transpose()) * hinv * (ident - rho * dg * step.transpose()) +
             rho * step * step.transpose();
      fresh = false;
    }
  }
  return res;
}

/// Central-difference gradient wrapper for a value-only objective on a box.
inline ValueGrad with_fd_gradient(std::function<double(const Vector&)> f, const Box& box, double rel_step = 1e-6) {
  return [f = std::move(f), box, rel_step](const Vector& x, Vector* grad) {
    const double fx = f(x);
    if (grad) {
      grad->resize(x.size());
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double h = rel_step * (box.hi[i] - box.lo[i]);
        Vector xp = x, xm = x;
        xp[i] = std::min(x[i] + h, box.hi[i]);
        xm[i] = std::max(x[i] - h, box.lo[i]);
        (*grad)[i] = (f(xp) - f(xm)) / (xp[i] - xm[i]);
      }
    }
    return fx;
  };
}

struct NelderMeadOptions {
  int max_evals = 2000;
  double f_tol = 1e-12;
  double x_tol = 1e-10;
  double initial_step = 0.5;
};

/// Unconstrained Nelder-Mead minimization; infeasible points should return +inf.
inline LocalResult nelder_mead(const std::function<double(const Vector&)>& f, const Vector& x0,
                               const NelderMeadOptions& opts = {}) {
  const Eigen::Index n = x0.size();
  std::vector<Vector> simplex(static_cast<std::size_t>(n + 1), x0);
  std::vector<double> values(static_cast<std::size_t>(n + 1));
  for (Eigen::Index i = 0; i < n; ++i) simplex[static_cast<std::size_t>(i + 1)][i] += opts.initial_step;
  int evals = 0;
  for (std::size_t i = 0; i < simplex.size(); ++i) {
    values[i] = f(simplex[i]);
    ++evals;
  }
  std::vector<std::size_t> order(simplex.size());
  LocalResult res;
  while (evals < opts.max_evals) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    const std::size_t best = order.front(), worst = order.back(), second = order[order.size() - 2];
    double spread = 0.0;
    for (const auto& v : simplex) spread = std::max(spread, (v - simplex[best]).lpNorm<Eigen::Infinity>());
    if (spread < opts.x_tol || std::abs(values[worst] - values[best]) <= opts.f_tol * (1.0 + std::abs(values[best]))) {
      res.converged = true;
      break;
    }
    Vector centroid = Vector::Zero(n);
    for (std::size_t i = 0; i < simplex.size(); ++i)
      if (i != worst) centroid += simplex[i];
    centroid /= static_cast<double>(n);

    const Vector reflected = centroid + (centroid - simplex[worst]);
    const double fr = f(reflected);
    ++evals;
    if (fr < values[best]) {
      const Vector expanded = centroid + 2.0 * (centroid - simplex[worst]);
      const double fe = f(expanded);
      ++evals;
      if (fe < fr) {
        simplex[worst] = expanded;
        values[worst] = fe;
      } else {
        simplex[worst] = reflected;
        values[worst] = fr;
      }
      continue;
    }
    if (fr < values[second]) {
      simplex[worst] = reflected;
      values[worst] = fr;
      continue;
    }
    const bool outside = fr < values[worst];
    const Vector contracted = outside ? Vector(centroid + 0.5 * (reflected - centroid))
                                      : Vector(centroid + 0.5 * (simplex[worst] - centroid));
    const double fc = f(contracted);
    ++evals;
    if (fc < std::min(fr, values[worst])) {
      simplex[worst] = contracted;
      values[worst] = fc;
      continue;
    }
    for (std::size_t i = 0; i < simplex.size(); ++i) {
      if (i == best) continue;
      simplex[i] = simplex[best] + 0.5 * (simplex[i] - simplex[best]);
      values[i] = f(simplex[i]);
      ++evals;
    }
  }
  const auto best = static_cast<std::size_t>(std::min_element(values.begin(), values.end()) - values.begin());
  res.x = simplex[best];
  res.value = values[best];
  res.iterations = evals;
  return res;
}

}  // namespace envbo
