#pragma once

// Matern 5/2 kernel over an anisotropic scaled distance, with covariances
// between values, gradient components and Hessian elements.
//
// Writing k(D) = A f0(r) with D = a - b, r^2 = sum_i (D_i / h_i)^2, every
// partial derivative of k with respect to D is a sum over the ways of
// splitting the index list into singletons and pairs:
//
//   d^n k / dD_I = A sum_P f_{|P|}(r) prod_{singles} u_i prod_{pairs} w_i delta_ij
//
// with u_i = D_i / h_i^2, w_i = 1 / h_i^2 and f_{k+1}(r) = f_k'(r) / r.
// Derivatives taken with respect to b flip sign once per index.

#include "envbo/core.hpp"

#include <string>
#include <vector>

namespace envbo {

/// What is observed or queried at a location: f, df/dx_i, or d2f/dx_i dx_j.
struct DerivKind {
  enum class Order : int { Value = 0, Grad = 1, Hess = 2 };

  Order order = Order::Value;
  int i = -1;
  int j = -1;

  static constexpr DerivKind value() { return {}; }
  static constexpr DerivKind grad(int i) { return {Order::Grad, i, -1}; }
  static DerivKind hess(int i, int j) {
    if (i > j) std::swap(i, j);
    return {Order::Hess, i, j};
  }

  int count() const { return static_cast<int>(order); }
  bool is_value() const { return order == Order::Value; }

  friend bool operator==(const DerivKind&, const DerivKind&) = default;

  std::string str() const {
    switch (order) {
      case Order::Value: return "f";
      case Order::Grad: return "g" + std::to_string(i);
      case Order::Hess: return "h" + std::to_string(i) + std::to_string(j);
    }
    return "?";
  }
};

struct KernelSpec {
  double amplitude = 1.0;  // output variance A
  Vector lengthscales;     // one per input dimension, the fidelity axis last
  double noise_sd = 0.0;

  int dim() const { return static_cast<int>(lengthscales.size()); }

  void validate() const {
    if (!(amplitude > 0.0) || !std::isfinite(amplitude))
      throw Error(ErrorKind::InvalidSpec, "kernel amplitude must be positive");
    if (lengthscales.size() == 0)
      throw Error(ErrorKind::InvalidSpec, "kernel needs at least one lengthscale");
    for (Eigen::Index i = 0; i < lengthscales.size(); ++i)
      if (!(lengthscales[i] > 0.0) || !std::isfinite(lengthscales[i]))
        throw Error(ErrorKind::InvalidSpec, "kernel lengthscales must be positive");
    if (!(noise_sd >= 0.0) || !std::isfinite(noise_sd))
      throw Error(ErrorKind::InvalidSpec, "noise_sd must be non-negative");
  }
};

inline constexpr int kMaxKernelDim = 32;

namespace detail {

inline constexpr double kSqrt5 = 2.2360679774997896964;

// f_k(r) for k = 0..4, see the header comment.
inline std::array<double, 5> matern52_radial(double r) {
  const double e = std::exp(-kSqrt5 * r);
  std::array<double, 5> f{};
  f[0] = (1.0 + kSqrt5 * r + 5.0 / 3.0 * r * r) * e;
  f[1] = -5.0 / 3.0 * (1.0 + kSqrt5 * r) * e;
  f[2] = 25.0 / 3.0 * e;
  if (r > 0.0) {
    f[3] = -25.0 * kSqrt5 / 3.0 * e / r;
    f[4] = 25.0 * kSqrt5 / 3.0 * e * (kSqrt5 * r + 1.0) / (r * r * r);
  }
  return f;
}

struct IndexList {
  std::array<int, 4> idx{};
  int n = 0;
  void push(int v) { idx[n++] = v; }
};

// Sums over partitions of the indices not yet in `used` into singletons and pairs.
inline double partition_sum(const IndexList& list, unsigned used, int blocks, double weight,
                            const double* u, const double* w, const std::array<double, 5>& f,
                            bool at_origin) {
  int first = -1;
  for (int k = 0; k < list.n; ++k)
    if (!(used & (1u << k))) {
      first = k;
      break;
    }
  if (first < 0) {
    // Radial factors above f2 only appear with enough singletons to vanish at r = 0.
    if (at_origin && blocks >= 3) return 0.0;
    return weight * f[blocks];
  }
  const unsigned with_first = used | (1u << first);
  const int a = list.idx[first];
  double total = partition_sum(list, with_first, blocks + 1, weight * u[a], u, w, f, at_origin);
  for (int k = first + 1; k < list.n; ++k) {
    if (with_first & (1u << k)) continue;
    if (list.idx[k] != a) continue;
    total += partition_sum(list, with_first | (1u << k), blocks + 1, weight * w[a], u, w, f, at_origin);
  }
  return total;
}

inline void append_indices(IndexList& list, const DerivKind& kind) {
  if (kind.order == DerivKind::Order::Grad) list.push(kind.i);
  if (kind.order == DerivKind::Order::Hess) {
    list.push(kind.i);
    list.push(kind.j);
  }
}

inline void check_kind(const DerivKind& kind, int dim) {
  auto bad = [&](int v) { return v < 0 || v >= dim; };
  if (kind.order == DerivKind::Order::Grad && bad(kind.i))
    throw Error(ErrorKind::UnsupportedDerivative, "gradient index out of range: " + kind.str());
  if (kind.order == DerivKind::Order::Hess && (bad(kind.i) || bad(kind.j) || kind.i > kind.j))
    throw Error(ErrorKind::UnsupportedDerivative, "Hessian index out of range: " + kind.str());
}

}  // namespace detail

/// Value-value Matern 5/2 covariance; the hot path for Gram matrices.
template <class DerivedA, class DerivedB>
inline double matern52(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b,
                       const KernelSpec& spec) {
  double r2 = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double z = (a[i] - b[i]) / spec.lengthscales[i];
    r2 += z * z;
  }
  const double r = std::sqrt(r2);
  return spec.amplitude * (1.0 + detail::kSqrt5 * r + 5.0 / 3.0 * r2) * std::exp(-detail::kSqrt5 * r);
}

/// cov(D_a f(a), D_b f(b)). Hessian-Hessian pairs are only defined for
/// coincident locations, where the fourth derivative of the kernel is finite
/// and where the minimizer constraints need it.
inline double kernel_eval(const Vector& a, const Vector& b, const KernelSpec& spec,
                          const DerivKind& da = DerivKind::value(),
                          const DerivKind& db = DerivKind::value()) {
  const int dim = spec.dim();
  if (a.size() != dim || b.size() != dim)
    throw Error(ErrorKind::InvalidSpec, "location dimension does not match kernel");
  for (Eigen::Index i = 0; i < spec.lengthscales.size(); ++i)
    if (!(spec.lengthscales[i] > 0.0))
      throw Error(ErrorKind::InvalidSpec, "kernel lengthscales must be positive");
  detail::check_kind(da, dim);
  detail::check_kind(db, dim);

  if (da.is_value() && db.is_value()) return matern52(a, b, spec);

  if (da.count() == 2 && db.count() == 2 && a != b)
    throw Error(ErrorKind::UnsupportedDerivative,
                "Hessian-Hessian covariance requested at distinct locations (" + da.str() + "," + db.str() + ")");

  if (dim > kMaxKernelDim)
    throw Error(ErrorKind::InvalidSpec, "derivative kernels support at most 32 input dimensions");
  std::array<double, kMaxKernelDim> u{}, w{};
  double r2 = 0.0;
  for (int i = 0; i < dim; ++i) {
    const double h2 = spec.lengthscales[i] * spec.lengthscales[i];
    const double delta = a[i] - b[i];
    u[i] = delta / h2;
    w[i] = 1.0 / h2;
    r2 += delta * delta / h2;
  }
  const double r = std::sqrt(r2);
  const auto f = detail::matern52_radial(r);

  detail::IndexList list;
  detail::append_indices(list, da);
  detail::append_indices(list, db);
  const double sign = (db.count() % 2 == 0) ? 1.0 : -1.0;
  // Below this the singleton products of the f3/f4 terms underflow long before they matter.
  const bool at_origin = r < 1e-30;
  return sign * spec.amplitude * detail::partition_sum(list, 0u, 0, 1.0, u.data(), w.data(), f, at_origin);
}

/// cov(D_q f(a), f(b)) for every kind q (order at most 2) at the single
/// location a, sharing one radial evaluation.
inline Vector kernel_column(const Vector& a, const std::vector<DerivKind>& kinds, const Vector& b,
                            const KernelSpec& spec) {
  const int dim = spec.dim();
  const Vector inv_h2 = spec.lengthscales.array().square().inverse();
  const Vector u = (a - b).cwiseProduct(inv_h2);
  const double r = std::sqrt(u.dot(a - b));
  const auto f = detail::matern52_radial(r);
  Vector out(static_cast<Eigen::Index>(kinds.size()));
  for (std::size_t q = 0; q < kinds.size(); ++q) {
    const DerivKind& k = kinds[q];
    detail::check_kind(k, dim);
    double v = 0.0;
    switch (k.order) {
      case DerivKind::Order::Value: v = f[0]; break;
      case DerivKind::Order::Grad: v = f[1] * u[k.i]; break;
      case DerivKind::Order::Hess: v = f[2] * u[k.i] * u[k.j] + (k.i == k.j ? f[1] * inv_h2[k.i] : 0.0); break;
    }
    out[static_cast<Eigen::Index>(q)] = spec.amplitude * v;
  }
  return out;
}

}  // namespace envbo
