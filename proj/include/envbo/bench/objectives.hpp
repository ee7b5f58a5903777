#pragma once

// Benchmark objectives with an optional fidelity transform, and simulated
// evaluation-cost functions.

#include "envbo/gp.hpp"
#include "envbo/optim.hpp"

#include <memory>
#include <numbers>

namespace envbo::bench {

inline double branin(const Vector& x) {
  constexpr double pi = std::numbers::pi;
  const double b = 5.1 / (4.0 * pi * pi), c = 5.0 / pi, t = 1.0 / (8.0 * pi);
  const double q = x[1] - b * x[0] * x[0] + c * x[0] - 6.0;
  return q * q + 10.0 * (1.0 - t) * std::cos(x[0]) + 10.0;
}

namespace detail {

template <int D>
double hartmann(const Vector& x, const double (&a)[4][D], const double (&p)[4][D]) {
  constexpr double alpha[4] = {1.0, 1.2, 3.0, 3.2};
  double out = 0.0;
  for (int i = 0; i < 4; ++i) {
    double inner = 0.0;
    for (int j = 0; j < D; ++j) inner += a[i][j] * (x[j] - 1e-4 * p[i][j]) * (x[j] - 1e-4 * p[i][j]);
    out -= alpha[i] * std::exp(-inner);
  }
  return out;
}

}  // namespace detail

inline double hartmann3(const Vector& x) {
  static constexpr double a[4][3] = {{3, 10, 30}, {0.1, 10, 35}, {3, 10, 30}, {0.1, 10, 35}};
  static constexpr double p[4][3] = {{3689, 1170, 2673}, {4699, 4387, 7470}, {1091, 8732, 5547}, {381, 5743, 8828}};
  return detail::hartmann<3>(x, a, p);
}

inline double hartmann6(const Vector& x) {
  static constexpr double a[4][6] = {{10, 3, 17, 3.5, 1.7, 8},
                                     {0.05, 10, 17, 0.1, 8, 14},
                                     {3, 3.5, 1.7, 10, 17, 8},
                                     {17, 8, 0.05, 10, 0.1, 14}};
  static constexpr double p[4][6] = {{1312, 1696, 5569, 124, 8283, 5886},
                                     {2329, 4135, 8307, 3736, 1004, 9991},
                                     {2348, 1451, 3522, 2883, 3047, 6650},
                                     {4047, 8828, 8732, 5743, 1091, 381}};
  return detail::hartmann<6>(x, a, p);
}

/// A fixed function drawn from a zero-mean Matern 5/2 GP: the posterior mean
/// of the GP given one joint draw on a regular grid. Deterministic in the seed
/// and smooth everywhere, including between grid nodes.
class GridDraw {
 public:
  GridDraw() = default;

  GridDraw(const Box& box, const Vector& lengthscales, const std::vector<int>& nodes, std::uint64_t seed,
           double amplitude = 1.0) {
    spec_.amplitude = amplitude;
    spec_.lengthscales = lengthscales;
    const int d = box.dim();
    long n = 1;
    for (int k : nodes) n *= k;
    locations_.resize(d, n);
    for (long i = 0; i < n; ++i) {
      long rest = i;
      for (int j = 0; j < d; ++j) {
        const int k = nodes[static_cast<std::size_t>(j)];
        const long idx = rest % k;
        rest /= k;
        locations_(j, i) = k == 1 ? box.lo[j] : box.lo[j] + box.width()[j] * static_cast<double>(idx) / (k - 1);
      }
    }
    Matrix k(n, n);
    for (long a = 0; a < n; ++a)
      for (long b = 0; b <= a; ++b) k(a, b) = k(b, a) = matern52(locations_.col(a), locations_.col(b), spec_);
    const Matrix l = jittered_cholesky(k, amplitude).first;
    Rng rng(seed);
    // y = L z is the joint draw and K^{-1} y = L^{-T} z the interpolation weights.
    weights_ = l.transpose().triangularView<Eigen::Upper>().solve(rng.normal_vector(n));
  }

  double operator()(const Vector& x) const {
    double out = 0.0;
    for (Eigen::Index i = 0; i < locations_.cols(); ++i) out += matern52(x, locations_.col(i), spec_) * weights_[i];
    return out;
  }

  Eigen::Index size() const { return locations_.cols(); }

 private:
  KernelSpec spec_;
  Matrix locations_;
  Vector weights_;
};

/// Grid nodes per axis so that the spacing is at most `spacing_frac` lengthscales.
inline std::vector<int> grid_nodes(const Box& box, const Vector& lengthscales, double spacing_frac) {
  std::vector<int> out;
  for (int j = 0; j < box.dim(); ++j)
    out.push_back(1 + static_cast<int>(std::ceil(box.width()[j] / (spacing_frac * lengthscales[j]) - 1e-9)));
  return out;
}

/// Multi-start box minimization from the best of a Halton design.
inline std::pair<Vector, double> global_minimum(const std::function<double(const Vector&)>& f, const Box& box,
                                                int n_design, int n_starts, std::uint64_t seed) {
  Halton halton(box.dim(), seed, true);
  std::vector<std::pair<double, Vector>> design;
  for (int i = 0; i < n_design; ++i) {
    Vector x = halton.point(i, box);
    design.emplace_back(f(x), std::move(x));
  }
  std::partial_sort(design.begin(), design.begin() + std::min(n_starts, n_design), design.end(),
                    [](const auto& a, const auto& b) { return a.first < b.first; });
  const ValueGrad fg = with_fd_gradient(f, box);
  BfgsOptions opts{300, 1e-10, 1e-12, 0.25};
  Vector best_x = design.front().second;
  double best = design.front().first;
  for (int i = 0; i < std::min(n_starts, n_design); ++i) {
    const LocalResult r = minimize_box(fg, design[static_cast<std::size_t>(i)].second, box, opts);
    if (r.value < best) {
      best = r.value;
      best_x = r.x;
    }
  }
  return {best_x, best};
}

enum class Transform { None, LinearShift };

struct ObjectiveSpec {
  std::string id = "branin";  // branin, hartmann3, hartmann6, gp-draw
  int dim = 2;                // gp-draw only
  double lengthscale = 0.3;   // gp-draw only
  double l_ev = 1.5;          // gp-draw: lengthscale along s
  Transform transform = Transform::None;
  std::optional<double> shift_scale;  // linear-shift; defaults to a tenth of the objective's range
};

inline const std::vector<std::string>& objective_ids() {
  static const std::vector<std::string> ids{"branin", "hartmann3", "hartmann6", "gp-draw"};
  return ids;
}

/// y(x, s) on a box; y(x, 0) is the unmodified objective.
class Objective {
 public:
  Objective(const ObjectiveSpec& spec, std::uint64_t seed) : spec_(spec) {
    const std::string& id = spec.id;
    if (id == "branin") {
      Vector lo(2), hi(2);
      lo << -5.0, 0.0;
      hi << 10.0, 15.0;
      box_ = Box(lo, hi);
      base_ = [](const Vector& x) { return branin(x); };
      f_star_ = 0.397887;
    } else if (id == "hartmann3") {
      box_ = Box::unit(3);
      base_ = [](const Vector& x) { return hartmann3(x); };
      f_star_ = -3.86278;
    } else if (id == "hartmann6") {
      box_ = Box::unit(6);
      base_ = [](const Vector& x) { return hartmann6(x); };
      f_star_ = -3.32237;
    } else if (id == "gp-draw") {
      if (spec.dim < 1) throw Error(ErrorKind::InvalidSpec, "objective.dim must be at least 1");
      if (spec.transform != Transform::None)
        throw Error(ErrorKind::InvalidSpec, "gp-draw has its own fidelity axis; use fidelity.transform = none");
      box_ = Box(Vector::Constant(spec.dim, -1.0), Vector::Constant(spec.dim, 1.0));
      Vector lo(spec.dim + 1), hi(spec.dim + 1), ls(spec.dim + 1);
      lo << box_.lo, 0.0;
      hi << box_.hi, 1.0;
      ls << Vector::Constant(spec.dim, spec.lengthscale), spec.l_ev;
      const Box full(lo, hi);
      auto draw = std::make_shared<GridDraw>(full, ls, grid_nodes(full, ls, 0.4), mix_seed(seed, 0x6d));
      joint_ = [draw, d = spec.dim](const Vector& x, double s) {
        Vector z(d + 1);
        z << x, s;
        return (*draw)(z);
      };
      base_ = [this](const Vector& x) { return joint_(x, 0.0); };
      f_star_ = global_minimum(base_, box_, 2000 * spec.dim, 20, mix_seed(seed, 0x5f)).second;
    } else {
      throw Error(ErrorKind::Config, "unknown objective id '" + id + "' (valid: branin, hartmann3, hartmann6, gp-draw)");
    }
    if (spec.transform == Transform::LinearShift) {
      const int d = box_.dim();
      const Vector ls = box_.width();
      const std::vector<int> nodes(static_cast<std::size_t>(d), d <= 3 ? 5 : 3);
      auto field = std::make_shared<GridDraw>(box_, ls, nodes, mix_seed(seed, 0x75));
      Halton halton(d, mix_seed(seed, 0x72), true);
      double sq = 0.0, lo_v = kInf, hi_v = -kInf;
      constexpr int n = 1024;
      for (int i = 0; i < n; ++i) {
        const Vector x = halton.point(i, box_);
        const double u = (*field)(x);
        sq += u * u;
        const double f = base_(x);
        lo_v = std::min(lo_v, f);
        hi_v = std::max(hi_v, f);
      }
      const double rms = std::sqrt(sq / n);
      shift_scale_ = spec.shift_scale.value_or(0.1 * (hi_v - lo_v));
      shift_ = [field, rms](const Vector& x) { return (*field)(x) / rms; };
    }
  }

  Objective(const Objective&) = delete;
  Objective& operator=(const Objective&) = delete;

  double operator()(const Vector& x, double s) const {
    if (!box_.contains(x, 1e-12) || !(s >= 0.0 && s <= 1.0))
      throw Error(ErrorKind::Domain, "objective queried outside its box");
    if (joint_) return s == 0.0 ? base_(x) : joint_(x, s);
    const double f = base_(x);
    if (s == 0.0 || !shift_) return f;
    return f + shift_scale_ * s * shift_(x);
  }

  const Box& box() const { return box_; }
  double f_star() const { return f_star_; }
  double shift_scale() const { return shift_scale_; }
  const ObjectiveSpec& spec() const { return spec_; }

 private:
  ObjectiveSpec spec_;
  Box box_;
  std::function<double(const Vector&)> base_;
  std::function<double(const Vector&, double)> joint_;
  std::function<double(const Vector&)> shift_;
  double shift_scale_ = 0.0;
  double f_star_ = kNaN;
};

struct CostSpec {
  std::string id = "constant";  // exponential, quadratic, constant
  double l_c = 3.0;
  double min_s = 120.0;
  double max_s = 1800.0;
  double value_s = 1.0;
};

inline const std::vector<std::string>& cost_ids() {
  static const std::vector<std::string> ids{"exponential", "quadratic", "constant"};
  return ids;
}

/// Simulated evaluation seconds as a function of s.
inline std::function<double(const Vector&, double)> make_cost(const CostSpec& spec) {
  if (spec.id == "exponential") {
    if (!(spec.l_c >= 0.0)) throw Error(ErrorKind::InvalidSpec, "cost.l_c must be non-negative");
    return [l = spec.l_c](const Vector&, double s) { return std::exp(-l * s); };
  }
  if (spec.id == "quadratic") {
    if (!(spec.min_s > 0.0 && spec.max_s >= spec.min_s))
      throw Error(ErrorKind::InvalidSpec, "quadratic cost needs 0 < cost.min_s <= cost.max_s");
    return [lo = spec.min_s, hi = spec.max_s](const Vector&, double s) {
      return lo + (hi - lo) * (1.0 - s) * (1.0 - s);
    };
  }
  if (spec.id == "constant") {
    if (!(spec.value_s > 0.0)) throw Error(ErrorKind::InvalidSpec, "cost.value_s must be positive");
    return [v = spec.value_s](const Vector&, double) { return v; };
  }
  throw Error(ErrorKind::Config, "unknown cost id '" + spec.id + "' (valid: exponential, quadratic, constant)");
}

}  // namespace envbo::bench
