#pragma once

// Shared numeric vocabulary: vector aliases, search boxes, errors, a
// platform-stable RNG, the standard normal helpers and a Halton sequence.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace envbo {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

enum class ErrorKind {
  InvalidSpec,
  UnsupportedDerivative,
  IllConditioned,
  InvalidStart,
  NegligibleMass,
  Domain,
  InvalidRecord,
  AcquisitionUnavailable,
  Config,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidSpec: return "invalid-spec";
    case ErrorKind::UnsupportedDerivative: return "unsupported-derivative";
    case ErrorKind::IllConditioned: return "ill-conditioned-model";
    case ErrorKind::InvalidStart: return "invalid-start";
    case ErrorKind::NegligibleMass: return "negligible-mass";
    case ErrorKind::Domain: return "domain";
    case ErrorKind::InvalidRecord: return "invalid-record";
    case ErrorKind::AcquisitionUnavailable: return "acquisition-unavailable";
    case ErrorKind::Config: return "config";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Raised when a Gram matrix cannot be factorized even at the largest jitter.
class IllConditionedError : public Error {
 public:
  IllConditionedError(const std::string& what, double jitter)
      : Error(ErrorKind::IllConditioned, what), jitter_(jitter) {}
  double final_jitter() const noexcept { return jitter_; }

 private:
  double jitter_;
};

/// Axis-aligned search box.
struct Box {
  Vector lo;
  Vector hi;

  Box() = default;
  Box(Vector lower, Vector upper) : lo(std::move(lower)), hi(std::move(upper)) {
    if (lo.size() != hi.size() || lo.size() == 0)
      throw Error(ErrorKind::InvalidSpec, "box bounds must be non-empty and of equal length");
    for (Eigen::Index i = 0; i < lo.size(); ++i)
      if (!(hi[i] > lo[i]))
        throw Error(ErrorKind::InvalidSpec, "box is degenerate along dimension " + std::to_string(i));
  }

  static Box unit(int dim) { return Box(Vector::Zero(dim), Vector::Ones(dim)); }
  static Box uniform(int dim, double lower, double upper) {
    return Box(Vector::Constant(dim, lower), Vector::Constant(dim, upper));
  }

  int dim() const { return static_cast<int>(lo.size()); }
  Vector width() const { return hi - lo; }

  bool contains(const Vector& x, double tol = 0.0) const {
    if (x.size() != lo.size()) return false;
    for (Eigen::Index i = 0; i < x.size(); ++i)
      if (!(x[i] >= lo[i] - tol && x[i] <= hi[i] + tol)) return false;
    return true;
  }

  Vector clamp(const Vector& x) const { return x.cwiseMax(lo).cwiseMin(hi); }

  /// Maps a point of the unit cube onto the box.
  Vector from_unit(const Vector& u) const { return lo + (hi - lo).cwiseProduct(u); }
};

// Mersenne twister bits with hand-rolled transforms; the std distributions
// are implementation-defined and would break cross-platform reproducibility.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t bits() { return engine_(); }

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer on [0, n).
  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  Vector normal_vector(Eigen::Index n) {
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

  Vector uniform_in(const Box& box) {
    Vector u(box.dim());
    for (int i = 0; i < box.dim(); ++i) u[i] = uniform();
    return box.from_unit(u);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// SplitMix64 finalizer; derives independent child seeds from one base seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline double normal_pdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

/// Radical-inverse Halton sequence with an optional Cranley-Patterson shift.
class Halton {
 public:
  explicit Halton(int dim, std::uint64_t seed = 0, bool shifted = false) : dim_(dim), shift_(Vector::Zero(dim)) {
    if (dim > static_cast<int>(kPrimes.size()))
      throw Error(ErrorKind::InvalidSpec, "Halton sequence supports at most 16 dimensions");
    if (shifted) {
      Rng rng(seed);
      for (int i = 0; i < dim; ++i) shift_[i] = rng.uniform();
    }
  }

  Vector unit_point(std::uint64_t index) const {
    Vector u(dim_);
    for (int i = 0; i < dim_; ++i) {
      double v = radical_inverse(index, kPrimes[i]) + shift_[i];
      u[i] = v - std::floor(v);
    }
    return u;
  }

  Vector point(std::uint64_t index, const Box& box) const { return box.from_unit(unit_point(index)); }

 private:
  static constexpr std::array<int, 16> kPrimes = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53};

  static double radical_inverse(std::uint64_t n, int base) {
    double inv = 1.0 / base, f = inv, r = 0.0;
    while (n > 0) {
      r += f * static_cast<double>(n % base);
      n /= base;
      f *= inv;
    }
    return r;
  }

  int dim_;
  Vector shift_;
};

/// Linear-interpolation quantile of an unsorted sample (Hyndman-Fan type 7).
inline double quantile(std::vector<double> values, double q) {
  if (values.empty()) return kNaN;
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

inline double median(std::vector<double> values) { return quantile(std::move(values), 0.5); }

inline Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

inline double min_eigenvalue(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(m), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

}  // namespace envbo
