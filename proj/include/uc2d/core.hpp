#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

namespace uc2d {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;
using Complex = std::complex<double>;

/// Closed disk |x - center| <= radius.
struct Disk {
  Vec2 center{0.0, 0.0};
  double radius{1.0};

  bool contains(const Vec2& x, double tol = 0.0) const {
    return (x - center).norm() <= radius * (1.0 + tol);
  }
  double area() const { return M_PI * radius * radius; }
};

// ---------------------------------------------------------------------------
// Error types
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// The symmetric part of A (or of its inverse) fails positivity at a point.
struct NonEllipticError : Error {
  NonEllipticError(const std::string& what, const Vec2& where)
      : Error(what), where(where) {}
  Vec2 where;
};

struct SolverError : Error {
  using Error::Error;
};

/// Fixed-point iteration update norms grew three times in a row.
struct NoContractionError : Error {
  using Error::Error;
};

/// Multiplier bounds still violated after the allowed radius halvings.
struct RadiusExhaustedError : Error {
  RadiusExhaustedError(const std::string& what, double best_sup_z)
      : Error(what), best_sup_z(best_sup_z) {}
  double best_sup_z;
};

struct InvalidMultiplierError : Error {
  using Error::Error;
};

struct DegenerateInputError : Error {
  using Error::Error;
};

/// Least-squares defect of the stream-function fit is too large relative to
/// the target field; the input was not a solution.
struct NotCurlFreeError : Error {
  using Error::Error;
};

struct SimilarityError : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Deterministic random numbers
// ---------------------------------------------------------------------------

/// splitmix64 generator. Distribution code is written out here so streams are
/// identical across standard libraries and platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in [a, b).
  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  /// Standard normal via Box-Muller.
  double gaussian() {
    double u1 = uniform();
    double u2 = uniform();
    u1 = std::max(u1, 0x1.0p-53);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

 private:
  std::uint64_t state_;
};

// ---------------------------------------------------------------------------
// Small helpers
// ---------------------------------------------------------------------------

inline Mat2 rotation90() {
  Mat2 j;
  j << 0.0, -1.0, 1.0, 0.0;
  return j;
}

/// Eigenvalues of the symmetric part of a 2x2 matrix, ascending.
inline std::pair<double, double> sym_eigenvalues(const Mat2& a) {
  const double m = 0.5 * (a(0, 0) + a(1, 1));
  const double off = 0.5 * (a(0, 1) + a(1, 0));
  const double h = 0.5 * (a(0, 0) - a(1, 1));
  const double r = std::sqrt(h * h + off * off);
  return {m - r, m + r};
}

/// Least-squares slope of y against x.
inline double fit_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n < 2 || y.size() != n) return std::numeric_limits<double>::quiet_NaN();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  const double denom = n * sxx - sx * sx;
  if (std::abs(denom) < 1e-300) return std::numeric_limits<double>::quiet_NaN();
  return (n * sxy - sx * sy) / denom;
}

}  // namespace uc2d
