#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "mesh.hpp"

namespace uc2d {

using ScalarField = std::function<double(const Vec2&)>;
using VecField = std::function<Vec2(const Vec2&)>;
using MatField = std::function<Mat2(const Vec2&)>;

/// Coefficients of  L u = -div(A grad u + u B) + C . grad u + d u.
/// q is the integrability exponent used for the lower-order norms
/// (|B| + |C| measured in L^q, d in L^{q/2}).
struct CoefficientSet {
  MatField A;
  VecField B;
  VecField C;
  ScalarField d;
  double q = 4.0;
  std::optional<double> declared_K;
  std::optional<double> declared_kappa;
  std::string name = "custom";

  CoefficientSet with_zero_B() const {
    CoefficientSet c = *this;
    c.B = [](const Vec2&) { return Vec2::Zero(); };
    return c;
  }
};

// ---------------------------------------------------------------------------
// Ellipticity
// ---------------------------------------------------------------------------

/// Ellipticity constant of A at one point:
/// max(1 / lambda_min(sym A), 1 / lambda_min(sym A^-1)), always >= 1.
inline double point_ellipticity(const Mat2& a, const Vec2& where) {
  const double lo = sym_eigenvalues(a).first;
  if (!(lo > 0.0))
    throw NonEllipticError("sym(A) not positive definite at sample point", where);
  const double det = a.determinant();
  if (!(std::abs(det) > 1e-300))
    throw NonEllipticError("A singular at sample point", where);
  const Mat2 inv = a.inverse();
  const double lo_inv = sym_eigenvalues(inv).first;
  if (!(lo_inv > 0.0))
    throw NonEllipticError("sym(A^-1) not positive definite at sample point", where);
  return std::max({1.0 / lo, 1.0 / lo_inv, 1.0});
}

/// Largest point ellipticity constant over the mesh quadrature points.
inline double check_ellipticity(const MatField& A, const Mesh& mesh) {
  double K = 1.0;
  for (int t = 0; t < mesh.triangle_count(); ++t)
    for (const Vec2& x : mesh.quadrature_points(t))
      K = std::max(K, point_ellipticity(A(x), x));
  return K;
}

struct LowerOrderNorms {
  double bc_lq = 0.0;  // || |B| + |C| ||_{L^q}
  double d_lhalf = 0.0;  // || d ||_{L^{q/2}}
  double kappa = 0.0;  // sum of the two
};

inline LowerOrderNorms lower_order_norms(const CoefficientSet& c, const Mesh& mesh) {
  LowerOrderNorms n;
  const double q = c.q, qh = 0.5 * c.q;
  double sq = 0.0, sd = 0.0;
  for (int t = 0; t < mesh.triangle_count(); ++t) {
    const double w = mesh.triangle(t).area / 3.0;
    for (const Vec2& x : mesh.quadrature_points(t)) {
      sq += w * std::pow(c.B(x).norm() + c.C(x).norm(), q);
      sd += w * std::pow(std::abs(c.d(x)), qh);
    }
  }
  n.bc_lq = std::pow(sq, 1.0 / q);
  n.d_lhalf = std::pow(sd, 1.0 / qh);
  n.kappa = n.bc_lq + n.d_lhalf;
  return n;
}

/// Norms over a disk, on a throwaway mesh of the given resolution.
inline LowerOrderNorms lower_order_norms(const CoefficientSet& c, const Disk& disk,
                                         int resolution = 64) {
  return lower_order_norms(c, Mesh(disk.center, disk.radius, resolution));
}

/// Declared constants, when present, must not undercut the sampled estimates.
inline void validate_declared(const CoefficientSet& c, double K_est, double kappa_est) {
  if (c.declared_K && K_est > *c.declared_K * 1.01)
    throw std::invalid_argument("declared ellipticity constant below sampled estimate for '" +
                                c.name + "'");
  if (c.declared_kappa && kappa_est > *c.declared_kappa * 1.01)
    throw std::invalid_argument("declared lower-order norm below sampled estimate for '" +
                                c.name + "'");
}

// ---------------------------------------------------------------------------
// Builtin corpus
// ---------------------------------------------------------------------------

using ParamMap = std::map<std::string, double>;

namespace detail {

inline double param(const ParamMap& p, const std::string& key, double fallback) {
  auto it = p.find(key);
  return it == p.end() ? fallback : it->second;
}

inline void reject_unknown(const ParamMap& p, std::initializer_list<const char*> known,
                           const std::string& name) {
  for (const auto& [key, _] : p) {
    bool ok = false;
    for (const char* k : known)
      if (key == k) ok = true;
    if (!ok)
      throw std::invalid_argument("unknown parameter '" + key + "' for builtin '" + name + "'");
  }
}

}  // namespace detail

inline const std::vector<std::string>& builtin_names() {
  static const std::vector<std::string> names = {
      "identity",        "anisotropic",      "rotation_nonsym", "mollified_checkerboard",
      "constant_d",      "full_lower_order", "singular_lower_order"};
  return names;
}

/// Named coefficient families used throughout the experiments.
inline CoefficientSet builtin(const std::string& name, const ParamMap& params = {}) {
  auto zero_vec = [](const Vec2&) { return Vec2::Zero(); };
  auto zero_scal = [](const Vec2&) { return 0.0; };
  CoefficientSet c;
  c.B = zero_vec;
  c.C = zero_vec;
  c.d = zero_scal;
  c.q = detail::param(params, "q", 4.0);
  c.name = name;

  if (name == "identity") {
    detail::reject_unknown(params, {"q"}, name);
    c.A = [](const Vec2&) { return Mat2::Identity(); };
    c.declared_K = 1.0;
    c.declared_kappa = 0.0;
    return c;
  }
  if (name == "anisotropic") {
    detail::reject_unknown(params, {"q", "a"}, name);
    const double a = detail::param(params, "a", 2.0);
    if (!(a > 0.0)) throw std::invalid_argument("anisotropic: 'a' must be positive");
    c.A = [a](const Vec2&) {
      Mat2 m = Mat2::Zero();
      m(0, 0) = a;
      m(1, 1) = 1.0 / a;
      return m;
    };
    c.declared_K = std::max(a, 1.0 / a);
    return c;
  }
  if (name == "rotation_nonsym" || name == "full_lower_order") {
    detail::reject_unknown(params, {"q", "t", "b", "c", "dd"}, name);
    const double t = detail::param(params, "t", name == "full_lower_order" ? 0.5 : 1.0);
    const double def = name == "full_lower_order" ? 1.0 : 0.0;
    const double b = detail::param(params, "b", def);
    const double cc = detail::param(params, "c", def);
    const double dd = detail::param(params, "dd", def);
    c.A = [t](const Vec2&) {
      Mat2 m;
      m << 1.0, -t, t, 1.0;
      return m;
    };
    if (b != 0.0)
      c.B = [b](const Vec2& x) {
        return Vec2(b * std::cos(M_PI * x.y()), b * std::sin(M_PI * x.x()));
      };
    if (cc != 0.0)
      c.C = [cc](const Vec2& x) {
        return Vec2(cc * std::sin(M_PI * x.x()), cc * std::cos(M_PI * x.y()));
      };
    if (dd != 0.0)
      c.d = [dd](const Vec2& x) {
        return dd * std::cos(M_PI * x.x()) * std::cos(M_PI * x.y());
      };
    c.declared_K = 1.0 + t * t;
    return c;
  }
  if (name == "mollified_checkerboard") {
    detail::reject_unknown(params, {"q", "a0", "a1", "k", "sharp"}, name);
    const double a0 = detail::param(params, "a0", 1.0);
    const double a1 = detail::param(params, "a1", 2.0);
    const double k = detail::param(params, "k", 2.0);
    const double sharp = detail::param(params, "sharp", 8.0);
    if (!(a0 > 0.0) || !(a1 >= a0))
      throw std::invalid_argument("mollified_checkerboard: need 0 < a0 <= a1");
    c.A = [=](const Vec2& x) {
      const double s = std::tanh(sharp * std::sin(k * M_PI * x.x()) * std::sin(k * M_PI * x.y()));
      const double a = 0.5 * ((a0 + a1) + (a1 - a0) * s);
      return Mat2(a * Mat2::Identity());
    };
    c.declared_K = std::max({a1, 1.0 / a0, 1.0});
    return c;
  }
  if (name == "constant_d") {
    detail::reject_unknown(params, {"q", "delta"}, name);
    const double delta = detail::param(params, "delta", 1.0);
    c.A = [](const Vec2&) { return Mat2::Identity(); };
    c.d = [delta](const Vec2&) { return delta; };
    c.declared_K = 1.0;
    return c;
  }
  if (name == "singular_lower_order") {
    detail::reject_unknown(params, {"q", "s0", "eps", "cap"}, name);
    const double s0 = detail::param(params, "s0", 1.0);
    const double eps = detail::param(params, "eps", 0.4);
    const double cap = detail::param(params, "cap", 1e12);
    if (!(eps > 0.0 && eps * c.q < 2.0))
      throw std::invalid_argument(
          "singular_lower_order: need 0 < eps and eps*q < 2 for integrability");
    c.A = [](const Vec2&) { return Mat2::Identity(); };
    // |B| = |C| = s0 * r^-eps: radial drift and a rotational advection term.
    c.B = [s0, eps, cap](const Vec2& x) {
      const double r = x.norm();
      if (r == 0.0) return Vec2::Zero().eval();
      const double mag = std::min(s0 * std::pow(r, -eps), cap);
      return Vec2(mag * x.x() / r, mag * x.y() / r);
    };
    c.C = [s0, eps, cap](const Vec2& x) {
      const double r = x.norm();
      if (r == 0.0) return Vec2::Zero().eval();
      const double mag = std::min(s0 * std::pow(r, -eps), cap);
      return Vec2(-mag * x.y() / r, mag * x.x() / r);
    };
    c.declared_K = 1.0;
    return c;
  }
  std::string known;
  for (const auto& n : builtin_names()) known += (known.empty() ? "" : ", ") + n;
  throw std::invalid_argument("unknown builtin coefficient set '" + name +
                              "'; known sets: " + known);
}

// ---------------------------------------------------------------------------
// Raster coefficient files
// ---------------------------------------------------------------------------

/// Node-registered rectangular grid of multi-channel doubles with bilinear
/// sampling, clamped at the box edge.  Text format:
///
///   uc2d raster v1
///   <nx> <ny> <channels>
///   <xmin> <ymin> <xmax> <ymax>
///   one line of <channels> numbers per node, x fastest, then y
struct RasterGrid {
  int nx = 0, ny = 0, channels = 0;
  double xmin = 0, ymin = 0, xmax = 0, ymax = 0;
  std::vector<double> data;

  double& at(int i, int j, int ch) {
    return data[(static_cast<std::size_t>(j) * nx + i) * channels + ch];
  }
  double at(int i, int j, int ch) const {
    return data[(static_cast<std::size_t>(j) * nx + i) * channels + ch];
  }

  double sample(int ch, const Vec2& p) const {
    const double fx = std::clamp((p.x() - xmin) / (xmax - xmin) * (nx - 1), 0.0,
                                 static_cast<double>(nx - 1));
    const double fy = std::clamp((p.y() - ymin) / (ymax - ymin) * (ny - 1), 0.0,
                                 static_cast<double>(ny - 1));
    const int i0 = std::min(static_cast<int>(fx), nx - 2);
    const int j0 = std::min(static_cast<int>(fy), ny - 2);
    const double sx = fx - i0, sy = fy - j0;
    return (1 - sx) * (1 - sy) * at(i0, j0, ch) + sx * (1 - sy) * at(i0 + 1, j0, ch) +
           (1 - sx) * sy * at(i0, j0 + 1, ch) + sx * sy * at(i0 + 1, j0 + 1, ch);
  }

  static RasterGrid read(std::istream& in) {
    RasterGrid g;
    std::string magic;
    std::getline(in, magic);
    if (magic != "uc2d raster v1")
      throw std::invalid_argument("raster: bad magic line '" + magic + "'");
    in >> g.nx >> g.ny >> g.channels;
    in >> g.xmin >> g.ymin >> g.xmax >> g.ymax;
    if (!in || g.nx < 2 || g.ny < 2 || g.channels < 1)
      throw std::invalid_argument("raster: invalid header");
    if (!(g.xmax > g.xmin) || !(g.ymax > g.ymin))
      throw std::invalid_argument("raster: empty bounding box");
    g.data.resize(static_cast<std::size_t>(g.nx) * g.ny * g.channels);
    for (double& v : g.data)
      if (!(in >> v)) throw std::invalid_argument("raster: truncated data section");
    return g;
  }

  static RasterGrid read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("raster: cannot open '" + path + "'");
    return read(in);
  }

  void write(std::ostream& out) const {
    auto fmt = [](double v) {
      char buf[40];
      auto res = std::to_chars(buf, buf + sizeof(buf), v);
      return std::string(buf, res.ptr);
    };
    out << "uc2d raster v1\n" << nx << ' ' << ny << ' ' << channels << '\n';
    out << fmt(xmin) << ' ' << fmt(ymin) << ' ' << fmt(xmax) << ' ' << fmt(ymax) << '\n';
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) {
        for (int ch = 0; ch < channels; ++ch) out << (ch ? " " : "") << fmt(at(i, j, ch));
        out << '\n';
      }
  }

  void write_file(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::invalid_argument("raster: cannot write '" + path + "'");
    write(out);
  }
};

/// Coefficients from a 9-channel raster (a11 a12 a21 a22 b1 b2 c1 c2 d).
inline CoefficientSet raster_coefficients(const RasterGrid& grid, double q = 4.0) {
  if (grid.channels != 9)
    throw std::invalid_argument("raster coefficients need 9 channels (a11 a12 a21 a22 b1 b2 c1 c2 d)");
  auto g = std::make_shared<RasterGrid>(grid);
  CoefficientSet c;
  c.q = q;
  c.name = "raster";
  c.A = [g](const Vec2& x) {
    Mat2 m;
    m << g->sample(0, x), g->sample(1, x), g->sample(2, x), g->sample(3, x);
    return m;
  };
  c.B = [g](const Vec2& x) { return Vec2(g->sample(4, x), g->sample(5, x)); };
  c.C = [g](const Vec2& x) { return Vec2(g->sample(6, x), g->sample(7, x)); };
  c.d = [g](const Vec2& x) { return g->sample(8, x); };
  return c;
}

inline CoefficientSet raster_coefficients(const std::string& path, double q = 4.0) {
  CoefficientSet c = raster_coefficients(RasterGrid::read_file(path), q);
  c.name = "raster:" + path;
  return c;
}

/// Sample analytic coefficients onto a raster grid (for writing test inputs).
inline RasterGrid rasterize(const CoefficientSet& c, double xmin, double ymin, double xmax,
                            double ymax, int nx, int ny) {
  RasterGrid g;
  g.nx = nx;
  g.ny = ny;
  g.channels = 9;
  g.xmin = xmin;
  g.ymin = ymin;
  g.xmax = xmax;
  g.ymax = ymax;
  g.data.resize(static_cast<std::size_t>(nx) * ny * 9);
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      const Vec2 x(xmin + (xmax - xmin) * i / (nx - 1), ymin + (ymax - ymin) * j / (ny - 1));
      const Mat2 a = c.A(x);
      const Vec2 b = c.B(x), cc = c.C(x);
      g.at(i, j, 0) = a(0, 0);
      g.at(i, j, 1) = a(0, 1);
      g.at(i, j, 2) = a(1, 0);
      g.at(i, j, 3) = a(1, 1);
      g.at(i, j, 4) = b.x();
      g.at(i, j, 5) = b.y();
      g.at(i, j, 6) = cc.x();
      g.at(i, j, 7) = cc.y();
      g.at(i, j, 8) = c.d(x);
    }
  return g;
}

}  // namespace uc2d
