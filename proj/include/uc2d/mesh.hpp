#pragma once

#include <algorithm>
#include <array>
#include <memory>
#include <optional>
#include <vector>

#include "core.hpp"

namespace uc2d {

/// Conforming P1 triangulation of a disk.
///
/// Construction maps the uniform (resolution+1)^2 grid on the square
/// [-R, R]^2 through the radial stretch q -> q * max(|q_x|, |q_y|) / |q|_2,
/// which sends concentric squares to concentric circles.  Square cells are
/// split along alternating diagonals; if a stretched cell would produce a
/// degenerate or inverted triangle, the other diagonal is used instead.
/// Boundary vertices land exactly on the circle.
class Mesh {
 public:
  struct Triangle {
    std::array<int, 3> v;
    double area;
    std::array<Vec2, 3> grad;  // gradients of the three barycentric hats
    Vec2 centroid;
  };

  struct Location {
    int triangle;
    Eigen::Vector3d bary;
  };

  Mesh(const Vec2& center, double radius, int resolution) {
    if (!(radius > 0.0)) throw std::invalid_argument("mesh: radius must be positive");
    if (resolution < 4) throw std::invalid_argument("mesh: resolution must be >= 4");
    center_ = center;
    radius_ = radius;
    resolution_ = resolution;
    build();
    build_bins();
  }

  const Vec2& center() const { return center_; }
  double radius() const { return radius_; }
  int resolution() const { return resolution_; }
  /// Grid step of the generating square lattice.
  double cell_size() const { return 2.0 * radius_ / resolution_; }

  int vertex_count() const { return static_cast<int>(vertices_.size()); }
  int triangle_count() const { return static_cast<int>(triangles_.size()); }
  const Vec2& vertex(int i) const { return vertices_[i]; }
  const Triangle& triangle(int t) const { return triangles_[t]; }
  bool on_boundary(int i) const { return boundary_[i] != 0; }
  const std::vector<int>& boundary_vertices() const { return boundary_list_; }
  const std::vector<int>& interior_vertices() const { return interior_list_; }

  double total_area() const { return total_area_; }

  /// Mid-edge quadrature nodes of a triangle (weights area/3 each; the rule
  /// integrates quadratics exactly).
  std::array<Vec2, 3> quadrature_points(int t) const {
    const Triangle& tr = triangles_[t];
    const Vec2& a = vertices_[tr.v[0]];
    const Vec2& b = vertices_[tr.v[1]];
    const Vec2& c = vertices_[tr.v[2]];
    return {0.5 * (a + b), 0.5 * (b + c), 0.5 * (c + a)};
  }

  Eigen::Vector3d barycentric(int t, const Vec2& x) const {
    const Triangle& tr = triangles_[t];
    const Vec2& a = vertices_[tr.v[0]];
    Eigen::Vector3d l;
    // grad[k] is also the linear map from displacement to barycentric change.
    l[1] = tr.grad[1].dot(x - a);
    l[2] = tr.grad[2].dot(x - a);
    l[0] = 1.0 - l[1] - l[2];
    return l;
  }

  /// Triangle containing x, with barycentric coordinates clamped to the
  /// simplex.  Points farther outside than `tol` (in barycentric units)
  /// return nullopt.
  std::optional<Location> locate(const Vec2& x, double tol = 1e-12) const {
    int best = -1;
    double best_min = -std::numeric_limits<double>::infinity();
    Eigen::Vector3d best_bary;
    for (int t : bin_candidates(x)) {
      Eigen::Vector3d l = barycentric(t, x);
      const double mn = l.minCoeff();
      if (mn > best_min) {
        best_min = mn;
        best = t;
        best_bary = l;
        if (mn >= 0.0) break;  // strictly inside, done
      }
    }
    if (best < 0 || best_min < -tol) return std::nullopt;
    for (int k = 0; k < 3; ++k) best_bary[k] = std::max(best_bary[k], 0.0);
    best_bary /= best_bary.sum();
    // Vertex hits are snapped so nodal evaluation is exact.
    for (int k = 0; k < 3; ++k)
      if (best_bary[k] > 1.0 - 1e-12) {
        best_bary = Eigen::Vector3d::Zero();
        best_bary[k] = 1.0;
      }
    return Location{best, best_bary};
  }

  /// Like locate but never fails: falls back to the candidate with the least
  /// barycentric violation, or to the nearest vertex's star.  Intended for
  /// evaluating fields a hair outside the mesh polygon.
  Location locate_clamped(const Vec2& x) const {
    if (auto loc = locate(x, 0.5)) return *loc;
    // Far outside every bin candidate: snap to the nearest vertex.
    int nearest = 0;
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < vertex_count(); ++i) {
      const double d = (vertices_[i] - x).squaredNorm();
      if (d < best) {
        best = d;
        nearest = i;
      }
    }
    for (int t = 0; t < triangle_count(); ++t) {
      for (int k = 0; k < 3; ++k)
        if (triangles_[t].v[k] == nearest) {
          Eigen::Vector3d l = Eigen::Vector3d::Zero();
          l[k] = 1.0;
          return Location{t, l};
        }
    }
    throw Error("mesh: locate_clamped failed");  // unreachable
  }

  /// Unsigned distance from x to triangle t.
  double distance_to_triangle(int t, const Vec2& x) const {
    Eigen::Vector3d l = barycentric(t, x);
    if (l.minCoeff() >= 0.0) return 0.0;
    const Triangle& tr = triangles_[t];
    double best = std::numeric_limits<double>::infinity();
    for (int k = 0; k < 3; ++k) {
      const Vec2& a = vertices_[tr.v[k]];
      const Vec2& b = vertices_[tr.v[(k + 1) % 3]];
      const Vec2 ab = b - a;
      const double s = std::clamp(ab.dot(x - a) / ab.squaredNorm(), 0.0, 1.0);
      best = std::min(best, (a + s * ab - x).norm());
    }
    return best;
  }

 private:
  void build() {
    const int n = resolution_;
    const double h = 2.0 * radius_ / n;
    std::vector<int> id((n + 1) * (n + 1), -1);
    auto gid = [n](int i, int j) { return j * (n + 1) + i; };

    for (int j = 0; j <= n; ++j)
      for (int i = 0; i <= n; ++i) {
        const Vec2 q(-radius_ + i * h, -radius_ + j * h);
        const double linf = std::max(std::abs(q.x()), std::abs(q.y()));
        Vec2 p = center_;
        if (linf > 0.0) p += q * (linf / q.norm());
        id[gid(i, j)] = static_cast<int>(vertices_.size());
        vertices_.push_back(p);
        boundary_.push_back(std::max(std::abs(i * 2 - n), std::abs(j * 2 - n)) == n ? 1 : 0);
      }

    auto push = [&](int a, int b, int c) {
      const Vec2& pa = vertices_[a];
      const Vec2 e1 = vertices_[b] - pa;
      const Vec2 e2 = vertices_[c] - pa;
      const double det = e1.x() * e2.y() - e1.y() * e2.x();
      if (det <= 0.0) return false;
      Triangle tr;
      tr.v = {a, b, c};
      tr.area = 0.5 * det;
      // Rows of the inverse Jacobian are the gradients of bary 1 and 2.
      tr.grad[1] = Vec2(e2.y(), -e2.x()) / det;
      tr.grad[2] = Vec2(-e1.y(), e1.x()) / det;
      tr.grad[0] = -tr.grad[1] - tr.grad[2];
      tr.centroid = (vertices_[a] + vertices_[b] + vertices_[c]) / 3.0;
      triangles_.push_back(tr);
      return true;
    };

    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) {
        const int v00 = id[gid(i, j)], v10 = id[gid(i + 1, j)];
        const int v01 = id[gid(i, j + 1)], v11 = id[gid(i + 1, j + 1)];
        auto try_pair = [&](int a1, int b1, int c1, int a2, int b2, int c2) {
          const std::size_t mark = triangles_.size();
          if (push(a1, b1, c1) && push(a2, b2, c2)) return true;
          triangles_.resize(mark);
          return false;
        };
        // Alternate diagonals checkerboard-style; flip if the stretch
        // inverted one of the two triangles.
        bool ok = ((i + j) % 2 == 0)
                      ? (try_pair(v00, v10, v11, v00, v11, v01) ||
                         try_pair(v00, v10, v01, v10, v11, v01))
                      : (try_pair(v00, v10, v01, v10, v11, v01) ||
                         try_pair(v00, v10, v11, v00, v11, v01));
        if (!ok) throw Error("mesh: degenerate cell in disk construction");
      }

    total_area_ = 0.0;
    for (const Triangle& tr : triangles_) total_area_ += tr.area;
    for (int i = 0; i < vertex_count(); ++i)
      (boundary_[i] ? boundary_list_ : interior_list_).push_back(i);
  }

  void build_bins() {
    nbins_ = std::max(8, resolution_);
    bins_.assign(static_cast<std::size_t>(nbins_) * nbins_, {});
    const double lo_x = center_.x() - radius_, lo_y = center_.y() - radius_;
    const double scale = nbins_ / (2.0 * radius_);
    auto clampi = [this](int v) { return std::clamp(v, 0, nbins_ - 1); };
    for (int t = 0; t < triangle_count(); ++t) {
      const Triangle& tr = triangles_[t];
      double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
      for (int k = 0; k < 3; ++k) {
        const Vec2& p = vertices_[tr.v[k]];
        x0 = std::min(x0, p.x());
        x1 = std::max(x1, p.x());
        y0 = std::min(y0, p.y());
        y1 = std::max(y1, p.y());
      }
      const int i0 = clampi(static_cast<int>((x0 - lo_x) * scale));
      const int i1 = clampi(static_cast<int>((x1 - lo_x) * scale));
      const int j0 = clampi(static_cast<int>((y0 - lo_y) * scale));
      const int j1 = clampi(static_cast<int>((y1 - lo_y) * scale));
      for (int j = j0; j <= j1; ++j)
        for (int i = i0; i <= i1; ++i)
          bins_[static_cast<std::size_t>(j) * nbins_ + i].push_back(t);
    }
  }

  const std::vector<int>& bin_candidates(const Vec2& x) const {
    static const std::vector<int> empty;
    const double scale = nbins_ / (2.0 * radius_);
    const double fx = (x.x() - (center_.x() - radius_)) * scale;
    const double fy = (x.y() - (center_.y() - radius_)) * scale;
    if (fx < -0.5 || fx > nbins_ + 0.5 || fy < -0.5 || fy > nbins_ + 0.5) return empty;
    const int i = std::clamp(static_cast<int>(fx), 0, nbins_ - 1);
    const int j = std::clamp(static_cast<int>(fy), 0, nbins_ - 1);
    return bins_[static_cast<std::size_t>(j) * nbins_ + i];
  }

  Vec2 center_;
  double radius_ = 1.0;
  int resolution_ = 0;
  double total_area_ = 0.0;
  std::vector<Vec2> vertices_;
  std::vector<char> boundary_;
  std::vector<int> boundary_list_, interior_list_;
  std::vector<Triangle> triangles_;
  int nbins_ = 0;
  std::vector<std::vector<int>> bins_;
};

using MeshPtr = std::shared_ptr<const Mesh>;

inline MeshPtr build_disk_mesh(const Vec2& center, double radius, int resolution) {
  return std::make_shared<const Mesh>(center, radius, resolution);
}

inline MeshPtr build_disk_mesh(const Disk& disk, int resolution) {
  return build_disk_mesh(disk.center, disk.radius, resolution);
}

// ---------------------------------------------------------------------------
// Quadrature
// ---------------------------------------------------------------------------

namespace detail {

/// 16 congruent subtriangles of a triangle (two uniform refinements),
/// returned as centroids.  Weight of each is area/16.
inline void subtriangle_centroids(const Vec2& a, const Vec2& b, const Vec2& c,
                                  std::array<Vec2, 16>& out) {
  int idx = 0;
  const int m = 4;
  // Upward subtriangles (i,j), (i+1,j), (i,j+1) in lattice units, then the
  // downward ones (i+1,j), (i,j+1), (i+1,j+1).
  for (int i = 0; i < m; ++i)
    for (int j = 0; i + j < m; ++j) {
      const double l1 = (3 * i + 1) / (3.0 * m), l2 = (3 * j + 1) / (3.0 * m);
      out[idx++] = (1.0 - l1 - l2) * a + l1 * b + l2 * c;
    }
  for (int i = 0; i + 1 < m; ++i)
    for (int j = 0; i + j + 1 < m; ++j) {
      const double l1 = (3 * i + 2) / (3.0 * m), l2 = (3 * j + 2) / (3.0 * m);
      out[idx++] = (1.0 - l1 - l2) * a + l1 * b + l2 * c;
    }
}

}  // namespace detail

/// Integral of g over the mesh polygon, mid-edge rule.
template <class F>
double integrate(const Mesh& mesh, F&& g) {
  double sum = 0.0;
  for (int t = 0; t < mesh.triangle_count(); ++t) {
    const auto qp = mesh.quadrature_points(t);
    const double w = mesh.triangle(t).area / 3.0;
    sum += w * (g(qp[0]) + g(qp[1]) + g(qp[2]));
  }
  return sum;
}

/// Integral of g over subdisk ∩ mesh.  Every triangle meeting the subdisk is
/// sampled at the 16 subtriangle centroids with an inside-indicator, so that
/// the value is monotone in the subdisk radius (same sample points, larger
/// accepted set) and exact for affine g on fully covered triangles.
template <class F>
double integrate(const Mesh& mesh, F&& g, const Disk& sub) {
  if ((sub.center - mesh.center()).norm() > mesh.radius() - sub.radius + 1e-9 * mesh.radius())
    throw std::invalid_argument("integrate: subdisk not contained in the mesh disk");
  const double r2 = sub.radius * sub.radius;
  double sum = 0.0;
  std::array<Vec2, 16> pts;
  for (int t = 0; t < mesh.triangle_count(); ++t) {
    const Mesh::Triangle& tr = mesh.triangle(t);
    if (mesh.distance_to_triangle(t, sub.center) > sub.radius) continue;
    detail::subtriangle_centroids(mesh.vertex(tr.v[0]), mesh.vertex(tr.v[1]),
                                  mesh.vertex(tr.v[2]), pts);
    const double w = tr.area / 16.0;
    double local = 0.0;
    for (const Vec2& p : pts)
      if ((p - sub.center).squaredNorm() <= r2) local += g(p);
    sum += w * local;
  }
  return sum;
}

// ---------------------------------------------------------------------------
// FemFunction
// ---------------------------------------------------------------------------

/// Piecewise-linear function on a Mesh with nodal values of type T.
template <class T>
class FemFunction {
 public:
  FemFunction() = default;
  FemFunction(MeshPtr mesh, Eigen::VectorX<T> values)
      : mesh_(std::move(mesh)), values_(std::move(values)) {
    if (values_.size() != mesh_->vertex_count())
      throw std::invalid_argument("FemFunction: value count != vertex count");
  }

  template <class F>
  static FemFunction interpolate(MeshPtr mesh, F&& f) {
    Eigen::VectorX<T> v(mesh->vertex_count());
    for (int i = 0; i < mesh->vertex_count(); ++i) v[i] = f(mesh->vertex(i));
    return FemFunction(std::move(mesh), std::move(v));
  }

  static FemFunction zero(MeshPtr mesh) {
    const int n = mesh->vertex_count();
    return FemFunction(std::move(mesh), Eigen::VectorX<T>::Zero(n));
  }

  const MeshPtr& mesh() const { return mesh_; }
  const Eigen::VectorX<T>& values() const { return values_; }
  Eigen::VectorX<T>& values() { return values_; }
  T operator[](int i) const { return values_[i]; }

  T value_in(int t, const Eigen::Vector3d& bary) const {
    const auto& tr = mesh_->triangle(t);
    return bary[0] * values_[tr.v[0]] + bary[1] * values_[tr.v[1]] +
           bary[2] * values_[tr.v[2]];
  }

  std::optional<T> evaluate(const Vec2& x) const {
    auto loc = mesh_->locate(x);
    if (!loc) return std::nullopt;
    return value_in(loc->triangle, loc->bary);
  }

  /// Evaluation that clamps points slightly outside the mesh polygon.
  T evaluate_clamped(const Vec2& x) const {
    auto loc = mesh_->locate_clamped(x);
    return value_in(loc.triangle, loc.bary);
  }

  /// Constant gradient on triangle t.
  Eigen::Matrix<T, 2, 1> gradient(int t) const {
    const auto& tr = mesh_->triangle(t);
    Eigen::Matrix<T, 2, 1> g = Eigen::Matrix<T, 2, 1>::Zero();
    for (int k = 0; k < 3; ++k) {
      g[0] += values_[tr.v[k]] * tr.grad[k].x();
      g[1] += values_[tr.v[k]] * tr.grad[k].y();
    }
    return g;
  }

 private:
  MeshPtr mesh_;
  Eigen::VectorX<T> values_;
};

using RealFem = FemFunction<double>;
using ComplexFem = FemFunction<Complex>;

// ---------------------------------------------------------------------------
// Norms
// ---------------------------------------------------------------------------

template <class T>
double lp_norm(const FemFunction<T>& u, double p,
               const std::optional<Disk>& sub = std::nullopt) {
  const Mesh& mesh = *u.mesh();
  auto f = [&](int t, const Vec2& x) {
    return std::pow(std::abs(u.value_in(t, mesh.barycentric(t, x))), p);
  };
  double s;
  if (sub) {
    s = integrate(mesh, [&](const Vec2& x) {
          auto loc = mesh.locate_clamped(x);
          return std::pow(std::abs(u.value_in(loc.triangle, loc.bary)), p);
        }, *sub);
  } else {
    s = 0.0;
    for (int t = 0; t < mesh.triangle_count(); ++t) {
      const auto qp = mesh.quadrature_points(t);
      const double w = mesh.triangle(t).area / 3.0;
      for (const Vec2& x : qp) s += w * f(t, x);
    }
  }
  return std::pow(std::max(s, 0.0), 1.0 / p);
}

/// Max of |u| over vertices (and subdisk-clipped quadrature samples if a
/// subdisk is given).
template <class T>
double linf_norm(const FemFunction<T>& u,
                 const std::optional<Disk>& sub = std::nullopt) {
  const Mesh& mesh = *u.mesh();
  double m = 0.0;
  if (!sub) {
    for (int i = 0; i < mesh.vertex_count(); ++i)
      m = std::max(m, std::abs(u[i]));
    return m;
  }
  const double r2 = sub->radius * sub->radius;
  std::array<Vec2, 16> pts;
  for (int t = 0; t < mesh.triangle_count(); ++t) {
    if (mesh.distance_to_triangle(t, sub->center) > sub->radius) continue;
    const auto& tr = mesh.triangle(t);
    bool all_in = true;
    for (int k = 0; k < 3; ++k) {
      const Vec2& v = mesh.vertex(tr.v[k]);
      if ((v - sub->center).squaredNorm() <= r2)
        m = std::max(m, std::abs(u[tr.v[k]]));
      else
        all_in = false;
    }
    if (all_in) continue;
    detail::subtriangle_centroids(mesh.vertex(tr.v[0]), mesh.vertex(tr.v[1]),
                                  mesh.vertex(tr.v[2]), pts);
    for (const Vec2& p : pts)
      if ((p - sub->center).squaredNorm() <= r2) {
        auto loc = mesh.locate_clamped(p);
        m = std::max(m, std::abs(u.value_in(loc.triangle, loc.bary)));
      }
  }
  return m;
}

/// L^p norm of |grad u| (elementwise-constant gradients).
template <class T>
double grad_lp_norm(const FemFunction<T>& u, double p,
                    const std::optional<Disk>& sub = std::nullopt) {
  const Mesh& mesh = *u.mesh();
  double s = 0.0;
  if (!sub) {
    for (int t = 0; t < mesh.triangle_count(); ++t)
      s += mesh.triangle(t).area * std::pow(u.gradient(t).norm(), p);
  } else {
    const double r2 = sub->radius * sub->radius;
    std::array<Vec2, 16> pts;
    for (int t = 0; t < mesh.triangle_count(); ++t) {
      if (mesh.distance_to_triangle(t, sub->center) > sub->radius) continue;
      const auto& tr = mesh.triangle(t);
      detail::subtriangle_centroids(mesh.vertex(tr.v[0]), mesh.vertex(tr.v[1]),
                                    mesh.vertex(tr.v[2]), pts);
      int inside = 0;
      for (const Vec2& q : pts)
        if ((q - sub->center).squaredNorm() <= r2) ++inside;
      s += (tr.area * inside / 16.0) * std::pow(u.gradient(t).norm(), p);
    }
  }
  return std::pow(s, 1.0 / p);
}

/// W^{1,2} seminorm: sqrt(sum over elements of area * |grad u|^2).
template <class T>
double h1_seminorm(const FemFunction<T>& u) {
  return grad_lp_norm(u, 2.0);
}

/// Project the elementwise-constant gradient of u onto nodal fields by
/// area-weighted averaging over each vertex star.
template <class T>
std::array<FemFunction<T>, 2> vertex_gradient(const FemFunction<T>& u) {
  const Mesh& mesh = *u.mesh();
  Eigen::VectorX<T> gx = Eigen::VectorX<T>::Zero(mesh.vertex_count());
  Eigen::VectorX<T> gy = Eigen::VectorX<T>::Zero(mesh.vertex_count());
  Eigen::VectorXd wsum = Eigen::VectorXd::Zero(mesh.vertex_count());
  for (int t = 0; t < mesh.triangle_count(); ++t) {
    const auto& tr = mesh.triangle(t);
    const auto g = u.gradient(t);
    for (int k = 0; k < 3; ++k) {
      gx[tr.v[k]] += tr.area * g[0];
      gy[tr.v[k]] += tr.area * g[1];
      wsum[tr.v[k]] += tr.area;
    }
  }
  for (int i = 0; i < mesh.vertex_count(); ++i) {
    gx[i] /= wsum[i];
    gy[i] /= wsum[i];
  }
  return {FemFunction<T>(u.mesh(), std::move(gx)), FemFunction<T>(u.mesh(), std::move(gy))};
}

}  // namespace uc2d
