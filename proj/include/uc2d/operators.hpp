#pragma once

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <vector>

#include "fields.hpp"
#include "mesh.hpp"

namespace uc2d {

/// Which terms of the bilinear form an assembled matrix carries.
///   full      : A, B, C and d
///   principal : A only
///   remainder : B, C and d only
enum class OperatorKind { full, principal, remainder };

/// Sparse Galerkin matrix of
///   a(u, phi) = int A grad u . grad phi + u B . grad phi + phi C . grad u + d u phi
/// on the P1 space of a mesh, plus the index bookkeeping for applying
/// homogeneous-row/column Dirichlet elimination.
struct WeakOperator {
  MeshPtr mesh;
  OperatorKind kind = OperatorKind::full;
  Eigen::SparseMatrix<double> matrix;  // full vertex-indexed matrix
  std::vector<int> interior_index;     // vertex -> interior dof, -1 on boundary

  int interior_count() const { return static_cast<int>(mesh->interior_vertices().size()); }

  /// Interior-interior block.
  Eigen::SparseMatrix<double> interior_matrix() const {
    return block(mesh->interior_vertices(), mesh->interior_vertices());
  }

  /// Interior-boundary block (couples boundary values into interior rows).
  Eigen::SparseMatrix<double> coupling_matrix() const {
    return block(mesh->interior_vertices(), mesh->boundary_vertices());
  }

 private:
  Eigen::SparseMatrix<double> block(const std::vector<int>& rows,
                                    const std::vector<int>& cols) const {
    std::vector<int> rmap(mesh->vertex_count(), -1), cmap(mesh->vertex_count(), -1);
    for (std::size_t k = 0; k < rows.size(); ++k) rmap[rows[k]] = static_cast<int>(k);
    for (std::size_t k = 0; k < cols.size(); ++k) cmap[cols[k]] = static_cast<int>(k);
    std::vector<Eigen::Triplet<double>> trip;
    for (int c = 0; c < matrix.outerSize(); ++c)
      for (Eigen::SparseMatrix<double>::InnerIterator it(matrix, c); it; ++it)
        if (rmap[it.row()] >= 0 && cmap[it.col()] >= 0)
          trip.emplace_back(rmap[it.row()], cmap[it.col()], it.value());
    Eigen::SparseMatrix<double> out(static_cast<int>(rows.size()),
                                    static_cast<int>(cols.size()));
    out.setFromTriplets(trip.begin(), trip.end());
    return out;
  }
};

/// Assemble the Galerkin matrix with mid-edge quadrature.  Coefficient
/// ellipticity is checked at every quadrature point for kinds that use A.
inline WeakOperator assemble(MeshPtr mesh, const CoefficientSet& coeffs,
                             OperatorKind kind = OperatorKind::full) {
  const Mesh& m = *mesh;
  const bool use_A = kind != OperatorKind::remainder;
  const bool use_low = kind != OperatorKind::principal;
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(m.triangle_count()) * 9);
  for (int t = 0; t < m.triangle_count(); ++t) {
    const Mesh::Triangle& tr = m.triangle(t);
    const auto qp = m.quadrature_points(t);
    const double w = tr.area / 3.0;
    Eigen::Matrix3d local = Eigen::Matrix3d::Zero();
    for (int q = 0; q < 3; ++q) {
      const Vec2& x = qp[q];
      // Mid-edge node q has barycentric 1/2 on the two adjacent vertices.
      Eigen::Vector3d phi = Eigen::Vector3d::Zero();
      phi[q] = 0.5;
      phi[(q + 1) % 3] = 0.5;
      if (use_A) {
        const Mat2 a = coeffs.A(x);
        point_ellipticity(a, x);
        for (int i = 0; i < 3; ++i)
          for (int j = 0; j < 3; ++j)
            local(i, j) += w * tr.grad[i].dot(a * tr.grad[j]);
      }
      if (use_low) {
        const Vec2 b = coeffs.B(x), c = coeffs.C(x);
        const double d = coeffs.d(x);
        for (int i = 0; i < 3; ++i)
          for (int j = 0; j < 3; ++j)
            local(i, j) += w * (phi[j] * b.dot(tr.grad[i]) + phi[i] * c.dot(tr.grad[j]) +
                                d * phi[i] * phi[j]);
      }
    }
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        trip.emplace_back(tr.v[i], tr.v[j], local(i, j));
  }
  WeakOperator op;
  op.mesh = std::move(mesh);
  op.kind = kind;
  op.matrix.resize(m.vertex_count(), m.vertex_count());
  op.matrix.setFromTriplets(trip.begin(), trip.end());
  op.interior_index.assign(m.vertex_count(), -1);
  const auto& interior = op.mesh->interior_vertices();
  for (std::size_t k = 0; k < interior.size(); ++k)
    op.interior_index[interior[k]] = static_cast<int>(k);
  return op;
}

/// Right-hand side in weak form: l(phi) = int F . grad phi + f phi, plus
/// optional inhomogeneous Dirichlet boundary values.
struct RhsData {
  VecField F;
  ScalarField f;
  std::optional<RealFem> boundary_values;
};

/// Load vector l(phi_i) over all vertices.
inline Eigen::VectorXd assemble_load(const Mesh& m, const RhsData& rhs) {
  Eigen::VectorXd load = Eigen::VectorXd::Zero(m.vertex_count());
  if (!rhs.F && !rhs.f) return load;
  for (int t = 0; t < m.triangle_count(); ++t) {
    const Mesh::Triangle& tr = m.triangle(t);
    const auto qp = m.quadrature_points(t);
    const double w = tr.area / 3.0;
    for (int q = 0; q < 3; ++q) {
      const Vec2& x = qp[q];
      const Vec2 F = rhs.F ? rhs.F(x) : Vec2::Zero().eval();
      const double f = rhs.f ? rhs.f(x) : 0.0;
      for (int i = 0; i < 3; ++i) {
        double phi = (i == q || i == (q + 1) % 3) ? 0.5 : 0.0;
        load[tr.v[i]] += w * (F.dot(tr.grad[i]) + f * phi);
      }
    }
  }
  return load;
}

namespace detail {

inline void check_residual(const Eigen::SparseMatrix<double>& a, const Eigen::VectorXd& x,
                           const Eigen::VectorXd& b, const char* what) {
  const double res = (a * x - b).norm();
  const double scale = std::max({b.norm(), (a * x).norm(), 1e-300});
  if (!(res <= 1e-8 * scale))
    throw SolverError(std::string(what) +
                      ": direct solve residual too large (ill-conditioned system; "
                      "likely loss of coercivity on this disk)");
}

inline Eigen::VectorXd lu_solve(const Eigen::SparseMatrix<double>& a, const Eigen::VectorXd& b,
                                const char* what) {
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu(a);
  if (lu.info() != Eigen::Success)
    throw SolverError(std::string(what) + ": sparse LU factorization failed");
  Eigen::VectorXd x = lu.solve(b);
  check_residual(a, x, b, what);
  return x;
}

}  // namespace detail

/// Solve a(u, phi_i) = l(phi_i) for all interior i with Dirichlet data from
/// rhs.boundary_values (zero if absent).
inline RealFem solve_dirichlet(const WeakOperator& op, const RhsData& rhs) {
  const Mesh& m = *op.mesh;
  if (rhs.boundary_values && rhs.boundary_values->mesh().get() != &m)
    throw std::invalid_argument("solve_dirichlet: boundary values live on a different mesh");
  Eigen::VectorXd load = assemble_load(m, rhs);
  const auto& interior = m.interior_vertices();
  const auto& boundary = m.boundary_vertices();

  Eigen::VectorXd g = Eigen::VectorXd::Zero(boundary.size());
  if (rhs.boundary_values)
    for (std::size_t k = 0; k < boundary.size(); ++k)
      g[k] = (*rhs.boundary_values)[boundary[k]];

  Eigen::VectorXd b(interior.size());
  for (std::size_t k = 0; k < interior.size(); ++k) b[k] = load[interior[k]];
  if (rhs.boundary_values) b -= op.coupling_matrix() * g;

  const Eigen::VectorXd x = detail::lu_solve(op.interior_matrix(), b, "solve_dirichlet");

  Eigen::VectorXd u = Eigen::VectorXd::Zero(m.vertex_count());
  for (std::size_t k = 0; k < interior.size(); ++k) u[interior[k]] = x[k];
  for (std::size_t k = 0; k < boundary.size(); ++k) u[boundary[k]] = g[k];
  return RealFem(op.mesh, std::move(u));
}

// ---------------------------------------------------------------------------
// Contraction iteration
// ---------------------------------------------------------------------------

struct ContractionResult {
  RealFem u;
  std::vector<double> update_norms;  // W^{1,2} seminorms of successive updates
  bool converged = false;
  int iterations = 0;
};

/// Fixed-point iteration u_{k+1} = P^{-1}(load - M u_k) where P is the
/// principal part and M the remainder, both with homogeneous Dirichlet
/// conditions.  Stops when the update seminorm falls below rel_tol times the
/// first update; throws NoContractionError after three consecutive growths.
inline ContractionResult contraction_iterate(const WeakOperator& principal,
                                             const WeakOperator& remainder, const RhsData& rhs,
                                             double rel_tol = 1e-10, int max_iterations = 200) {
  if (principal.mesh != remainder.mesh)
    throw std::invalid_argument("contraction_iterate: operands on different meshes");
  if (principal.kind != OperatorKind::principal || remainder.kind != OperatorKind::remainder)
    throw std::invalid_argument("contraction_iterate: expected principal and remainder parts");
  const Mesh& m = *principal.mesh;
  const auto& interior = m.interior_vertices();
  const int n = static_cast<int>(interior.size());

  const Eigen::SparseMatrix<double> P = principal.interior_matrix();
  const Eigen::SparseMatrix<double> M = remainder.interior_matrix();
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu(P);
  if (lu.info() != Eigen::Success)
    throw SolverError("contraction_iterate: principal part factorization failed");

  Eigen::VectorXd full_load = assemble_load(m, rhs);
  Eigen::VectorXd load(n);
  for (int k = 0; k < n; ++k) load[k] = full_load[interior[k]];

  auto seminorm = [&](const Eigen::VectorXd& v) {
    Eigen::VectorXd all = Eigen::VectorXd::Zero(m.vertex_count());
    for (int k = 0; k < n; ++k) all[interior[k]] = v[k];
    return h1_seminorm(RealFem(principal.mesh, std::move(all)));
  };

  ContractionResult result;
  Eigen::VectorXd u = Eigen::VectorXd::Zero(n);
  int growths = 0;
  for (int it = 0; it < max_iterations; ++it) {
    Eigen::VectorXd next = lu.solve(load - M * u);
    const double change = seminorm(next - u);
    result.update_norms.push_back(change);
    u = next;
    ++result.iterations;
    const std::size_t s = result.update_norms.size();
    if (s >= 2 && change > result.update_norms[s - 2]) {
      if (++growths >= 3)
        throw NoContractionError(
            "contraction_iterate: update norms grew three times in a row "
            "(no contraction at this radius)");
    } else {
      growths = 0;
    }
    if (change <= rel_tol * std::max(result.update_norms.front(), 1e-300)) {
      result.converged = true;
      break;
    }
  }
  Eigen::VectorXd all = Eigen::VectorXd::Zero(m.vertex_count());
  for (int k = 0; k < n; ++k) all[interior[k]] = u[k];
  result.u = RealFem(principal.mesh, std::move(all));
  return result;
}

/// Estimate the operator norm of P^{-1} M on the interior space in the
/// W^{1,2}-seminorm inner product, by power iteration on the generalized
/// symmetric eigenproblem (T^t S T) x = lambda S x with T = P^{-1} M.
inline double estimate_contraction_norm(const WeakOperator& principal,
                                        const WeakOperator& remainder, int probes = 3,
                                        int iterations = 30, std::uint64_t seed = 1) {
  if (principal.mesh != remainder.mesh)
    throw std::invalid_argument("estimate_contraction_norm: operands on different meshes");
  const Mesh& m = *principal.mesh;
  const int n = static_cast<int>(m.interior_vertices().size());

  const Eigen::SparseMatrix<double> P = principal.interior_matrix();
  const Eigen::SparseMatrix<double> M = remainder.interior_matrix();
  // S: identity-coefficient stiffness = the seminorm Gram matrix.
  CoefficientSet ident = builtin("identity");
  const Eigen::SparseMatrix<double> S =
      assemble(principal.mesh, ident, OperatorKind::principal).interior_matrix();

  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu(P);
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lut(Eigen::SparseMatrix<double>(P.transpose()));
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> slu(S);
  if (lu.info() != Eigen::Success || lut.info() != Eigen::Success ||
      slu.info() != Eigen::Success)
    throw SolverError("estimate_contraction_norm: factorization failed");

  auto apply = [&](const Eigen::VectorXd& x) {
    // S^-1 T^t S T x with T = P^-1 M.
    const Eigen::VectorXd tx = lu.solve(M * x);
    const Eigen::VectorXd y = M.transpose() * lut.solve(S * tx);
    return slu.solve(y).eval();
  };

  Rng rng(seed);
  double best = 0.0;
  for (int pr = 0; pr < probes; ++pr) {
    Eigen::VectorXd x(n);
    for (int i = 0; i < n; ++i) x[i] = rng.gaussian();
    double lambda = 0.0;
    for (int it = 0; it < iterations; ++it) {
      const double s_norm = std::sqrt(std::max(x.dot(Eigen::VectorXd(S * x)), 1e-300));
      x /= s_norm;
      const Eigen::VectorXd y = apply(x);
      lambda = x.dot(Eigen::VectorXd(S * y));
      x = y;
    }
    best = std::max(best, std::sqrt(std::max(lambda, 0.0)));
  }
  return best;
}

// ---------------------------------------------------------------------------
// Divergence lift and gradient ratio
// ---------------------------------------------------------------------------

/// Elementwise-constant vector field G = grad N where N solves the Neumann-
/// free Dirichlet problem  int grad N . grad phi = int f phi, so that
/// -div G = -f weakly against interior test functions.
struct ElementField {
  MeshPtr mesh;
  std::vector<Vec2> per_element;

  Vec2 operator()(const Vec2& x) const {
    auto loc = mesh->locate(x);
    return loc ? per_element[loc->triangle] : Vec2::Zero().eval();
  }
};

inline ElementField divergence_lift(const ScalarField& f, MeshPtr mesh) {
  CoefficientSet ident = builtin("identity");
  WeakOperator op = assemble(mesh, ident, OperatorKind::principal);
  RhsData rhs;
  rhs.f = f;
  RealFem n = solve_dirichlet(op, rhs);
  ElementField g;
  g.mesh = mesh;
  g.per_element.resize(mesh->triangle_count());
  for (int t = 0; t < mesh->triangle_count(); ++t) g.per_element[t] = n.gradient(t);
  return g;
}

/// Empirical interior-estimate constant
///   ||grad u||_{L^p(B_rho)} / ( r^{2(1/p-1)} ||u||_{L^2(B_r)} )
/// for rho < r, both balls concentric with the mesh.  The coefficient set
/// identifies the operator u is supposed to solve; the quotient itself only
/// needs u.
inline double interior_gradient_ratio(const RealFem& u, const CoefficientSet& coeffs, double rho,
                                      double r, double p) {
  (void)coeffs;
  if (!(rho < r)) throw std::invalid_argument("interior_gradient_ratio: need rho < r");
  if (!(p >= 1.0)) throw std::invalid_argument("interior_gradient_ratio: need p >= 1");
  const Mesh& m = *u.mesh();
  const double den = lp_norm(u, 2.0, Disk{m.center(), r});
  if (den < 1e-300)
    throw DegenerateInputError("interior_gradient_ratio: u vanishes on the larger ball");
  return grad_lp_norm(u, p, Disk{m.center(), rho}) / (std::pow(r, 2.0 * (1.0 / p - 1.0)) * den);
}

}  // namespace uc2d
