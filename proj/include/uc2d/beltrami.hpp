#pragma once

#include "cauchy.hpp"
#include "operators.hpp"

namespace uc2d {

using ComplexField = std::function<Complex(const Vec2&)>;

// ---------------------------------------------------------------------------
// Dilatations
// ---------------------------------------------------------------------------
//
// The first-order system grad(vt) = J(A^ grad v + v B^), written for
// f = v + i*vt with p = f_z and q = f_zbar, becomes three linear relations
// obtained by matching the coefficients of v_x, v_y and v:
//
//   p = [ (1+a11) v_x + a12 v_y + v b1 ] / 2 - i [ a21 v_x + (1+a22) v_y + v b2 ] / 2
//   q = [ (1-a11) v_x - a12 v_y - v b1 ] / 2 + i [ -a21 v_x + (1-a22) v_y - v b2 ] / 2
//
// Requiring q = mu p + nu conj(p) + alpha f + beta conj(f) identically in
// (v_x, v_y, v, vt) forces alpha = beta (the vt coefficient must cancel,
// leaving alpha (f + conj f) = 2 alpha v) and yields a 2x2 complex system for
// (mu, nu) with determinant 2i det(I + A^), which is nonzero whenever sym(A^)
// is positive definite.  Correctness is pinned by the pointwise residual
// tests, not by this comment.

struct Dilatations {
  Complex mu, nu;
};

inline Dilatations dilatations(const Mat2& a) {
  const Complex X(1.0 - a(0, 0), -a(1, 0));
  const Complex Y(-a(0, 1), 1.0 - a(1, 1));
  const Complex Xp(1.0 + a(0, 0), -a(1, 0));
  const Complex Xq(1.0 + a(0, 0), a(1, 0));
  const Complex Yp(a(0, 1), -(1.0 + a(1, 1)));
  const Complex Yq(a(0, 1), 1.0 + a(1, 1));
  const Complex det = Xp * Yq - Xq * Yp;
  if (std::abs(det) < 1e-14)
    throw Error("dilatations: degenerate system (sym(A) not positive definite?)");
  return {(X * Yq - Xq * Y) / det, (Xp * Y - X * Yp) / det};
}

/// The lower-order coefficients alpha = beta completing
/// f_zbar = mu f_z + nu conj(f_z) + alpha f + beta conj(f).
inline std::pair<Complex, Complex> lower_order_coefficients(const Mat2& a, const Vec2& b) {
  const Dilatations d = dilatations(a);
  const Complex bp(b.x(), b.y());   // b1 + i b2
  const Complex bm(b.x(), -b.y());  // b1 - i b2
  const Complex alpha = -(bp + d.mu * bm + d.nu * bp) / 4.0;
  return {alpha, alpha};
}

// ---------------------------------------------------------------------------
// Wirtinger derivatives
// ---------------------------------------------------------------------------

struct WirtingerDerivatives {
  std::vector<Complex> z;     // g_z per element
  std::vector<Complex> zbar;  // g_zbar per element
};

inline WirtingerDerivatives wirtinger(const ComplexFem& g) {
  const Mesh& mesh = *g.mesh();
  WirtingerDerivatives out;
  out.z.resize(mesh.triangle_count());
  out.zbar.resize(mesh.triangle_count());
  for (int t = 0; t < mesh.triangle_count(); ++t) {
    const auto grad = g.gradient(t);
    out.z[t] = 0.5 * (grad[0] - Complex(0, 1) * grad[1]);
    out.zbar[t] = 0.5 * (grad[0] + Complex(0, 1) * grad[1]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stream function
// ---------------------------------------------------------------------------

struct StreamResult {
  RealFem tilde_v;
  double defect = 0.0;       // attained least-squares defect in L^2
  double target_norm = 0.0;  // L^2 norm of the rotated flux field
};

/// Least-squares potential for the rotated flux J(A^ grad v + v B^):
/// minimizes || grad vt - target ||_{L^2} over P1 functions (a Poisson solve
/// with natural boundary conditions, pinned at the vertex nearest x0), then
/// shifts so vt(x0) = 0.
inline StreamResult stream_function(const RealFem& v, const MatField& A_hat,
                                    const VecField& B_hat, const Vec2& x0) {
  const MeshPtr mesh_ptr = v.mesh();
  const Mesh& mesh = *mesh_ptr;
  const Mat2 J = rotation90();

  auto target = [&](int t, const Vec2& x) {
    const Vec2 gv = v.gradient(t);
    const double vv = v.value_in(t, mesh.barycentric(t, x));
    return Vec2(J * (A_hat(x) * gv + vv * B_hat(x)));
  };

  CoefficientSet ident = builtin("identity");
  const Eigen::SparseMatrix<double>& S = assemble(mesh_ptr, ident, OperatorKind::principal).matrix;

  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(mesh.vertex_count());
  for (int t = 0; t < mesh.triangle_count(); ++t) {
    const auto& tr = mesh.triangle(t);
    const double w = tr.area / 3.0;
    for (const Vec2& x : mesh.quadrature_points(t)) {
      const Vec2 tau = target(t, x);
      for (int k = 0; k < 3; ++k) rhs[tr.v[k]] += w * tau.dot(tr.grad[k]);
    }
  }

  // Pin the vertex nearest x0 to fix the constant mode.
  int pin = 0;
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < mesh.vertex_count(); ++i) {
    const double d = (mesh.vertex(i) - x0).squaredNorm();
    if (d < best) {
      best = d;
      pin = i;
    }
  }
  std::vector<Eigen::Triplet<double>> trip;
  for (int c = 0; c < S.outerSize(); ++c)
    for (Eigen::SparseMatrix<double>::InnerIterator it(S, c); it; ++it)
      if (it.row() != pin && it.col() != pin)
        trip.emplace_back(it.row(), it.col(), it.value());
  trip.emplace_back(pin, pin, 1.0);
  Eigen::SparseMatrix<double> Sp(mesh.vertex_count(), mesh.vertex_count());
  Sp.setFromTriplets(trip.begin(), trip.end());
  rhs[pin] = 0.0;

  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(Sp);
  if (ldlt.info() != Eigen::Success)
    throw SolverError("stream_function: factorization of the pinned stiffness failed");
  Eigen::VectorXd sol = ldlt.solve(rhs);

  RealFem vt(mesh_ptr, std::move(sol));
  StreamResult out;
  double defect2 = 0.0, norm2 = 0.0;
  for (int t = 0; t < mesh.triangle_count(); ++t) {
    const double w = mesh.triangle(t).area / 3.0;
    const Vec2 g = vt.gradient(t);
    for (const Vec2& x : mesh.quadrature_points(t)) {
      const Vec2 tau = target(t, x);
      defect2 += w * (g - tau).squaredNorm();
      norm2 += w * tau.squaredNorm();
    }
  }
  out.defect = std::sqrt(defect2);
  out.target_norm = std::sqrt(norm2);
  // A target at rounding scale relative to v (e.g. the elementwise gradient
  // of a constant) carries no curl information; only meaningfully sized
  // fluxes are gated.
  const double vscale = v.values().cwiseAbs().maxCoeff();
  if (out.target_norm > 1e-10 * std::max(vscale, 1e-300) &&
      out.defect > 0.1 * out.target_norm)
    throw NotCurlFreeError(
        "stream_function: least-squares defect above 10% of the flux norm "
        "(input is not a discrete solution)");

  // Normalize vt(x0) = 0 by nodal subtraction.
  const double shift = vt.evaluate_clamped(x0);
  vt.values().array() -= shift;
  out.tilde_v = std::move(vt);
  return out;
}

// ---------------------------------------------------------------------------
// BeltramiData and the residual oracle
// ---------------------------------------------------------------------------

struct BeltramiData {
  ComplexFem f;  // v + i vt
  ComplexField mu, nu, alpha, beta;
  double k_bound = 0.0;  // max over quadrature points of |mu| + |nu|
  std::optional<ComplexFem> s;
  Vec2 x0{0.0, 0.0};
  double stream_defect = 0.0, stream_target_norm = 0.0;
};

/// Assemble the first-order data for a discrete solution v of the
/// pure-divergence equation.
inline BeltramiData make_beltrami_data(const RealFem& v, const MatField& A_hat,
                                       const VecField& B_hat, const Vec2& x0) {
  StreamResult stream = stream_function(v, A_hat, B_hat, x0);
  const MeshPtr mesh = v.mesh();
  Eigen::VectorXcd fv(mesh->vertex_count());
  for (int i = 0; i < mesh->vertex_count(); ++i)
    fv[i] = Complex(v[i], stream.tilde_v[i]);

  BeltramiData data;
  data.f = ComplexFem(mesh, std::move(fv));
  data.x0 = x0;
  data.stream_defect = stream.defect;
  data.stream_target_norm = stream.target_norm;
  data.mu = [A_hat](const Vec2& x) { return dilatations(A_hat(x)).mu; };
  data.nu = [A_hat](const Vec2& x) { return dilatations(A_hat(x)).nu; };
  data.alpha = [A_hat, B_hat](const Vec2& x) {
    return lower_order_coefficients(A_hat(x), B_hat(x)).first;
  };
  data.beta = data.alpha;

  double k = 0.0;
  for (int t = 0; t < mesh->triangle_count(); ++t)
    for (const Vec2& x : mesh->quadrature_points(t)) {
      const Dilatations d = dilatations(A_hat(x));
      k = std::max(k, std::abs(d.mu) + std::abs(d.nu));
    }
  data.k_bound = k;
  if (!(k < 1.0))
    throw Error("make_beltrami_data: |mu| + |nu| reached 1 (ellipticity lost)");
  return data;
}

/// Master correctness oracle:
/// || f_zbar - mu f_z - nu conj(f_z) - alpha f - beta conj(f) ||_{L^2}
/// divided by || |f_zbar| + |f| ||_{L^2}.
inline double beltrami_residual(const BeltramiData& data) {
  const Mesh& mesh = *data.f.mesh();
  const WirtingerDerivatives d = wirtinger(data.f);
  double num = 0.0, den = 0.0;
  for (int t = 0; t < mesh.triangle_count(); ++t) {
    const double w = mesh.triangle(t).area / 3.0;
    for (const Vec2& x : mesh.quadrature_points(t)) {
      const Complex fv = data.f.value_in(t, mesh.barycentric(t, x));
      const Complex r = d.zbar[t] - data.mu(x) * d.z[t] - data.nu(x) * std::conj(d.z[t]) -
                        data.alpha(x) * fv - data.beta(x) * std::conj(fv);
      num += w * std::norm(r);
      const double scale = std::abs(d.zbar[t]) + std::abs(fv);
      den += w * scale * scale;
    }
  }
  if (den < 1e-300) return 0.0;
  return std::sqrt(num / den);
}

// ---------------------------------------------------------------------------
// Similarity factor
// ---------------------------------------------------------------------------

struct SimilarityResult {
  ComplexFem s;         // similarity factor resampled onto the mesh
  ComplexFem divided;   // g = exp(-s) f
  double input_residual = 0.0;
  double divided_residual = 0.0;
  double dzbar_residual = 0.0;  // spectral certificate of s = P[gamma]
  double holder_ratio = 0.0;    // sampled |s(x)-s(y)| / |x-y|^(1/2)
  CauchyTransform transform;
};

/// Divide out the zeroth-order part of the Beltrami equation: s = P[gamma]
/// with gamma = alpha + beta conj(f)/f where |f| > zero_threshold (the
/// unimodular quotient is replaced by 1 on the near-zero set), extended by
/// zero outside the disk.  The divided field exp(-s) f is checked against
/// the dilatation-only equation.
inline SimilarityResult similarity_factor(const BeltramiData& data, double zero_threshold = -1.0,
                                          int grid = 256) {
  const Mesh& mesh = *data.f.mesh();
  const double fmax = data.f.values().cwiseAbs().maxCoeff();
  const double thr = zero_threshold > 0.0 ? zero_threshold : 1e-6 * fmax;

  FourierCell cell;
  cell.center = mesh.center();
  cell.side = 4.0 * mesh.radius();
  cell.n = grid;

  Eigen::MatrixXcd gamma(grid, grid);
  for (int i = 0; i < grid; ++i)
    for (int j = 0; j < grid; ++j) {
      const Vec2 x = cell.node(i, j);
      const auto loc = mesh.locate(x);
      if (!loc) {
        gamma(i, j) = 0.0;
        continue;
      }
      const Complex fv = data.f.value_in(loc->triangle, loc->bary);
      const Complex quot = std::abs(fv) > thr ? std::conj(fv) / fv : Complex(1.0, 0.0);
      gamma(i, j) = data.alpha(x) + data.beta(x) * quot;
    }

  SimilarityResult out;
  out.transform = cauchy_transform(gamma, cell);
  out.dzbar_residual = out.transform.dzbar_residual;

  Eigen::VectorXcd sv(mesh.vertex_count()), gv(mesh.vertex_count());
  for (int i = 0; i < mesh.vertex_count(); ++i) {
    sv[i] = out.transform.value(mesh.vertex(i));
    gv[i] = std::exp(-sv[i]) * data.f[i];
  }
  out.s = ComplexFem(data.f.mesh(), std::move(sv));
  out.divided = ComplexFem(data.f.mesh(), std::move(gv));

  out.input_residual = beltrami_residual(data);
  BeltramiData div;
  div.f = out.divided;
  div.mu = data.mu;
  div.nu = data.nu;
  div.alpha = [](const Vec2&) { return Complex(0.0, 0.0); };
  div.beta = div.alpha;
  div.k_bound = data.k_bound;
  div.x0 = data.x0;
  out.divided_residual = beltrami_residual(div);
  if (out.divided_residual > 10.0 * out.input_residual)
    throw SimilarityError(
        "similarity_factor: divided-field residual exceeds 10x the input residual");

  // Sampled modulus of continuity against a square-root scale.
  Rng rng(12345);
  const int nv = mesh.vertex_count();
  for (int k = 0; k < 200; ++k) {
    const int a = static_cast<int>(rng.uniform() * nv) % nv;
    const int b = static_cast<int>(rng.uniform() * nv) % nv;
    const double dist = (mesh.vertex(a) - mesh.vertex(b)).norm();
    if (dist < 1e-12) continue;
    out.holder_ratio =
        std::max(out.holder_ratio, std::abs(out.s[a] - out.s[b]) / std::sqrt(dist));
  }
  return out;
}

}  // namespace uc2d
