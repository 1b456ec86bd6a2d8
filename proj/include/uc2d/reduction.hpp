#pragma once

#include <cfloat>

#include "operators.hpp"

namespace uc2d {

/// Exponent and adaptive-radius parameters for the multiplier construction.
/// p and t, when not given explicitly, are resolved against the coefficient
/// exponent q so that 2 < t < p < q always holds.
struct ReductionParameters {
  std::optional<double> p;  // gradient-certificate exponent, default min(4, 2 + 3(q-2)/4)
  std::optional<double> t;  // exponent tracked for the second multiplier, default midpoint
  double R_target = 0.5;
  int max_halvings = 8;
  double bound_tolerance = 0.02;

  double resolved_p(double q) const {
    const double v = p ? *p : std::min(4.0, 2.0 + 0.75 * (q - 2.0));
    if (!(v > 2.0 && v < q))
      throw std::invalid_argument("reduction: exponent p must satisfy 2 < p < q");
    return v;
  }
  double resolved_t(double q) const {
    const double pp = resolved_p(q);
    const double v = t ? *t : 2.0 + 0.5 * (pp - 2.0);
    if (!(v > 2.0 && v < pp))
      throw std::invalid_argument("reduction: exponent t must satisfy 2 < t < p");
    return v;
  }
};

struct MultiplierOutcome {
  RealFem m;
  double R_used = 0.0;
  int halvings = 0;
  double sup_z = 0.0;    // accepted sup |m - 1|
  double grad_lp = 0.0;  // ||grad m||_{L^p} certificate (reported, not enforced)
  double min_m = 0.0, max_m = 0.0;
};

/// Positive multiplier m = z + 1 with L m = 0 for the GIVEN coefficient set:
/// z solves the homogeneous-Dirichlet problem with load (F, f) = (-B, -d).
/// The caller decides which drift enters (the first multiplier uses the
/// B-zeroed set, the second the full transformed set).  The radius is halved
/// until sup|z| <= 1/2 + bound_tolerance, up to max_halvings times; the
/// gradient norm is reported as a certificate only.
inline MultiplierOutcome build_multiplier(const CoefficientSet& coeffs, const Disk& disk,
                                          const ReductionParameters& params, int resolution) {
  const double p = params.resolved_p(coeffs.q);
  double best_sup = std::numeric_limits<double>::infinity();
  for (int halvings = 0; halvings <= params.max_halvings; ++halvings) {
    const double R = disk.radius * std::pow(0.5, halvings);
    MeshPtr mesh = build_disk_mesh(disk.center, R, resolution);
    WeakOperator op = assemble(mesh, coeffs, OperatorKind::full);
    RhsData rhs;
    rhs.F = [B = coeffs.B](const Vec2& x) { return Vec2(-B(x)); };
    rhs.f = [d = coeffs.d](const Vec2& x) { return -d(x); };
    RealFem z = solve_dirichlet(op, rhs);
    const double sup_z = z.values().cwiseAbs().maxCoeff();
    best_sup = std::min(best_sup, sup_z);
    if (sup_z <= 0.5 + params.bound_tolerance) {
      MultiplierOutcome out;
      out.R_used = R;
      out.halvings = halvings;
      out.sup_z = sup_z;
      out.grad_lp = grad_lp_norm(z, p);
      out.m = RealFem(mesh, (z.values().array() + 1.0).matrix());
      out.min_m = out.m.values().minCoeff();
      out.max_m = out.m.values().maxCoeff();
      return out;
    }
  }
  throw RadiusExhaustedError(
      "build_multiplier: sup|z| still above 1/2 + tolerance after all radius halvings", best_sup);
}

namespace detail {

inline void require_multiplier_bounds(const RealFem& m, double tol, const char* who) {
  const double lo = m.values().minCoeff(), hi = m.values().maxCoeff();
  if (lo < 0.5 - tol || hi > 2.0 + tol)
    throw InvalidMultiplierError(std::string(who) + ": multiplier outside [1/2, 2] bounds");
}

}  // namespace detail

/// Transformed set (A, B, C, d) -> (m A^T, mC - A grad m, mB, 0) on the disk
/// of m.  grad m enters through the area-weighted vertex projection so the
/// fields stay evaluable at arbitrary quadrature points.
inline CoefficientSet tilde_coefficients(const CoefficientSet& coeffs, const RealFem& m,
                                         double p_exponent, double bound_tolerance = 0.02) {
  detail::require_multiplier_bounds(m, bound_tolerance, "tilde_coefficients");
  auto grads = std::make_shared<std::array<RealFem, 2>>(vertex_gradient(m));
  auto mm = std::make_shared<RealFem>(m);
  CoefficientSet out;
  out.q = p_exponent;
  out.name = coeffs.name + ":tilde";
  out.A = [A = coeffs.A, mm](const Vec2& x) { return Mat2(mm->evaluate_clamped(x) * A(x).transpose()); };
  out.B = [A = coeffs.A, C = coeffs.C, mm, grads](const Vec2& x) {
    const Vec2 gm((*grads)[0].evaluate_clamped(x), (*grads)[1].evaluate_clamped(x));
    return Vec2(mm->evaluate_clamped(x) * C(x) - A(x) * gm);
  };
  out.C = [B = coeffs.B, mm](const Vec2& x) { return Vec2(mm->evaluate_clamped(x) * B(x)); };
  out.d = [](const Vec2&) { return 0.0; };
  return out;
}

struct HatFields {
  MatField A_hat;
  VecField B_hat;
};

/// Hat fields A^ = m w A and B^ = wA grad m + m w B - m A^T grad w - m w C.
/// Ellipticity of A^ is verified against the 1/(4K) floor at the quadrature
/// points of w's mesh.
inline HatFields hat_coefficients(const CoefficientSet& coeffs, const RealFem& m,
                                  const RealFem& w, double bound_tolerance = 0.02) {
  detail::require_multiplier_bounds(m, bound_tolerance, "hat_coefficients(m)");
  detail::require_multiplier_bounds(w, bound_tolerance, "hat_coefficients(w)");
  auto gm = std::make_shared<std::array<RealFem, 2>>(vertex_gradient(m));
  auto gw = std::make_shared<std::array<RealFem, 2>>(vertex_gradient(w));
  auto mp = std::make_shared<RealFem>(m);
  auto wp = std::make_shared<RealFem>(w);
  HatFields out;
  out.A_hat = [A = coeffs.A, mp, wp](const Vec2& x) {
    return Mat2(mp->evaluate_clamped(x) * wp->evaluate_clamped(x) * A(x));
  };
  out.B_hat = [A = coeffs.A, B = coeffs.B, C = coeffs.C, mp, wp, gm, gw](const Vec2& x) {
    const double mv = mp->evaluate_clamped(x), wv = wp->evaluate_clamped(x);
    const Vec2 dm((*gm)[0].evaluate_clamped(x), (*gm)[1].evaluate_clamped(x));
    const Vec2 dw((*gw)[0].evaluate_clamped(x), (*gw)[1].evaluate_clamped(x));
    const Mat2 a = A(x);
    return Vec2(wv * (a * dm) + mv * wv * B(x) - mv * (a.transpose() * dw) - mv * wv * C(x));
  };

  const Mesh& mesh = *w.mesh();
  const double K_base = check_ellipticity(coeffs.A, mesh);
  const double floor = 1.0 / (4.0 * K_base) - 1e-6;
  double worst = std::numeric_limits<double>::infinity();
  Vec2 worst_at = mesh.center();
  for (int t = 0; t < mesh.triangle_count(); ++t)
    for (const Vec2& x : mesh.quadrature_points(t)) {
      const double lo = sym_eigenvalues(out.A_hat(x)).first;
      if (lo < worst) {
        worst = lo;
        worst_at = x;
      }
    }
  if (worst < floor)
    throw NonEllipticError(
        "hat_coefficients: sym(A^) eigenvalue " + std::to_string(worst) +
            " below the 1/(4K) floor (gradient-projection artifact?)",
        worst_at);
  return out;
}

struct ReductionDiagnostics {
  double K_est = 0.0;       // ellipticity constant of A on the ambient disk
  double kappa_est = 0.0;   // lower-order norm of the input set
  double K_tilde = 0.0;     // ellipticity constant of A~ on B_{R1}
  double K_hat = 0.0;       // ellipticity constant of A^ on B_{R2}
  double tilde_lower_order = 0.0;  // ||B~||_{L^p} + ||C~||_{L^p} on B_{R1}
  double hat_b_lt = 0.0;           // ||B^||_{L^t} on B_{R2}
  double p = 0.0, t = 0.0;
  MultiplierOutcome m_stage, w_stage;
};

struct ReductionResult {
  RealFem m;  // on B_{R1}
  RealFem w;  // on B_{R2}
  double R1 = 0.0, R2 = 0.0;
  CoefficientSet tilde;  // on B_{R1}, zero d-term, q = p
  MatField A_hat;        // on B_{R2}
  VecField B_hat;
  ReductionDiagnostics diagnostics;
};

/// Full pipeline: first multiplier for the B-zeroed set on B_{R1}, the tilde
/// transform, second multiplier for the tilde set on B_{R2}, hat fields, and
/// all bound certificates.
inline ReductionResult reduce(const CoefficientSet& coeffs, const Disk& disk,
                              const ReductionParameters& params, int resolution) {
  if (!(params.R_target > 0.0) || params.R_target > disk.radius)
    throw std::invalid_argument("reduce: need 0 < R_target <= disk radius");
  const double p = params.resolved_p(coeffs.q);
  const double t = params.resolved_t(coeffs.q);

  ReductionResult out;
  out.diagnostics.p = p;
  out.diagnostics.t = t;
  {
    MeshPtr ambient = build_disk_mesh(disk.center, disk.radius, resolution);
    out.diagnostics.K_est = check_ellipticity(coeffs.A, *ambient);
    out.diagnostics.kappa_est = lower_order_norms(coeffs, *ambient).kappa;
    validate_declared(coeffs, out.diagnostics.K_est, out.diagnostics.kappa_est);
  }

  try {
    out.diagnostics.m_stage =
        build_multiplier(coeffs.with_zero_B(), Disk{disk.center, params.R_target}, params,
                         resolution);
  } catch (const RadiusExhaustedError& e) {
    throw RadiusExhaustedError("first multiplier (m): " + std::string(e.what()), e.best_sup_z);
  }
  out.m = out.diagnostics.m_stage.m;
  out.R1 = out.diagnostics.m_stage.R_used;

  out.tilde = tilde_coefficients(coeffs, out.m, p, params.bound_tolerance);
  out.diagnostics.K_tilde = check_ellipticity(out.tilde.A, *out.m.mesh());
  out.diagnostics.tilde_lower_order = lower_order_norms(out.tilde, *out.m.mesh()).bc_lq;

  ReductionParameters wparams = params;
  wparams.R_target = out.R1;
  try {
    out.diagnostics.w_stage =
        build_multiplier(out.tilde, Disk{disk.center, out.R1}, wparams, resolution);
  } catch (const RadiusExhaustedError& e) {
    throw RadiusExhaustedError("second multiplier (w): " + std::string(e.what()), e.best_sup_z);
  }
  out.w = out.diagnostics.w_stage.m;
  out.R2 = out.diagnostics.w_stage.R_used;

  HatFields hat = hat_coefficients(coeffs, out.m, out.w, params.bound_tolerance);
  out.A_hat = hat.A_hat;
  out.B_hat = hat.B_hat;
  out.diagnostics.K_hat = check_ellipticity(out.A_hat, *out.w.mesh());
  {
    CoefficientSet hc;
    hc.q = 2.0 * t;  // so bc_lq below is the plain L^t norm of |B^|
    hc.A = out.A_hat;
    hc.B = out.B_hat;
    hc.C = [](const Vec2&) { return Vec2::Zero().eval(); };
    hc.d = [](const Vec2&) { return 0.0; };
    CoefficientSet tmp = hc;
    tmp.q = t;
    out.diagnostics.hat_b_lt = lower_order_norms(tmp, *out.w.mesh()).bc_lq;
  }
  return out;
}

/// Hat-side coefficients packaged for assembly of the pure-divergence
/// operator on B_{R2}.
inline CoefficientSet hat_coefficient_set(const ReductionResult& r, double t_exponent) {
  CoefficientSet c;
  c.q = 2.0 * t_exponent;  // only the metadata exponent; d, C vanish
  c.name = "hat";
  c.A = r.A_hat;
  c.B = r.B_hat;
  c.C = [](const Vec2&) { return Vec2::Zero().eval(); };
  c.d = [](const Vec2&) { return 0.0; };
  return c;
}

// ---------------------------------------------------------------------------
// Factorization verification
// ---------------------------------------------------------------------------

namespace detail {

/// Tensor-product polynomial of degree <= 2 per variable in coordinates
/// scaled to the verification disk, with analytic gradient.
struct RandomPoly {
  Eigen::Matrix3d c;
  Vec2 center;
  double scale = 1.0;

  static RandomPoly draw(Rng& rng, const Disk& disk) {
    RandomPoly p;
    p.center = disk.center;
    p.scale = 1.0 / disk.radius;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) p.c(i, j) = rng.uniform(-1.0, 1.0);
    return p;
  }

  double value(const Vec2& x) const {
    const double u = (x.x() - center.x()) * scale, v = (x.y() - center.y()) * scale;
    double pu[3] = {1.0, u, u * u}, pv[3] = {1.0, v, v * v};
    double s = 0.0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) s += c(i, j) * pu[i] * pv[j];
    return s;
  }

  Vec2 gradient(const Vec2& x) const {
    const double u = (x.x() - center.x()) * scale, v = (x.y() - center.y()) * scale;
    double pu[3] = {1.0, u, u * u}, pv[3] = {1.0, v, v * v};
    double du[3] = {0.0, 1.0, 2.0 * u}, dv[3] = {0.0, 1.0, 2.0 * v};
    Vec2 g = Vec2::Zero();
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        g.x() += c(i, j) * du[i] * pv[j];
        g.y() += c(i, j) * pu[i] * dv[j];
      }
    return g * scale;
  }
};

/// Polynomial times the boundary cutoff (1 - |x~|^2)^2, supported in the disk.
struct CutoffPoly {
  RandomPoly poly;
  Disk disk;

  double cut(const Vec2& x) const {
    const double r2 = (x - disk.center).squaredNorm() / (disk.radius * disk.radius);
    const double s = 1.0 - r2;
    return s > 0.0 ? s * s : 0.0;
  }
  double value(const Vec2& x) const { return poly.value(x) * cut(x); }
  Vec2 gradient(const Vec2& x) const {
    const double r2 = (x - disk.center).squaredNorm() / (disk.radius * disk.radius);
    const double s = 1.0 - r2;
    if (s <= 0.0) return Vec2::Zero();
    const Vec2 dcut = -4.0 * s / (disk.radius * disk.radius) * (x - disk.center);
    return poly.gradient(x) * s * s + poly.value(x) * dcut;
  }
};

}  // namespace detail

/// Max over `trials` random smooth pairs (v, psi) of the gap between
///   left  = int A^ grad v . grad psi + v B^ . grad psi
///   right = int A grad(mv) . grad(w psi) + (mv) B . grad(w psi)
///           + (w psi) C . grad(mv) + d (mv)(w psi)
/// evaluated with the mesh quadrature of B_{R2}; the true elementwise
/// gradients of m and w are used on the right.  The gap is normalized by the
/// integrated magnitude of the left-hand integrand rather than the signed
/// integral, which can cancel to near zero for unlucky pairs and would then
/// report pure quadrature noise.
inline double verify_factorization(const CoefficientSet& coeffs, const ReductionResult& result,
                                   int trials = 20, std::uint64_t seed = 1) {
  const Mesh& mesh = *result.w.mesh();
  const Disk disk{mesh.center(), mesh.radius()};
  Rng rng(seed);
  double worst = 0.0;
  for (int trial = 0; trial < trials; ++trial) {
    const detail::RandomPoly v = detail::RandomPoly::draw(rng, disk);
    const detail::CutoffPoly psi{detail::RandomPoly::draw(rng, disk), disk};
    double left = 0.0, right = 0.0, scale = 0.0;
    for (int t = 0; t < mesh.triangle_count(); ++t) {
      const double wq = mesh.triangle(t).area / 3.0;
      const Vec2 gw_t = result.w.gradient(t);
      for (const Vec2& x : mesh.quadrature_points(t)) {
        const double vv = v.value(x);
        const Vec2 gv = v.gradient(x);
        const double pv = psi.value(x);
        const Vec2 gp = psi.gradient(x);
        left += wq * ((result.A_hat(x) * gv).dot(gp) + vv * result.B_hat(x).dot(gp));
        scale += wq * ((result.A_hat(x) * gv).norm() * gp.norm() +
                       std::abs(vv) * result.B_hat(x).norm() * gp.norm());

        const auto mloc = result.m.mesh()->locate_clamped(x);
        const double mv = result.m.value_in(mloc.triangle, mloc.bary);
        const Vec2 gm = result.m.gradient(mloc.triangle).eval();
        // w lives on the integration mesh itself.
        const double wv = result.w.value_in(t, mesh.barycentric(t, x));
        const Vec2& gw = gw_t;

        const double mvv = mv * vv;
        const Vec2 g_mv = gm * vv + mv * gv;
        const double wpp = wv * pv;
        const Vec2 g_wp = gw * pv + wv * gp;
        right += wq * ((coeffs.A(x) * g_mv).dot(g_wp) + mvv * coeffs.B(x).dot(g_wp) +
                       wpp * coeffs.C(x).dot(g_mv) + coeffs.d(x) * mvv * wpp);
      }
    }
    worst = std::max(worst, std::abs(left - right) / (scale + DBL_EPSILON));
  }
  return worst;
}

}  // namespace uc2d
