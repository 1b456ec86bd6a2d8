#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "uc2d/beltrami.hpp"
#include "uc2d/reduction.hpp"

namespace uc2d {

using Json = nlohmann::json;

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

/// Parsed experiment description.  See docs/config.md for the JSON schema.
struct ExperimentConfig {
  CoefficientSet coeffs;
  Json coefficient_spec;  // echoed into reports
  Disk disk{Vec2(0.0, 0.0), 1.0};
  std::vector<int> resolutions;   // strictly increasing
  std::vector<double> radii;      // strictly decreasing, inside the disk
  ReductionParameters reduction;
  std::string experiment;         // empty = decided by the CLI subcommand
  std::uint64_t seed = 1;

  // Solution recipe for the unique-continuation experiments.
  std::string solution_kind = "polynomial";  // polynomial | dirichlet | zero
  int polynomial_order = 2;
  Vec2 x0{0.0, 0.0};  // vanishing point; defaults to the disk center

  // Pipeline knobs.
  std::string probe = "quadratic";  // boundary data: quadratic | affine
  int fft_grid = 256;               // similarity transform grid (power of two)
  int raster_dump = 64;             // beltrami raster resolution, 0 = off
};

namespace detail {

inline std::string fmt_double(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline void reject_unknown_keys(const Json& j, std::initializer_list<const char*> known,
                                const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known)
      if (it.key() == k) ok = true;
    if (!ok) throw std::invalid_argument("config: unknown key '" + it.key() + "' in " + where);
  }
}

inline Vec2 parse_vec2(const Json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
    throw std::invalid_argument("config: " + where + " must be a [x, y] pair");
  return Vec2(j[0].get<double>(), j[1].get<double>());
}

inline const std::vector<std::string>& experiment_kinds() {
  static const std::vector<std::string> kinds = {
      "pipeline", "contraction_scaling", "doubling", "three_spheres", "vanishing_order"};
  return kinds;
}

}  // namespace detail

/// Parse and validate a config document.  Throws std::invalid_argument on
/// malformed input; file-level JSON errors surface as nlohmann exceptions.
inline ExperimentConfig parse_config(const Json& j) {
  if (!j.is_object()) throw std::invalid_argument("config: top level must be an object");
  detail::reject_unknown_keys(j,
                              {"coefficients", "disk", "resolutions", "radii", "reduction",
                               "experiment", "seed", "solution", "probe", "fft_grid",
                               "raster_dump"},
                              "top level");
  ExperimentConfig cfg;

  if (!j.contains("coefficients") || !j["coefficients"].is_object())
    throw std::invalid_argument("config: missing 'coefficients' object");
  const Json& cj = j["coefficients"];
  detail::reject_unknown_keys(cj, {"builtin", "params", "raster", "q"}, "coefficients");
  if (cj.contains("builtin") == cj.contains("raster"))
    throw std::invalid_argument("config: coefficients need exactly one of 'builtin' or 'raster'");
  if (cj.contains("builtin")) {
    ParamMap params;
    if (cj.contains("params")) {
      if (!cj["params"].is_object())
        throw std::invalid_argument("config: coefficients.params must be an object");
      for (auto it = cj["params"].begin(); it != cj["params"].end(); ++it) {
        if (!it.value().is_number())
          throw std::invalid_argument("config: coefficient parameter '" + it.key() +
                                      "' must be a number");
        params[it.key()] = it.value().get<double>();
      }
    }
    cfg.coeffs = builtin(cj["builtin"].get<std::string>(), params);
  } else {
    const double q = cj.contains("q") ? cj["q"].get<double>() : 4.0;
    if (!(q > 2.0)) throw std::invalid_argument("config: coefficients.q must exceed 2");
    cfg.coeffs = raster_coefficients(cj["raster"].get<std::string>(), q);
  }
  cfg.coefficient_spec = cj;

  if (j.contains("disk")) {
    const Json& dj = j["disk"];
    detail::reject_unknown_keys(dj, {"center", "radius"}, "disk");
    if (dj.contains("center")) cfg.disk.center = detail::parse_vec2(dj["center"], "disk.center");
    if (dj.contains("radius")) cfg.disk.radius = dj["radius"].get<double>();
    if (!(cfg.disk.radius > 0.0)) throw std::invalid_argument("config: disk.radius must be > 0");
  }
  cfg.x0 = cfg.disk.center;

  if (!j.contains("resolutions") || !j["resolutions"].is_array() || j["resolutions"].empty())
    throw std::invalid_argument("config: missing nonempty 'resolutions' list");
  for (const Json& rj : j["resolutions"]) {
    if (!rj.is_number_integer() || rj.get<int>() < 8)
      throw std::invalid_argument("config: resolutions must be integers >= 8");
    cfg.resolutions.push_back(rj.get<int>());
  }
  for (std::size_t i = 1; i < cfg.resolutions.size(); ++i)
    if (cfg.resolutions[i] <= cfg.resolutions[i - 1])
      throw std::invalid_argument("config: resolutions must be strictly increasing");

  if (j.contains("radii")) {
    if (!j["radii"].is_array())
      throw std::invalid_argument("config: radii must be a list");
    for (const Json& rj : j["radii"]) cfg.radii.push_back(rj.get<double>());
    for (std::size_t i = 0; i < cfg.radii.size(); ++i) {
      if (!(cfg.radii[i] > 0.0) || !(cfg.radii[i] < cfg.disk.radius))
        throw std::invalid_argument("config: radii must lie strictly inside the disk");
      if (i > 0 && !(cfg.radii[i] < cfg.radii[i - 1]))
        throw std::invalid_argument("config: radii must be strictly decreasing");
    }
  }

  if (j.contains("reduction")) {
    const Json& rj = j["reduction"];
    detail::reject_unknown_keys(rj, {"R_target", "p", "t", "max_halvings", "bound_tolerance"},
                                "reduction");
    if (rj.contains("R_target")) cfg.reduction.R_target = rj["R_target"].get<double>();
    if (rj.contains("p")) cfg.reduction.p = rj["p"].get<double>();
    if (rj.contains("t")) cfg.reduction.t = rj["t"].get<double>();
    if (rj.contains("max_halvings")) cfg.reduction.max_halvings = rj["max_halvings"].get<int>();
    if (rj.contains("bound_tolerance"))
      cfg.reduction.bound_tolerance = rj["bound_tolerance"].get<double>();
    if (cfg.reduction.max_halvings < 0)
      throw std::invalid_argument("config: reduction.max_halvings must be >= 0");
    if (!(cfg.reduction.bound_tolerance >= 0.0))
      throw std::invalid_argument("config: reduction.bound_tolerance must be >= 0");
  }

  if (j.contains("experiment")) {
    cfg.experiment = j["experiment"].get<std::string>();
    const auto& kinds = detail::experiment_kinds();
    if (std::find(kinds.begin(), kinds.end(), cfg.experiment) == kinds.end())
      throw std::invalid_argument("config: unknown experiment '" + cfg.experiment + "'");
  }

  if (j.contains("seed")) {
    if (!j["seed"].is_number_integer() || j["seed"].get<std::int64_t>() < 0)
      throw std::invalid_argument("config: seed must be a nonnegative integer");
    cfg.seed = j["seed"].get<std::uint64_t>();
  }

  if (j.contains("solution")) {
    const Json& sj = j["solution"];
    detail::reject_unknown_keys(sj, {"kind", "order", "x0"}, "solution");
    if (!sj.contains("kind")) throw std::invalid_argument("config: solution needs a 'kind'");
    cfg.solution_kind = sj["kind"].get<std::string>();
    if (cfg.solution_kind != "polynomial" && cfg.solution_kind != "dirichlet" &&
        cfg.solution_kind != "zero")
      throw std::invalid_argument("config: solution.kind must be polynomial, dirichlet or zero");
    if (sj.contains("order")) {
      if (!sj["order"].is_number_integer() || sj["order"].get<int>() < 0)
        throw std::invalid_argument("config: solution.order must be a nonnegative integer");
      cfg.polynomial_order = sj["order"].get<int>();
    }
    if (sj.contains("x0")) cfg.x0 = detail::parse_vec2(sj["x0"], "solution.x0");
    if ((cfg.x0 - cfg.disk.center).norm() >= cfg.disk.radius)
      throw std::invalid_argument("config: solution.x0 must lie inside the disk");
  }

  if (j.contains("probe")) {
    cfg.probe = j["probe"].get<std::string>();
    if (cfg.probe != "quadratic" && cfg.probe != "affine")
      throw std::invalid_argument("config: probe must be 'quadratic' or 'affine'");
  }

  if (j.contains("fft_grid")) {
    cfg.fft_grid = j["fft_grid"].get<int>();
    if (cfg.fft_grid < 4 || (cfg.fft_grid & (cfg.fft_grid - 1)) != 0)
      throw std::invalid_argument("config: fft_grid must be a power of two >= 4");
  }

  if (j.contains("raster_dump")) {
    cfg.raster_dump = j["raster_dump"].get<int>();
    if (cfg.raster_dump != 0 && cfg.raster_dump < 2)
      throw std::invalid_argument("config: raster_dump must be 0 or >= 2");
  }

  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open '" + path + "'");
  Json j;
  in >> j;
  return parse_config(j);
}

// ---------------------------------------------------------------------------
// Solution recipes
// ---------------------------------------------------------------------------

/// Candidate solution vanishing at x0, used by the unique-continuation
/// experiments.  "polynomial" interpolates Re((z - x0)^n); "dirichlet" solves
/// the operator twice and takes the affine combination u1 - (u1(x0)/u2(x0)) u2
/// (a solution since the operator is linear); "zero" is the trivial input.
inline RealFem build_solution(const ExperimentConfig& cfg, MeshPtr mesh) {
  if (cfg.solution_kind == "zero")
    return RealFem(mesh, Eigen::VectorXd::Zero(mesh->vertex_count()));
  if (cfg.solution_kind == "polynomial") {
    const int n = cfg.polynomial_order;
    const Complex z0(cfg.x0.x(), cfg.x0.y());
    return RealFem::interpolate(mesh, [n, z0](const Vec2& x) {
      return std::pow(Complex(x.x(), x.y()) - z0, n).real();
    });
  }
  // dirichlet
  const WeakOperator op = assemble(mesh, cfg.coeffs, OperatorKind::full);
  const double cx = cfg.x0.x();
  RhsData r1;
  r1.boundary_values = RealFem::interpolate(mesh, [cx](const Vec2& x) { return x.x() - cx; });
  RhsData r2;
  r2.boundary_values = RealFem::interpolate(mesh, [](const Vec2&) { return 1.0; });
  const RealFem u1 = solve_dirichlet(op, r1);
  const RealFem u2 = solve_dirichlet(op, r2);
  const double v1 = u1.evaluate_clamped(cfg.x0);
  const double v2 = u2.evaluate_clamped(cfg.x0);
  if (std::abs(v2) <= 1e-8 * std::max(1.0, linf_norm(u2)))
    throw DegenerateInputError("dirichlet recipe: second solution vanishes at x0");
  return RealFem(mesh, u1.values() - (v1 / v2) * u2.values());
}

// ---------------------------------------------------------------------------
// Norm profiles
// ---------------------------------------------------------------------------

/// L2/Linf norms of u over the balls B_r(x0) with a least-squares order fit.
struct NormProfile {
  std::vector<double> radii;
  std::vector<double> l2_norms;
  std::vector<double> linf_norms;
  std::vector<bool> in_fit_window;
  double window_floor = 0.0;  // 5 * largest cell diameter
  double fitted_slope = std::numeric_limits<double>::quiet_NaN();
  double fitted_order = std::numeric_limits<double>::quiet_NaN();
  bool identically_zero = false;
};

/// Largest element diameter (longest edge over all triangles).
inline double max_cell_diameter(const Mesh& mesh) {
  double h = 0.0;
  for (int t = 0; t < mesh.triangle_count(); ++t) {
    const auto& tr = mesh.triangle(t);
    for (int k = 0; k < 3; ++k)
      h = std::max(h, (mesh.vertex(tr.v[k]) - mesh.vertex(tr.v[(k + 1) % 3])).norm());
  }
  return h;
}

/// Measure u over the (strictly decreasing) radii schedule.  The order fit
/// uses log ||u||_{L2(B_r)} vs log r over the window r >= 5 cells, excluding
/// the largest radius (boundary pollution); fitted_order = slope - 1.
inline NormProfile norm_profile(const RealFem& u, const Vec2& x0,
                                const std::vector<double>& radii) {
  NormProfile prof;
  prof.radii = radii;
  prof.window_floor = 5.0 * max_cell_diameter(*u.mesh());
  double peak = 0.0;
  for (double r : radii) {
    const Disk ball{x0, r};
    prof.l2_norms.push_back(lp_norm(u, 2.0, ball));
    prof.linf_norms.push_back(linf_norm(u, ball));
    peak = std::max(peak, std::max(prof.l2_norms.back(), prof.linf_norms.back()));
  }
  prof.identically_zero = peak < 1e-14;

  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < radii.size(); ++i) {
    const bool in = !prof.identically_zero && i != 0 && radii[i] >= prof.window_floor &&
                    prof.l2_norms[i] > 1e-300;
    prof.in_fit_window.push_back(in);
    if (in) {
      lx.push_back(std::log(radii[i]));
      ly.push_back(std::log(prof.l2_norms[i]));
    }
  }
  if (lx.size() >= 2) {
    prof.fitted_slope = fit_slope(lx, ly);
    prof.fitted_order = prof.fitted_slope - 1.0;
  }
  return prof;
}

// ---------------------------------------------------------------------------
// Report plumbing
// ---------------------------------------------------------------------------

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
}

struct Csv {
  std::string text;
  void row(std::initializer_list<std::string> cells) {
    bool first = true;
    for (const std::string& c : cells) {
      if (!first) text += ',';
      text += c;
      first = false;
    }
    text += '\n';
  }
};

inline Json json_or_null(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;
}

inline Json multiplier_json(const MultiplierOutcome& m) {
  return Json{{"R_used", m.R_used}, {"halvings", m.halvings},   {"sup_z", m.sup_z},
              {"grad_lp", m.grad_lp}, {"min", m.min_m},           {"max", m.max_m}};
}

}  // namespace detail

/// Reduction certificate summary: radii, multiplier bounds, ellipticity and
/// lower-order constants.
inline Json reduction_report(const ReductionResult& r) {
  const ReductionDiagnostics& d = r.diagnostics;
  return Json{{"R1", r.R1},
              {"R2", r.R2},
              {"K_est", d.K_est},
              {"kappa_est", d.kappa_est},
              {"K_tilde", d.K_tilde},
              {"K_hat", d.K_hat},
              {"tilde_lower_order", d.tilde_lower_order},
              {"hat_b_lt", d.hat_b_lt},
              {"p", d.p},
              {"t", d.t},
              {"m", detail::multiplier_json(d.m_stage)},
              {"w", detail::multiplier_json(d.w_stage)}};
}

inline void write_report(const Json& report, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  detail::write_text(out_dir / "report.json", report.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Pipeline experiment
// ---------------------------------------------------------------------------

namespace detail {

inline RealFem imag_part(const ComplexFem& f) {
  return RealFem(f.mesh(), f.values().imag());
}

inline void dump_beltrami_raster(const BeltramiData& data, const SimilarityResult& sim,
                                 const Disk& disk, int n, const std::filesystem::path& path) {
  RasterGrid g;
  g.nx = g.ny = n;
  g.channels = 4;  // re f, im f, re s, im s
  g.xmin = disk.center.x() - disk.radius;
  g.xmax = disk.center.x() + disk.radius;
  g.ymin = disk.center.y() - disk.radius;
  g.ymax = disk.center.y() + disk.radius;
  g.data.resize(static_cast<std::size_t>(n) * n * 4);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      const Vec2 x(g.xmin + (g.xmax - g.xmin) * i / (n - 1),
                   g.ymin + (g.ymax - g.ymin) * j / (n - 1));
      const Complex f = data.f.evaluate_clamped(x);
      const Complex s = sim.s.evaluate_clamped(x);
      g.at(i, j, 0) = f.real();
      g.at(i, j, 1) = f.imag();
      g.at(i, j, 2) = s.real();
      g.at(i, j, 3) = s.imag();
    }
  g.write_file(path.string());
}

}  // namespace detail

/// Full reduction-to-Beltrami certification run.  One stage block per mesh
/// resolution; any stage error is recorded under "errors" with a stage tag
/// and the remaining resolutions still run.
inline Json run_pipeline(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
  Json report{{"experiment", "pipeline"},
              {"coefficients", cfg.coefficient_spec},
              {"disk", {{"center", {cfg.disk.center.x(), cfg.disk.center.y()}},
                        {"radius", cfg.disk.radius}}},
              {"seed", cfg.seed},
              {"probe", cfg.probe},
              {"stages", Json::array()},
              {"errors", Json::array()}};
  std::filesystem::create_directories(out_dir);

  detail::Csv csv;
  csv.row({"resolution", "K_est", "kappa_est", "R1", "R2", "factorization_residual", "k_bound",
           "beltrami_residual", "divided_residual", "stream_ratio"});

  for (int res : cfg.resolutions) {
    std::string stage = "reduce";
    try {
      const ReductionResult red = reduce(cfg.coeffs, cfg.disk, cfg.reduction, res);
      Json block{{"resolution", res}, {"reduction", reduction_report(red)}};

      stage = "factorization";
      const double fres = verify_factorization(cfg.coeffs, red, 20, cfg.seed);
      block["factorization_residual"] = fres;

      stage = "beltrami";
      const Vec2 c = cfg.disk.center;
      const CoefficientSet hat = hat_coefficient_set(red, red.diagnostics.t);
      MeshPtr mesh2 = build_disk_mesh(Disk{c, red.R2}, res);
      const WeakOperator op = assemble(mesh2, hat, OperatorKind::full);
      RhsData rhs;
      if (cfg.probe == "affine")
        rhs.boundary_values =
            RealFem::interpolate(mesh2, [c](const Vec2& x) { return x.x() - c.x(); });
      else
        rhs.boundary_values = RealFem::interpolate(mesh2, [c](const Vec2& x) {
          const Vec2 d = x - c;
          return d.x() * d.x() - d.y() * d.y();
        });
      const RealFem v = solve_dirichlet(op, rhs);
      const BeltramiData data = make_beltrami_data(v, red.A_hat, red.B_hat, c);
      const double bres = beltrami_residual(data);
      block["k_bound"] = data.k_bound;
      block["beltrami_residual"] = bres;
      block["stream_defect"] = data.stream_defect;
      block["stream_target_norm"] = data.stream_target_norm;

      const double rr = 0.8 * red.R2;
      const RealFem vt = detail::imag_part(data.f);
      const double denom = linf_norm(v, Disk{c, rr});
      const double ratio =
          denom > 1e-300 ? linf_norm(vt, Disk{c, 0.5 * rr}) / denom
                         : std::numeric_limits<double>::quiet_NaN();
      block["stream_ratio"] = detail::json_or_null(ratio);

      stage = "similarity";
      const SimilarityResult sim = similarity_factor(data, -1.0, cfg.fft_grid);
      block["similarity"] = Json{{"input_residual", sim.input_residual},
                                 {"divided_residual", sim.divided_residual},
                                 {"dzbar_residual", sim.dzbar_residual},
                                 {"holder_ratio", sim.holder_ratio},
                                 {"s_max", linf_norm(sim.s)}};

      if (cfg.raster_dump > 0) {
        stage = "raster";
        detail::dump_beltrami_raster(
            data, sim, Disk{c, red.R2}, cfg.raster_dump,
            out_dir / ("beltrami_" + std::to_string(res) + ".rst"));
      }

      report["stages"].push_back(block);
      csv.row({std::to_string(res), detail::fmt_double(red.diagnostics.K_est),
               detail::fmt_double(red.diagnostics.kappa_est), detail::fmt_double(red.R1),
               detail::fmt_double(red.R2), detail::fmt_double(fres),
               detail::fmt_double(data.k_bound), detail::fmt_double(bres),
               detail::fmt_double(sim.divided_residual), detail::fmt_double(ratio)});
    } catch (const std::exception& e) {
      report["errors"].push_back(
          Json{{"stage", stage}, {"resolution", res}, {"message", e.what()}});
    }
  }

  detail::write_text(out_dir / "pipeline.csv", csv.text);
  write_report(report, out_dir);
  return report;
}

// ---------------------------------------------------------------------------
// Contraction scaling
// ---------------------------------------------------------------------------

/// Contraction-norm estimates across the radii schedule at the finest mesh.
/// A non-contracting radius is recorded as a diverged row, not a failure.
inline Json run_contraction_scaling(const ExperimentConfig& cfg,
                                    const std::filesystem::path& out_dir) {
  if (cfg.radii.size() < 4)
    throw std::invalid_argument("contraction_scaling needs at least 4 radii");
  const int res = cfg.resolutions.back();
  const double q = cfg.coeffs.q;

  Json report{{"experiment", "contraction_scaling"},
              {"coefficients", cfg.coefficient_spec},
              {"resolution", res},
              {"seed", cfg.seed},
              {"theoretical_floor", 1.0 - 2.0 / q},
              {"rows", Json::array()},
              {"errors", Json::array()}};
  detail::Csv csv;
  csv.row({"R", "estimated_norm", "empirical_factor"});

  std::vector<double> lx, ly;
  for (double R : cfg.radii) {
    double est = std::numeric_limits<double>::quiet_NaN();
    double factor = std::numeric_limits<double>::quiet_NaN();
    bool diverged = false;
    try {
      MeshPtr mesh = build_disk_mesh(Disk{cfg.disk.center, R}, res);
      const WeakOperator principal = assemble(mesh, cfg.coeffs, OperatorKind::principal);
      const WeakOperator remainder = assemble(mesh, cfg.coeffs, OperatorKind::remainder);
      est = estimate_contraction_norm(principal, remainder, 3, 30, cfg.seed);
      try {
        RhsData rhs;
        rhs.f = [](const Vec2&) { return 1.0; };
        const ContractionResult it = contraction_iterate(principal, remainder, rhs);
        if (it.update_norms.size() >= 2 && it.update_norms[0] > 1e-300)
          factor = it.update_norms[1] / it.update_norms[0];
      } catch (const NoContractionError&) {
        diverged = true;
      }
    } catch (const std::exception& e) {
      report["errors"].push_back(Json{{"stage", "contraction"}, {"R", R}, {"message", e.what()}});
      continue;
    }
    report["rows"].push_back(Json{{"R", R},
                                  {"estimated_norm", est},
                                  {"empirical_factor", detail::json_or_null(factor)},
                                  {"diverged", diverged}});
    csv.row({detail::fmt_double(R), detail::fmt_double(est), detail::fmt_double(factor)});
    if (std::isfinite(est) && est > 1e-12) {
      lx.push_back(std::log(R));
      ly.push_back(std::log(est));
    }
  }

  const bool all_zero = lx.empty();
  const double slope =
      lx.size() >= 2 ? fit_slope(lx, ly) : std::numeric_limits<double>::quiet_NaN();
  report["all_zero"] = all_zero;
  report["fitted_slope"] = detail::json_or_null(slope);
  csv.row({"fit", detail::fmt_double(slope), detail::fmt_double(1.0 - 2.0 / q)});

  detail::write_text(out_dir / "contraction.csv", csv.text);
  write_report(report, out_dir);
  return report;
}

// ---------------------------------------------------------------------------
// Vanishing order
// ---------------------------------------------------------------------------

inline Json profile_json(int resolution, const NormProfile& p) {
  Json j{{"resolution", resolution},
         {"radii", p.radii},
         {"l2_norms", p.l2_norms},
         {"linf_norms", p.linf_norms},
         {"in_fit_window", p.in_fit_window},
         {"window_floor", p.window_floor},
         {"fitted_slope", detail::json_or_null(p.fitted_slope)},
         {"fitted_order", detail::json_or_null(p.fitted_order)},
         {"identically_zero", p.identically_zero}};
  return j;
}

/// Norm profile of the configured solution over the radii schedule, once per
/// resolution, with a fitted vanishing order (log-log slope minus one).
inline Json run_vanishing_order(const ExperimentConfig& cfg,
                                const std::filesystem::path& out_dir) {
  if (cfg.radii.size() < 2)
    throw std::invalid_argument("vanishing_order needs at least 2 radii");
  Json report{{"experiment", "vanishing_order"},
              {"coefficients", cfg.coefficient_spec},
              {"seed", cfg.seed},
              {"solution", cfg.solution_kind},
              {"profiles", Json::array()},
              {"errors", Json::array()}};
  detail::Csv csv;
  csv.row({"resolution", "r", "l2_norm", "linf_norm", "in_fit_window"});
  std::string footers;

  for (int res : cfg.resolutions) {
    try {
      MeshPtr mesh = build_disk_mesh(cfg.disk, res);
      const RealFem u = build_solution(cfg, mesh);
      const NormProfile p = norm_profile(u, cfg.x0, cfg.radii);
      report["profiles"].push_back(profile_json(res, p));
      for (std::size_t i = 0; i < p.radii.size(); ++i)
        csv.row({std::to_string(res), detail::fmt_double(p.radii[i]),
                 detail::fmt_double(p.l2_norms[i]), detail::fmt_double(p.linf_norms[i]),
                 p.in_fit_window[i] ? "1" : "0"});
      detail::Csv foot;
      foot.row({"fit", std::to_string(res), detail::fmt_double(p.fitted_slope),
                detail::fmt_double(p.fitted_order), p.identically_zero ? "zero" : ""});
      footers += foot.text;
    } catch (const std::exception& e) {
      report["errors"].push_back(
          Json{{"stage", "vanishing_order"}, {"resolution", res}, {"message", e.what()}});
    }
  }

  detail::write_text(out_dir / "vanishing_order.csv", csv.text + footers);
  write_report(report, out_dir);
  return report;
}

// ---------------------------------------------------------------------------
// Doubling
// ---------------------------------------------------------------------------

/// Doubling ratios ||u||_{L2(B_2r)} / ||u||_{L2(B_r)} over the schedule at
/// the finest mesh.  Zero denominators are flagged per row.
inline Json run_doubling(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
  if (cfg.radii.empty()) throw std::invalid_argument("doubling needs a radii schedule");
  for (double r : cfg.radii)
    if ((cfg.x0 - cfg.disk.center).norm() + 2.0 * r > cfg.disk.radius + 1e-12)
      throw std::invalid_argument("doubling: ball B_2r(x0) must fit inside the disk");
  const int res = cfg.resolutions.back();

  Json report{{"experiment", "doubling"},
              {"coefficients", cfg.coefficient_spec},
              {"resolution", res},
              {"seed", cfg.seed},
              {"solution", cfg.solution_kind},
              {"rows", Json::array()},
              {"errors", Json::array()}};
  detail::Csv csv;
  csv.row({"r", "l2_r", "l2_2r", "ratio", "degenerate"});

  double max_ratio = std::numeric_limits<double>::quiet_NaN();
  try {
    MeshPtr mesh = build_disk_mesh(cfg.disk, res);
    const RealFem u = build_solution(cfg, mesh);
    for (double r : cfg.radii) {
      const double n1 = lp_norm(u, 2.0, Disk{cfg.x0, r});
      const double n2 = lp_norm(u, 2.0, Disk{cfg.x0, 2.0 * r});
      const bool degenerate = n1 < 1e-300;
      const double ratio = degenerate ? std::numeric_limits<double>::quiet_NaN() : n2 / n1;
      if (!degenerate && !(ratio <= max_ratio)) max_ratio = ratio;
      report["rows"].push_back(Json{{"r", r},
                                    {"l2_r", n1},
                                    {"l2_2r", n2},
                                    {"ratio", detail::json_or_null(ratio)},
                                    {"degenerate", degenerate}});
      csv.row({detail::fmt_double(r), detail::fmt_double(n1), detail::fmt_double(n2),
               detail::fmt_double(ratio), degenerate ? "1" : "0"});
    }
  } catch (const std::exception& e) {
    report["errors"].push_back(Json{{"stage", "doubling"}, {"message", e.what()}});
  }
  report["max_ratio"] = detail::json_or_null(max_ratio);
  csv.row({"max", "", "", detail::fmt_double(max_ratio), ""});

  detail::write_text(out_dir / "doubling.csv", csv.text);
  write_report(report, out_dir);
  return report;
}

// ---------------------------------------------------------------------------
// Three spheres
// ---------------------------------------------------------------------------

/// Log-interpolation exponents theta* over consecutive radius triples
/// rho < r < R taken from the decreasing schedule: the smallest theta with
/// ||u||_r <= ||u||_rho^theta ||u||_R^(1-theta).
inline Json run_three_spheres(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
  if (cfg.radii.size() < 3)
    throw std::invalid_argument("three_spheres needs at least 3 radii");
  const int res = cfg.resolutions.back();

  Json report{{"experiment", "three_spheres"},
              {"coefficients", cfg.coefficient_spec},
              {"resolution", res},
              {"seed", cfg.seed},
              {"solution", cfg.solution_kind},
              {"rows", Json::array()},
              {"errors", Json::array()}};
  detail::Csv csv;
  csv.row({"rho", "r", "R", "norm_rho", "norm_r", "norm_R", "theta_star", "degenerate"});

  double min_theta = std::numeric_limits<double>::quiet_NaN();
  try {
    MeshPtr mesh = build_disk_mesh(cfg.disk, res);
    const RealFem u = build_solution(cfg, mesh);
    std::vector<double> norms;
    for (double r : cfg.radii) norms.push_back(lp_norm(u, 2.0, Disk{cfg.x0, r}));
    for (std::size_t k = 0; k + 2 < cfg.radii.size(); ++k) {
      const double R = cfg.radii[k], r = cfg.radii[k + 1], rho = cfg.radii[k + 2];
      const double nR = norms[k], nr = norms[k + 1], nrho = norms[k + 2];
      bool degenerate = nR < 1e-300 || nr < 1e-300 || nrho < 1e-300;
      double theta = std::numeric_limits<double>::quiet_NaN();
      if (!degenerate) {
        const double den = std::log(nR) - std::log(nrho);
        if (std::abs(den) < 1e-12)
          degenerate = true;
        else
          theta = std::clamp((std::log(nR) - std::log(nr)) / den, 0.0, 1.0);
      }
      if (!degenerate && !(theta >= min_theta)) min_theta = theta;
      report["rows"].push_back(Json{{"rho", rho},
                                    {"r", r},
                                    {"R", R},
                                    {"norm_rho", nrho},
                                    {"norm_r", nr},
                                    {"norm_R", nR},
                                    {"theta_star", detail::json_or_null(theta)},
                                    {"degenerate", degenerate}});
      csv.row({detail::fmt_double(rho), detail::fmt_double(r), detail::fmt_double(R),
               detail::fmt_double(nrho), detail::fmt_double(nr), detail::fmt_double(nR),
               detail::fmt_double(theta), degenerate ? "1" : "0"});
    }
  } catch (const std::exception& e) {
    report["errors"].push_back(Json{{"stage", "three_spheres"}, {"message", e.what()}});
  }
  report["min_theta"] = detail::json_or_null(min_theta);
  csv.row({"min", "", "", "", "", "", detail::fmt_double(min_theta), ""});

  detail::write_text(out_dir / "three_spheres.csv", csv.text);
  write_report(report, out_dir);
  return report;
}

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

/// Run the experiment named `kind` (a config "experiment" value).  If the
/// config pins its own kind, the two must agree.
inline Json run_experiment(const ExperimentConfig& cfg, const std::string& kind,
                           const std::filesystem::path& out_dir) {
  const auto& kinds = detail::experiment_kinds();
  if (std::find(kinds.begin(), kinds.end(), kind) == kinds.end())
    throw std::invalid_argument("unknown experiment '" + kind + "'");
  if (!cfg.experiment.empty() && cfg.experiment != kind)
    throw std::invalid_argument("config pins experiment '" + cfg.experiment +
                                "' but '" + kind + "' was requested");
  if (kind == "pipeline") return run_pipeline(cfg, out_dir);
  if (kind == "contraction_scaling") return run_contraction_scaling(cfg, out_dir);
  if (kind == "doubling") return run_doubling(cfg, out_dir);
  if (kind == "three_spheres") return run_three_spheres(cfg, out_dir);
  return run_vanishing_order(cfg, out_dir);
}

}  // namespace uc2d
