#include <catch2/catch_amalgamated.hpp>

#include <uc2d/fields.hpp>

#include <filesystem>
#include <sstream>

using namespace uc2d;

TEST_CASE("ellipticity constants of reference matrices", "[fields]") {
  auto mesh = build_disk_mesh({0, 0}, 1.0, 8);
  auto constant = [](const Mat2& m) {
    return [m](const Vec2&) { return m; };
  };

  REQUIRE(check_ellipticity(constant(Mat2::Identity()), *mesh) == Catch::Approx(1.0));

  Mat2 d;
  d << 2.0, 0.0, 0.0, 0.5;
  REQUIRE(check_ellipticity(constant(d), *mesh) == Catch::Approx(2.0));

  Mat2 r;
  r << 1.0, 1.0, -1.0, 1.0;
  REQUIRE(check_ellipticity(constant(r), *mesh) == Catch::Approx(2.0));

  SECTION("transpose invariance") {
    Mat2 g;
    g << 1.5, 0.7, -0.2, 0.9;
    REQUIRE(check_ellipticity(constant(g), *mesh) ==
            Catch::Approx(check_ellipticity(constant(g.transpose()), *mesh)));
  }

  SECTION("scalar multiples of the identity") {
    for (double c : {0.25, 0.5, 2.0, 7.0})
      REQUIRE(check_ellipticity(constant(c * Mat2::Identity()), *mesh) ==
              Catch::Approx(std::max(c, 1.0 / c)));
  }

  SECTION("non-elliptic input carries the offending point") {
    Mat2 bad;
    bad << 1.0, 0.0, 0.0, -1.0;
    try {
      check_ellipticity(constant(bad), *mesh);
      FAIL("expected NonEllipticError");
    } catch (const NonEllipticError& e) {
      REQUIRE(e.where.norm() <= 1.0 + 1e-9);
    }
  }
}

TEST_CASE("lower order norms against closed forms", "[fields]") {
  const Disk unit{{0, 0}, 1.0};

  CoefficientSet zero = builtin("identity");
  REQUIRE(lower_order_norms(zero, unit).kappa == 0.0);

  SECTION("constant drift, q = 4") {
    CoefficientSet c = builtin("identity");
    c.B = [](const Vec2&) { return Vec2(1.0, 0.0); };
    REQUIRE(lower_order_norms(c, unit, 64).kappa ==
            Catch::Approx(std::pow(M_PI, 0.25)).epsilon(0.01));
  }

  SECTION("constant d, q = 4") {
    CoefficientSet c = builtin("constant_d", {{"delta", 1.0}});
    REQUIRE(lower_order_norms(c, unit, 64).kappa ==
            Catch::Approx(std::sqrt(M_PI)).epsilon(0.01));
  }

  SECTION("degree-1 homogeneity in (B, C) for d = 0") {
    CoefficientSet c = builtin("identity");
    c.B = [](const Vec2& x) { return Vec2(x.y(), 0.3); };
    c.C = [](const Vec2& x) { return Vec2(0.1, std::sin(x.x())); };
    CoefficientSet c3 = c;
    c3.B = [&cB = c.B](const Vec2& x) { return Vec2(3.0 * cB(x)); };
    c3.C = [&cC = c.C](const Vec2& x) { return Vec2(3.0 * cC(x)); };
    const double k1 = lower_order_norms(c, unit, 32).kappa;
    const double k3 = lower_order_norms(c3, unit, 32).kappa;
    REQUIRE(k3 == Catch::Approx(3.0 * k1).epsilon(1e-10));
  }
}

TEST_CASE("builtin corpus sanity", "[fields]") {
  auto mesh = build_disk_mesh({0, 0}, 1.0, 16);

  SECTION("identity") {
    CoefficientSet c = builtin("identity");
    REQUIRE(check_ellipticity(c.A, *mesh) == Catch::Approx(1.0));
    REQUIRE(c.B(Vec2(0.3, 0.2)).norm() == 0.0);
    REQUIRE(c.d(Vec2(0.3, 0.2)) == 0.0);
  }

  SECTION("rotation_nonsym has K = 1 + t^2") {
    for (double t : {0.5, 1.0, 2.0}) {
      CoefficientSet c = builtin("rotation_nonsym", {{"t", t}});
      const Mat2 a = c.A(Vec2(0.1, 0.1));
      REQUIRE(a(0, 1) == Catch::Approx(-t));
      REQUIRE(a(1, 0) == Catch::Approx(t));
      REQUIRE(check_ellipticity(c.A, *mesh) == Catch::Approx(1.0 + t * t));
    }
  }

  SECTION("anisotropic declared constant") {
    CoefficientSet c = builtin("anisotropic", {{"a", 3.0}});
    const double k = check_ellipticity(c.A, *mesh);
    REQUIRE(k == Catch::Approx(3.0));
    validate_declared(c, k, 0.0);
  }

  SECTION("mollified checkerboard stays within its declared band") {
    CoefficientSet c = builtin("mollified_checkerboard");
    const double k = check_ellipticity(c.A, *mesh);
    REQUIRE(k <= *c.declared_K * 1.01);
    REQUIRE(k > 1.2);  // genuinely inhomogeneous
  }

  SECTION("singular lower order is unbounded but integrable") {
    CoefficientSet c = builtin("singular_lower_order", {{"q", 4.0}, {"eps", 0.4}});
    REQUIRE(c.B(Vec2(1e-8, 0.0)).norm() >= 1e3);
    const double kappa = lower_order_norms(c, Disk{{0, 0}, 1.0}, 64).kappa;
    REQUIRE(std::isfinite(kappa));
    REQUIRE(kappa > 0.0);
  }

  SECTION("unknown names are rejected with the name list") {
    try {
      builtin("no_such_set");
      FAIL("expected invalid_argument");
    } catch (const std::invalid_argument& e) {
      REQUIRE(std::string(e.what()).find("identity") != std::string::npos);
    }
    REQUIRE_THROWS_AS(builtin("identity", {{"bogus", 1.0}}), std::invalid_argument);
  }

  SECTION("declared constants validated against estimates") {
    CoefficientSet c = builtin("anisotropic", {{"a", 2.0}});
    c.declared_K = 1.5;  // undercuts the true constant 2
    REQUIRE_THROWS_AS(validate_declared(c, check_ellipticity(c.A, *mesh), 0.0),
                      std::invalid_argument);
  }
}

TEST_CASE("raster coefficient files round-trip", "[fields]") {
  CoefficientSet src = builtin("full_lower_order");
  RasterGrid grid = rasterize(src, -1.1, -1.1, 1.1, 1.1, 41, 41);

  std::stringstream ss;
  grid.write(ss);
  RasterGrid back = RasterGrid::read(ss);
  REQUIRE(back.nx == 41);
  REQUIRE(back.channels == 9);

  CoefficientSet c = raster_coefficients(back, 4.0);
  Rng rng(3);
  for (int k = 0; k < 50; ++k) {
    const Vec2 x(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
    REQUIRE((c.A(x) - src.A(x)).norm() < 0.02);
    REQUIRE((c.B(x) - src.B(x)).norm() < 0.02);
    REQUIRE(std::abs(c.d(x) - src.d(x)) < 0.02);
  }

  SECTION("write is byte-stable") {
    std::stringstream s1, s2;
    grid.write(s1);
    back.write(s2);
    REQUIRE(s1.str() == s2.str());
  }

  SECTION("bad headers are rejected") {
    std::stringstream bad("not a raster\n1 1 1\n0 0 1 1\n0\n");
    REQUIRE_THROWS_AS(RasterGrid::read(bad), std::invalid_argument);
    std::stringstream trunc("uc2d raster v1\n2 2 1\n0 0 1 1\n0 1 2\n");
    REQUIRE_THROWS_AS(RasterGrid::read(trunc), std::invalid_argument);
  }

  SECTION("channel count enforced") {
    RasterGrid g2 = grid;
    g2.channels = 4;
    g2.data.resize(static_cast<std::size_t>(g2.nx) * g2.ny * 4);
    REQUIRE_THROWS_AS(raster_coefficients(g2, 4.0), std::invalid_argument);
  }
}
