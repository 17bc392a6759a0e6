#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <set>

#include "rbgk/reduced_physics.hpp"
#include "rbgk/velocity_grid.hpp"
#include "support/oracles.hpp"

using namespace rbgk;

TEST_CASE("build_grid produces the midpoint tensor rule") {
  SECTION("default 1D layout") {
    auto g = build_grid(1, 100, {-10.0, 10.0});
    REQUIRE(g.size() == 100);
    CHECK(g.weights(0) == Catch::Approx(0.2).margin(1e-15));
    CHECK(g.points(0, 0) == Catch::Approx(-9.9).margin(1e-13));
    CHECK(g.points(0, 99) == Catch::Approx(9.9).margin(1e-13));
  }
  SECTION("two-cell midpoint rule") {
    auto g = build_grid(1, 2, {-1.0, 1.0});
    REQUIRE(g.size() == 2);
    CHECK(g.points(0, 0) == Catch::Approx(-0.5));
    CHECK(g.points(0, 1) == Catch::Approx(0.5));
    CHECK(g.weights(0) == Catch::Approx(1.0));
    CHECK(g.weights(1) == Catch::Approx(1.0));
  }
  SECTION("2D product rule") {
    auto g = build_grid(2, 3, {-3.0, 3.0});
    REQUIRE(g.size() == 9);
    for (int k = 0; k < 9; ++k) CHECK(g.weights(k) == Catch::Approx(4.0));
  }
  SECTION("invalid arguments") {
    CHECK_THROWS_AS(build_grid(3, 10), config_error);
    CHECK_THROWS_AS(build_grid(0, 10), config_error);
    CHECK_THROWS_AS(build_grid(1, 1), config_error);
    CHECK_THROWS_AS(build_grid(1, 10, {1.0, 1.0}), config_error);
  }
}

TEST_CASE("grid invariants") {
  auto g1 = build_grid(1, 100);
  CHECK(std::abs(g1.weights.sum() - 20.0) < 1e-12);
  auto g2 = build_grid(2, 24);
  CHECK(std::abs(g2.weights.sum() - 400.0) < 1e-10);

  CHECK((g1.weights.array() > 0.0).all());
  std::set<double> uniq(g1.points.data(), g1.points.data() + g1.size());
  CHECK(uniq.size() == static_cast<std::size_t>(g1.size()));

  // midpoint rule integrates per-dimension linear polynomials exactly
  double s0 = g1.weights.sum();
  double s1 = (g1.points.row(0).transpose().array() * g1.weights.array()).sum();
  CHECK(std::abs(s0 - 20.0) < 1e-12);
  CHECK(std::abs(s1) < 1e-12);
  double s2 = 0.0;  // mixed bilinear on the 2D grid, integral of (v1+2)(v2-1)
  for (int k = 0; k < g2.size(); ++k)
    s2 += (g2.points(0, k) + 2.0) * (g2.points(1, k) - 1.0) * g2.weights(k);
  CHECK(std::abs(s2 - (2.0 * 20.0) * (-1.0 * 20.0)) < 1e-9);
}

TEST_CASE("moments invert the reduced Maxwellian") {
  auto grid = build_grid(1, 100);

  SECTION("tangential drift, D_x=1, D_v*=2") {
    auto m = make_macro(1.0, std::vector<double>{0.0, 0.5}, 1.0);
    auto f = reduced_maxwellian(m, grid, 2);
    auto back = moments(f, grid, 2);
    CHECK(std::abs(back.rho - 1.0) < 1e-8);
    CHECK(std::abs(back.u[0]) < 1e-8);
    CHECK(std::abs(back.u[1] - 0.5) < 1e-8);
    CHECK(std::abs(back.T - 1.0) < 1e-8);
  }
  SECTION("D_x = D_v* = 1") {
    auto f = reduced_maxwellian(make_macro(2.0, std::vector<double>{0.0}, 1.0), grid, 1);
    auto back = moments(f, grid, 1);
    CHECK(std::abs(back.rho - 2.0) < 1e-8);
    CHECK(std::abs(back.u[0]) < 1e-8);
    CHECK(std::abs(back.T - 1.0) < 1e-8);
  }
  SECTION("zero field is degenerate") {
    ReducedFieldSet f;
    f.g.assign(grid.size(), 0.0);
    f.h.assign(grid.size(), 0.0);
    CHECK_THROWS_AS(moments(f, grid, 1), degenerate_state_error);
  }
  SECTION("round trip over an admissible lattice") {
    // |u| up to 3 carried by the tangential components; T capped at 2 so the
    // truncated tail of the velocity box stays below the 1e-8 budget.
    for (double rho : {0.5, 1.0, 2.0})
      for (double ut : {0.0, 1.5, 3.0})
        for (double T : {0.5, 1.0, 2.0}) {
          auto m = make_macro(rho, std::vector<double>{0.25, ut}, T);
          auto back = moments(reduced_maxwellian(m, grid, 2), grid, 2);
          CHECK(std::abs(back.rho - rho) < 1e-8);
          CHECK(std::abs(back.u[0] - 0.25) < 1e-8);
          CHECK(std::abs(back.u[1] - ut) < 1e-8);
          CHECK(std::abs(back.T - T) < 1e-8);
        }
  }
}

TEST_CASE("stress and heat flux") {
  auto grid = build_grid(1, 100);

  SECTION("equilibrium carries no stress or heat flux") {
    auto m = make_macro(1.3, std::vector<double>{0.2, 0.7, -0.4}, 1.1);
    auto f = reduced_maxwellian(m, grid, 3);
    auto sh = stress_heat(f, grid, moments(f, grid, 3));
    for (const auto& [ij, val] : sh.stress) CHECK(std::abs(val) < 1e-8);
    CHECK(std::abs(sh.q[0]) < 1e-8);
  }

  SECTION("constructed sigma_13") {
    // s_3 = c v_1 g^M with <v_1 s_3 w> = 0.3 and rho u_1 u_3 = 0
    auto m = make_macro(1.0, std::vector<double>{0.0, 0.0, 0.0}, 1.0);
    auto f = reduced_maxwellian(m, grid, 3);
    const double c = 0.3;  // <v_1^2 g^M w> = rho T = 1
    for (int k = 0; k < grid.size(); ++k) f.s[1][k] = c * grid.points(0, k) * f.g[k];
    auto mac = moments(f, grid, 3);
    auto sh = stress_heat(f, grid, mac);
    CHECK(std::abs(sh.stress.at({1, 3}) - 0.3) < 1e-8);
  }

  SECTION("q_1 of a perturbed h matches a 10x-resolution quadrature") {
    const double a = 0.05;
    auto fine = build_grid(1, 1000);
    auto build = [&](const VelocityGrid& g) {
      auto f = reduced_maxwellian(make_macro(1.0, std::vector<double>{0.0}, 1.0), g, 1);
      for (int k = 0; k < g.size(); ++k) f.h[k] *= 1.0 + a * g.points(0, k);
      return f;
    };
    auto fc = build(grid);
    auto ff = build(fine);
    double qc = stress_heat(fc, grid, moments(fc, grid, 1)).q[0];
    double qf = stress_heat(ff, fine, moments(ff, fine, 1)).q[0];
    CHECK(std::abs(qc - qf) < 1e-8);
  }

  SECTION("reduced q matches the full 3D definition for a drifting mixture") {
    // Gaussian mixture with a tangential mean: exercises the s_2 drift
    // corrections in q_1 against brute-force 3D quadrature.
    const double r1 = 0.7, r2 = 0.3 * 0.8;
    const Eigen::Vector3d u1(0.1, 0.5, 0.0), u2(-0.2, 0.1, 0.0);
    const double T1 = 1.0, T2 = 1.5;
    auto f3 = [&](const Eigen::Vector3d& v) {
      return r1 * oracle::maxwellian_3d(1.0, u1, T1, v) +
             r2 * oracle::maxwellian_3d(1.0, u2, T2, v);
    };
    auto full = oracle::macro_by_quadrature(f3, 144, 12.0);

    auto fa = reduced_maxwellian(make_macro(r1, std::vector<double>{u1(0), u1(1)}, T1), grid, 2);
    auto fb = reduced_maxwellian(make_macro(r2, std::vector<double>{u2(0), u2(1)}, T2), grid, 2);
    ReducedFieldSet mix;
    mix.g.resize(grid.size());
    mix.h.resize(grid.size());
    mix.s.assign(1, std::vector<double>(grid.size()));
    for (int k = 0; k < grid.size(); ++k) {
      mix.g[k] = fa.g[k] + fb.g[k];
      mix.h[k] = fa.h[k] + fb.h[k];
      mix.s[0][k] = fa.s[0][k] + fb.s[0][k];
    }
    auto mac = moments(mix, grid, 2);
    CHECK(std::abs(mac.rho - full.rho) < 1e-8);
    CHECK(std::abs(mac.u[0] - full.u(0)) < 1e-8);
    CHECK(std::abs(mac.u[1] - full.u(1)) < 1e-8);
    CHECK(std::abs(mac.T - full.T) < 1e-8);

    auto sh = stress_heat(mix, grid, mac);
    CHECK(std::abs(sh.stress.at({1, 1}) - full.sigma(0, 0)) < 1e-6);
    CHECK(std::abs(sh.stress.at({1, 2}) - full.sigma(0, 1)) < 1e-6);
    CHECK(std::abs(sh.q[0] - full.q(0)) < 1e-6);
  }
}
