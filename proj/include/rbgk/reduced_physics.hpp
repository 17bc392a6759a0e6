#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <span>
#include <vector>

#include "rbgk/common.hpp"
#include "rbgk/velocity_grid.hpp"

namespace rbgk {

/// Diffuse-wall description. `normal` points into the gas; the wall never
/// moves along its own normal.
struct WallSpec {
  Eigen::VectorXd u_wall;  // D_v* components
  double T_wall = 1.0;
  Eigen::VectorXd normal;  // D_x components, unit length
};

inline void validate_wall(const WallSpec& w, int dx, int d_vstar) {
  if (w.normal.size() != dx) throw config_error("wall normal dimension mismatch");
  if (std::abs(w.normal.norm() - 1.0) > 1e-12) throw config_error("wall normal must be unit length");
  if (!(w.T_wall > 0.0)) throw config_error("wall temperature must be positive");
  if (w.u_wall.size() != d_vstar) throw config_error("wall velocity must have D_v* components");
  if (std::abs(w.u_wall.head(dx).dot(w.normal)) > 1e-12)
    throw config_error("wall velocity must have zero normal component");
}

struct KnudsenNumber {
  double kn = 1.0;
  KnudsenNumber() = default;
  explicit KnudsenNumber(double k) : kn(k) {
    if (!(std::isfinite(k) && k > 0.0))
      throw config_error("Knudsen number must be finite and positive");
  }
};

/// The D_x-dimensional Gaussian rho (2 pi T)^(-Dx/2) exp(-|v_k - u|^2 / 2T)
/// evaluated at every grid point. `u` carries the first D_x components only.
template <class S>
std::vector<S> maxwell_gaussian(const S& rho, std::span<const S> u, const S& T,
                                const VelocityGrid& grid) {
  using std::exp;
  using std::sqrt;
  const int nv = grid.size();
  const int dx = grid.dim;
  S pref = (dx == 1) ? rho / sqrt(T * (2.0 * kPi)) : rho / (T * (2.0 * kPi));
  std::vector<S> g;
  g.reserve(nv);
  for (int k = 0; k < nv; ++k) {
    S a = square(grid.points(0, k) - u[0]);
    for (int d = 1; d < dx; ++d) a = a + square(grid.points(d, k) - u[d]);
    g.push_back(pref * exp(a / (T * (-2.0))));
  }
  return g;
}

/// Reduced Maxwellian (g^M, h^M, s_j^M) of a macroscopic state.
/// h^M carries the energy of the integrated-out velocity directions:
/// h^M = ((3 - D_x) T + sum_j u_j^2) / 2 * g^M, and s_j^M = u_j g^M.
template <class S>
ReducedFieldSetT<S> reduced_maxwellian(const MacroStateT<S>& m, const VelocityGrid& grid,
                                       int d_vstar) {
  const int dx = grid.dim;
  if (static_cast<int>(m.u.size()) != d_vstar)
    throw config_error("reduced_maxwellian: macro velocity must have D_v* components");
  if (!(value_of(m.rho) > 0.0) || !(value_of(m.T) > 0.0))
    throw degenerate_state_error("reduced_maxwellian: nonpositive rho or T", value_of(m.rho),
                                 value_of(m.T));

  ReducedFieldSetT<S> out;
  out.g = maxwell_gaussian(m.rho, std::span<const S>(m.u.data(), dx), m.T, grid);

  S ch = m.T * static_cast<double>(3 - dx);
  for (int j = dx; j < d_vstar; ++j) ch = ch + square(m.u[j]);
  ch = ch * 0.5;

  const int nv = grid.size();
  out.h.reserve(nv);
  for (int k = 0; k < nv; ++k) out.h.push_back(ch * out.g[k]);
  out.s.resize(d_vstar - dx);
  for (int j = dx; j < d_vstar; ++j) {
    out.s[j - dx].reserve(nv);
    for (int k = 0; k < nv; ++k) out.s[j - dx].push_back(m.u[j] * out.g[k]);
  }
  return out;
}

/// Outgoing half-space flux of the unit-density wall Maxwellian,
/// sum_{v.n>0} (v.n) g^W(1, u^W, T^W) w_k. Constant per wall.
inline double wall_outflux_unit(const WallSpec& wall, const VelocityGrid& grid) {
  const int dx = grid.dim;
  std::vector<double> u(wall.u_wall.data(), wall.u_wall.data() + dx);
  const double one = 1.0, t = wall.T_wall;
  std::vector<double> gw = maxwell_gaussian<double>(one, u, t, grid);
  double den = 0.0;
  for (int k = 0; k < grid.size(); ++k) {
    const double vn = grid.points.col(k).dot(wall.normal);
    if (vn > 0.0) den += vn * gw[k] * grid.weights(k);
  }
  return den;
}

/// Wall density from the zero-normal-flux closure. Points with v.n = 0
/// contribute to neither half-space sum (the even midpoint grid never
/// produces one).
template <class S>
S wall_density(std::span<const S> boundary_g, const WallSpec& wall, const VelocityGrid& grid) {
  if (boundary_g.size() != static_cast<std::size_t>(grid.size()))
    throw config_error("wall_density: boundary g does not match the grid");
  const double den = wall_outflux_unit(wall, grid);
  if (!(den > 0.0) || !std::isfinite(den))
    throw config_error("wall_density: outgoing flux denominator is zero");

  bool seeded = false;
  S num = boundary_g[0];  // placeholder until first incoming term
  for (int k = 0; k < grid.size(); ++k) {
    const double vn = grid.points.col(k).dot(wall.normal);
    if (vn < 0.0) {
      if (!seeded) {
        num = boundary_g[k] * (vn * grid.weights(k));
        seeded = true;
      } else {
        num = num + boundary_g[k] * (vn * grid.weights(k));
      }
    }
  }
  if (!seeded) throw config_error("wall_density: no incoming velocity points");
  return num * (-1.0 / den);
}

/// Wall Maxwellian at a given wall density: the reduced Maxwellian of
/// (rho_w, u^W, T^W). Callers consume only the entries with v.n > 0.
inline ReducedFieldSet wall_distribution(const WallSpec& wall, double rho_w,
                                         const VelocityGrid& grid, int d_vstar) {
  validate_wall(wall, grid.dim, d_vstar);
  return reduced_maxwellian(make_macro(rho_w, wall.u_wall, wall.T_wall), grid, d_vstar);
}

inline ReducedFieldSet wall_distribution_unit(const WallSpec& wall, const VelocityGrid& grid,
                                              int d_vstar) {
  return wall_distribution(wall, 1.0, grid, d_vstar);
}

/// Maxwell boundary state: wall Maxwellian on incoming directions (v.n > 0),
/// gas values on outgoing. The wall density makes the discrete normal mass
/// flux of the assembled g vanish identically.
template <class S>
ReducedFieldSetT<S> assemble_wall_state(const FieldsView<S>& gas, const WallSpec& wall,
                                        const VelocityGrid& grid, int d_vstar) {
  S rho_w = wall_density(gas.g, wall, grid);
  ReducedFieldSet unit = wall_distribution_unit(wall, grid, d_vstar);
  const int nv = grid.size();
  ReducedFieldSetT<S> out;
  out.g.reserve(nv);
  out.h.reserve(nv);
  out.s.resize(d_vstar - grid.dim);
  for (int k = 0; k < nv; ++k) {
    const bool incoming = grid.points.col(k).dot(wall.normal) > 0.0;
    out.g.push_back(incoming ? rho_w * unit.g[k] : S(gas.g[k]));
    out.h.push_back(incoming ? rho_w * unit.h[k] : S(gas.h[k]));
  }
  for (int j = 0; j < d_vstar - grid.dim; ++j) {
    out.s[j].reserve(nv);
    for (int k = 0; k < nv; ++k) {
      const bool incoming = grid.points.col(k).dot(wall.normal) > 0.0;
      out.s[j].push_back(incoming ? rho_w * unit.s[j][k] : S(gas.s[j][k]));
    }
  }
  return out;
}

/// BGK relaxation source (F^M - F) / Kn with the Maxwellian built from the
/// moments of the fields themselves. Equilibrium is a fixed point.
template <class S>
ReducedFieldSetT<S> bgk_source(const FieldsView<S>& f, const VelocityGrid& grid,
                               KnudsenNumber kn, int d_vstar) {
  MacroStateT<S> m = moments(f, grid, d_vstar);
  ReducedFieldSetT<S> fm = reduced_maxwellian(m, grid, d_vstar);
  const double inv_kn = 1.0 / kn.kn;
  const int nv = grid.size();
  ReducedFieldSetT<S> out;
  out.g.reserve(nv);
  out.h.reserve(nv);
  out.s.resize(d_vstar - grid.dim);
  for (int k = 0; k < nv; ++k) {
    out.g.push_back((fm.g[k] - f.g[k]) * inv_kn);
    out.h.push_back((fm.h[k] - f.h[k]) * inv_kn);
  }
  for (int j = 0; j < d_vstar - grid.dim; ++j) {
    out.s[j].reserve(nv);
    for (int k = 0; k < nv; ++k) out.s[j].push_back((fm.s[j][k] - f.s[j][k]) * inv_kn);
  }
  return out;
}

template <class S>
ReducedFieldSetT<S> bgk_source(const ReducedFieldSetT<S>& f, const VelocityGrid& grid,
                               KnudsenNumber kn, int d_vstar) {
  return bgk_source(f.view(), grid, kn, d_vstar);
}

}  // namespace rbgk
