#pragma once

#include <Eigen/Dense>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rbgk/common.hpp"

namespace rbgk {

struct Interval {
  double lo = -10.0;
  double hi = 10.0;
  double length() const { return hi - lo; }
};

/// Discrete microscopic-velocity point set with quadrature weights.
///
/// Tensor-product uniform midpoint rule: per-dimension nodes sit at cell
/// centers and carry the cell width as weight, so sum(weights) equals the
/// volume of the bounding box and no node ever lands on a coordinate plane
/// when the per-dimension count is even.
struct VelocityGrid {
  int dim = 1;
  Eigen::MatrixXd points;   // dim x Nv, column k is v_k
  Eigen::VectorXd weights;  // Nv, strictly positive
  Eigen::VectorXd speed2;   // |v_k|^2 cached
  std::vector<Interval> bounds;

  int size() const { return static_cast<int>(weights.size()); }
};

inline VelocityGrid build_grid(int dim, int n_per_dim, Interval bounds = {}) {
  if (dim != 1 && dim != 2)
    throw config_error("build_grid: dim must be 1 or 2, got " + std::to_string(dim));
  if (n_per_dim < 2)
    throw config_error("build_grid: n_per_dim must be >= 2, got " + std::to_string(n_per_dim));
  if (!std::isfinite(bounds.lo) || !std::isfinite(bounds.hi) || bounds.length() <= 0.0)
    throw config_error("build_grid: bounds must be finite with positive length");

  const double h = bounds.length() / n_per_dim;
  Eigen::VectorXd nodes(n_per_dim);
  for (int i = 0; i < n_per_dim; ++i) nodes(i) = bounds.lo + (i + 0.5) * h;

  VelocityGrid grid;
  grid.dim = dim;
  grid.bounds.assign(dim, bounds);
  const int nv = (dim == 1) ? n_per_dim : n_per_dim * n_per_dim;
  grid.points.resize(dim, nv);
  grid.weights.resize(nv);
  if (dim == 1) {
    grid.points.row(0) = nodes.transpose();
    grid.weights.setConstant(h);
  } else {
    int k = 0;
    for (int i = 0; i < n_per_dim; ++i)
      for (int j = 0; j < n_per_dim; ++j, ++k) {
        grid.points(0, k) = nodes(i);
        grid.points(1, k) = nodes(j);
      }
    grid.weights.setConstant(h * h);
  }
  grid.speed2 = grid.points.colwise().squaredNorm().transpose();
  return grid;
}

/// Macroscopic state at one space-time point. E is kept consistent with
/// E = (3/2) rho T + (1/2) rho |u|^2 by construction.
template <class S>
struct MacroStateT {
  S rho;
  std::vector<S> u;  // D_v* components
  S T;
  S E;
};
using MacroState = MacroStateT<double>;

template <class S>
MacroStateT<S> make_macro(S rho, std::vector<S> u, S T) {
  S uu = square(u[0]);
  for (std::size_t i = 1; i < u.size(); ++i) uu = uu + square(u[i]);
  S e = rho * T * 1.5 + rho * uu * 0.5;
  return MacroStateT<S>{std::move(rho), std::move(u), std::move(T), std::move(e)};
}

inline MacroState make_macro(double rho, const Eigen::VectorXd& u, double T) {
  return make_macro(rho, std::vector<double>(u.data(), u.data() + u.size()), T);
}

/// Non-owning view over the reduced distributions (g, h, s_j) at one point.
template <class S>
struct FieldsView {
  std::span<const S> g;
  std::span<const S> h;
  std::vector<std::span<const S>> s;
};

template <class S>
struct ReducedFieldSetT {
  std::vector<S> g;
  std::vector<S> h;
  std::vector<std::vector<S>> s;  // one entry per j = D_x+1 .. D_v*

  FieldsView<S> view() const {
    FieldsView<S> v{std::span<const S>(g), std::span<const S>(h), {}};
    v.s.reserve(s.size());
    for (const auto& sj : s) v.s.emplace_back(sj);
    return v;
  }
};
using ReducedFieldSet = ReducedFieldSetT<double>;

namespace detail {
template <class S>
void check_field_sizes(const FieldsView<S>& f, const VelocityGrid& grid, int d_vstar) {
  const auto nv = static_cast<std::size_t>(grid.size());
  if (f.g.size() != nv || f.h.size() != nv)
    throw config_error("reduced fields do not match the velocity grid size");
  if (static_cast<int>(f.s.size()) != d_vstar - grid.dim)
    throw config_error("field list inconsistent with D_x and D_v*: expected " +
                       std::to_string(d_vstar - grid.dim) + " s-fields, got " +
                       std::to_string(f.s.size()));
  for (const auto& sj : f.s)
    if (sj.size() != nv) throw config_error("s-field does not match the velocity grid size");
}
}  // namespace detail

/// Discrete moments of a reduced field set: density, velocity (components
/// beyond D_x from the s_j moments), temperature, total energy density.
template <class S>
MacroStateT<S> moments(const FieldsView<S>& f, const VelocityGrid& grid, int d_vstar) {
  detail::check_field_sizes(f, grid, d_vstar);
  const int nv = grid.size();
  const int dx = grid.dim;
  const Eigen::VectorXd& w = grid.weights;

  S rho = f.g[0] * w(0);
  for (int k = 1; k < nv; ++k) rho = rho + f.g[k] * w(k);

  std::vector<S> p;  // momentum components
  p.reserve(d_vstar);
  for (int i = 0; i < dx; ++i) {
    S pi = f.g[0] * (grid.points(i, 0) * w(0));
    for (int k = 1; k < nv; ++k) pi = pi + f.g[k] * (grid.points(i, k) * w(k));
    p.push_back(std::move(pi));
  }
  for (int j = 0; j < d_vstar - dx; ++j) {
    S pj = f.s[j][0] * w(0);
    for (int k = 1; k < nv; ++k) pj = pj + f.s[j][k] * w(k);
    p.push_back(std::move(pj));
  }

  S e = f.g[0] * (0.5 * grid.speed2(0) * w(0)) + f.h[0] * w(0);
  for (int k = 1; k < nv; ++k)
    e = e + f.g[k] * (0.5 * grid.speed2(k) * w(k)) + f.h[k] * w(k);

  if (!(value_of(rho) > 1e-12))
    throw degenerate_state_error("moments: nonpositive density", value_of(rho), 0.0);

  std::vector<S> u;
  u.reserve(d_vstar);
  for (int i = 0; i < d_vstar; ++i) u.push_back(p[i] / rho);

  S uu = square(u[0]);
  for (int i = 1; i < d_vstar; ++i) uu = uu + square(u[i]);
  S t = (e * 2.0 / rho - uu) * (1.0 / 3.0);
  if (!(value_of(t) > 0.0))
    throw degenerate_state_error("moments: nonpositive temperature", value_of(rho), value_of(t));

  return MacroStateT<S>{std::move(rho), std::move(u), std::move(t), std::move(e)};
}

template <class S>
MacroStateT<S> moments(const ReducedFieldSetT<S>& f, const VelocityGrid& grid, int d_vstar) {
  return moments(f.view(), grid, d_vstar);
}

template <class S>
struct StressHeatT {
  std::map<std::pair<int, int>, S> stress;  // 1-based (i,j); i<=j
  std::vector<S> q;                         // heat flux, D_x components
};
using StressHeat = StressHeatT<double>;

/// Reduced stress tensor and heat flux. Only the moments reachable through
/// (g, h, s_j) exist: sigma_ij for i,j <= D_x and for i <= D_x < j <= D_v*,
/// and q_i for i <= D_x. The drift corrections carried by the s_j fields are
/// (1/2) u_j^2 <c_i g> - u_j <c_i s_j>, which is what the full-velocity
/// definitions reduce to (see the consistency test against 3D quadrature).
template <class S>
StressHeatT<S> stress_heat(const FieldsView<S>& f, const VelocityGrid& grid,
                           const MacroStateT<S>& m) {
  const int nv = grid.size();
  const int dx = grid.dim;
  const int d_vstar = static_cast<int>(m.u.size());
  detail::check_field_sizes(f, grid, d_vstar);
  const Eigen::VectorXd& w = grid.weights;

  StressHeatT<S> out;
  for (int i = 0; i < dx; ++i) {
    for (int j = i; j < dx; ++j) {
      S mom = f.g[0] * (grid.points(i, 0) * grid.points(j, 0) * w(0));
      for (int k = 1; k < nv; ++k)
        mom = mom + f.g[k] * (grid.points(i, k) * grid.points(j, k) * w(k));
      S sig = mom - m.rho * m.u[i] * m.u[j];
      if (i == j) sig = sig - m.rho * m.T;
      out.stress.emplace(std::make_pair(i + 1, j + 1), std::move(sig));
    }
    for (int j = dx; j < d_vstar; ++j) {
      const auto& sj = f.s[j - dx];
      S mom = sj[0] * (grid.points(i, 0) * w(0));
      for (int k = 1; k < nv; ++k) mom = mom + sj[k] * (grid.points(i, k) * w(k));
      out.stress.emplace(std::make_pair(i + 1, j + 1), mom - m.rho * m.u[i] * m.u[j]);
    }
  }

  for (int i = 0; i < dx; ++i) {
    // <c_i (|c~|^2/2 g + h)>
    S ci0 = grid.points(i, 0) - m.u[i];
    S c2 = square(grid.points(0, 0) - m.u[0]);
    for (int d = 1; d < dx; ++d) c2 = c2 + square(grid.points(d, 0) - m.u[d]);
    S qi = ci0 * (c2 * 0.5 * f.g[0] + f.h[0]) * w(0);
    S cg = ci0 * f.g[0] * w(0);
    std::vector<S> cs;
    for (int j = dx; j < d_vstar; ++j) cs.push_back(ci0 * f.s[j - dx][0] * w(0));
    for (int k = 1; k < nv; ++k) {
      S ci = grid.points(i, k) - m.u[i];
      S ck2 = square(grid.points(0, k) - m.u[0]);
      for (int d = 1; d < dx; ++d) ck2 = ck2 + square(grid.points(d, k) - m.u[d]);
      qi = qi + ci * (ck2 * 0.5 * f.g[k] + f.h[k]) * w(k);
      cg = cg + ci * f.g[k] * w(k);
      for (int j = dx; j < d_vstar; ++j)
        cs[j - dx] = cs[j - dx] + ci * f.s[j - dx][k] * w(k);
    }
    for (int j = dx; j < d_vstar; ++j)
      qi = qi + square(m.u[j]) * 0.5 * cg - m.u[j] * cs[j - dx];
    out.q.push_back(std::move(qi));
  }
  return out;
}

template <class S>
StressHeatT<S> stress_heat(const ReducedFieldSetT<S>& f, const VelocityGrid& grid,
                           const MacroStateT<S>& m) {
  return stress_heat(f.view(), grid, m);
}

}  // namespace rbgk
