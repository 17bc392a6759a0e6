#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rbgk/autodiff.hpp"
#include "rbgk/common.hpp"
#include "rbgk/network.hpp"
#include "rbgk/problem.hpp"
#include "rbgk/reduced_physics.hpp"
#include "rbgk/velocity_grid.hpp"

namespace rbgk {

/// Monte Carlo collocation sets: interior (residual), initial slice
/// (transient only) and boundary points tagged with their face.
struct SampleSet {
  Eigen::MatrixXd interior_x;  // dx x N_eq
  Eigen::VectorXd interior_t;  // N_eq, empty in steady mode
  Eigen::MatrixXd initial_x;   // dx x N_ic
  struct BoundarySample {
    Eigen::VectorXd x;
    double t = 0.0;
    int face = 0;
    double s = 0.0;  // face arclength parameter
  };
  std::vector<BoundarySample> boundary;

  int n_eq() const { return static_cast<int>(interior_x.cols()); }
  int n_ic() const { return static_cast<int>(initial_x.cols()); }
  int n_bc() const { return static_cast<int>(boundary.size()); }
};

/// View over the lower-bound-constrained uncertainty weights: one trainable
/// raw z per (loss family, field, velocity point), effective weight
/// w = ln(1 + e^z) > 0.
struct AdaptiveWeights {
  const NetworkParams* np = nullptr;
  double epsilon = 1e-6;

  double z(WeightFamily fam, int f, int k) const {
    const int fi = np->family_index(fam);
    if (fi < 0) throw usage_error("adaptive weights: family not present");
    return np->theta[np->z_offset(fi, f) + k];
  }
  double w(WeightFamily fam, int f, int k) const {
    const double zz = z(fam, f, k);
    return zz > 30.0 ? zz : std::log1p(std::exp(zz));
  }
};

/// Residual of the semi-discrete reduced system from already-traced field
/// values at one point: R_k = dF_k/dt + v_k . grad_x F_k - (F^M_k - F_k)/Kn.
/// Input layout on the tape: transient traces are (t, x...), steady (x...).
inline std::vector<std::vector<TracedScalar>> residual_from_fields(
    const std::vector<std::vector<TracedScalar>>& fields, const VelocityGrid& grid, int d_vstar,
    double kn, bool source_enabled, bool steady, const std::string& where) {
  const int nv = grid.size();
  const int dx = grid.dim;
  const int nf = static_cast<int>(fields.size());
  const int t_slot = steady ? -1 : 0;
  const int x_base = steady ? 0 : 1;

  std::vector<std::vector<TracedScalar>> out(nf);
  ReducedFieldSetT<TracedScalar> fset;
  fset.g = fields[0];
  fset.h = fields[1];
  for (int f = 2; f < nf; ++f) fset.s.push_back(fields[f]);

  ReducedFieldSetT<TracedScalar> fm;
  if (source_enabled) {
    try {
      fm = reduced_maxwellian(moments(fset, grid, d_vstar), grid, d_vstar);
    } catch (const degenerate_state_error& e) {
      throw numeric_error(std::string("residual: degenerate moments at ") + where + ": " + e.what());
    }
  }

  const double inv_kn = source_enabled ? 1.0 / kn : 0.0;
  for (int f = 0; f < nf; ++f) {
    const std::vector<TracedScalar>* fmf = nullptr;
    if (source_enabled) fmf = f == 0 ? &fm.g : (f == 1 ? &fm.h : &fm.s[f - 2]);
    out[f].reserve(nv);
    for (int k = 0; k < nv; ++k) {
      TracedScalar r = tangent_of(fields[f][k], x_base) * grid.points(0, k);
      for (int d = 1; d < dx; ++d)
        r = r + tangent_of(fields[f][k], x_base + d) * grid.points(d, k);
      if (t_slot >= 0) r = r + tangent_of(fields[f][k], t_slot);
      if (source_enabled) r = r - ((*fmf)[k] - fields[f][k]) * inv_kn;
      out[f].push_back(std::move(r));
    }
  }
  return out;
}

/// Traced loss assembly on one tape: the reference implementation the fast
/// batched path is validated against, and the gradient oracle for tests.
class TracedLoss {
 public:
  TracedLoss(const ProblemSpec& prob, const VelocityGrid& grid, const NetworkParams& np,
             Tape& tape, double eps_weight = 1e-6)
      : prob_(&prob), grid_(&grid), np_(&np), tape_(&tape), eps_(eps_weight) {
    theta_ = tape.register_params("theta", np.theta);
    rho_ave_ = tape.constant(1.0);
  }

  std::span<const TracedScalar> theta() const { return theta_; }
  TracedScalar rho_ave() const { return rho_ave_; }

  /// Steady mode: traced collocation-mean density of the raw g ansatz over
  /// the interior set; all later g evaluations are divided by it.
  void prepare_mass_norm(const Eigen::MatrixXd& interior_x) {
    if (!prob_->steady) throw usage_error("mass normalization applies to steady problems only");
    std::vector<std::vector<TracedScalar>> g_pts;
    g_pts.reserve(interior_x.cols());
    for (int i = 0; i < interior_x.cols(); ++i) {
      auto in = trace_point(interior_x.col(i), 0.0);
      g_pts.push_back(eval_field(*np_, 0, std::span<const TracedScalar>(in), theta_, *grid_));
    }
    rho_ave_ = traced_rho_ave(*tape_, g_pts, *grid_);
    normalized_ = true;
  }

  /// Network fields at one point, normalization applied to g in steady mode.
  std::vector<std::vector<TracedScalar>> fields_at(const Eigen::VectorXd& x, double t) {
    auto in = trace_point(x, t);
    std::vector<std::vector<TracedScalar>> out;
    out.reserve(np_->n_fields());
    for (int f = 0; f < np_->n_fields(); ++f) {
      auto vals = eval_field(*np_, f, std::span<const TracedScalar>(in), theta_, *grid_);
      if (f == 0 && normalized_)
        for (auto& v : vals) v = v / rho_ave_;
      out.push_back(std::move(vals));
    }
    return out;
  }

  /// Per-field residuals R^F_k at one interior point.
  std::vector<std::vector<TracedScalar>> residual(const Eigen::VectorXd& x, double t) {
    std::string where = "point (";
    for (int d = 0; d < x.size(); ++d) where += std::to_string(x(d)) + (d + 1 < x.size() ? ", " : "");
    where += ")";
    return residual_from_fields(fields_at(x, t), *grid_, prob_->d_vstar, prob_->kn,
                                prob_->source_enabled, prob_->steady, where);
  }

  TracedScalar equation_loss(const SampleSet& samples) {
    if (samples.n_eq() < 1) throw usage_error("equation_loss: empty interior sample set");
    auto w = family_weights(WeightFamily::Eq);
    TracedScalar acc = tape_->constant(0.0);
    for (int i = 0; i < samples.n_eq(); ++i) {
      const double t = prob_->steady ? 0.0 : samples.interior_t(i);
      auto res = residual(samples.interior_x.col(i), t);
      for (int f = 0; f < np_->n_fields(); ++f)
        for (int k = 0; k < grid_->size(); ++k)
          acc = acc + square(res[f][k] / (w[f][k].first + eps_) + w[f][k].second);
    }
    return acc * (1.0 / samples.n_eq());
  }

  TracedScalar ic_loss(const SampleSet& samples) {
    if (prob_->steady) throw usage_error("ic_loss: steady problems have no initial condition");
    if (samples.n_ic() < 1) throw usage_error("ic_loss: empty initial sample set");
    auto w = family_weights(WeightFamily::IC);
    TracedScalar acc = tape_->constant(0.0);
    for (int i = 0; i < samples.n_ic(); ++i) {
      auto target = reduced_maxwellian(prob_->initial.eval(samples.initial_x.col(i), prob_->d_vstar),
                                       *grid_, prob_->d_vstar);
      auto fields = fields_at(samples.initial_x.col(i), 0.0);
      for (int f = 0; f < np_->n_fields(); ++f) {
        const std::vector<double>& tg = f == 0 ? target.g : (f == 1 ? target.h : target.s[f - 2]);
        for (int k = 0; k < grid_->size(); ++k)
          acc = acc + square((fields[f][k] - tg[k]) / (w[f][k].first + eps_) + w[f][k].second);
      }
    }
    return acc * (1.0 / samples.n_ic());
  }

  TracedScalar bc_loss(const SampleSet& samples) {
    if (samples.n_bc() < 1) throw usage_error("bc_loss: empty boundary sample set");
    auto w = family_weights(WeightFamily::BC);
    bc_penalized_.clear();
    TracedScalar acc = tape_->constant(0.0);
    for (int i = 0; i < samples.n_bc(); ++i) {
      const auto& bs = samples.boundary[i];
      const BoundaryFace& face = prob_->boundaries[bs.face];
      if (face.kind == BoundaryKind::Outflow) continue;  // no target distribution
      if (face.kind == BoundaryKind::Periodic)
        throw config_error("bc_loss: periodic faces are not trainable boundaries");

      auto fields = fields_at(bs.x, bs.t);
      const Eigen::VectorXd n = face.inward_normal(prob_->dx);

      std::vector<std::vector<double>> unit_target;
      TracedScalar rho_w = tape_->constant(1.0);
      bool scaled_by_rho_w = false;
      if (face.kind == BoundaryKind::MaxwellWall) {
        WallSpec wall = prob_->wall_at(face, bs.s);
        rho_w = wall_density(std::span<const TracedScalar>(fields[0]), wall, *grid_);
        auto unit = wall_distribution_unit(wall, *grid_, prob_->d_vstar);
        unit_target.push_back(std::move(unit.g));
        unit_target.push_back(std::move(unit.h));
        for (auto& s : unit.s) unit_target.push_back(std::move(s));
        scaled_by_rho_w = true;
      } else {  // inflow
        auto target = reduced_maxwellian(prob_->inflow_at(face, bs.s), *grid_, prob_->d_vstar);
        unit_target.push_back(std::move(target.g));
        unit_target.push_back(std::move(target.h));
        for (auto& s : target.s) unit_target.push_back(std::move(s));
      }

      for (int f = 0; f < np_->n_fields(); ++f)
        for (int k = 0; k < grid_->size(); ++k) {
          if (!(grid_->points.col(k).dot(n) > 0.0)) continue;
          TracedScalar diff = scaled_by_rho_w ? fields[f][k] - rho_w * unit_target[f][k]
                                              : fields[f][k] - unit_target[f][k];
          acc = acc + square(diff / (w[f][k].first + eps_) + w[f][k].second);
          bc_penalized_.emplace_back(i, k);
        }
    }
    return acc * (1.0 / samples.n_bc());
  }

  /// L = L_Eq + lambda1 L_IC + lambda2 L_BC; steady mode pins lambda1 = 0.
  TracedScalar total_loss(TracedScalar eq, TracedScalar ic, TracedScalar bc, double lambda1,
                          double lambda2) const {
    if (prob_->steady) lambda1 = 0.0;
    return eq + ic * lambda1 + bc * lambda2;
  }

  /// (sample, velocity index) pairs the BC penalty actually touched; only
  /// half-space indices with v.n > 0 may ever appear.
  const std::vector<std::pair<int, int>>& bc_penalized() const { return bc_penalized_; }

 private:
  std::vector<TracedScalar> trace_point(const Eigen::VectorXd& x, double t) {
    std::vector<double> in;
    if (!prob_->steady) in.push_back(t);
    for (int d = 0; d < x.size(); ++d) in.push_back(x(d));
    return tape_->trace_begin(in);
  }

  // effective weight w and its log penalty ln(1+w), per field and velocity
  std::vector<std::vector<std::pair<TracedScalar, TracedScalar>>> family_weights(WeightFamily fam) {
    const int fi = np_->family_index(fam);
    if (fi < 0) throw usage_error("loss: weight family missing");
    std::vector<std::vector<std::pair<TracedScalar, TracedScalar>>> out(np_->n_fields());
    for (int f = 0; f < np_->n_fields(); ++f) {
      out[f].reserve(grid_->size());
      for (int k = 0; k < grid_->size(); ++k) {
        TracedScalar z = theta_[np_->z_offset(fi, f) + k];
        TracedScalar w = log(exp(z) + 1.0);
        out[f].emplace_back(w, log(w + 1.0));
      }
    }
    return out;
  }

  const ProblemSpec* prob_;
  const VelocityGrid* grid_;
  const NetworkParams* np_;
  Tape* tape_;
  double eps_;
  std::vector<TracedScalar> theta_;
  TracedScalar rho_ave_;
  bool normalized_ = false;
  std::vector<std::pair<int, int>> bc_penalized_;
};

/// Whole-set traced loss with gradient: the slow reference path.
struct TracedLossResult {
  double total, eq, ic, bc;
  double rho_ave;
  std::vector<double> grad;
};

inline TracedLossResult traced_loss_and_grad(const ProblemSpec& prob, const VelocityGrid& grid,
                                             const NetworkParams& np, const SampleSet& samples,
                                             double lambda1, double lambda2, double eps_weight) {
  Tape tape(prob.steady ? prob.dx : prob.dx + 1);
  TracedLoss ctx(prob, grid, np, tape, eps_weight);
  if (prob.steady) ctx.prepare_mass_norm(samples.interior_x);
  TracedScalar eq = ctx.equation_loss(samples);
  TracedScalar ic = !prob.steady && samples.n_ic() > 0 ? ctx.ic_loss(samples) : tape.constant(0.0);
  TracedScalar bc = samples.n_bc() > 0 ? ctx.bc_loss(samples) : tape.constant(0.0);
  TracedScalar total = ctx.total_loss(eq, ic, bc, lambda1, lambda2);
  auto g = tape.grad(total);
  return {total.value(), eq.value(), ic.value(), bc.value(), ctx.rho_ave().value(),
          std::move(g.at("theta"))};
}

}  // namespace rbgk
