#pragma once

// Batched loss/gradient engine: evaluates every network over whole sample
// sets at once (lanes = value columns followed by one tangent block per
// trace input) and runs a hand-derived reverse sweep over the augmented
// forward, so gradients of the residual loss — which contains input
// derivatives — are exact. Cross-validated against the scalar tape path in
// the test suite; the two must agree to rounding.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "rbgk/common.hpp"
#include "rbgk/loss.hpp"
#include "rbgk/network.hpp"
#include "rbgk/problem.hpp"
#include "rbgk/reduced_physics.hpp"
#include "rbgk/velocity_grid.hpp"

namespace rbgk::batch {

struct StepResult {
  double total = 0.0;
  double eq = 0.0;
  double ic = 0.0;
  double bc = 0.0;
  double rho_ave = 1.0;
  double grad_norm = 0.0;
};

namespace detail {

using Eigen::ArrayXd;
using Eigen::ArrayXXd;
using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;
using RowArr = Eigen::Array<double, 1, Eigen::Dynamic>;

struct MlpCache {
  std::vector<MatrixXd> A;  // A[0] = embedded input; A[l+1] = layer outputs
  std::vector<MatrixXd> Z;  // pre-activations
};

inline MatrixXd act_value(Activation act, const MatrixXd& zv) {
  if (act == Activation::Tanh) return zv.array().tanh().matrix();
  return zv.array().sin().matrix();
}
inline MatrixXd act_d1(Activation act, const MatrixXd& zv, const MatrixXd& av) {
  if (act == Activation::Tanh) return (1.0 - av.array().square()).matrix();
  return zv.array().cos().matrix();
}
inline MatrixXd act_d2(Activation act, const MatrixXd& av, const MatrixXd& d1) {
  if (act == Activation::Tanh) return (-2.0 * av.array() * d1.array()).matrix();
  return (-av.array()).matrix();
}

inline void mlp_forward(const MlpArchitecture& a, const double* theta, long base, MlpCache& c,
                        int n_value) {
  const int L = a.n_layers();
  c.Z.assign(L, MatrixXd());
  c.A.resize(L + 1);
  const int lanes = static_cast<int>(c.A[0].cols());
  const int d_tan = lanes / n_value - 1;
  for (int l = 0; l < L; ++l) {
    Eigen::Map<const MatrixXd> W(theta + base + a.w_offset(l), a.layer_out(l), a.layer_in(l));
    Eigen::Map<const VectorXd> b(theta + base + a.b_offset(l), a.layer_out(l));
    c.Z[l].noalias() = W * c.A[l];
    c.Z[l].leftCols(n_value).colwise() += b;
    if (l + 1 < L) {
      MatrixXd& A = c.A[l + 1];
      A.resize(a.layer_out(l), lanes);
      A.leftCols(n_value) = act_value(a.activation, c.Z[l].leftCols(n_value));
      if (d_tan > 0) {
        const MatrixXd sp = act_d1(a.activation, c.Z[l].leftCols(n_value), A.leftCols(n_value));
        for (int d = 0; d < d_tan; ++d)
          A.middleCols(static_cast<long>(n_value) * (1 + d), n_value) =
              (sp.array() * c.Z[l].middleCols(static_cast<long>(n_value) * (1 + d), n_value).array())
                  .matrix();
      }
    } else {
      c.A[l + 1] = c.Z[l];
    }
  }
}

// dA: adjoint of the network output (all lanes), consumed. Parameter
// gradients accumulate into `grad`; input adjoints are dropped because the
// embedding carries no trainable values.
inline void mlp_backward(const MlpArchitecture& a, const double* theta, long base,
                         const MlpCache& c, MatrixXd dA, double* grad, int n_value) {
  const int L = a.n_layers();
  const int lanes = static_cast<int>(c.A[0].cols());
  const int d_tan = lanes / n_value - 1;
  for (int l = L - 1; l >= 0; --l) {
    MatrixXd dZ;
    if (l + 1 < L) {
      const auto av = c.A[l + 1].leftCols(n_value);
      const MatrixXd sp = act_d1(a.activation, c.Z[l].leftCols(n_value), av);
      dZ.resize(c.A[l + 1].rows(), lanes);
      dZ.leftCols(n_value) = (sp.array() * dA.leftCols(n_value).array()).matrix();
      if (d_tan > 0) {
        const MatrixXd spp = act_d2(a.activation, av, sp);
        for (int d = 0; d < d_tan; ++d) {
          const long off = static_cast<long>(n_value) * (1 + d);
          const auto zt = c.Z[l].middleCols(off, n_value).array();
          const auto dat = dA.middleCols(off, n_value).array();
          dZ.leftCols(n_value).array() += spp.array() * zt * dat;
          dZ.middleCols(off, n_value) = (sp.array() * dat).matrix();
        }
      }
    } else {
      dZ = std::move(dA);
    }
    Eigen::Map<MatrixXd> gW(grad + base + a.w_offset(l), a.layer_out(l), a.layer_in(l));
    Eigen::Map<VectorXd> gb(grad + base + a.b_offset(l), a.layer_out(l));
    gW.noalias() += dZ * c.A[l].transpose();
    gb.noalias() += dZ.leftCols(n_value).rowwise().sum();
    if (l > 0) {
      Eigen::Map<const MatrixXd> W(theta + base + a.w_offset(l), a.layer_out(l), a.layer_in(l));
      dA.resize(a.layer_in(l), lanes);
      dA.noalias() = W.transpose() * dZ;
    }
  }
}

class Engine {
 public:
  Engine(const ProblemSpec& prob, const VelocityGrid& grid, const NetworkParams& np,
         double eps_weight)
      : prob_(&prob), grid_(&grid), np_(&np), eps_(eps_weight) {
    dx_ = prob.dx;
    dvstar_ = prob.d_vstar;
    nv_ = grid.size();
    nf_ = np.n_fields();
    steady_ = prob.steady;
    D_ = steady_ ? dx_ : dx_ + 1;
    ew_ = (0.5 * grid.speed2.array() * grid.weights.array()).matrix();
    for (int i = 0; i < dx_; ++i)
      viw_.push_back((grid.points.row(i).transpose().array() * grid.weights.array()).matrix());
  }

  struct FieldCache {
    MlpCache eq, neq;
    RowArr r, tau;   // exp of clamped pseudo rho / T (value columns)
    RowArr mr, mT;   // clamp masks
    MatrixXd ustar;  // dx x n
    MatrixXd alpha;  // |v_k - u*|^2, Nv x n
    MatrixXd P;      // F_eq values
    std::vector<MatrixXd> G;  // log-tangent factors, one per trace input
    MatrixXd Sv;
    std::vector<MatrixXd> St;
    MatrixXd Fv;
    std::vector<MatrixXd> Ft;
    MatrixXd R;   // residual (interior only)
    MatrixXd dR;  // residual seed stash
    MatrixXd dFv;
    std::vector<MatrixXd> dFt;
  };

  struct Group {
    int n = 0;
    int d_tan = 0;
    MatrixXd emb;
    std::vector<FieldCache> f;
  };

  StepResult run(const SampleSet& samples, double lambda1, double lambda2,
                 std::vector<double>* grad_out) {
    StepResult out;
    if (steady_) lambda1 = 0.0;

    build_embedding(interior_, samples.interior_x,
                    samples.interior_t.size() ? &samples.interior_t : nullptr, D_);
    for (int f = 0; f < nf_; ++f) forward_field(interior_, f);

    borders_ = Group();
    bperm_.clear();
    if (lambda2 != 0.0) {
      sort_boundary(samples);
      if (!bperm_.empty()) {
        MatrixXd bx(dx_, static_cast<long>(bperm_.size()));
        VectorXd bt(static_cast<long>(bperm_.size()));
        for (std::size_t i = 0; i < bperm_.size(); ++i) {
          bx.col(static_cast<long>(i)) = samples.boundary[bperm_[i]].x;
          bt(static_cast<long>(i)) = samples.boundary[bperm_[i]].t;
        }
        build_embedding(borders_, bx, steady_ ? nullptr : &bt, 0);
        for (int f = 0; f < nf_; ++f) forward_field(borders_, f);
      }
    }

    initial_ = Group();
    if (!steady_ && samples.n_ic() > 0 && lambda1 != 0.0) {
      VectorXd t0 = VectorXd::Zero(samples.n_ic());
      build_embedding(initial_, samples.initial_x, &t0, 0);
      for (int f = 0; f < nf_; ++f) forward_field(initial_, f);
    }

    out.rho_ave = 1.0;
    if (steady_) {
      out.rho_ave = (grid_->weights.transpose() * interior_.f[0].Fv).mean();
      if (!(out.rho_ave > 1e-12))
        throw degenerate_state_error("batch loss: collocation-mean density is degenerate",
                                     out.rho_ave, 0.0);
      const double inv = 1.0 / out.rho_ave;
      interior_.f[0].Fv *= inv;
      for (auto& ft : interior_.f[0].Ft) ft *= inv;
      if (borders_.n > 0) borders_.f[0].Fv *= inv;
    }

    forward_moments(interior_, mom_);
    const double inv_kn = prob_->source_enabled ? 1.0 / prob_->kn : 0.0;
    const int x_base = steady_ ? 0 : 1;
    for (int f = 0; f < nf_; ++f) {
      FieldCache& c = interior_.f[f];
      c.R = MatrixXd::Zero(nv_, interior_.n);
      for (int d = 0; d < dx_; ++d)
        c.R.array() +=
            c.Ft[x_base + d].array().colwise() * grid_->points.row(d).transpose().array();
      if (!steady_) c.R += c.Ft[0];
      if (prob_->source_enabled) {
        if (f == 0)
          c.R -= inv_kn * (mom_.gM - c.Fv);
        else if (f == 1)
          c.R -= inv_kn * ((mom_.gM.array().rowwise() * mom_.ch).matrix() - c.Fv);
        else {
          const int j = np_->fields[f].id.j - 1;
          c.R -= inv_kn * ((mom_.gM.array().rowwise() * mom_.u.row(j).array()).matrix() - c.Fv);
        }
      }
    }

    std::vector<double> local_grad;
    std::vector<double>& grad = grad_out ? *grad_out : local_grad;
    grad.assign(np_->total_param_count(), 0.0);

    // equation loss and seeds
    const int fam_eq = np_->family_index(WeightFamily::Eq);
    for (int f = 0; f < nf_; ++f) {
      FieldCache& c = interior_.f[f];
      ArrayXd w(nv_), iw(nv_), lg(nv_), sig(nv_);
      weight_vectors(fam_eq, f, w, iw, lg, sig);
      const ArrayXXd term = (c.R.array().colwise() * iw).colwise() + lg;
      out.eq += term.square().sum() / interior_.n;
      const ArrayXXd dterm = (2.0 / interior_.n) * term;
      c.dFv = MatrixXd::Zero(nv_, interior_.n);
      c.dFt.assign(D_, MatrixXd::Zero(nv_, interior_.n));
      c.dR = (dterm.colwise() * iw).matrix();
      Eigen::Map<ArrayXd> gz(grad.data() + np_->z_offset(fam_eq, f), nv_);
      gz += (dterm * ((c.R.array().colwise() * (-iw.square())).colwise() + 1.0 / (1.0 + w)))
                .rowwise()
                .sum() *
            sig;
      for (int d = 0; d < dx_; ++d)
        c.dFt[x_base + d].array() +=
            c.dR.array().colwise() * grid_->points.row(d).transpose().array();
      if (!steady_) c.dFt[0] += c.dR;
      if (prob_->source_enabled) c.dFv += inv_kn * c.dR;
    }

    if (prob_->source_enabled) {
      MatrixXd dgM = -inv_kn * interior_.f[0].dR;
      MatrixXd dhM = -inv_kn * interior_.f[1].dR;
      std::vector<MatrixXd> dsM(dvstar_ - dx_);
      for (int j = dx_; j < dvstar_; ++j) dsM[j - dx_] = -inv_kn * interior_.f[2 + (j - dx_)].dR;
      backward_moments(interior_, mom_, dgM, dhM, dsM);
    }

    if (borders_.n > 0) {
      for (int f = 0; f < nf_; ++f) borders_.f[f].dFv = MatrixXd::Zero(nv_, borders_.n);
      bc_loss_and_seeds(samples, lambda2, out, grad);
    }

    if (initial_.n > 0) {
      for (int f = 0; f < nf_; ++f) initial_.f[f].dFv = MatrixXd::Zero(nv_, initial_.n);
      ic_loss_and_seeds(samples, lambda1, out, grad);
    }

    if (steady_) {
      double rbar = -(interior_.f[0].dFv.array() * interior_.f[0].Fv.array()).sum();
      for (int d = 0; d < D_; ++d)
        rbar -= (interior_.f[0].dFt[d].array() * interior_.f[0].Ft[d].array()).sum();
      if (borders_.n > 0) rbar -= (borders_.f[0].dFv.array() * borders_.f[0].Fv.array()).sum();
      rbar /= out.rho_ave;
      const double inv = 1.0 / out.rho_ave;
      interior_.f[0].dFv *= inv;
      for (auto& d : interior_.f[0].dFt) d *= inv;
      if (borders_.n > 0) borders_.f[0].dFv *= inv;
      interior_.f[0].dFv.noalias() +=
          (rbar / interior_.n) * grid_->weights * RowVectorXd::Ones(interior_.n);
    }

    for (int f = 0; f < nf_; ++f) backward_field(interior_, f, grad.data());
    if (borders_.n > 0)
      for (int f = 0; f < nf_; ++f) backward_field(borders_, f, grad.data());
    if (initial_.n > 0)
      for (int f = 0; f < nf_; ++f) backward_field(initial_, f, grad.data());

    out.total = out.eq + lambda1 * out.ic + lambda2 * out.bc;
    double g2 = 0.0;
    for (double v : grad) g2 += v * v;
    out.grad_norm = std::sqrt(g2);
    return out;
  }

  std::vector<MatrixXd> values_at(const MatrixXd& x, const VectorXd* t) {
    Group g;
    build_embedding(g, x, t, 0);
    std::vector<MatrixXd> out;
    out.reserve(nf_);
    for (int f = 0; f < nf_; ++f) {
      forward_field(g, f);
      out.push_back(std::move(g.f[f].Fv));
    }
    if (steady_) out[0] /= np_->rho_ave;
    return out;
  }

 private:
  static constexpr double kClamp = 20.0;

  void build_embedding(Group& g, const MatrixXd& x, const VectorXd* t, int d_tan) const {
    g.n = static_cast<int>(x.cols());
    g.d_tan = d_tan;
    const int din = dx_ + (steady_ ? 0 : 1);
    const int K = static_cast<int>(np_->multiscale.size());
    g.emb = MatrixXd::Zero(static_cast<long>(K) * din, static_cast<long>(g.n) * (1 + d_tan));
    MatrixXd raw(din, g.n);
    if (!steady_) {
      if (t)
        raw.row(0) = t->transpose();
      else
        raw.row(0).setZero();
      raw.bottomRows(dx_) = x;
    } else {
      raw = x;
    }
    for (int k = 0; k < K; ++k) g.emb.block(k * din, 0, din, g.n) = np_->multiscale(k) * raw;
    for (int d = 0; d < d_tan; ++d)
      for (int k = 0; k < K; ++k)
        g.emb.block(k * din + d, static_cast<long>(g.n) * (1 + d), 1, g.n)
            .setConstant(np_->multiscale(k));
    g.f.assign(nf_, FieldCache());
  }

  void forward_field(Group& g, int fi) const {
    const auto& fp = np_->fields[fi];
    const double* theta = np_->theta.data();
    FieldCache& c = g.f[fi];
    const int n = g.n;
    const int d_tan = g.d_tan;

    c.eq.A.resize(1);
    c.eq.A[0] = g.emb;
    mlp_forward(fp.eq_arch, theta, np_->eq_offset(fi), c.eq, n);
    c.neq.A.resize(1);
    c.neq.A[0] = g.emb;
    mlp_forward(fp.neq_arch, theta, np_->neq_offset(fi), c.neq, n);

    const MatrixXd& eq_out = c.eq.A.back();
    const RowArr yr_raw = eq_out.row(0).leftCols(n).array();
    const RowArr yT_raw = eq_out.row(dx_ + 1).leftCols(n).array();
    c.mr = (yr_raw.abs() <= kClamp).cast<double>();
    c.mT = (yT_raw.abs() <= kClamp).cast<double>();
    c.r = yr_raw.min(kClamp).max(-kClamp).exp();
    c.tau = yT_raw.min(kClamp).max(-kClamp).exp();
    c.ustar = eq_out.block(1, 0, dx_, n);

    c.alpha.resize(nv_, n);
    c.alpha.noalias() = -2.0 * grid_->points.transpose() * c.ustar;
    c.alpha.colwise() += grid_->speed2;
    c.alpha.array().rowwise() += c.ustar.colwise().squaredNorm().array();

    const RowArr pref = c.r * (2.0 * kPi * c.tau).pow(-0.5 * dx_);
    c.P = (c.alpha.array().rowwise() * (-0.5 / c.tau)).exp().matrix();
    c.P.array().rowwise() *= pref;

    c.G.assign(d_tan, MatrixXd());
    for (int d = 0; d < d_tan; ++d) {
      const long off = static_cast<long>(n) * (1 + d);
      const RowArr yr_t = eq_out.row(0).middleCols(off, n).array() * c.mr;
      const RowArr yT_t = eq_out.row(dx_ + 1).middleCols(off, n).array() * c.mT;
      const MatrixXd us_t = eq_out.block(1, off, dx_, n);
      MatrixXd vmu_dot;  // (v - u*) . us_t
      vmu_dot.noalias() = grid_->points.transpose() * us_t;
      vmu_dot.array().rowwise() -= (c.ustar.array() * us_t.array()).colwise().sum();
      c.G[d] = (c.alpha.array().rowwise() * (yT_t / (2.0 * c.tau))).matrix();
      c.G[d].array().rowwise() += yr_t - 0.5 * dx_ * yT_t;
      c.G[d].array() += vmu_dot.array().rowwise() / c.tau;
    }

    const MatrixXd& neq_out = c.neq.A.back();
    c.Sv = neq_out.leftCols(n);
    c.St.assign(d_tan, MatrixXd());
    for (int d = 0; d < d_tan; ++d)
      c.St[d] = neq_out.middleCols(static_cast<long>(n) * (1 + d), n);

    const double C = fp.split_constant;
    const ArrayXXd one_cs = 1.0 + C * c.Sv.array();
    c.Fv = (c.P.array() * one_cs).matrix();
    c.Ft.assign(d_tan, MatrixXd());
    for (int d = 0; d < d_tan; ++d)
      c.Ft[d] = ((c.P.array() * c.G[d].array()) * one_cs + C * (c.P.array() * c.St[d].array()))
                    .matrix();
  }

  void backward_field(Group& g, int fi, double* grad) const {
    const auto& fp = np_->fields[fi];
    FieldCache& c = g.f[fi];
    const int n = g.n;
    const int d_tan = g.d_tan;
    const double C = fp.split_constant;
    const long lanes = static_cast<long>(n) * (1 + d_tan);

    if (c.dFv.size() == 0) c.dFv = MatrixXd::Zero(nv_, n);
    if (static_cast<int>(c.dFt.size()) != d_tan) c.dFt.assign(d_tan, MatrixXd::Zero(nv_, n));

    const ArrayXXd one_cs = 1.0 + C * c.Sv.array();
    MatrixXd dP = (c.dFv.array() * one_cs).matrix();
    MatrixXd dSv = (C * (c.dFv.array() * c.P.array())).matrix();
    std::vector<MatrixXd> dG(d_tan), dSt(d_tan);
    for (int d = 0; d < d_tan; ++d) {
      const ArrayXXd PT = c.P.array() * c.G[d].array();
      const ArrayXXd dPT = c.dFt[d].array() * one_cs;
      dSv.array() += C * c.dFt[d].array() * PT;
      dP.array() += C * c.dFt[d].array() * c.St[d].array();
      dSt[d] = (C * (c.dFt[d].array() * c.P.array())).matrix();
      dP.array() += dPT * c.G[d].array();
      dG[d] = (dPT * c.P.array()).matrix();
    }

    const MatrixXd& eq_out = c.eq.A.back();
    MatrixXd dEq = MatrixXd::Zero(dx_ + 2, lanes);
    const MatrixXd LbarP = (dP.array() * c.P.array()).matrix();
    const ArrayXXd a_over = c.alpha.array().rowwise() * (0.5 / c.tau);

    dEq.row(0).leftCols(n) = LbarP.colwise().sum();
    dEq.row(dx_ + 1).leftCols(n) = ((LbarP.array() * (a_over - 0.5 * dx_)).colwise().sum()).matrix();
    for (int i = 0; i < dx_; ++i) {
      ArrayXXd vmu = (-c.ustar.row(i)).replicate(nv_, 1).array();
      vmu.colwise() += grid_->points.row(i).transpose().array();
      dEq.row(1 + i).leftCols(n).array() += (LbarP.array() * vmu).colwise().sum() / c.tau;
      for (int d = 0; d < d_tan; ++d) {
        const long off = static_cast<long>(n) * (1 + d);
        const RowArr yT_t = eq_out.row(dx_ + 1).middleCols(off, n).array() * c.mT;
        const MatrixXd us_t = eq_out.block(1, off, dx_, n);
        const RowArr dg_vmu = (dG[d].array() * vmu).colwise().sum();
        dEq.row(1 + i).middleCols(off, n).array() += dg_vmu / c.tau;
        dEq.row(1 + i).leftCols(n).array() +=
            (dg_vmu * (-yT_t) - dG[d].colwise().sum().array() * us_t.row(i).array()) / c.tau;
      }
    }
    for (int d = 0; d < d_tan; ++d) {
      const long off = static_cast<long>(n) * (1 + d);
      const RowArr yr_t = eq_out.row(0).middleCols(off, n).array() * c.mr;
      const RowArr yT_t = eq_out.row(dx_ + 1).middleCols(off, n).array() * c.mT;
      dEq.row(0).middleCols(off, n) = dG[d].colwise().sum();
      dEq.row(dx_ + 1).middleCols(off, n) =
          ((dG[d].array() * (a_over - 0.5 * dx_)).colwise().sum()).matrix();
      ArrayXXd gminus = c.G[d].array();
      gminus.rowwise() -= yr_t - 0.5 * dx_ * yT_t;
      dEq.row(dx_ + 1).leftCols(n).array() -= (dG[d].array() * gminus).colwise().sum();
    }
    dEq.row(0).leftCols(n).array() *= c.mr;
    dEq.row(dx_ + 1).leftCols(n).array() *= c.mT;
    for (int d = 0; d < d_tan; ++d) {
      const long off = static_cast<long>(n) * (1 + d);
      dEq.row(0).middleCols(off, n).array() *= c.mr;
      dEq.row(dx_ + 1).middleCols(off, n).array() *= c.mT;
    }

    MatrixXd dNeq = MatrixXd::Zero(nv_, lanes);
    dNeq.leftCols(n) = dSv;
    for (int d = 0; d < d_tan; ++d) dNeq.middleCols(static_cast<long>(n) * (1 + d), n) = dSt[d];

    mlp_backward(fp.eq_arch, np_->theta.data(), np_->eq_offset(fi), c.eq, std::move(dEq), grad, n);
    mlp_backward(fp.neq_arch, np_->theta.data(), np_->neq_offset(fi), c.neq, std::move(dNeq),
                 grad, n);
  }

  struct MomentCache {
    RowVectorXd rho, E;
    RowArr T, ch;
    MatrixXd u;     // dvstar x n
    MatrixXd beta;  // |v - u~|^2
    MatrixXd gM;
  };

  void forward_moments(const Group& g, MomentCache& m) const {
    const int n = g.n;
    m.rho.noalias() = grid_->weights.transpose() * g.f[0].Fv;
    for (int i = 0; i < n; ++i)
      if (!(m.rho(i) > 1e-12))
        throw numeric_error("batch loss: degenerate density at interior point " +
                            std::to_string(i));
    m.u.resize(dvstar_, n);
    for (int i = 0; i < dx_; ++i) m.u.row(i).noalias() = viw_[i].transpose() * g.f[0].Fv;
    for (int j = dx_; j < dvstar_; ++j)
      m.u.row(j).noalias() = grid_->weights.transpose() * g.f[2 + (j - dx_)].Fv;
    m.E.noalias() = ew_.transpose() * g.f[0].Fv;
    m.E.noalias() += grid_->weights.transpose() * g.f[1].Fv;
    m.u.array().rowwise() /= m.rho.array();
    m.T = (2.0 * m.E.array() / m.rho.array() - m.u.colwise().squaredNorm().array()) / 3.0;
    for (int i = 0; i < n; ++i)
      if (!(m.T(i) > 0.0))
        throw numeric_error("batch loss: degenerate temperature at interior point " +
                            std::to_string(i));

    m.beta.resize(nv_, n);
    m.beta.noalias() = -2.0 * grid_->points.transpose() * m.u.topRows(dx_);
    m.beta.colwise() += grid_->speed2;
    m.beta.array().rowwise() += m.u.topRows(dx_).colwise().squaredNorm().array();

    const RowArr pref = m.rho.array() * (2.0 * kPi * m.T).pow(-0.5 * dx_);
    m.gM = (m.beta.array().rowwise() * (-0.5 / m.T)).exp().matrix();
    m.gM.array().rowwise() *= pref;

    m.ch = (3.0 - dx_) * m.T;
    for (int j = dx_; j < dvstar_; ++j) m.ch += m.u.row(j).array().square();
    m.ch *= 0.5;
  }

  void backward_moments(Group& g, MomentCache& m, const MatrixXd& dgM_in, const MatrixXd& dhM,
                        const std::vector<MatrixXd>& dsM) const {
    const int n = g.n;
    RowArr drho = RowArr::Zero(n);
    RowArr dT = RowArr::Zero(n);
    RowArr dE = RowArr::Zero(n);
    MatrixXd du = MatrixXd::Zero(dvstar_, n);

    MatrixXd dgM = dgM_in;
    RowArr dch = RowArr::Zero(n);
    if (dhM.size()) {
      dgM.array() += dhM.array().rowwise() * m.ch;
      dch = (dhM.array() * m.gM.array()).colwise().sum();
    }
    for (int j = dx_; j < dvstar_; ++j) {
      const MatrixXd& ds = dsM[j - dx_];
      if (!ds.size()) continue;
      dgM.array() += ds.array().rowwise() * m.u.row(j).array();
      du.row(j).array() += (ds.array() * m.gM.array()).colwise().sum();
    }
    dT += 0.5 * (3.0 - dx_) * dch;
    for (int j = dx_; j < dvstar_; ++j) du.row(j).array() += dch * m.u.row(j).array();

    const MatrixXd LbarM = (dgM.array() * m.gM.array()).matrix();
    drho += LbarM.array().colwise().sum() / m.rho.array();
    {
      ArrayXXd dLm_dT = m.beta.array().rowwise() * (0.5 / m.T.square());
      dLm_dT.rowwise() -= 0.5 * dx_ / m.T;
      dT += (LbarM.array() * dLm_dT).colwise().sum();
    }
    for (int i = 0; i < dx_; ++i) {
      ArrayXXd vmu = (-m.u.row(i)).replicate(nv_, 1).array();
      vmu.colwise() += grid_->points.row(i).transpose().array();
      du.row(i).array() += (LbarM.array() * vmu).colwise().sum() / m.T;
    }

    dE += dT * (2.0 / (3.0 * m.rho.array()));
    drho += dT * (-2.0 * m.E.array() / (3.0 * m.rho.array().square()));
    for (int i = 0; i < dvstar_; ++i) du.row(i).array() += dT * (-2.0 / 3.0) * m.u.row(i).array();

    MatrixXd dPmom(dvstar_, n);
    for (int i = 0; i < dvstar_; ++i) {
      dPmom.row(i) = (du.row(i).array() / m.rho.array()).matrix();
      drho -= du.row(i).array() * m.u.row(i).array() / m.rho.array();
    }

    g.f[0].dFv.noalias() += grid_->weights * drho.matrix();
    for (int i = 0; i < dx_; ++i) g.f[0].dFv.noalias() += viw_[i] * dPmom.row(i);
    g.f[0].dFv.noalias() += ew_ * dE.matrix();
    g.f[1].dFv.noalias() += grid_->weights * dE.matrix();
    for (int j = dx_; j < dvstar_; ++j)
      g.f[2 + (j - dx_)].dFv.noalias() += grid_->weights * dPmom.row(j);
  }

  void weight_vectors(int fam, int f, ArrayXd& w, ArrayXd& iw, ArrayXd& lg, ArrayXd& sig) const {
    Eigen::Map<const ArrayXd> z(np_->theta.data() + np_->z_offset(fam, f), nv_);
    w = (z.exp() + 1.0).log();
    iw = 1.0 / (w + eps_);
    lg = (1.0 + w).log();
    sig = 1.0 / (1.0 + (-z).exp());
  }

  void sort_boundary(const SampleSet& samples) {
    for (std::size_t i = 0; i < samples.boundary.size(); ++i) {
      const auto& face = prob_->boundaries[samples.boundary[i].face];
      if (face.kind == BoundaryKind::Outflow) continue;
      if (face.kind == BoundaryKind::Periodic)
        throw config_error("batch loss: periodic faces are not trainable boundaries");
      bperm_.push_back(i);
    }
    std::stable_sort(bperm_.begin(), bperm_.end(), [&](std::size_t a, std::size_t b) {
      return samples.boundary[a].face < samples.boundary[b].face;
    });
  }

  void bc_loss_and_seeds(const SampleSet& samples, double lambda2, StepResult& out,
                         std::vector<double>& grad) {
    const int fam_bc = np_->family_index(WeightFamily::BC);
    const int n_bc_total = samples.n_bc();
    const double scale = 2.0 * lambda2 / n_bc_total;

    std::size_t col0 = 0;
    while (col0 < bperm_.size()) {
      std::size_t col1 = col0;
      const int face_idx = samples.boundary[bperm_[col0]].face;
      while (col1 < bperm_.size() && samples.boundary[bperm_[col1]].face == face_idx) ++col1;
      const int nb = static_cast<int>(col1 - col0);
      const long c0 = static_cast<long>(col0);
      const BoundaryFace& face = prob_->boundaries[face_idx];
      const VectorXd nrm = face.inward_normal(dx_);
      const ArrayXd vn = (grid_->points.transpose() * nrm).array();

      std::vector<int> from_wall, to_wall;
      for (int k = 0; k < nv_; ++k) {
        if (vn(k) > 0.0) from_wall.push_back(k);
        else if (vn(k) < 0.0) to_wall.push_back(k);
      }

      std::vector<MatrixXd> target(nf_, MatrixXd(nv_, nb));
      std::vector<MatrixXd> unit_t;  // unit-density wall fields (Maxwell walls)
      RowVectorXd rho_w;
      std::vector<double> inv_den(nb, 0.0);
      if (face.kind == BoundaryKind::MaxwellWall) {
        unit_t.assign(nf_, MatrixXd(nv_, nb));
        rho_w.resize(nb);
        for (int b = 0; b < nb; ++b) {
          const auto& bsmp = samples.boundary[bperm_[col0 + b]];
          WallSpec wall = prob_->wall_at(face, bsmp.s);
          auto unit = wall_distribution_unit(wall, *grid_, dvstar_);
          inv_den[b] = 1.0 / wall_outflux_unit(wall, *grid_);
          double num = 0.0;
          for (int k : to_wall) num += vn(k) * borders_.f[0].Fv(k, c0 + b) * grid_->weights(k);
          rho_w(b) = -num * inv_den[b];
          for (int f = 0; f < nf_; ++f) {
            const std::vector<double>& uf = f == 0 ? unit.g : (f == 1 ? unit.h : unit.s[f - 2]);
            for (int k = 0; k < nv_; ++k) {
              unit_t[f](k, b) = uf[k];
              target[f](k, b) = rho_w(b) * uf[k];
            }
          }
        }
      } else {
        for (int b = 0; b < nb; ++b) {
          const auto& bsmp = samples.boundary[bperm_[col0 + b]];
          auto tgt = reduced_maxwellian(prob_->inflow_at(face, bsmp.s), *grid_, dvstar_);
          for (int f = 0; f < nf_; ++f) {
            const std::vector<double>& uf = f == 0 ? tgt.g : (f == 1 ? tgt.h : tgt.s[f - 2]);
            for (int k = 0; k < nv_; ++k) target[f](k, b) = uf[k];
          }
        }
      }

      RowArr drho_w = RowArr::Zero(nb);
      for (int f = 0; f < nf_; ++f) {
        ArrayXd w(nv_), iw(nv_), lg(nv_), sig(nv_);
        weight_vectors(fam_bc, f, w, iw, lg, sig);
        Eigen::Map<ArrayXd> gz(grad.data() + np_->z_offset(fam_bc, f), nv_);
        for (int k : from_wall) {
          const RowArr diff =
              borders_.f[f].Fv.row(k).middleCols(c0, nb).array() - target[f].row(k).array();
          const RowArr term = diff * iw(k) + lg(k);
          out.bc += term.square().sum() / n_bc_total;
          const RowArr dterm = scale * term;
          const RowArr ddiff = dterm * iw(k);
          borders_.f[f].dFv.row(k).middleCols(c0, nb).array() += ddiff;
          gz(k) += (dterm * (-diff * iw(k) * iw(k) + 1.0 / (1.0 + w(k)))).sum() * sig(k);
          if (face.kind == BoundaryKind::MaxwellWall)
            drho_w -= ddiff * unit_t[f].row(k).array();
        }
      }
      if (face.kind == BoundaryKind::MaxwellWall) {
        for (int b = 0; b < nb; ++b)
          for (int k : to_wall)
            borders_.f[0].dFv(k, c0 + b) += drho_w(b) * (-vn(k) * grid_->weights(k) * inv_den[b]);
      }
      col0 = col1;
    }
  }

  void ic_loss_and_seeds(const SampleSet& samples, double lambda1, StepResult& out,
                         std::vector<double>& grad) {
    const int fam_ic = np_->family_index(WeightFamily::IC);
    const int n_ic = initial_.n;
    const double scale = 2.0 * lambda1 / n_ic;
    for (int f = 0; f < nf_; ++f) {
      MatrixXd target(nv_, n_ic);
      for (int b = 0; b < n_ic; ++b) {
        auto tgt = reduced_maxwellian(prob_->initial.eval(samples.initial_x.col(b), dvstar_),
                                      *grid_, dvstar_);
        const std::vector<double>& uf = f == 0 ? tgt.g : (f == 1 ? tgt.h : tgt.s[f - 2]);
        for (int k = 0; k < nv_; ++k) target(k, b) = uf[k];
      }
      ArrayXd w(nv_), iw(nv_), lg(nv_), sig(nv_);
      weight_vectors(fam_ic, f, w, iw, lg, sig);
      const ArrayXXd diff = initial_.f[f].Fv.array() - target.array();
      const ArrayXXd term = (diff.colwise() * iw).colwise() + lg;
      out.ic += term.square().sum() / n_ic;
      const ArrayXXd dterm = scale * term;
      initial_.f[f].dFv.array() += dterm.colwise() * iw;
      Eigen::Map<ArrayXd> gz(grad.data() + np_->z_offset(fam_ic, f), nv_);
      gz += (dterm * ((diff.colwise() * (-iw.square())).colwise() + 1.0 / (1.0 + w)))
                .rowwise()
                .sum() *
            sig;
    }
  }

  const ProblemSpec* prob_;
  const VelocityGrid* grid_;
  const NetworkParams* np_;
  double eps_;
  int dx_, dvstar_, nv_, nf_, D_;
  bool steady_;
  VectorXd ew_;
  std::vector<VectorXd> viw_;

  Group interior_, borders_, initial_;
  MomentCache mom_;
  std::vector<std::size_t> bperm_;
};

}  // namespace detail

/// One full loss + gradient evaluation over a sample set.
inline StepResult loss_and_grad(const ProblemSpec& prob, const VelocityGrid& grid,
                                const NetworkParams& np, const SampleSet& samples, double lambda1,
                                double lambda2, double eps_weight, std::vector<double>& grad) {
  detail::Engine eng(prob, grid, np, eps_weight);
  return eng.run(samples, lambda1, lambda2, &grad);
}

/// Per-field values F_k at arbitrary points (Nv x N matrices). Steady mode
/// applies the stored normalization.
inline std::vector<Eigen::MatrixXd> eval_fields(const ProblemSpec& prob, const VelocityGrid& grid,
                                                const NetworkParams& np, const Eigen::MatrixXd& x,
                                                const Eigen::VectorXd* t = nullptr) {
  detail::Engine eng(prob, grid, np, 1e-6);
  return eng.values_at(x, t);
}

}  // namespace rbgk::batch
