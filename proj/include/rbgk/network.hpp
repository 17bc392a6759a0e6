#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rbgk/autodiff.hpp"
#include "rbgk/common.hpp"
#include "rbgk/reduced_physics.hpp"
#include "rbgk/velocity_grid.hpp"

namespace rbgk {

enum class Activation { Tanh, Sin };

inline std::string to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "sin"; }

struct MlpArchitecture {
  int n_hidden_layers = 5;
  int width = 80;
  Activation activation = Activation::Tanh;
  int input_dim = 0;
  int output_dim = 0;

  int n_layers() const { return n_hidden_layers + 1; }  // affine maps
  int layer_in(int l) const { return l == 0 ? input_dim : width; }
  int layer_out(int l) const { return l == n_hidden_layers ? output_dim : width; }
  long param_count() const {
    long n = 0;
    for (int l = 0; l < n_layers(); ++l) n += static_cast<long>(layer_out(l)) * layer_in(l) + layer_out(l);
    return n;
  }
  // offset of W_l / b_l inside this MLP's block; W stored column-major
  long w_offset(int l) const {
    long n = 0;
    for (int i = 0; i < l; ++i) n += static_cast<long>(layer_out(i)) * layer_in(i) + layer_out(i);
    return n;
  }
  long b_offset(int l) const { return w_offset(l) + static_cast<long>(layer_out(l)) * layer_in(l); }
};

struct FieldId {
  enum Kind { G, H, S } kind = G;
  int j = 0;  // for S fields: the velocity component it carries (D_x+1 .. D_v*, 1-based)
  std::string name() const {
    switch (kind) {
      case G: return "g";
      case H: return "h";
      default: return "s" + std::to_string(j);
    }
  }
  bool operator==(const FieldId&) const = default;
};

/// One reduced field = one pair of networks: the pseudo-macroscopic head
/// (rho*, u*, T*) feeding a Maxwellian, and the non-equilibrium correction
/// F*, combined as F = F_eq (1 + C F*).
struct FieldPairSpec {
  FieldId id;
  MlpArchitecture eq_arch;
  MlpArchitecture neq_arch;
  double split_constant = 1.0;
};

enum class WeightFamily : int { Eq = 0, IC = 1, BC = 2 };

inline std::string to_string(WeightFamily f) {
  switch (f) {
    case WeightFamily::Eq: return "Eq";
    case WeightFamily::IC: return "IC";
    default: return "BC";
  }
}

/// All trainable values in one flat buffer, declaration order:
/// per field {eq net layers, neq net layers}, then the adaptive loss-weight
/// raws z ordered family-major. The steady-state normalization divisor
/// rho_ave travels alongside but is not trainable.
struct NetworkParams {
  int dx = 1;
  int d_vstar = 1;
  int n_v = 0;
  bool steady = true;
  std::vector<FieldPairSpec> fields;
  std::vector<WeightFamily> families;
  Eigen::VectorXd multiscale;
  std::vector<double> theta;
  double rho_ave = 1.0;

  int n_fields() const { return static_cast<int>(fields.size()); }

  long pair_offset(int f) const {
    long off = 0;
    for (int i = 0; i < f; ++i)
      off += fields[i].eq_arch.param_count() + fields[i].neq_arch.param_count();
    return off;
  }
  long eq_offset(int f) const { return pair_offset(f); }
  long neq_offset(int f) const { return pair_offset(f) + fields[f].eq_arch.param_count(); }
  long nets_param_count() const { return pair_offset(n_fields()); }
  long z_offset(int family_idx, int f) const {
    return nets_param_count() + (static_cast<long>(family_idx) * n_fields() + f) * n_v;
  }
  long total_param_count() const {
    return nets_param_count() + static_cast<long>(families.size()) * n_fields() * n_v;
  }
  int family_index(WeightFamily fam) const {
    for (std::size_t i = 0; i < families.size(); ++i)
      if (families[i] == fam) return static_cast<int>(i);
    return -1;
  }

  struct Block {
    std::string name;
    long offset;
    long count;
  };
  std::vector<Block> block_table() const {
    std::vector<Block> out;
    for (int f = 0; f < n_fields(); ++f) {
      const auto& fp = fields[f];
      for (int part = 0; part < 2; ++part) {
        const MlpArchitecture& a = part == 0 ? fp.eq_arch : fp.neq_arch;
        const long base = part == 0 ? eq_offset(f) : neq_offset(f);
        const std::string tag = fp.id.name() + (part == 0 ? ".eq" : ".neq");
        for (int l = 0; l < a.n_layers(); ++l) {
          out.push_back({tag + ".W" + std::to_string(l), base + a.w_offset(l),
                         static_cast<long>(a.layer_out(l)) * a.layer_in(l)});
          out.push_back({tag + ".b" + std::to_string(l), base + a.b_offset(l), a.layer_out(l)});
        }
      }
    }
    for (std::size_t fam = 0; fam < families.size(); ++fam)
      for (int f = 0; f < n_fields(); ++f)
        out.push_back({"z." + to_string(families[fam]) + "." + fields[f].id.name(),
                       z_offset(static_cast<int>(fam), f), n_v});
    return out;
  }
};

struct NetworkBuild {
  int dx = 1;
  int d_vstar = 1;
  int n_v = 0;
  bool steady = true;
  std::vector<FieldId> field_ids;
  int n_hidden_layers = 5;
  int width = 80;
  Activation activation = Activation::Tanh;
  double split_constant = 1.0;
  std::vector<double> multiscale = {1.0, 4.0, 16.0};
};

/// Deterministic initialization: weights uniform on
/// [-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))], biases zero,
/// adaptive-weight raws zero.
inline NetworkParams init_params(const NetworkBuild& b, std::uint64_t seed) {
  NetworkParams np;
  np.dx = b.dx;
  np.d_vstar = b.d_vstar;
  np.n_v = b.n_v;
  np.steady = b.steady;
  np.multiscale = Eigen::Map<const Eigen::VectorXd>(b.multiscale.data(), b.multiscale.size());
  const int input_dim = static_cast<int>(b.multiscale.size()) * (b.dx + (b.steady ? 0 : 1));
  for (const auto& id : b.field_ids) {
    FieldPairSpec fp;
    fp.id = id;
    fp.eq_arch = {b.n_hidden_layers, b.width, b.activation, input_dim, b.dx + 2};
    fp.neq_arch = {b.n_hidden_layers, b.width, b.activation, input_dim, b.n_v};
    fp.split_constant = b.split_constant;
    np.fields.push_back(fp);
  }
  np.families = b.steady ? std::vector<WeightFamily>{WeightFamily::Eq, WeightFamily::BC}
                         : std::vector<WeightFamily>{WeightFamily::Eq, WeightFamily::IC,
                                                     WeightFamily::BC};
  np.theta.assign(np.total_param_count(), 0.0);

  std::mt19937_64 rng(seed);
  for (int f = 0; f < np.n_fields(); ++f) {
    for (int part = 0; part < 2; ++part) {
      const MlpArchitecture& a = part == 0 ? np.fields[f].eq_arch : np.fields[f].neq_arch;
      const long base = part == 0 ? np.eq_offset(f) : np.neq_offset(f);
      for (int l = 0; l < a.n_layers(); ++l) {
        const double bound = std::sqrt(6.0 / (a.layer_in(l) + a.layer_out(l)));
        std::uniform_real_distribution<double> unif(-bound, bound);
        double* w = np.theta.data() + base + a.w_offset(l);
        for (long i = 0; i < static_cast<long>(a.layer_out(l)) * a.layer_in(l); ++i) w[i] = unif(rng);
      }
    }
  }
  return np;
}

/// Multi-scale input embedding: (c_1 x, c_2 x, ..., c_K x).
template <class S>
std::vector<S> multiscale_embed(std::span<const S> input, const Eigen::VectorXd& constants) {
  std::vector<S> out;
  out.reserve(input.size() * constants.size());
  for (int i = 0; i < constants.size(); ++i)
    for (const S& x : input) out.push_back(x * constants(i));
  return out;
}

inline std::vector<double> multiscale_embed(std::span<const double> input,
                                            const Eigen::VectorXd& constants) {
  return multiscale_embed<double>(input, constants);
}

namespace detail {

// Parameter accessors bridge the flat double buffer and its traced mirror.
struct DoubleAt {
  const double* theta;
  double operator()(long i) const { return theta[i]; }
};
struct TracedAt {
  const TracedScalar* theta;
  TracedScalar operator()(long i) const { return theta[i]; }
};

template <class S, class At>
std::vector<S> mlp_forward(const MlpArchitecture& a, long base, At&& at, std::vector<S> x) {
  using std::sin;
  using std::tanh;
  for (int l = 0; l < a.n_layers(); ++l) {
    const int nin = a.layer_in(l);
    const int nout = a.layer_out(l);
    const long wof = base + a.w_offset(l);
    const long bof = base + a.b_offset(l);
    std::vector<S> y;
    y.reserve(nout);
    for (int r = 0; r < nout; ++r) {
      S acc = at(bof + r) + at(wof + r) * x[0];  // column-major W
      for (int c = 1; c < nin; ++c) acc = acc + at(wof + static_cast<long>(c) * nout + r) * x[c];
      if (l + 1 < a.n_layers()) acc = a.activation == Activation::Tanh ? tanh(acc) : sin(acc);
      y.push_back(std::move(acc));
    }
    x = std::move(y);
  }
  return x;
}

inline constexpr double kPseudoMacroClamp = 20.0;

inline double clamp_sym(double x, double bound) {
  return x < -bound ? -bound : (x > bound ? bound : x);
}

template <class S, class At>
std::vector<S> eval_field_impl(const NetworkParams& np, int f, At&& at, std::span<const S> point,
                               const VelocityGrid& grid) {
  using std::exp;
  const auto& fp = np.fields[f];
  std::vector<S> emb = multiscale_embed(point, np.multiscale);
  if (static_cast<int>(emb.size()) != fp.eq_arch.input_dim)
    throw config_error("eval_field: point dimension does not match the architecture");

  std::vector<S> eq_out = mlp_forward<S>(fp.eq_arch, np.eq_offset(f), at, emb);
  S rho_star = exp(clamp_sym(eq_out[0], kPseudoMacroClamp));
  S t_star = exp(clamp_sym(eq_out[np.dx + 1], kPseudoMacroClamp));
  std::span<const S> u_star(eq_out.data() + 1, static_cast<std::size_t>(np.dx));
  std::vector<S> feq = maxwell_gaussian(rho_star, u_star, t_star, grid);

  std::vector<S> fstar = mlp_forward<S>(fp.neq_arch, np.neq_offset(f), at, std::move(emb));
  std::vector<S> out;
  out.reserve(np.n_v);
  for (int k = 0; k < np.n_v; ++k) out.push_back(feq[k] * (fstar[k] * fp.split_constant + 1.0));
  return out;
}

}  // namespace detail

/// Discrete reduced field values F_k(point) of one network pair.
inline std::vector<double> eval_field(const NetworkParams& np, int f,
                                      std::span<const double> point, const VelocityGrid& grid) {
  auto out = detail::eval_field_impl<double>(np, f, detail::DoubleAt{np.theta.data()}, point, grid);
  for (double v : out)
    if (!std::isfinite(v)) {
      std::string pt;
      for (double c : point) pt += std::to_string(c) + " ";
      throw numeric_error("eval_field: non-finite " + np.fields[f].id.name() + " at point ( " + pt + ")");
    }
  return out;
}

/// Traced evaluation on a tape; `theta_nodes` is the registered mirror of
/// NetworkParams::theta.
inline std::vector<TracedScalar> eval_field(const NetworkParams& np, int f,
                                            std::span<const TracedScalar> point,
                                            std::span<const TracedScalar> theta_nodes,
                                            const VelocityGrid& grid) {
  auto out =
      detail::eval_field_impl<TracedScalar>(np, f, detail::TracedAt{theta_nodes.data()}, point, grid);
  for (const auto& v : out)
    if (!std::isfinite(v.value()))
      throw numeric_error("eval_field: non-finite traced " + np.fields[f].id.name());
  return out;
}

/// Steady-state mass normalization over the collocation set: divides every g
/// value by the set-mean density so the mean density becomes exactly one.
struct MassNormResult {
  Eigen::MatrixXd g;  // N_Eq x N_v, normalized
  double rho_ave;
};

inline MassNormResult mass_normalize(const Eigen::MatrixXd& g_values, const VelocityGrid& grid) {
  if (g_values.cols() != grid.size())
    throw config_error("mass_normalize: column count must be N_v");
  if (g_values.rows() < 1) throw config_error("mass_normalize: empty collocation set");
  const double rho_ave = (g_values * grid.weights).mean();
  if (!(rho_ave > 1e-12))
    throw degenerate_state_error("mass_normalize: collocation-mean density is degenerate",
                                 rho_ave, 0.0);
  return {g_values / rho_ave, rho_ave};
}

/// Traced collocation-set mean density; stays inside the tape so gradients
/// flow through the normalization. Spatial tangents are detached because
/// rho_ave is a functional of the fixed sample set, not of the residual point.
inline TracedScalar traced_rho_ave(Tape& tape, const std::vector<std::vector<TracedScalar>>& g_points,
                                   const VelocityGrid& grid) {
  if (g_points.empty()) throw config_error("traced_rho_ave: empty collocation set");
  TracedScalar acc = tape.constant(0.0);
  for (const auto& g : g_points) {
    TracedScalar m = g[0] * grid.weights(0);
    for (int k = 1; k < grid.size(); ++k) m = m + g[k] * grid.weights(k);
    acc = acc + m;
  }
  TracedScalar rho_ave = detach_tangents(acc * (1.0 / static_cast<double>(g_points.size())));
  if (!(rho_ave.value() > 1e-12))
    throw degenerate_state_error("traced_rho_ave: collocation-mean density is degenerate",
                                 rho_ave.value(), 0.0);
  return rho_ave;
}

}  // namespace rbgk
