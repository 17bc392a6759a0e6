#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "rbgk/common.hpp"
#include "rbgk/network.hpp"
#include "rbgk/reduced_physics.hpp"
#include "rbgk/velocity_grid.hpp"

namespace rbgk {

enum class BoundaryKind { MaxwellWall, Inflow, Outflow, Periodic };

// Velocity amplitude along a face: constant, or scaled by sin(pi s) with s
// the face arclength parameter in [0,1] (vanishes at both corners).
enum class VelocityProfile { Constant, SinePi };

struct BoundaryFace {
  int axis = 0;  // 0 = x, 1 = y
  int side = 0;  // 0 = min face, 1 = max face
  BoundaryKind kind = BoundaryKind::MaxwellWall;
  Eigen::VectorXd u;  // D_v* components: wall or inflow velocity amplitude
  double T = 1.0;
  double rho = 1.0;  // inflow density
  VelocityProfile profile = VelocityProfile::Constant;

  Eigen::VectorXd inward_normal(int dx) const {
    Eigen::VectorXd n = Eigen::VectorXd::Zero(dx);
    n(axis) = side == 0 ? 1.0 : -1.0;
    return n;
  }
  Eigen::VectorXd u_at(double s) const {
    return profile == VelocityProfile::Constant ? u : (u * std::sin(kPi * s)).eval();
  }
  std::string face_name() const {
    return std::string(axis == 0 ? "x" : "y") + (side == 0 ? "min" : "max");
  }
};

struct InitialCondition {
  enum Kind { Uniform, InOutJet } kind = Uniform;
  double rho = 1.0;
  double T = 1.0;
  Eigen::VectorXd u;  // Uniform: the velocity; InOutJet: the amplitude u_max

  MacroState eval(const Eigen::VectorXd& x, int d_vstar) const {
    Eigen::VectorXd uv = u;
    if (uv.size() < d_vstar) {
      Eigen::VectorXd padded = Eigen::VectorXd::Zero(d_vstar);
      padded.head(uv.size()) = uv;
      uv = padded;
    }
    if (kind == InOutJet) uv *= (1.0 - std::tanh(10.0 * x(0))) * std::sin(kPi * x(1));
    return make_macro(rho, uv, T);
  }
};

struct ProblemSpec {
  std::string name;
  int dx = 1;
  int d_vstar = 1;
  double kn = 1.0;
  bool source_enabled = true;
  bool steady = true;
  double t_final = 0.0;
  Eigen::VectorXd domain_min;
  Eigen::VectorXd domain_max;
  std::vector<BoundaryFace> boundaries;  // index = 2*axis + side
  InitialCondition initial;
  Activation activation = Activation::Tanh;
  std::vector<int> s_indices;  // velocity components carried by s-fields
  int n_per_dim = 100;
  Interval vel_bounds;

  std::vector<FieldId> field_ids() const {
    std::vector<FieldId> out{{FieldId::G}, {FieldId::H}};
    for (int j : s_indices) out.push_back({FieldId::S, j});
    return out;
  }
  int n_fields() const { return 2 + static_cast<int>(s_indices.size()); }

  const BoundaryFace& face(int axis, int side) const { return boundaries[2 * axis + side]; }

  // Arclength parameter of a boundary point along its face, in [0,1].
  double face_param(const BoundaryFace& f, const Eigen::VectorXd& x) const {
    if (dx == 1) return 0.0;
    const int t = 1 - f.axis;
    return (x(t) - domain_min(t)) / (domain_max(t) - domain_min(t));
  }

  WallSpec wall_at(const BoundaryFace& f, double s) const {
    return WallSpec{f.u_at(s), f.T, f.inward_normal(dx)};
  }

  MacroState inflow_at(const BoundaryFace& f, double s) const {
    return make_macro(f.rho, f.u_at(s), f.T);
  }

  void validate() const {
    if (dx != 1 && dx != 2) throw config_error("problem '" + name + "': dx must be 1 or 2");
    if (d_vstar < dx || d_vstar > 3)
      throw config_error("problem '" + name + "': dvstar must satisfy dx <= dvstar <= 3");
    if (!(kn > 0.0) || !std::isfinite(kn))
      throw config_error("problem '" + name + "': kn must be finite and positive");
    if (domain_min.size() != dx || domain_max.size() != dx)
      throw config_error("problem '" + name + "': domain dimension mismatch");
    for (int d = 0; d < dx; ++d)
      if (!(domain_min(d) < domain_max(d)))
        throw config_error("problem '" + name + "': empty domain along axis " + std::to_string(d));
    std::vector<int> expect;
    for (int j = dx + 1; j <= d_vstar; ++j) expect.push_back(j);
    if (s_indices != expect)
      throw config_error("problem '" + name +
                         "': field list inconsistent with dx and dvstar (expected s_j for j = dx+1..dvstar)");
    if (static_cast<int>(boundaries.size()) != 2 * dx)
      throw config_error("problem '" + name + "': expected " + std::to_string(2 * dx) + " boundary faces");
    for (const auto& f : boundaries) {
      if (f.kind == BoundaryKind::MaxwellWall || f.kind == BoundaryKind::Inflow) {
        if (f.u.size() != d_vstar)
          throw config_error("problem '" + name + "': boundary '" + f.face_name() +
                             "' velocity must have dvstar components");
        if (f.kind == BoundaryKind::MaxwellWall && std::abs(f.u(f.axis)) > 1e-12)
          throw config_error("problem '" + name + "': wall '" + f.face_name() +
                             "' must not move along its normal");
        if (!(f.T > 0.0))
          throw config_error("problem '" + name + "': boundary '" + f.face_name() +
                             "' needs a positive temperature");
      }
      if (f.kind == BoundaryKind::Periodic) {
        const auto& other = face(f.axis, 1 - f.side);
        if (other.kind != BoundaryKind::Periodic)
          throw config_error("problem '" + name + "': periodic faces must come in pairs");
      }
    }
    if (!steady && !(t_final > 0.0))
      throw config_error("problem '" + name + "': transient problems need t_final > 0");
    if (n_per_dim < 2) throw config_error("problem '" + name + "': n_per_dim too small");
  }
};

struct NetConfig {
  int hidden_layers = 5;
  int width = 80;
  double split_constant = 1.0;
  std::vector<double> multiscale{1.0, 4.0, 16.0};
};

struct TrainConfig {
  long total_steps = 10000;
  double eta0 = 1e-3;
  long t_max = 0;  // 0: derived so the run sweeps ~5 cosine arcs
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int n_eq = 500;
  int n_ic = 0;
  int n_bc = 2;
  int resample_every = 0;
  std::uint64_t seed = 1;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  long checkpoint_every = 1000;
  double eps_weight = 1e-6;
  NetConfig net;

  long t_max_effective() const {
    return t_max > 0 ? t_max : std::lround(static_cast<double>(total_steps) / (5.0 * kPi));
  }
  void validate() const {
    if (total_steps < 0) throw config_error("train.steps must be nonnegative");
    if (!(eta0 > 0.0)) throw config_error("train.eta0 must be positive");
    if (n_eq <= 0) throw config_error("train.n_pde must be positive");
    if (!(eps_weight > 0.0)) throw config_error("train.eps_weight must be positive");
  }
};

struct DvmConfig {
  int cells_per_dim = 200;
  double cfl = 0.9;
  double steady_tol = 1e-8;
  long max_steps = 500000;
};

struct LoadedConfig {
  ProblemSpec problem;
  TrainConfig train;
  DvmConfig dvm;
};

namespace cfgdetail {

inline const nlohmann::json& need(const nlohmann::json& j, const std::string& key,
                                  const std::string& path) {
  auto it = j.find(key);
  if (it == j.end()) throw config_error("config: missing field '" + path + key + "'");
  return *it;
}

template <class T>
T need_as(const nlohmann::json& j, const std::string& key, const std::string& path) {
  try {
    return need(j, key, path).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw config_error("config: field '" + path + key + "' has the wrong type");
  }
}

template <class T>
T opt_as(const nlohmann::json& j, const std::string& key, T fallback) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  try {
    return it->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw config_error("config: field '" + key + "' has the wrong type");
  }
}

inline Eigen::VectorXd to_vec(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace cfgdetail

inline LoadedConfig parse_config(const nlohmann::json& j) {
  using namespace cfgdetail;
  LoadedConfig out;
  ProblemSpec& p = out.problem;
  p.name = opt_as<std::string>(j, "name", "unnamed");

  const auto& jp = need(j, "problem", "");
  p.dx = need_as<int>(jp, "dx", "problem.");
  p.d_vstar = need_as<int>(jp, "dvstar", "problem.");
  p.kn = need_as<double>(jp, "kn", "problem.");
  p.steady = need_as<bool>(jp, "steady", "problem.");
  p.source_enabled = opt_as<bool>(jp, "source_enabled", true);
  p.t_final = opt_as<double>(jp, "t_final", 0.0);

  const auto& jd = need(jp, "domain", "problem.");
  p.domain_min = to_vec(need_as<std::vector<double>>(jd, "min", "problem.domain."));
  p.domain_max = to_vec(need_as<std::vector<double>>(jd, "max", "problem.domain."));

  const auto& jv = need(jp, "velocity_grid", "problem.");
  p.n_per_dim = need_as<int>(jv, "n_per_dim", "problem.velocity_grid.");
  auto vb = need_as<std::vector<double>>(jv, "bounds", "problem.velocity_grid.");
  if (vb.size() != 2) throw config_error("config: 'problem.velocity_grid.bounds' needs two entries");
  p.vel_bounds = {vb[0], vb[1]};

  for (const auto& fname : need_as<std::vector<std::string>>(jp, "fields", "problem.")) {
    if (fname == "g" || fname == "h") continue;
    if (fname.size() == 2 && fname[0] == 's' && fname[1] >= '2' && fname[1] <= '3')
      p.s_indices.push_back(fname[1] - '0');
    else
      throw config_error("config: unknown field name '" + fname + "' in 'problem.fields'");
  }

  const std::string act = need_as<std::string>(jp, "activation", "problem.");
  if (act == "tanh")
    p.activation = Activation::Tanh;
  else if (act == "sin")
    p.activation = Activation::Sin;
  else
    throw config_error("config: 'problem.activation' must be \"tanh\" or \"sin\"");

  p.boundaries.resize(2 * p.dx);
  std::vector<bool> seen(2 * p.dx, false);
  for (const auto& jb : need(jp, "boundaries", "problem.")) {
    BoundaryFace f;
    const std::string fname = need_as<std::string>(jb, "face", "problem.boundaries[].");
    if (fname == "xmin") { f.axis = 0; f.side = 0; }
    else if (fname == "xmax") { f.axis = 0; f.side = 1; }
    else if (fname == "ymin") { f.axis = 1; f.side = 0; }
    else if (fname == "ymax") { f.axis = 1; f.side = 1; }
    else throw config_error("config: unknown boundary face '" + fname + "'");
    if (f.axis >= p.dx) throw config_error("config: face '" + fname + "' exceeds the spatial dimension");

    const std::string kind = need_as<std::string>(jb, "type", "problem.boundaries[].");
    if (kind == "maxwell") f.kind = BoundaryKind::MaxwellWall;
    else if (kind == "inflow") f.kind = BoundaryKind::Inflow;
    else if (kind == "outflow") f.kind = BoundaryKind::Outflow;
    else if (kind == "periodic") f.kind = BoundaryKind::Periodic;
    else throw config_error("config: unknown boundary type '" + kind + "' on face " + fname);

    if (f.kind == BoundaryKind::MaxwellWall || f.kind == BoundaryKind::Inflow) {
      f.u = to_vec(need_as<std::vector<double>>(jb, "u", "problem.boundaries[]."));
      f.T = need_as<double>(jb, "T", "problem.boundaries[].");
      f.rho = opt_as<double>(jb, "rho", 1.0);
      const std::string prof = opt_as<std::string>(jb, "profile", "constant");
      if (prof == "constant") f.profile = VelocityProfile::Constant;
      else if (prof == "sin_pi") f.profile = VelocityProfile::SinePi;
      else throw config_error("config: unknown velocity profile '" + prof + "'");
    }
    const int idx = 2 * f.axis + f.side;
    if (seen[idx]) throw config_error("config: duplicate boundary face '" + fname + "'");
    seen[idx] = true;
    p.boundaries[idx] = std::move(f);
  }
  for (int i = 0; i < 2 * p.dx; ++i)
    if (!seen[i]) throw config_error("config: missing boundary face " + p.boundaries[i].face_name());

  if (auto it = jp.find("initial"); it != jp.end()) {
    const auto& ji = *it;
    const std::string kind = need_as<std::string>(ji, "type", "problem.initial.");
    if (kind == "uniform") p.initial.kind = InitialCondition::Uniform;
    else if (kind == "inout_jet") p.initial.kind = InitialCondition::InOutJet;
    else throw config_error("config: unknown initial condition type '" + kind + "'");
    p.initial.rho = need_as<double>(ji, "rho", "problem.initial.");
    p.initial.T = need_as<double>(ji, "T", "problem.initial.");
    p.initial.u = to_vec(need_as<std::vector<double>>(ji, "u", "problem.initial."));
  } else {
    p.initial.u = Eigen::VectorXd::Zero(p.d_vstar);
  }

  if (auto it = j.find("network"); it != j.end()) {
    const auto& jn = *it;
    out.train.net.hidden_layers = opt_as<int>(jn, "hidden_layers", 5);
    out.train.net.width = opt_as<int>(jn, "width", 80);
    out.train.net.split_constant = opt_as<double>(jn, "split_constant", 1.0);
    out.train.net.multiscale = opt_as<std::vector<double>>(jn, "multiscale", {1.0, 4.0, 16.0});
  }

  const auto& jt = need(j, "train", "");
  TrainConfig& t = out.train;
  t.total_steps = need_as<long>(jt, "steps", "train.");
  t.eta0 = opt_as<double>(jt, "eta0", 1e-3);
  t.t_max = opt_as<long>(jt, "t_max", 0);
  t.n_eq = need_as<int>(jt, "n_pde", "train.");
  t.n_bc = opt_as<int>(jt, "n_bc", p.dx == 1 ? 2 : 0);
  t.n_ic = opt_as<int>(jt, "n_ic", 0);
  t.resample_every = opt_as<int>(jt, "resample_every", 0);
  t.seed = opt_as<std::uint64_t>(jt, "seed", 1);
  t.lambda1 = opt_as<double>(jt, "lambda1", 1.0);
  t.lambda2 = opt_as<double>(jt, "lambda2", 1.0);
  t.checkpoint_every = opt_as<long>(jt, "checkpoint_every", 1000);
  t.eps_weight = opt_as<double>(jt, "eps_weight", 1e-6);
  t.beta1 = opt_as<double>(jt, "beta1", 0.9);
  t.beta2 = opt_as<double>(jt, "beta2", 0.999);
  t.adam_eps = opt_as<double>(jt, "adam_eps", 1e-8);

  if (auto it = j.find("dvm"); it != j.end()) {
    const auto& jm = *it;
    out.dvm.cells_per_dim = opt_as<int>(jm, "cells_per_dim", p.dx == 1 ? 200 : 100);
    out.dvm.cfl = opt_as<double>(jm, "cfl", 0.9);
    out.dvm.steady_tol = opt_as<double>(jm, "steady_tol", 1e-8);
    out.dvm.max_steps = opt_as<long>(jm, "max_steps", 500000);
  } else {
    out.dvm.cells_per_dim = p.dx == 1 ? 200 : 100;
  }

  p.validate();
  t.validate();
  return out;
}

/// Load a problem + training configuration from a JSON file.
inline LoadedConfig load_problem(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw config_error("config: cannot open " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw config_error("config: " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

/// Network construction record for a problem.
inline NetworkBuild network_build(const ProblemSpec& p, const NetConfig& n, int n_v) {
  NetworkBuild b;
  b.dx = p.dx;
  b.d_vstar = p.d_vstar;
  b.n_v = n_v;
  b.steady = p.steady;
  b.field_ids = p.field_ids();
  b.n_hidden_layers = n.hidden_layers;
  b.width = n.width;
  b.activation = p.activation;
  b.split_constant = n.split_constant;
  b.multiscale = n.multiscale;
  return b;
}

}  // namespace rbgk
