#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "rbgk/common.hpp"
#include "rbgk/network.hpp"

namespace rbgk {

/// Adam moment estimates, persisted so a resumed run reproduces the
/// uninterrupted trajectory.
struct OptimizerState {
  long t = 0;
  std::vector<double> m;
  std::vector<double> v;
};

// Checkpoint file: "RBGKCKP1" magic, version tag, architecture descriptors,
// then every parameter array in declaration order as 64-bit little-endian
// doubles. A human-readable JSON sidecar with hyperparameters sits next to
// the binary file.

namespace detail {

template <class T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw config_error("checkpoint: truncated file");
  return v;
}
inline void put_doubles(std::ostream& os, const double* p, std::size_t n) {
  os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
}
inline void get_doubles(std::istream& is, double* p, std::size_t n) {
  is.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
  if (!is) throw config_error("checkpoint: truncated parameter payload");
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const NetworkParams& np,
                            const nlohmann::json& hyper,
                            const OptimizerState* opt = nullptr) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw config_error("checkpoint: cannot open " + path.string() + " for writing");
  os.write("RBGKCKP1", 8);
  detail::put<std::uint32_t>(os, 1u);
  detail::put<std::uint8_t>(os, np.steady ? 1 : 0);
  detail::put<std::uint8_t>(os, opt ? 1 : 0);
  detail::put<std::uint16_t>(os, 0);
  detail::put<std::int32_t>(os, np.dx);
  detail::put<std::int32_t>(os, np.d_vstar);
  detail::put<std::int32_t>(os, np.n_v);
  detail::put<std::int32_t>(os, np.n_fields());
  detail::put<std::int32_t>(os, static_cast<std::int32_t>(np.families.size()));
  detail::put<std::int32_t>(os, static_cast<std::int32_t>(np.multiscale.size()));
  detail::put<double>(os, np.rho_ave);
  for (const auto& fp : np.fields) {
    detail::put<std::int32_t>(os, static_cast<std::int32_t>(fp.id.kind));
    detail::put<std::int32_t>(os, fp.id.j);
    detail::put<double>(os, fp.split_constant);
    for (const MlpArchitecture* a : {&fp.eq_arch, &fp.neq_arch}) {
      detail::put<std::int32_t>(os, a->n_hidden_layers);
      detail::put<std::int32_t>(os, a->width);
      detail::put<std::int32_t>(os, static_cast<std::int32_t>(a->activation));
      detail::put<std::int32_t>(os, a->input_dim);
      detail::put<std::int32_t>(os, a->output_dim);
    }
  }
  for (auto fam : np.families) detail::put<std::int32_t>(os, static_cast<std::int32_t>(fam));
  detail::put_doubles(os, np.multiscale.data(), static_cast<std::size_t>(np.multiscale.size()));
  detail::put<std::uint64_t>(os, np.theta.size());
  detail::put_doubles(os, np.theta.data(), np.theta.size());
  if (opt) {
    if (opt->m.size() != np.theta.size() || opt->v.size() != np.theta.size())
      throw usage_error("checkpoint: optimizer state size mismatch");
    detail::put<std::uint64_t>(os, static_cast<std::uint64_t>(opt->t));
    detail::put_doubles(os, opt->m.data(), opt->m.size());
    detail::put_doubles(os, opt->v.data(), opt->v.size());
  }
  if (!os) throw config_error("checkpoint: write failed for " + path.string());
  os.close();

  std::ofstream js(path.string() + ".json");
  js << hyper.dump(2) << "\n";
}

struct Checkpoint {
  NetworkParams params;
  std::optional<OptimizerState> optimizer;
};

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw config_error("checkpoint: cannot open " + path.string());
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, "RBGKCKP1", 8) != 0)
    throw config_error("checkpoint: bad magic in " + path.string());
  const auto version = detail::get<std::uint32_t>(is);
  if (version != 1u) throw config_error("checkpoint: unsupported version");

  Checkpoint ck;
  NetworkParams& np = ck.params;
  np.steady = detail::get<std::uint8_t>(is) != 0;
  const bool has_opt = detail::get<std::uint8_t>(is) != 0;
  detail::get<std::uint16_t>(is);
  np.dx = detail::get<std::int32_t>(is);
  np.d_vstar = detail::get<std::int32_t>(is);
  np.n_v = detail::get<std::int32_t>(is);
  const int n_fields = detail::get<std::int32_t>(is);
  const int n_families = detail::get<std::int32_t>(is);
  const int k_multi = detail::get<std::int32_t>(is);
  np.rho_ave = detail::get<double>(is);
  for (int f = 0; f < n_fields; ++f) {
    FieldPairSpec fp;
    fp.id.kind = static_cast<FieldId::Kind>(detail::get<std::int32_t>(is));
    fp.id.j = detail::get<std::int32_t>(is);
    fp.split_constant = detail::get<double>(is);
    for (MlpArchitecture* a : {&fp.eq_arch, &fp.neq_arch}) {
      a->n_hidden_layers = detail::get<std::int32_t>(is);
      a->width = detail::get<std::int32_t>(is);
      a->activation = static_cast<Activation>(detail::get<std::int32_t>(is));
      a->input_dim = detail::get<std::int32_t>(is);
      a->output_dim = detail::get<std::int32_t>(is);
    }
    np.fields.push_back(fp);
  }
  for (int i = 0; i < n_families; ++i)
    np.families.push_back(static_cast<WeightFamily>(detail::get<std::int32_t>(is)));
  np.multiscale.resize(k_multi);
  detail::get_doubles(is, np.multiscale.data(), static_cast<std::size_t>(k_multi));
  const auto theta_len = detail::get<std::uint64_t>(is);
  if (theta_len != static_cast<std::uint64_t>(np.total_param_count()))
    throw config_error("checkpoint: parameter payload does not match the descriptors");
  np.theta.resize(theta_len);
  detail::get_doubles(is, np.theta.data(), theta_len);
  if (has_opt) {
    OptimizerState opt;
    opt.t = static_cast<long>(detail::get<std::uint64_t>(is));
    opt.m.resize(theta_len);
    opt.v.resize(theta_len);
    detail::get_doubles(is, opt.m.data(), theta_len);
    detail::get_doubles(is, opt.v.data(), theta_len);
    ck.optimizer = std::move(opt);
  }
  return ck;
}

}  // namespace rbgk
