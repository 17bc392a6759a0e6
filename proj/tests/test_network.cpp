#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "rbgk/checkpoint.hpp"
#include "rbgk/network.hpp"
#include "rbgk/velocity_grid.hpp"

using namespace rbgk;

namespace {

NetworkBuild small_build(int nv, bool steady = true) {
  NetworkBuild b;
  b.dx = 1;
  b.d_vstar = 2;
  b.n_v = nv;
  b.steady = steady;
  b.field_ids = {{FieldId::G}, {FieldId::H}, {FieldId::S, 2}};
  b.n_hidden_layers = 2;
  b.width = 8;
  return b;
}

std::vector<char> slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("multiscale embedding") {
  Eigen::VectorXd c(3);
  c << 1.0, 4.0, 16.0;
  auto e = multiscale_embed(std::vector<double>{0.1, 0.2}, c);
  REQUIRE(e.size() == 6);
  CHECK(e[0] == Catch::Approx(0.1));
  CHECK(e[1] == Catch::Approx(0.2));
  CHECK(e[2] == Catch::Approx(0.4));
  CHECK(e[3] == Catch::Approx(0.8));
  CHECK(e[4] == Catch::Approx(1.6));
  CHECK(e[5] == Catch::Approx(3.2));

  Eigen::VectorXd one(1);
  one << 1.0;
  auto id = multiscale_embed(std::vector<double>{-0.7, 0.3}, one);
  CHECK(id[0] == -0.7);
  CHECK(id[1] == 0.3);

  auto neg = multiscale_embed(std::vector<double>{-0.5}, c);
  CHECK(neg[0] == -0.5);
  CHECK(neg[1] == -2.0);
  CHECK(neg[2] == -8.0);
}

TEST_CASE("parameter initialization") {
  auto b = small_build(10);
  auto p1 = init_params(b, 123);
  auto p2 = init_params(b, 123);
  CHECK(p1.theta == p2.theta);  // bit-identical under the same seed

  auto p3 = init_params(b, 124);
  CHECK(p1.theta != p3.theta);

  // fan-based bound on the first layer
  const auto& arch = p1.fields[0].eq_arch;
  const double bound = std::sqrt(6.0 / (arch.layer_in(0) + arch.layer_out(0)));
  for (long i = 0; i < static_cast<long>(arch.layer_out(0)) * arch.layer_in(0); ++i)
    CHECK(std::abs(p1.theta[p1.eq_offset(0) + arch.w_offset(0) + i]) <= bound);
  // biases and adaptive raws start at zero
  for (int r = 0; r < arch.layer_out(0); ++r)
    CHECK(p1.theta[p1.eq_offset(0) + arch.b_offset(0) + r] == 0.0);
  CHECK(p1.theta[p1.z_offset(0, 0)] == 0.0);
  CHECK(p1.total_param_count() ==
        static_cast<long>(p1.theta.size()));
}

TEST_CASE("eval_field splitting identities") {
  auto grid = build_grid(1, 10, {-5.0, 5.0});
  auto b = small_build(grid.size());
  auto np = init_params(b, 5);

  SECTION("zero neq output gives the pure pseudo-Maxwellian") {
    // zero the neq output layer of field g
    const auto& a = np.fields[0].neq_arch;
    const long base = np.neq_offset(0);
    const int lout = a.n_layers() - 1;
    for (long i = 0; i < a.layer_out(lout) * static_cast<long>(a.layer_in(lout)); ++i)
      np.theta[base + a.w_offset(lout) + i] = 0.0;
    auto f = eval_field(np, 0, std::vector<double>{0.3}, grid);

    // the eq head alone
    auto emb = multiscale_embed(std::vector<double>{0.3}, np.multiscale);
    auto eq = detail::mlp_forward<double>(np.fields[0].eq_arch, np.eq_offset(0),
                                          detail::DoubleAt{np.theta.data()}, emb);
    const double rho = std::exp(eq[0]), T = std::exp(eq[2]);
    std::vector<double> u{eq[1]};
    auto feq = maxwell_gaussian<double>(rho, u, T, grid);
    for (int k = 0; k < grid.size(); ++k) CHECK(f[k] == Catch::Approx(feq[k]).epsilon(1e-14));
  }

  SECTION("C = 0 makes the output independent of the neq net") {
    np.fields[1].split_constant = 0.0;
    auto f1 = eval_field(np, 1, std::vector<double>{0.1}, grid);
    for (long i = 0; i < np.fields[1].neq_arch.param_count(); ++i)
      np.theta[np.neq_offset(1) + i] += 0.37;
    auto f2 = eval_field(np, 1, std::vector<double>{0.1}, grid);
    for (int k = 0; k < grid.size(); ++k) CHECK(f1[k] == f2[k]);
  }

  SECTION("equilibrium part is strictly positive, output deterministic") {
    auto f1 = eval_field(np, 2, std::vector<double>{-0.2}, grid);
    auto f2 = eval_field(np, 2, std::vector<double>{-0.2}, grid);
    for (int k = 0; k < grid.size(); ++k) CHECK(f1[k] == f2[k]);
    auto emb = multiscale_embed(std::vector<double>{-0.2}, np.multiscale);
    auto eq = detail::mlp_forward<double>(np.fields[2].eq_arch, np.eq_offset(2),
                                          detail::DoubleAt{np.theta.data()}, emb);
    std::vector<double> u{eq[1]};
    auto feq = maxwell_gaussian<double>(std::exp(eq[0]), u, std::exp(eq[2]), grid);
    for (int k = 0; k < grid.size(); ++k) CHECK(feq[k] > 0.0);
  }
}

TEST_CASE("traced eval_field matches plain eval and finite differences") {
  auto grid = build_grid(1, 8, {-4.0, 4.0});
  auto b = small_build(grid.size());
  auto np = init_params(b, 11);

  Tape tape(1);
  auto pt = tape.trace_begin(std::vector<double>{0.25});
  auto theta = tape.register_params("theta", np.theta);
  auto traced = eval_field(np, 0, std::span<const TracedScalar>(pt), theta, grid);
  auto plain = eval_field(np, 0, std::vector<double>{0.25}, grid);
  REQUIRE(traced.size() == plain.size());
  for (std::size_t k = 0; k < plain.size(); ++k)
    CHECK(traced[k].value() == Catch::Approx(plain[k]).epsilon(1e-14));

  const double h = 1e-6;
  auto fp = eval_field(np, 0, std::vector<double>{0.25 + h}, grid);
  auto fm = eval_field(np, 0, std::vector<double>{0.25 - h}, grid);
  for (std::size_t k = 0; k < plain.size(); ++k) {
    const double fd = (fp[k] - fm[k]) / (2.0 * h);
    CHECK(std::abs(traced[k].tangent(0) - fd) <=
          1e-5 * std::max(std::abs(fd), std::abs(traced[k].tangent(0))) + 1e-9);
  }
}

TEST_CASE("mass normalization") {
  auto grid = build_grid(1, 100);
  auto eq = reduced_maxwellian(make_macro(2.0, std::vector<double>{0.0}, 1.0), grid, 1);

  SECTION("uniform field scales to unit mean density") {
    Eigen::MatrixXd g(5, grid.size());
    for (int i = 0; i < 5; ++i)
      g.row(i) = Eigen::Map<const Eigen::VectorXd>(eq.g.data(), grid.size()).transpose();
    auto r = mass_normalize(g, grid);
    CHECK(r.rho_ave == Catch::Approx(2.0).epsilon(1e-12));
    const double rho0 = (r.g * grid.weights)(0);
    CHECK(rho0 == Catch::Approx(1.0).epsilon(1e-12));
  }
  SECTION("idempotent on a normalized set, mean exactly one") {
    Eigen::MatrixXd g(4, grid.size());
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> unif(0.8, 1.2);
    for (int i = 0; i < 4; ++i)
      for (int k = 0; k < grid.size(); ++k) g(i, k) = eq.g[k] * unif(rng);
    auto r1 = mass_normalize(g, grid);
    CHECK((r1.g * grid.weights).mean() == Catch::Approx(1.0).margin(1e-14));
    auto r2 = mass_normalize(r1.g, grid);
    CHECK(r2.rho_ave == Catch::Approx(1.0).margin(1e-14));
  }
  SECTION("scaling invariance") {
    Eigen::MatrixXd g(3, grid.size());
    for (int i = 0; i < 3; ++i)
      for (int k = 0; k < grid.size(); ++k) g(i, k) = eq.g[k] * (1.0 + 0.1 * i);
    auto r1 = mass_normalize(g, grid);
    auto r2 = mass_normalize((g * 3.7).eval(), grid);
    CHECK((r1.g - r2.g).cwiseAbs().maxCoeff() < 1e-13);
  }
  SECTION("degenerate mean density") {
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(2, grid.size());
    CHECK_THROWS_AS(mass_normalize(g, grid), degenerate_state_error);
  }
}

TEST_CASE("checkpoint round trip is byte-identical") {
  auto b = small_build(12, false);
  auto np = init_params(b, 77);
  np.rho_ave = 1.25;
  OptimizerState opt;
  opt.t = 42;
  opt.m.assign(np.theta.size(), 0.5);
  opt.v.assign(np.theta.size(), 0.25);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  for (auto& m : opt.m) m = unif(rng);

  auto dir = std::filesystem::temp_directory_path() / "rbgk_ckpt_test";
  std::filesystem::create_directories(dir);
  auto p1 = dir / "a.ckpt";
  auto p2 = dir / "b.ckpt";
  nlohmann::json hyper{{"note", "test"}};
  save_checkpoint(p1, np, hyper, &opt);
  auto ck = load_checkpoint(p1);
  REQUIRE(ck.optimizer.has_value());
  CHECK(ck.params.theta == np.theta);
  CHECK(ck.params.rho_ave == np.rho_ave);
  CHECK(ck.optimizer->t == opt.t);
  CHECK(ck.optimizer->m == opt.m);
  save_checkpoint(p2, ck.params, hyper, &*ck.optimizer);
  CHECK(slurp(p1) == slurp(p2));

  SECTION("descriptor mismatch is rejected") {
    auto bytes = slurp(p1);
    bytes[30] ^= 1;  // corrupt a descriptor byte
    auto p3 = dir / "c.ckpt";
    std::ofstream(p3, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    CHECK_THROWS_AS(load_checkpoint(p3), config_error);
  }
}
