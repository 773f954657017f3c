#include <Eigen/Cholesky>

#include "doctest.h"
#include "metriplector/cg.hpp"
#include "metriplector/errors.hpp"
#include "metriplector/ops.hpp"
#include "test_util.hpp"

using namespace mtpl;
using test::finite_diff;
using test::rel_error;

namespace {

ScreenedSystem two_node() {
  auto topo = std::make_shared<const GraphTopology>(2, std::vector<Edge>{{0, 1}});
  return ScreenedSystem(topo, {1.0}, {2.0, 2.0});
}

std::vector<double> dense_solve(const ScreenedSystem& sys, const std::vector<double>& b) {
  const Eigen::VectorXd x =
      assemble_dense(sys).llt().solve(Eigen::Map<const Eigen::VectorXd>(b.data(), static_cast<Eigen::Index>(b.size())));
  return {x.data(), x.data() + x.size()};
}

// L = 1/2 ||A^{-1} b||^2 through the dense oracle.
double half_sq_loss(const ScreenedSystem& sys, const std::vector<double>& b) {
  double s = 0.0;
  for (double v : dense_solve(sys, b)) s += 0.5 * v * v;
  return s;
}

}  // namespace

TEST_CASE("cg_solve examples") {
  const auto rec = cg_solve(two_node(), std::vector<double>{1, 0});
  CHECK(rec.psi[0] == doctest::Approx(3.0 / 8).epsilon(1e-12));
  CHECK(rec.psi[1] == doctest::Approx(1.0 / 8).epsilon(1e-12));
  CHECK(rec.rel_residual <= 1e-10);

  const auto zero = cg_solve(two_node(), std::vector<double>{0, 0});
  CHECK(zero.iterations == 0);
  CHECK(zero.psi == std::vector<double>{0, 0});

  Rng rng(100);
  const auto sys = test::random_system(rng, 100);
  const auto b = test::uniform_vec(rng, 100, -1, 1);
  CgConfig cfg;
  cfg.max_iters = 200;
  const auto big = cg_solve(sys, b, cfg);
  CHECK(rel_error(big.psi, dense_solve(sys, b)) < 1e-8);
}

TEST_CASE("cg_solve errors") {
  Rng rng(4);
  const auto sys = test::random_system(rng, 80);
  const auto b = test::uniform_vec(rng, 80, -1, 1);
  CgConfig tight;
  tight.max_iters = 3;
  try {
    cg_solve(sys, b, tight);
    FAIL("expected non-convergence");
  } catch (const ConvergenceError& e) {
    CHECK(e.iterations() == 3);
    CHECK(e.residual() > tight.rel_tol);
  }
  std::vector<double> nan_b(80, 0.0);
  nan_b[3] = std::nan("");
  CHECK_THROWS_AS(cg_solve(sys, nan_b), NumericError);
  CHECK_THROWS_AS(cg_solve(sys, std::vector<double>(5, 1.0)), DimensionError);
  CgConfig bad;
  bad.max_iters = 0;
  CHECK_THROWS_AS(cg_solve(sys, b, bad), ArgumentError);
}

TEST_CASE("cg converges within n + 5 iterations") {
  Rng rng(31);
  CgConfig cfg;
  cfg.max_iters = 1000;
  for (int trial = 0; trial < 20; ++trial) {
    const auto n = 2 + rng.below(199);
    const auto sys = test::random_system(rng, n);
    const auto rec = cg_solve(sys, test::uniform_vec(rng, n, -1, 1), cfg);
    CHECK(rec.iterations <= static_cast<int>(n) + 5);
  }
}

TEST_CASE("jacobi preconditioning solves the same system") {
  Rng rng(8);
  const auto sys = test::random_system(rng, 60);
  const auto b = test::uniform_vec(rng, 60, -1, 1);
  CgConfig cfg;
  cfg.max_iters = 500;
  const auto plain = cg_solve(sys, b, cfg);
  cfg.jacobi = true;
  const auto pre = cg_solve(sys, b, cfg);
  CHECK(rel_error(pre.psi, plain.psi) < 1e-8);
}

TEST_CASE("cg_solve_grad examples") {
  const auto sys = two_node();
  const std::vector<double> b{1, 0};
  const auto psi = cg_solve(sys, b).psi;

  const auto zero = cg_solve_grad(sys, psi, std::vector<double>{0, 0});
  CHECK(zero.b == std::vector<double>{0, 0});
  CHECK(zero.w == std::vector<double>{0});
  CHECK(zero.lambda == std::vector<double>{0, 0});

  // Loss 1/2 ||psi*||^2 has upstream gradient psi*.
  SolveRecord rec;
  const auto g = cg_solve_grad(sys, psi, psi, {}, &rec);
  const auto fd = finite_diff([&](const std::vector<double>& bb) { return half_sq_loss(sys, bb); }, b);
  CHECK(rel_error(g.b, fd) < 1e-5);
  CHECK(rec.adjoint == g.b);
}

TEST_CASE("adjoint gradients match finite differences on random systems") {
  Rng rng(77);
  for (int trial = 0; trial < 10; ++trial) {
    const auto sys = test::random_system(rng, 20);
    const auto b = test::uniform_vec(rng, 20, -1, 1);
    CgConfig cfg;
    cfg.max_iters = 200;
    cfg.rel_tol = 1e-12;
    const auto psi = cg_solve(sys, b, cfg).psi;
    const auto g = cg_solve_grad(sys, psi, psi, cfg);

    const std::vector<double> w0(sys.w().begin(), sys.w().end()), l0(sys.lambda().begin(), sys.lambda().end());
    const auto fd_w = finite_diff(
        [&](const std::vector<double>& w) { return half_sq_loss(ScreenedSystem(sys.topology_ptr(), w, l0), b); }, w0);
    const auto fd_l = finite_diff(
        [&](const std::vector<double>& l) { return half_sq_loss(ScreenedSystem(sys.topology_ptr(), w0, l), b); }, l0);
    CHECK(rel_error(g.w, fd_w) < 1e-4);
    CHECK(rel_error(g.lambda, fd_l) < 1e-4);

    // Adjoint consistency against the dense inverse.
    CHECK(rel_error(g.b, dense_solve(sys, psi)) < 1e-8);
  }
}

TEST_CASE("solve_k_fields") {
  Rng rng(12);
  const auto base = test::random_system(rng, 50);
  std::vector<ScreenedSystem> systems;
  std::vector<std::vector<double>> rhs;
  const auto b = test::uniform_vec(rng, 50, -1, 1);
  for (int k = 0; k < 3; ++k) {
    systems.emplace_back(base.topology_ptr(), std::vector<double>(base.w().begin(), base.w().end()),
                         std::vector<double>(base.lambda().begin(), base.lambda().end()));
    rhs.push_back(b);
  }
  CgConfig cfg;
  cfg.max_iters = 200;
  const auto par = solve_k_fields(systems, rhs, cfg, true);
  const auto seq = solve_k_fields(systems, rhs, cfg, false);
  CHECK(par[0].psi == par[1].psi);
  CHECK(par[1].psi == par[2].psi);
  for (int k = 0; k < 3; ++k) CHECK(par[k].psi == seq[k].psi);
  CHECK(solve_k_fields(std::span(systems).first(1), std::span(rhs).first(1), cfg)[0].psi == cg_solve(base, b, cfg).psi);

  std::vector<std::vector<double>> bad = rhs;
  bad[1][0] = std::nan("");
  try {
    solve_k_fields(systems, bad, cfg);
    FAIL("expected error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("field 1") != std::string::npos);
  }
}

TEST_CASE("screened_solve registers adjoint gradients on the tape") {
  Rng rng(55);
  for (int seed = 0; seed < 5; ++seed) {
    const auto topo = test::random_topology(rng, 15);
    const auto m = topo->n_edges();
    const std::size_t k = 2;
    const auto w0 = test::uniform_vec(rng, m, 0.2, 2.0);
    const auto l0 = test::uniform_vec(rng, 15 * k, 0.1, 1.0);
    const auto b0 = test::uniform_vec(rng, 15 * k, -1, 1);
    CgConfig cfg;
    cfg.max_iters = 200;
    cfg.rel_tol = 1e-12;
    auto loss = [&](const Tensor& w, const Tensor& l, const Tensor& b) {
      return sum(square(screened_solve(topo, w, l, b, cfg)));
    };
    Tape tape;
    const Tensor w = tape.watch(Tensor::column(w0));
    const Tensor l = tape.watch(Tensor(Shape{15, k}, l0));
    const Tensor b = tape.watch(Tensor(Shape{15, k}, b0));
    tape.backward(loss(w, l, b));
    auto eval = [&](const std::vector<double>& wv, const std::vector<double>& lv, const std::vector<double>& bv) {
      return loss(Tensor::column(wv), Tensor(Shape{15, k}, lv), Tensor(Shape{15, k}, bv)).item();
    };
    CHECK(rel_error(tape.grad(w).to_vector(), finite_diff([&](const auto& v) { return eval(v, l0, b0); }, w0)) < 1e-4);
    CHECK(rel_error(tape.grad(l).to_vector(), finite_diff([&](const auto& v) { return eval(w0, v, b0); }, l0)) < 1e-4);
    CHECK(rel_error(tape.grad(b).to_vector(), finite_diff([&](const auto& v) { return eval(w0, l0, v); }, b0)) < 1e-4);
  }
}
