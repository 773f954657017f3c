#include <Eigen/Eigenvalues>
#include <sstream>

#include "doctest.h"
#include "metriplector/errors.hpp"
#include "metriplector/graph.hpp"
#include "test_util.hpp"

using namespace mtpl;

namespace {

ScreenedSystem two_node() {
  auto topo = std::make_shared<const GraphTopology>(2, std::vector<Edge>{{0, 1}});
  return ScreenedSystem(topo, {1.0}, {2.0, 2.0});
}

}  // namespace

TEST_CASE("laplacian_apply examples") {
  const auto sys = two_node();
  CHECK(laplacian_apply(sys, std::vector<double>{1, 0}) == std::vector<double>{3, -1});
  CHECK(laplacian_apply(sys, std::vector<double>{0, 0}) == std::vector<double>{0, 0});

  auto lone = std::make_shared<const GraphTopology>(3, std::vector<Edge>{{0, 1}});
  const ScreenedSystem with_isolated(lone, {1.0}, {1.0, 1.0, 5.0});
  CHECK(laplacian_apply(with_isolated, std::vector<double>{0, 0, 2})[2] == 10.0);

  CHECK_THROWS_AS(laplacian_apply(sys, std::vector<double>{1, 2, 3}), DimensionError);
}

TEST_CASE("assemble_dense examples") {
  const auto a = assemble_dense(two_node());
  CHECK(a(0, 0) == 3.0);
  CHECK(a(0, 1) == -1.0);
  CHECK(a(1, 0) == -1.0);
  CHECK(a(1, 1) == 3.0);

  auto empty = std::make_shared<const GraphTopology>(3, std::vector<Edge>{});
  const auto d = assemble_dense(ScreenedSystem(empty, {}, {1, 2, 3}));
  CHECK(d.isApprox(Eigen::Vector3d(1, 2, 3).asDiagonal().toDenseMatrix()));

  Rng rng(5);
  const auto sys = test::random_system(rng, 30);
  const auto m = assemble_dense(sys);
  CHECK(m == m.transpose());
  CHECK_THROWS_AS(assemble_dense(sys, 10), ResourceError);
}

TEST_CASE("dirichlet_energy examples") {
  const auto sys = two_node();
  CHECK(dirichlet_energy(sys, std::vector<double>{0, 0}, std::vector<double>{4, -1}) == 0.0);
  CHECK(dirichlet_energy(sys, std::vector<double>{3.0 / 8, 1.0 / 8}, std::vector<double>{1, 0}) ==
        doctest::Approx(-3.0 / 16).epsilon(1e-15));

  // psi* is the unique minimizer: any perturbation raises the energy.
  Rng rng(11);
  const std::vector<double> star{3.0 / 8, 1.0 / 8}, b{1, 0};
  const double e0 = dirichlet_energy(sys, star, b);
  for (int k = 0; k < 100; ++k) {
    auto p = star;
    for (auto& v : p) v += rng.uniform(-1, 1);
    CHECK(dirichlet_energy(sys, p, b) > e0);
  }
}

TEST_CASE("grid_topology examples") {
  CHECK(grid_topology(2, 2, 4).n_edges() == 4);
  CHECK(grid_topology(1, 1, 4).n_edges() == 0);
  CHECK(grid_topology(3, 3, 8).n_edges() == 20);
  CHECK_THROWS_AS(grid_topology(3, 3, 6), ArgumentError);

  const auto g = grid_topology(3, 5, 4);
  CHECK(g.positions()[0] == std::array<double, 2>{0.0, 0.0});
  CHECK(g.positions()[14] == std::array<double, 2>{1.0, 1.0});
  CHECK(g.positions()[7] == std::array<double, 2>{0.5, 0.5});
  CHECK(grid_topology(4, 4, 4, 3).n_edges() == 3 * 24);
}

TEST_CASE("topology validation") {
  CHECK_THROWS_AS(GraphTopology(3, {{1, 1}}), ArgumentError);
  CHECK_THROWS_AS(GraphTopology(3, {{0, 1}, {0, 1}}), ArgumentError);
  CHECK_THROWS_AS(GraphTopology(3, {{0, 3}}), ArgumentError);
  auto topo = std::make_shared<const GraphTopology>(2, std::vector<Edge>{{0, 1}});
  CHECK_THROWS_AS(ScreenedSystem(topo, {0.0}, {1, 1}), DomainError);
  CHECK_THROWS_AS(ScreenedSystem(topo, {1.0}, {1, -1}), DomainError);
  // A single node with damping only is a valid system.
  auto single = std::make_shared<const GraphTopology>(1, std::vector<Edge>{});
  CHECK(laplacian_apply(ScreenedSystem(single, {}, {4.0}), std::vector<double>{0.5})[0] == 2.0);
}

TEST_CASE("operator properties on random systems") {
  Rng rng(2024);
  for (int trial = 0; trial < 40; ++trial) {
    const auto n = 2 + rng.below(199);
    const auto sys = test::random_system(rng, n);

    // Smallest eigenvalue of the dense operator is positive.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(assemble_dense(sys), Eigen::EigenvaluesOnly);
    CHECK(eig.eigenvalues().minCoeff() > 0.0);

    // The Laplacian annihilates constants.
    const std::vector<double> ones(n, 1.0);
    const auto out = laplacian_apply(sys, ones);
    CHECK(std::equal(out.begin(), out.end(), sys.lambda().begin()));

    const auto dense = assemble_dense(sys);
    for (int k = 0; k < 3; ++k) {
      const auto psi = test::uniform_vec(rng, n, -1, 1);
      const auto mf = laplacian_apply(sys, psi);
      std::vector<double> ref(n);
      laplacian_apply_serial(sys, psi, ref);
      const Eigen::VectorXd dv = dense * Eigen::Map<const Eigen::VectorXd>(psi.data(), static_cast<Eigen::Index>(n));
      for (std::size_t i = 0; i < n; ++i) {
        CHECK(std::abs(mf[i] - dv(static_cast<Eigen::Index>(i))) < 1e-12);
        CHECK(std::abs(mf[i] - ref[i]) < 1e-12);
      }
    }
  }
}

TEST_CASE("graph text format") {
  std::istringstream in("3 2\n0 1 0.5\n2 1 1.25\n");
  const auto g = read_graph(in);
  CHECK(g.topology.n_nodes() == 3);
  CHECK(g.topology.edges()[1].i == 1);
  CHECK(g.topology.edges()[1].j == 2);
  CHECK(g.w == std::vector<double>{0.5, 1.25});
  std::ostringstream out;
  write_graph(out, g.topology, g.w);
  CHECK(out.str() == "3 2\n0 1 0.5\n1 2 1.25\n");
  std::istringstream bad("3 2\n0 1 0.5\n");
  CHECK_THROWS_AS(read_graph(bad), ArgumentError);
}
