#include <cmath>

#include "doctest.h"
#include "metriplector/errors.hpp"
#include "metriplector/grid_ops.hpp"
#include "metriplector/ops.hpp"
#include "test_util.hpp"

using namespace mtpl;
using test::gradcheck;
using test::random_tensor;

namespace {

Tensor weighted_sum(const Tensor& y, const Tensor& probe) { return sum(mul(y, probe)); }

}  // namespace

TEST_CASE("depthwise stencil matches the padded reference bitwise") {
  Rng rng(11);
  for (const GridShape grid : {GridShape{1, 1, 1, 4}, GridShape{3, 5, 2, 4}, GridShape{40, 33, 3, 4}}) {
    const std::size_t k = 3;
    const Tensor x = random_tensor(rng, {grid.nodes(), k});
    const Tensor kern = random_tensor(rng, {k, 9});
    const Tensor fast = depthwise_stencil(x, grid, kern);
    CHECK(fast.to_vector() == depthwise_stencil_serial(x.values(), grid, kern.values(), k));
  }
}

TEST_CASE("five-point stencil with replicate padding is the unit grid Laplacian") {
  Rng rng(3);
  const GridShape grid{6, 7, 2, 4};
  auto topo = std::make_shared<const GraphTopology>(grid_topology(6, 7, 4, 2));
  const Tensor x = random_tensor(rng, {grid.nodes(), 2});
  const Tensor st = depthwise_stencil(x, grid, repeat_kernel({0, -1, 0, -1, 4, -1, 0, -1, 0}, 2));
  const Tensor gl = graph_laplacian(*topo, Tensor::full({topo->n_edges(), 1}, 1.0), x);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(st[i] == doctest::Approx(gl[i]).epsilon(1e-12));
  const Tensor ones = Tensor::full({grid.nodes(), 2}, 3.5);
  const Tensor flat = depthwise_stencil(ones, grid, repeat_kernel({0, -1, 0, -1, 4, -1, 0, -1, 0}, 2));
  for (double v : flat.values()) CHECK(v == 0.0);
}

TEST_CASE("depthwise stencil gradients") {
  Rng rng(5);
  const GridShape grid{4, 5, 2, 4};
  const Tensor probe = random_tensor(rng, {grid.nodes(), 2});
  const auto err = gradcheck([&](const std::vector<Tensor>& in) { return weighted_sum(depthwise_stencil(in[0], grid, in[1]), probe); },
                             {random_tensor(rng, {grid.nodes(), 2}), random_tensor(rng, {2, 9})});
  CHECK(err[0] < 1e-7);
  CHECK(err[1] < 1e-7);
  CHECK_THROWS_AS(depthwise_stencil(probe, GridShape{4, 4, 1, 4}, random_tensor(rng, {2, 9})), DimensionError);
  CHECK_THROWS_AS(depthwise_stencil(probe, grid, random_tensor(rng, {3, 9})), DimensionError);
}

TEST_CASE("normalize_fields standardizes each grid and field") {
  Rng rng(8);
  const GridShape grid{3, 4, 2, 4};
  const Tensor x = random_tensor(rng, {grid.nodes(), 3}, -4, 9);
  const Tensor y = normalize_fields(x, grid);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t f = 0; f < 3; ++f) {
      double m = 0, v = 0;
      for (std::size_t i = 0; i < 12; ++i) m += y.at(b * 12 + i, f);
      for (std::size_t i = 0; i < 12; ++i) v += y.at(b * 12 + i, f) * y.at(b * 12 + i, f);
      CHECK(std::abs(m / 12) < 1e-12);
      CHECK(v / 12 == doctest::Approx(1.0).epsilon(1e-5));
    }
  // A constant field maps to zero rather than dividing by zero.
  const Tensor flat = normalize_fields(Tensor::full({12, 1}, 2.0), GridShape{3, 4, 1, 4});
  for (double v : flat.values()) CHECK(v == 0.0);
  const Tensor probe = random_tensor(rng, {grid.nodes(), 3});
  const auto err = gradcheck([&](const std::vector<Tensor>& in) { return weighted_sum(normalize_fields(in[0], grid), probe); },
                             {x});
  CHECK(err[0] < 1e-6);
}

TEST_CASE("center_fields removes the per-grid mean") {
  Rng rng(21);
  const GridShape grid{4, 3, 3, 4};
  const Tensor x = random_tensor(rng, {grid.nodes(), 2}, -2, 7);
  const Tensor y = center_fields(x, grid);
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t f = 0; f < 2; ++f) {
      double m = 0, mx = 0;
      for (std::size_t i = 0; i < 12; ++i) m += y.at(b * 12 + i, f), mx += x.at(b * 12 + i, f);
      CHECK(std::abs(m) < 1e-12);
      CHECK(y.at(b * 12, f) == doctest::Approx(x.at(b * 12, f) - mx / 12).epsilon(1e-12));
    }
  const Tensor probe = random_tensor(rng, {grid.nodes(), 2});
  const auto err = gradcheck([&](const std::vector<Tensor>& in) { return weighted_sum(center_fields(in[0], grid), probe); },
                             {x});
  CHECK(err[0] < 1e-8);
}

TEST_CASE("directional scans against a brute-force line sum") {
  const GridShape row{1, 3, 1, 4};
  const Tensor x = Tensor::matrix(3, 1, {1, 2, 3});
  CHECK(directional_scan(x, row, {0, 1, "E"}).to_vector() == std::vector<double>{0, 1, 3});
  CHECK(directional_scan(x, row, {0, -1, "W"}).to_vector() == std::vector<double>{5, 3, 0});

  Rng rng(21);
  const GridShape grid{5, 6, 2, 4};
  const Tensor v = random_tensor(rng, {grid.nodes(), 2});
  for (const Direction d : scan_directions()) {
    const Tensor s = directional_scan(v, grid, d);
    for (std::size_t b = 0; b < 2; ++b)
      for (long r = 0; r < 5; ++r)
        for (long c = 0; c < 6; ++c)
          for (std::size_t f = 0; f < 2; ++f) {
            double acc = 0.0;
            for (long t = 1;; ++t) {
              const long rr = r - t * d.dr, cc = c - t * d.dc;
              if (rr < 0 || rr >= 5 || cc < 0 || cc >= 6) break;
              acc += v.at(b * 30 + static_cast<std::size_t>(rr * 6 + cc), f);
            }
            CHECK(s.at(b * 30 + static_cast<std::size_t>(r * 6 + c), f) == doctest::Approx(acc).epsilon(1e-13));
          }
    const Tensor probe = random_tensor(rng, {grid.nodes(), 2});
    const auto err = gradcheck([&](const std::vector<Tensor>& in) { return weighted_sum(directional_scan(in[0], grid, d), probe); },
                               {v});
    CHECK(err[0] < 1e-8);
  }
}

TEST_CASE("graph Laplacian and dissipation readout") {
  Rng rng(31);
  const auto sys = test::random_system(rng, 30);
  const Tensor psi = random_tensor(rng, {30, 1});
  const Tensor w = Tensor::column(std::vector<double>(sys.w().begin(), sys.w().end()));
  const Tensor lap = graph_laplacian(sys.topology(), w, psi);
  std::vector<double> ref(30);
  laplacian_apply_serial(sys, psi.values(), ref);
  for (std::size_t i = 0; i < 30; ++i)
    CHECK(lap[i] + sys.lambda()[i] * psi[i] == doctest::Approx(ref[i]).epsilon(1e-12));

  const Tensor d = dissipation_readout(sys.topology(), w, psi);
  std::vector<double> oracle(30, 0.0);
  const auto& edges = sys.topology().edges();
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const double diff = psi[edges[e].i] - psi[edges[e].j];
    oracle[edges[e].i] += sys.w()[e] * diff * diff;
    oracle[edges[e].j] += sys.w()[e] * diff * diff;
  }
  for (std::size_t i = 0; i < 30; ++i) CHECK(d[i] == doctest::Approx(oracle[i]).epsilon(1e-12));

  const Tensor probe = random_tensor(rng, {30, 1});
  const auto err = gradcheck(
      [&](const std::vector<Tensor>& in) {
        return add(weighted_sum(graph_laplacian(sys.topology(), in[0], in[1]), probe),
                   weighted_sum(dissipation_readout(sys.topology(), in[0], in[1]), probe));
      },
      {w, psi});
  CHECK(err[0] < 1e-7);
  CHECK(err[1] < 1e-7);
}
