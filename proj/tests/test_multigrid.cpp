#include <Eigen/SVD>
#include <cmath>

#include "doctest.h"
#include "metriplector/errors.hpp"
#include "metriplector/multigrid.hpp"
#include "metriplector/ops.hpp"
#include "test_util.hpp"

using namespace mtpl;
using test::gradcheck;
using test::random_tensor;

namespace {

Tensor one_hot(const std::vector<std::size_t>& labels, std::size_t k) {
  std::vector<double> v(labels.size() * k, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) v[i * k + labels[i]] = 1.0;
  return Tensor({labels.size(), k}, v);
}

Tensor random_rho(Rng& rng, std::size_t n, std::size_t k) { return softmax_rows(random_tensor(rng, {n, k}, -2, 2)); }

// Parameter map rebuilt from tracked tensors so gradcheck can perturb them.
ModelParams::Bound rebind(const ModelParams& params, Tape& tape) { return params.bind(tape); }

}  // namespace

TEST_CASE("restrict examples") {
  const Tensor rho = one_hot({0, 0, 1, 1}, 2);
  const auto r = restrict_features(rho, Tensor::matrix(4, 1, {1, 2, 3, 4}));
  CHECK(r.objects[0] == doctest::Approx(1.5).epsilon(1e-8));
  CHECK(r.objects[1] == doctest::Approx(3.5).epsilon(1e-8));
  CHECK(r.zero_mass == 0);

  const Tensor uni = Tensor::full({3, 2}, 0.5);
  const Tensor same = Tensor::matrix(3, 2, {4, -1, 4, -1, 4, -1});
  const auto u = restrict_features(uni, same);
  for (std::size_t a = 0; a < 2; ++a) {
    CHECK(u.objects.at(a, 0) == doctest::Approx(4.0).epsilon(1e-8));
    CHECK(u.objects.at(a, 1) == doctest::Approx(-1.0).epsilon(1e-8));
  }

  const auto raw = restrict_features(rho, Tensor::matrix(4, 1, {1, 2, 3, 4}), false);
  CHECK(raw.objects.to_vector() == std::vector<double>{3, 7});

  const auto empty = restrict_features(one_hot({0, 0, 0}, 3), Tensor::matrix(3, 1, {1, 1, 1}));
  CHECK(empty.zero_mass == 2);
  for (double v : empty.objects.values()) CHECK(std::isfinite(v));
}

TEST_CASE("prolongate examples") {
  const Tensor rho = one_hot({1, 0, 1}, 2);
  const Tensor o = Tensor::matrix(2, 2, {1, 2, 3, 4});
  CHECK(prolongate(rho, o).to_vector() == std::vector<double>{3, 4, 1, 2, 3, 4});

  const Tensor f = Tensor::matrix(4, 1, {1, 2, 3, 4});
  const Tensor hard = one_hot({0, 0, 1, 1}, 2);
  const Tensor back = prolongate(hard, restrict_features(hard, f).objects);
  const std::vector<double> means{1.5, 1.5, 3.5, 3.5};
  for (std::size_t i = 0; i < 4; ++i) CHECK(back[i] == doctest::Approx(means[i]).epsilon(1e-8));

  const Tensor uni = Tensor::full({4, 2}, 0.5);
  const Tensor avg = prolongate(uni, o);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(avg.at(i, 0) == 2.0);
    CHECK(avg.at(i, 1) == 3.0);
  }
  CHECK_THROWS_AS(prolongate(rho, Tensor::zeros({3, 2})), DimensionError);
}

TEST_CASE("restrict then prolongate has rank at most K_obj") {
  Rng rng(3);
  for (std::size_t ko : {1, 2, 5}) {
    const std::size_t n = 12;
    const Tensor rho = random_rho(rng, n, ko);
    Eigen::MatrixXd m(n, n);
    for (std::size_t j = 0; j < n; ++j) {
      std::vector<double> e(n, 0.0);
      e[j] = 1.0;
      const Tensor col = prolongate(rho, restrict_features(rho, Tensor({n, 1}, e)).objects);
      for (std::size_t i = 0; i < n; ++i) m(i, j) = col[i];
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    std::size_t rank = 0;
    for (Eigen::Index i = 0; i < svd.singularValues().size(); ++i)
      if (svd.singularValues()(i) > 1e-10 * svd.singularValues()(0)) ++rank;
    CHECK(rank <= ko);
  }
}

TEST_CASE("segmented transfer equals separate grids") {
  Rng rng(4);
  const std::size_t seg = 6, groups = 3, ko = 4, d = 2;
  const Tensor rho = random_rho(rng, seg * groups, ko);
  const Tensor f = random_tensor(rng, {seg * groups, d});
  const Tensor all = segmented_restrict(rho, f, seg);
  CHECK(all.rows() == groups * ko);
  for (std::size_t g = 0; g < groups; ++g) {
    std::vector<double> rv(rho.values().begin() + g * seg * ko, rho.values().begin() + (g + 1) * seg * ko);
    std::vector<double> fv(f.values().begin() + g * seg * d, f.values().begin() + (g + 1) * seg * d);
    const Tensor one = segmented_restrict(Tensor({seg, ko}, rv), Tensor({seg, d}, fv));
    for (std::size_t i = 0; i < ko * d; ++i) CHECK(all[g * ko * d + i] == one[i]);
  }
  CHECK_THROWS_AS(segmented_restrict(rho, f, 5), DimensionError);

  const Tensor probe_o = random_tensor(rng, {groups * ko, d});
  const Tensor probe_u = random_tensor(rng, {seg * groups, d});
  const auto err = gradcheck(
      [&](const std::vector<Tensor>& in) {
        return add(sum(mul(restrict_features(in[0], in[1], true, seg).objects, probe_o)),
                   sum(mul(prolongate(in[0], in[2], seg), probe_u)));
      },
      {rho, f, random_tensor(rng, {groups * ko, d})});
  for (double e : err) CHECK(e < 1e-7);
}

TEST_CASE("assignment diagnostics") {
  const auto hard = assignment_diagnostics(one_hot({0, 2, 2, 1}, 4));
  CHECK(hard.mean_entropy == 0.0);
  CHECK(hard.active == 3);
  CHECK(hard.cluster_map == std::vector<std::size_t>{0, 2, 2, 1});

  const auto uni = assignment_diagnostics(Tensor::full({10, 16}, 1.0 / 16));
  CHECK(uni.mean_entropy == doctest::Approx(std::log(16.0)).epsilon(1e-12));
  CHECK(uni.active == 0);
  CHECK(uni.cluster_map == std::vector<std::size_t>(10, 0));

  Rng rng(5);
  const Tensor rho = random_rho(rng, 50, 7);
  for (std::size_t i = 0; i < 50; ++i) {
    double s = 0.0;
    for (std::size_t a = 0; a < 7; ++a) s += rho.at(i, a);
    CHECK(std::abs(s - 1.0) <= 1e-12);
  }
}

TEST_CASE("vcycle") {
  Rng rng(6);
  const CgConfig cg{200, 1e-13, 1e-30, false};
  SUBCASE("single object solves b / lambda") {
    ModelParams params;
    ObjectConfig cfg;
    cfg.objects = 1;
    cfg.coarse_fields = 2;
    const auto layer = ObjectLayer::create(params, rng, "obj", 3, 4, cfg);
    const auto p = params.constants();
    const Tensor rho = Tensor::full({9, 1}, 1.0);
    const auto v = layer.vcycle(p, rho, random_tensor(rng, {9, 4}), 0, cg);
    CHECK(v.coarse_psi.rows() == 1);
    const Tensor lam = add_scalar(softplus(layer.damping_head().forward(p, v.objects)), cfg.lambda_floor);
    const Tensor b = layer.source_head().forward(p, v.objects);
    for (std::size_t f = 0; f < 2; ++f)
      CHECK(v.coarse_psi.at(0, f) == doctest::Approx(b.at(0, f) / lam.at(0, f)).epsilon(1e-14));
    for (std::size_t i = 0; i < 9; ++i)
      for (std::size_t f = 0; f < 2; ++f) CHECK(v.u.at(i, f) == v.coarse_psi.at(0, f));
  }
  SUBCASE("zero source head gives zero output") {
    ModelParams params;
    ObjectConfig cfg;
    cfg.objects = 3;
    const auto layer = ObjectLayer::create(params, rng, "obj", 3, 4, cfg);
    for (const auto& name : params.names())
      if (name.rfind("obj.source.", 0) == 0) params.set(name, Tensor::zeros(params.value(name).shape()));
    const auto p = params.constants();
    const auto v = layer.vcycle(p, random_rho(rng, 8, 3), random_tensor(rng, {8, 4}), 0, cg);
    for (double x : v.u.values()) CHECK(x == 0.0);
  }
}

TEST_CASE("vcycle gradients and relabeling symmetry") {
  Rng rng(7);
  const CgConfig cg{300, 1e-13, 1e-30, false};
  ModelParams params;
  ObjectConfig cfg;
  cfg.objects = 3;
  cfg.coarse_fields = 2;
  cfg.hidden = {5};
  const auto layer = ObjectLayer::create(params, rng, "obj", 3, 4, cfg);
  const std::size_t seg = 5, groups = 2, n = seg * groups;
  const Tensor assign_in = random_tensor(rng, {n, 3});
  const Tensor f = random_tensor(rng, {n, 4});
  const Tensor probe = random_tensor(rng, {n, 2});

  auto loss = [&](const ModelParams::Bound& p, const Tensor& ain, const Tensor& feats) {
    const Assignment a = layer.assign(p, ain);
    return sum(mul(layer.vcycle(p, a.rho, feats, seg, cg).u, probe));
  };

  Tape tape;
  const auto bound = rebind(params, tape);
  const Tensor fin = tape.watch(f);
  tape.backward(loss(bound, assign_in, fin));
  params.accumulate_gradients(tape, bound);
  for (const auto& name : params.names()) {
    const auto fd = test::finite_diff(
        [&](const std::vector<double>& v) {
          ModelParams local = params;
          local.set(name, Tensor(params.value(name).shape(), v));
          return loss(local.constants(), assign_in, f).item();
        },
        params.value(name).to_vector());
    CHECK_MESSAGE(test::rel_error(params.grad(name), fd, 1e-8) < 1e-3, name);
  }
  const auto fd_f = test::finite_diff(
      [&](const std::vector<double>& v) { return loss(params.constants(), assign_in, Tensor(f.shape(), v)).item(); },
      f.to_vector());
  CHECK(test::rel_error(tape.grad(fin).to_vector(), fd_f, 1e-8) < 1e-3);

  // Permute object indices by permuting the assignment head's output units.
  const std::vector<std::size_t> perm{2, 0, 1};
  ModelParams relabeled = params;
  const std::string last_w = "obj.assign.w1", last_b = "obj.assign.b1";
  const Tensor w = params.value(last_w), b = params.value(last_b);
  std::vector<double> pw(w.numel()), pb(b.numel());
  for (std::size_t r = 0; r < w.rows(); ++r)
    for (std::size_t c = 0; c < 3; ++c) pw[r * 3 + c] = w.at(r, perm[c]);
  for (std::size_t c = 0; c < 3; ++c) pb[c] = b[perm[c]];
  relabeled.set(last_w, Tensor(w.shape(), pw));
  relabeled.set(last_b, Tensor(b.shape(), pb));
  const auto p0 = params.constants(), p1 = relabeled.constants();
  const Tensor u0 = layer.vcycle(p0, layer.assign(p0, assign_in).rho, f, seg, cg).u;
  const Tensor u1 = layer.vcycle(p1, layer.assign(p1, assign_in).rho, f, seg, cg).u;
  CHECK(test::rel_error(u1.to_vector(), u0.to_vector()) < 1e-10);
}
