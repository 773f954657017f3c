#include "metriplector/harness.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <chrono>
#include <cmath>

#include "metriplector/causal_scan.hpp"
#include "metriplector/cg.hpp"
#include "metriplector/errors.hpp"
#include "metriplector/grid_ops.hpp"
#include "metriplector/metriplectic.hpp"
#include "metriplector/noether.hpp"
#include "metriplector/ops.hpp"

namespace mtpl {
namespace {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

CheckReport finish(CheckReport r, Clock::time_point t0) {
  r.seconds = since(t0);
  r.pass = r.max_error <= r.threshold;
  return r;
}

std::vector<double> uniform_vec(Rng& rng, std::size_t n, double lo, double hi) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1, double hi = 1) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), uniform_vec(rng, n, lo, hi));
}

// Connected random graph: spanning tree plus extra random chords.
TopologyPtr random_topology(Rng& rng, std::size_t n) {
  std::vector<Edge> edges;
  std::vector<std::vector<bool>> used(n, std::vector<bool>(n, false));
  auto push = [&](std::size_t a, std::size_t b) {
    if (a == b) return;
    if (a > b) std::swap(a, b);
    if (used[a][b]) return;
    used[a][b] = true;
    edges.push_back({a, b});
  };
  for (std::size_t i = 1; i < n; ++i) push(rng.below(i), i);
  for (std::size_t k = 0; k < n + n / 2 && n > 1; ++k) push(rng.below(n), rng.below(n));
  return std::make_shared<const GraphTopology>(n, std::move(edges));
}

ScreenedSystem random_system(Rng& rng, std::size_t n) {
  auto topo = random_topology(rng, n);
  auto w = uniform_vec(rng, topo->n_edges(), 0.1, 2.0);
  auto lam = uniform_vec(rng, n, 0.05, 1.0);
  return ScreenedSystem(topo, std::move(w), std::move(lam));
}

double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double rel_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-12) {
  double num = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) num += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(num) / std::max(norm(b), floor);
}

std::vector<double> central_diff(const std::function<double(const std::vector<double>&)>& f, std::vector<double> x,
                                 double h) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double fp = f(x);
    x[i] = x0 - h;
    const double fm = f(x);
    x[i] = x0;
    g[i] = (fp - fm) / (2 * h);
  }
  return g;
}

CgConfig tight_cg(std::size_t n) { return CgConfig{static_cast<int>(20 * n + 100), 1e-14, 1e-30, true}; }

OperatorCoeffs advection_coeffs(Rng& rng, std::size_t n, std::size_t k) {
  std::vector<double> a(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    const double g = rng.uniform(0.2, 1.5);
    for (std::size_t f = 0; f < k; ++f) a[i * k + f] = g;
  }
  return {Tensor::zeros({n, k}), Tensor({n, k}, std::move(a)), Tensor::zeros({n, k}), Tensor::zeros({n, k})};
}

Diffusion grid_stencil(const GridShape& g, std::size_t k) {
  return Diffusion::stencil(g, repeat_kernel(five_point_taps(), k));
}

}  // namespace

void to_json(json& j, const CheckReport& r) {
  j = json{{"name", r.name},           {"cases", r.cases},     {"max_error", r.max_error},
           {"threshold", r.threshold}, {"pass", r.pass},       {"seconds", r.seconds}};
  if (!r.details.empty()) j["details"] = r.details;
}

CheckReport solve_oracle(std::uint64_t seed, std::size_t count, std::size_t max_n, std::size_t max_k) {
  if (max_n < 2 || max_k < 1) throw ArgumentError("solve_oracle: need max_n >= 2 and max_k >= 1");
  const auto t0 = Clock::now();
  CheckReport r{"solve", 0, 0.0, 1e-8};
  Rng rng(seed);
  std::size_t fields = 0;
  for (std::size_t s = 0; s < count; ++s) {
    const std::size_t n = 2 + rng.below(max_n - 1);
    const std::size_t k = 1 + rng.below(max_k);
    const ScreenedSystem base = random_system(rng, n);
    const std::vector<double> w(base.w().begin(), base.w().end());
    for (std::size_t f = 0; f < k; ++f) {
      const ScreenedSystem sys(base.topology_ptr(), w, uniform_vec(rng, n, 0.05, 1.0));
      const auto b = uniform_vec(rng, n, -1, 1);
      const auto rec = cg_solve(sys, b, tight_cg(n));
      const Eigen::VectorXd direct =
          assemble_dense(sys).ldlt().solve(Eigen::Map<const Eigen::VectorXd>(b.data(), static_cast<long>(n)));
      r.max_error = std::max(r.max_error, rel_error(rec.psi, std::vector<double>(direct.data(), direct.data() + n)));
      ++fields;
    }
    ++r.cases;
  }
  r.details = {{"fields", fields}};
  return finish(r, t0);
}

CheckReport gradient_oracle(std::uint64_t seed, std::size_t seeds, std::size_t max_n) {
  if (max_n < 2) throw ArgumentError("gradient_oracle: need max_n >= 2");
  const auto t0 = Clock::now();
  CheckReport r{"implicit-gradient", 0, 0.0, 1e-4};
  double worst_b = 0, worst_w = 0, worst_l = 0;
  for (std::size_t s = 0; s < seeds; ++s) {
    Rng rng(seed + s);
    const std::size_t n = 2 + rng.below(max_n - 1);
    const ScreenedSystem sys = random_system(rng, n);
    const auto topo = sys.topology_ptr();
    const std::vector<double> w(sys.w().begin(), sys.w().end()), lam(sys.lambda().begin(), sys.lambda().end());
    const auto b = uniform_vec(rng, n, -1, 1);
    const CgConfig cg = tight_cg(n);
    auto loss = [&](const std::vector<double>& ww, const std::vector<double>& ll, const std::vector<double>& bb) {
      const auto psi = cg_solve(ScreenedSystem(topo, ww, ll), bb, cg).psi;
      double e = 0.0;
      for (double v : psi) e += v * v;
      return e;
    };
    const auto psi = cg_solve(sys, b, cg).psi;
    std::vector<double> up(n);
    for (std::size_t i = 0; i < n; ++i) up[i] = 2 * psi[i];
    const auto g = cg_solve_grad(sys, psi, up, cg);
    const double h = 1e-6;
    worst_b = std::max(worst_b, rel_error(g.b, central_diff([&](const auto& v) { return loss(w, lam, v); }, b, h)));
    worst_w = std::max(worst_w, rel_error(g.w, central_diff([&](const auto& v) { return loss(v, lam, b); }, w, h)));
    worst_l = std::max(worst_l, rel_error(g.lambda, central_diff([&](const auto& v) { return loss(w, v, b); }, lam, h)));
    ++r.cases;
  }
  r.max_error = std::max({worst_b, worst_w, worst_l});
  r.details = {{"b", worst_b}, {"w", worst_w}, {"lambda", worst_l}};
  return finish(r, t0);
}

CheckReport dirichlet_oracle(std::uint64_t seed, std::size_t systems, std::size_t perturbations) {
  const auto t0 = Clock::now();
  // Reported error is the count of perturbations that failed to raise the energy.
  CheckReport r{"dirichlet-minimum", 0, 0.0, 0.0};
  Rng rng(seed);
  double min_gap = INFINITY;
  std::size_t failures = 0;
  for (std::size_t s = 0; s < systems; ++s) {
    const std::size_t n = 2 + rng.below(99);
    const ScreenedSystem sys = random_system(rng, n);
    const auto b = uniform_vec(rng, n, -1, 1);
    const auto psi = cg_solve(sys, b, tight_cg(n)).psi;
    const double e0 = dirichlet_energy(sys, psi, b);
    for (std::size_t p = 0; p < perturbations; ++p) {
      const double scale = std::pow(10.0, rng.uniform(-3, 0));
      auto moved = psi;
      for (double& v : moved) v += scale * rng.uniform(-1, 1);
      const double gap = dirichlet_energy(sys, moved, b) - e0;
      min_gap = std::min(min_gap, gap);
      failures += !(gap > 0.0);
    }
    ++r.cases;
  }
  r.max_error = static_cast<double>(failures);
  r.details = {{"perturbations", systems * perturbations}, {"min_energy_gap", min_gap}};
  return finish(r, t0);
}

CheckReport scan_oracle(std::uint64_t seed, const std::vector<std::size_t>& sizes, std::size_t seeds) {
  const auto t0 = Clock::now();
  CheckReport r{"scan-equivalence", 0, 0.0, 1e-12};
  json per_size = json::object();
  for (std::size_t n : sizes) {
    if (n == 0) throw ArgumentError("scan_oracle: sizes must be positive");
    double worst = 0.0;
    for (std::size_t s = 0; s < seeds; ++s) {
      Rng rng(seed + 7919 * s + n);
      AffineChain c;
      c.alpha = uniform_vec(rng, n, 0.01, 0.99);
      c.beta = uniform_vec(rng, n, -1, 1);
      const double psi0 = rng.uniform(-1, 1);
      const auto seq = scan_sequential(c, psi0), par = scan_parallel(c, psi0);
      double num = 0.0, den = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        num = std::max(num, std::abs(par[i] - seq[i]));
        den = std::max(den, std::abs(seq[i]));
      }
      worst = std::max(worst, num / std::max(den, 1e-300));
      ++r.cases;
    }
    per_size[std::to_string(n)] = worst;
    r.max_error = std::max(r.max_error, worst);
  }
  r.details = {{"max_deviation_by_size", per_size}};
  return finish(r, t0);
}

CheckReport scan_causality(std::uint64_t seed, std::size_t n) {
  const auto t0 = Clock::now();
  // Error counts outputs before the perturbed position that moved.
  CheckReport r{"scan-causality", 0, 0.0, 0.0};
  Rng rng(seed);
  const auto w = uniform_vec(rng, n, 0.1, 2), l = uniform_vec(rng, n, 0.1, 2), b = uniform_vec(rng, n, -1, 1);
  const auto base = scan_parallel(coefficients(w, l, b));
  std::size_t leaks = 0, dead = 0;
  for (std::size_t j = 0; j < n; ++j)
    for (int which = 0; which < 3; ++which) {
      auto w2 = w, l2 = l, b2 = b;
      (which == 0 ? w2 : which == 1 ? l2 : b2)[j] += 0.37;
      const auto out = scan_parallel(coefficients(w2, l2, b2));
      for (std::size_t i = 0; i < j; ++i) leaks += out[i] != base[i];
      dead += out[j] == base[j];
      ++r.cases;
    }
  r.max_error = static_cast<double>(leaks + dead);
  r.details = {{"leaks", leaks}, {"unresponsive", dead}};
  return finish(r, t0);
}

CheckReport drift_identity(std::uint64_t seed) {
  const auto t0 = Clock::now();
  CheckReport r{"drift-identity", 0, 0.0, 1e-12};
  Rng rng(seed);
  const GridShape g{6, 6, 1, 4};
  for (std::size_t k : {1, 2, 3, 8, 16, 32}) {
    const Tensor j = antisymmetrize(random_tensor(rng, {k, k}, -0.5, 0.5));
    const OperatorCoeffs c = advection_coeffs(rng, g.cells(), k);
    std::vector<Tensor> traj;
    evolve(random_tensor(rng, {g.cells(), k}), c, j, grid_stencil(g, k), 0.1, 20, &traj);
    r.max_error = std::max(r.max_error, structure_diagnostics(j, traj, c.alpha, 0.1).max_identity_error);
    ++r.cases;
  }
  return finish(r, t0);
}

CheckReport drift_order(std::uint64_t seed) {
  const auto t0 = Clock::now();
  CheckReport r{"drift-order", 0, 0.0, 0.1};
  Rng rng(seed);
  const std::size_t k = 4;
  const GridShape g{4, 4, 1, 4};
  const Tensor j = antisymmetrize(random_tensor(rng, {k, k}));
  const OperatorCoeffs c = advection_coeffs(rng, g.cells(), k);
  const Tensor psi0 = random_tensor(rng, {g.cells(), k});
  std::vector<double> xs, ys;
  for (double dt = 0.1; dt > 0.001; dt /= 2) {
    std::vector<Tensor> traj;
    evolve(psi0, c, j, grid_stencil(g, k), dt, 1, &traj);
    xs.push_back(std::log(dt));
    ys.push_back(std::log(structure_diagnostics(j, traj, c.alpha, dt).drift[0]));
    ++r.cases;
  }
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) mx += xs[i], my += ys[i];
  mx /= static_cast<double>(xs.size());
  my /= static_cast<double>(ys.size());
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) sxy += (xs[i] - mx) * (ys[i] - my), sxx += (xs[i] - mx) * (xs[i] - mx);
  const double slope = sxy / sxx;
  r.max_error = std::abs(slope - 2.0);
  r.details = {{"order", slope}};
  return finish(r, t0);
}

CheckReport dissipation_monotone(std::uint64_t seed) {
  const auto t0 = Clock::now();
  // Error counts trials whose Dirichlet energy rose at some step.
  CheckReport r{"dissipation-monotone", 0, 0.0, 0.0};
  std::size_t rises = 0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    Rng rng(seed + s);
    const std::size_t n = 10 + rng.below(50), k = 1 + rng.below(4);
    const auto topo = random_topology(rng, n);
    const auto wv = uniform_vec(rng, topo->n_edges(), 0.1, 2.0);
    OperatorCoeffs c{Tensor::full({n, k}, 1.0), Tensor::zeros({n, k}), random_tensor(rng, {n, k}, 0.1, 1.0),
                     Tensor::zeros({n, k})};
    std::vector<ScreenedSystem> systems;
    double lmax = 0.0;
    for (std::size_t f = 0; f < k; ++f) {
      std::vector<double> lam(n);
      for (std::size_t i = 0; i < n; ++i) lam[i] = c.gamma.at(i, f);
      systems.emplace_back(topo, wv, lam);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(assemble_dense(systems.back()));
      lmax = std::max(lmax, es.eigenvalues().maxCoeff());
    }
    const Tensor j = antisymmetrize(random_tensor(rng, {k, k}));
    std::vector<Tensor> traj;
    evolve(random_tensor(rng, {n, k}), c, j, Diffusion::graph(topo, Tensor::column(wv)), 1.0 / lmax, 50, &traj);
    rises += !structure_diagnostics(j, traj, c.alpha, 1.0 / lmax, systems).dirichlet_monotone;
    ++r.cases;
  }
  r.max_error = static_cast<double>(rises);
  return finish(r, t0);
}

CheckReport skew_bitwise(std::uint64_t seed) {
  const auto t0 = Clock::now();
  CheckReport r{"skew-bitwise", 0, 0.0, 0.0};
  Rng rng(seed);
  std::size_t mismatches = 0;
  for (std::size_t k = 1; k <= 33; ++k) {
    const Tensor j = antisymmetrize(random_tensor(rng, {k, k}, -10, 10));
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b) mismatches += j.at(a, b) != -j.at(b, a);
    ++r.cases;
  }
  r.max_error = static_cast<double>(mismatches);
  return finish(r, t0);
}

CheckReport readout_count() {
  const auto t0 = Clock::now();
  CheckReport r{"readout-count", 1, 0.0, 0.0};
  const std::size_t k = 32;
  Rng rng(0);
  const GridShape g{3, 3, 1, 4};
  const Tensor f = readout(ReadoutKind::StressEnergy, random_tensor(rng, {9, k}), g, default_readout_kernels(k));
  const double got = static_cast<double>(f.cols());
  r.max_error = std::abs(got - 1024.0) + std::abs(static_cast<double>(feature_count(ReadoutKind::StressEnergy, k)) - 1024.0);
  r.details = {{"features", f.cols()}};
  return finish(r, t0);
}

CheckReport shear_reconstruction(std::uint64_t seed) {
  const auto t0 = Clock::now();
  CheckReport r{"shear-reconstruction", 0, 0.0, 1e-14};
  Rng rng(seed);
  for (std::size_t k : {1, 2, 4, 8}) {
    const std::size_t n = 50;
    const Tensor gx = random_tensor(rng, {n, k}, -3, 3), gy = random_tensor(rng, {n, k}, -3, 3);
    const auto d = decompose_shear(gx, gy);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t a = 0; a < k; ++a)
        for (std::size_t b = 0; b < k; ++b) {
          const double t = gx.at(i, a) * gy.at(i, b);
          r.max_error = std::max(r.max_error, std::abs(d.sym.at(i, a * k + b) + d.anti.at(i, a * k + b) - t));
        }
    ++r.cases;
  }
  return finish(r, t0);
}

CheckReport dissipation_identity(std::uint64_t seed) {
  const auto t0 = Clock::now();
  CheckReport r{"dissipation-identity", 0, 0.0, 1e-12};
  Rng rng(seed);
  const std::size_t h = 7, w = 6, k = 3;
  const GridShape g{h, w, 1, 4};
  const auto topo = std::make_shared<const GraphTopology>(grid_topology(h, w, 4));
  const Tensor ones = Tensor::full({topo->n_edges(), 1}, 1.0);
  const Tensor fx = repeat_kernel(forward_x_taps(), k), fy = repeat_kernel(forward_y_taps(), k);
  double pointwise = 0.0, summed = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    // Affine fields: forward and backward differences coincide on interior cells.
    std::vector<double> v;
    std::vector<std::array<double, 3>> coef(k);
    for (auto& c : coef) c = {rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
    for (std::size_t row = 0; row < h; ++row)
      for (std::size_t col = 0; col < w; ++col)
        for (const auto& c : coef) v.push_back(c[0] * static_cast<double>(col) + c[1] * static_cast<double>(row) + c[2]);
    const Tensor lin({h * w, k}, v);
    const Tensor d = dissipation_readout(*topo, ones, lin);
    const auto gr = gradients(lin, g, fx, fy);
    const Tensor e = stress_energy(gr.gx, gr.gy).e_diag;
    for (std::size_t row = 1; row + 1 < h; ++row)
      for (std::size_t col = 1; col + 1 < w; ++col)
        for (std::size_t a = 0; a < k; ++a) {
          const std::size_t i = row * w + col;
          pointwise = std::max(pointwise, std::abs(d.at(i, a) - 2 * e.at(i, a)) / std::max(1.0, std::abs(d.at(i, a))));
        }
    // Whole-grid totals agree for any field.
    const Tensor psi = random_tensor(rng, {h * w, k});
    const double dsum = sum(dissipation_readout(*topo, ones, psi)).item();
    const auto gp = gradients(psi, g, fx, fy);
    const double esum = sum(stress_energy(gp.gx, gp.gy).e_diag).item();
    summed = std::max(summed, std::abs(dsum - 2 * esum) / std::max(1.0, std::abs(dsum)));
    r.cases += 2;
  }
  r.max_error = std::max(pointwise, summed);
  r.details = {{"interior_pointwise", pointwise}, {"whole_grid_sum", summed}};
  return finish(r, t0);
}

CheckReport casimir_spectrum(std::uint64_t seed) {
  const auto t0 = Clock::now();
  CheckReport r{"casimir-spectrum", 0, 0.0, 1e-10};
  Rng rng(seed);
  std::size_t missing = 0;
  double worst_gap = 0.0;
  for (std::size_t k = 2; k <= 33; ++k)
    for (int trial = 0; trial < 5; ++trial) {
      const auto sp = poisson_spectrum(antisymmetrize(random_tensor(rng, {k, k})));
      if (k % 2 == 1 && sp.casimir_dim < 1) ++missing;
      for (double gap : sp.pair_gaps) worst_gap = std::max(worst_gap, gap);
      ++r.cases;
    }
  r.max_error = missing > 0 ? INFINITY : worst_gap;
  r.details = {{"odd_without_casimir", missing}, {"max_pair_gap", worst_gap}};
  return finish(r, t0);
}

namespace {

struct GradInput {
  std::string name;
  Tensor value;
};

// Appends rows and a normwise report for every input of a scalar function.
void check_inputs(GradcheckResult& out, const std::string& suite, const std::vector<GradInput>& inputs,
                  const std::function<Tensor(const std::vector<Tensor>&)>& f, double tol, double h) {
  Tape tape;
  std::vector<Tensor> watched;
  for (const auto& in : inputs) watched.push_back(tape.watch(in.value));
  tape.backward(f(watched));
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto analytic = tape.grad(watched[k]).to_vector();
    const auto numeric = central_diff(
        [&](const std::vector<double>& v) {
          std::vector<Tensor> args;
          for (const auto& in : inputs) args.push_back(in.value);
          args[k] = Tensor(inputs[k].value.shape(), v);
          return f(args).item();
        },
        inputs[k].value.to_vector(), h);
    for (std::size_t i = 0; i < analytic.size(); ++i)
      out.rows.push_back({suite, inputs[k].name, i, analytic[i], numeric[i]});
    CheckReport r{suite + "/" + inputs[k].name, analytic.size(), rel_error(analytic, numeric, 1e-8), tol};
    r.pass = r.max_error <= tol;
    out.pass = out.pass && r.pass;
    out.parameters.push_back(r);
  }
}

void check_params(GradcheckResult& out, const std::string& suite, ModelParams params,
                  const std::function<Tensor(const ModelParams::Bound&)>& f, double tol, double h) {
  Tape tape;
  const auto bound = params.bind(tape);
  tape.backward(f(bound));
  params.zero_grad();
  params.accumulate_gradients(tape, bound);
  for (const auto& name : params.names()) {
    const auto analytic = params.grad(name);
    const auto numeric = central_diff(
        [&](const std::vector<double>& v) {
          ModelParams local = params;
          local.set(name, Tensor(params.value(name).shape(), v));
          return f(local.constants()).item();
        },
        params.value(name).to_vector(), h);
    for (std::size_t i = 0; i < analytic.size(); ++i) out.rows.push_back({suite, name, i, analytic[i], numeric[i]});
    CheckReport r{suite + "/" + name, analytic.size(), rel_error(analytic, numeric, 1e-8), tol};
    r.pass = r.max_error <= tol;
    out.pass = out.pass && r.pass;
    out.parameters.push_back(r);
  }
}

}  // namespace

GradcheckResult gradcheck_suite(std::uint64_t seed, double tol, double model_tol) {
  GradcheckResult out;
  Rng rng(seed);
  const double h = 1e-5;

  {
    const std::size_t n = 24;
    const ScreenedSystem sys = random_system(rng, n);
    const auto topo = sys.topology_ptr();
    const CgConfig cg = tight_cg(n);
    check_inputs(out, "screened_solve",
                 {{"w", Tensor::column(std::vector<double>(sys.w().begin(), sys.w().end()))},
                  {"lambda", random_tensor(rng, {n, 2}, 0.1, 1.0)},
                  {"b", random_tensor(rng, {n, 2})}},
                 [&](const std::vector<Tensor>& a) { return sum(square(screened_solve(topo, a[0], a[1], a[2], cg))); },
                 tol, h);
  }
  {
    const Shape s{32, 2};
    check_inputs(out, "causal_scan",
                 {{"w", random_tensor(rng, s, 0.1, 2)}, {"lambda", random_tensor(rng, s, 0.1, 2)},
                  {"b", random_tensor(rng, s)}},
                 [](const std::vector<Tensor>& a) { return sum(square(causal_scan(a[0], a[1], a[2]))); }, tol, h);
  }
  {
    const GridShape g{5, 6, 1, 4};
    const Tensor probe = random_tensor(rng, {30, 3});
    check_inputs(out, "stencil", {{"x", random_tensor(rng, {30, 3})}, {"kernels", random_tensor(rng, {3, 9})}},
                 [&](const std::vector<Tensor>& a) { return sum(mul(depthwise_stencil(a[0], g, a[1]), probe)); }, tol, h);
  }
  {
    const GridShape g{5, 5, 1, 4};
    const std::size_t k = 3;
    const auto kern = default_readout_kernels(k);
    for (ReadoutKind kind : {ReadoutKind::StressEnergy, ReadoutKind::Curvature, ReadoutKind::Noether}) {
      const Tensor probe = random_tensor(rng, {25, feature_count(kind, k)});
      check_inputs(out, std::string("readout-") + readout_name(kind), {{"psi", random_tensor(rng, {25, k})}},
                   [&](const std::vector<Tensor>& a) { return sum(mul(readout(kind, a[0], g, kern), probe)); }, tol, h);
    }
  }
  {
    const GridShape g{4, 4, 1, 4};
    const std::size_t k = 3, n = 16;
    const OperatorCoeffs c{random_tensor(rng, {n, k}, 0.1, 1), random_tensor(rng, {n, k}), random_tensor(rng, {n, k}, 0.1, 1),
                           random_tensor(rng, {n, k})};
    const Tensor probe = random_tensor(rng, {n, k});
    const Diffusion d = grid_stencil(g, k);
    check_inputs(out, "euler", {{"psi", random_tensor(rng, {n, k})}, {"j_raw", random_tensor(rng, {k, k})}},
                 [&](const std::vector<Tensor>& a) {
                   return sum(mul(evolve(a[0], c, antisymmetrize(a[1]), d, 0.05, 3), probe));
                 },
                 tol, h);
  }
  {
    LayerConfig cfg;
    cfg.input_dim = 3;
    cfg.classes = 3;
    cfg.fields = 2;
    cfg.features = 4;
    cfg.hidden = {5, 5};
    cfg.decoder_init_scale = 1.0;
    cfg.cg = CgConfig{500, 1e-13, 1e-30, true};
    cfg.objects.objects = 2;
    cfg.objects.hidden = {3};
    ModelParams params;
    const auto layer = PoissonLayer::create(params, rng, "layer", cfg);
    const auto topo = std::make_shared<const GraphTopology>(grid_topology(3, 3, 4, 2));
    const Tensor x = random_tensor(rng, {18, 3}), probe = random_tensor(rng, {18, 3});
    check_params(out, "poisson_layer", params,
                 [&](const ModelParams::Bound& p) { return sum(mul(layer.forward(p, topo, x).logits, probe)); },
                 model_tol, h);
  }
  {
    MazeModelConfig mc;
    mc.embed_dim = 3;
    mc.layer.features = 4;
    mc.layer.hidden = {6, 6};
    mc.layer.decoder_init_scale = 1.0;
    mc.layer.cg = CgConfig{2000, 1e-13, 1e-30, true};
    ModelParams params;
    const auto model = MazeModel::create(params, rng, mc);
    const Maze m = generate_maze(5, 5, seed);
    check_params(out, "maze", params, [&](const ModelParams::Bound& p) { return maze_loss(model, p, {&m}); }, model_tol,
                 h);
  }
  return out;
}

void to_json(json& j, const MazeRun& r) {
  j = json{{"seed", r.seed},
           {"lambda_over_n", r.lambda_over_n},
           {"final_loss", r.final_loss},
           {"f1_train_size", r.f1_train_size},
           {"f1_transfer", r.f1_transfer},
           {"seconds", r.seconds}};
}

MazeRun maze_run(const MazeProtocol& protocol, std::uint64_t seed, bool lambda_over_n) {
  const auto t0 = Clock::now();
  // Corpus and evaluation sets depend on the seed only, so the two variants see identical data.
  Rng seeds(seed);
  const std::uint64_t corpus_seed = seeds.next(), eval_seed = seeds.next(), transfer_seed = seeds.next();
  const auto corpus = generate_corpus(protocol.train_mazes, protocol.train_size, protocol.train_size, corpus_seed);
  MazeModelConfig mc = protocol.model;
  mc.layer.lambda_over_n = lambda_over_n;
  TrainConfig tc = protocol.train;
  tc.seed = seed;
  const TrainResult tr = train(corpus, mc, tc);
  MazeRun r;
  r.seed = seed;
  r.lambda_over_n = lambda_over_n;
  const std::size_t tail = std::min<std::size_t>(50, tr.losses.size());
  for (std::size_t i = tr.losses.size() - tail; i < tr.losses.size(); ++i) r.final_loss += tr.losses[i];
  r.final_loss /= static_cast<double>(std::max<std::size_t>(tail, 1));
  r.f1_train_size = size_generalization(tr.model, tr.params, protocol.train_size, protocol.eval_mazes, eval_seed).f1;
  r.f1_transfer =
      size_generalization(tr.model, tr.params, protocol.transfer_size, protocol.transfer_mazes, transfer_seed).f1;
  r.seconds = since(t0);
  return r;
}

}  // namespace mtpl
