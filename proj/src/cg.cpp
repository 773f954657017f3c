#include "metriplector/cg.hpp"

#include <cmath>
#include <exception>
#include <string>

#include "metriplector/errors.hpp"

namespace mtpl {

void CgConfig::validate() const {
  if (max_iters < 1) throw ArgumentError("CG max_iters must be at least 1");
  if (!(rel_tol > 0.0) || !(abs_floor > 0.0)) throw ArgumentError("CG tolerances must be positive");
}

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

SolveRecord cg_solve(const ScreenedSystem& sys, std::span<const double> b, const CgConfig& cfg) {
  cfg.validate();
  const auto n = sys.size();
  if (b.size() != n) throw DimensionError("rhs length " + std::to_string(b.size()) + " != node count " + std::to_string(n));

  SolveRecord rec;
  rec.psi.assign(n, 0.0);
  const double bnorm = std::sqrt(dot(b, b));
  if (!std::isfinite(bnorm)) throw NumericError("CG: non-finite right-hand side");
  if (bnorm == 0.0) return rec;
  const double scale = std::max(bnorm, cfg.abs_floor);

  std::vector<double> inv_diag;
  if (cfg.jacobi) {
    inv_diag = sys.diagonal();
    for (auto& d : inv_diag) d = 1.0 / d;
  }

  std::vector<double> r(b.begin(), b.end()), z(n), p(n), q(n);
  auto precondition = [&] {
    if (cfg.jacobi)
      for (std::size_t i = 0; i < n; ++i) z[i] = inv_diag[i] * r[i];
    else
      z = r;
  };
  precondition();
  p = z;
  double rz = dot(r, z);
  double rnorm = bnorm;

  for (int it = 1; it <= cfg.max_iters; ++it) {
    laplacian_apply(sys, p, q);
    const double pq = dot(p, q);
    if (!std::isfinite(pq) || pq <= 0.0) throw NumericError("CG: curvature p'Ap is not positive/finite");
    const double alpha = rz / pq;
    for (std::size_t i = 0; i < n; ++i) {
      rec.psi[i] += alpha * p[i];
      r[i] -= alpha * q[i];
    }
    rnorm = std::sqrt(dot(r, r));
    if (!std::isfinite(rnorm)) throw NumericError("CG: residual became non-finite");
    rec.iterations = it;
    if (rnorm / scale <= cfg.rel_tol) break;
    precondition();
    const double rz_next = dot(r, z);
    const double beta = rz_next / rz;
    rz = rz_next;
    for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
  }

  // Report the true residual, not the recursively updated one.
  laplacian_apply(sys, rec.psi, q);
  double true_sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) true_sq += (q[i] - b[i]) * (q[i] - b[i]);
  rec.rel_residual = std::sqrt(true_sq) / scale;
  if (rnorm / scale > cfg.rel_tol)
    throw ConvergenceError("CG did not converge in " + std::to_string(cfg.max_iters) +
                               " iterations (relative residual " + std::to_string(rec.rel_residual) + ")",
                           rec.iterations, rec.rel_residual);
  return rec;
}

SolveGradients cg_solve_grad(const ScreenedSystem& sys, std::span<const double> psi, std::span<const double> upstream,
                             const CgConfig& cfg, SolveRecord* record) {
  const auto n = sys.size();
  if (psi.size() != n || upstream.size() != n) throw DimensionError("cg_solve_grad: vector lengths differ from node count");
  SolveRecord adj;
  try {
    adj = cg_solve(sys, upstream, cfg);
  } catch (const ConvergenceError& e) {
    throw ConvergenceError(std::string("adjoint solve: ") + e.what(), e.iterations(), e.residual());
  }
  const auto& v = adj.psi;

  SolveGradients g;
  g.b = v;
  g.lambda.resize(n);
  for (std::size_t i = 0; i < n; ++i) g.lambda[i] = -v[i] * psi[i];
  const auto edges = sys.topology().edges();
  g.w.resize(edges.size());
  for (std::size_t k = 0; k < edges.size(); ++k) {
    const auto [i, j] = edges[k];
    g.w[k] = -v[i] * (psi[i] - psi[j]) - v[j] * (psi[j] - psi[i]);
  }
  if (record) record->adjoint = v;
  return g;
}

std::vector<SolveRecord> solve_k_fields(std::span<const ScreenedSystem> systems,
                                        std::span<const std::vector<double>> b, const CgConfig& cfg, bool parallel) {
  if (systems.size() != b.size()) throw DimensionError("solve_k_fields: one rhs per system required");
  for (const auto& s : systems)
    if (&s.topology() != &systems.front().topology())
      throw ArgumentError("solve_k_fields: all fields must share one topology");

  const long k = static_cast<long>(systems.size());
  std::vector<SolveRecord> out(systems.size());
  std::vector<std::exception_ptr> errors(systems.size());
#pragma omp parallel for schedule(static) if (parallel && k > 1)
  for (long f = 0; f < k; ++f) {
    try {
      out[static_cast<std::size_t>(f)] = cg_solve(systems[static_cast<std::size_t>(f)], b[static_cast<std::size_t>(f)], cfg);
    } catch (...) {
      errors[static_cast<std::size_t>(f)] = std::current_exception();
    }
  }
  for (std::size_t f = 0; f < errors.size(); ++f) {
    if (!errors[f]) continue;
    const std::string where = "field " + std::to_string(f) + ": ";
    try {
      std::rethrow_exception(errors[f]);
    } catch (const ConvergenceError& e) {
      throw ConvergenceError(where + e.what(), e.iterations(), e.residual());
    } catch (const NumericError& e) {
      throw NumericError(where + e.what());
    } catch (const DimensionError& e) {
      throw DimensionError(where + e.what());
    }
  }
  return out;
}

namespace {

std::vector<double> column_of(const Tensor& t, std::size_t k) {
  const auto n = t.rows(), c = t.cols();
  std::vector<double> v(n);
  const auto tv = t.values();
  for (std::size_t i = 0; i < n; ++i) v[i] = tv[i * c + k];
  return v;
}

}  // namespace

Tensor screened_solve(const TopologyPtr& topology, const Tensor& w, const Tensor& lambda, const Tensor& b,
                      const CgConfig& cfg) {
  const auto n = topology->n_nodes(), m = topology->n_edges();
  const auto k = b.cols();
  if (w.numel() != m) throw DimensionError("screened_solve: one conductance per edge required");
  if (b.rows() != n || lambda.rows() != n || lambda.cols() != k)
    throw DimensionError("screened_solve: lambda and b must both be [n,K], got " + shape_str(lambda.shape()) +
                         " and " + shape_str(b.shape()));

  std::vector<ScreenedSystem> systems;
  std::vector<std::vector<double>> rhs;
  systems.reserve(k);
  for (std::size_t f = 0; f < k; ++f) {
    systems.emplace_back(topology, w.to_vector(), column_of(lambda, f));
    rhs.push_back(column_of(b, f));
  }
  auto records = solve_k_fields(systems, rhs, cfg);

  std::vector<double> psi(n * k);
  for (std::size_t f = 0; f < k; ++f)
    for (std::size_t i = 0; i < n; ++i) psi[i * k + f] = records[f].psi[i];
  Tensor result(Shape{n, k}, std::move(psi));
  if (!w.tracked() && !lambda.tracked() && !b.tracked()) return result;

  return custom_grad(result, {w, lambda, b},
                     [systems = std::move(systems), result, cfg, n, m, k, w_shape = w.shape()](const Tensor& up) {
                       std::vector<double> gw(m, 0.0), glam(n * k), gb(n * k);
                       for (std::size_t f = 0; f < k; ++f) {
                         const auto g = cg_solve_grad(systems[f], column_of(result, f), column_of(up, f), cfg);
                         for (std::size_t e = 0; e < m; ++e) gw[e] += g.w[e];
                         for (std::size_t i = 0; i < n; ++i) {
                           glam[i * k + f] = g.lambda[i];
                           gb[i * k + f] = g.b[i];
                         }
                       }
                       return std::vector<Tensor>{Tensor(w_shape, std::move(gw)), Tensor(Shape{n, k}, std::move(glam)),
                                                  Tensor(Shape{n, k}, std::move(gb))};
                     });
}

}  // namespace mtpl
