#include "metriplector/metriplectic.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>

#include "metriplector/errors.hpp"
#include "metriplector/grid_ops.hpp"
#include "metriplector/ops.hpp"

namespace mtpl {
namespace {

Tensor linear(const Tensor& h, const Tensor& w, const Tensor& b) { return add(matmul(h, w), b); }

bool all_finite(const Tensor& t) {
  for (double v : t.values())
    if (!std::isfinite(v)) return false;
  return true;
}

void check_term(const Tensor& t, const char* name) {
  if (!all_finite(t)) throw NumericError(std::string("euler_step: non-finite values in the ") + name + " term");
}

}  // namespace

Projected project_operators(const Tensor& h, const ProjectionWeights& w) {
  Projected out;
  out.psi = linear(h, w.w_psi, w.b_psi);
  out.coeffs.sigma = softplus(linear(h, w.w_sigma, w.b_sigma));
  out.coeffs.alpha = linear(h, w.w_alpha, w.b_alpha);
  out.coeffs.gamma = add_scalar(softplus(linear(h, w.w_gamma, w.b_gamma)), kGammaFloor);
  out.coeffs.source = clamp(linear(h, w.w_source, w.b_source), -kSourceClamp, kSourceClamp);
  return out;
}

Tensor antisymmetrize(const Tensor& j_raw) {
  if (j_raw.shape().size() != 2 || j_raw.rows() != j_raw.cols())
    throw DimensionError("antisymmetrize: square matrix required, got " + shape_str(j_raw.shape()));
  return sub(j_raw, transpose(j_raw));
}

std::array<double, 9> five_point_taps() { return {0, -1, 0, -1, 4, -1, 0, -1, 0}; }

Diffusion Diffusion::stencil(GridShape grid, Tensor kernels) {
  Diffusion d;
  d.grid_ = grid;
  d.weights_ = std::move(kernels);
  return d;
}

Diffusion Diffusion::graph(TopologyPtr topology, Tensor w) {
  if (!topology) throw ArgumentError("Diffusion::graph: null topology");
  Diffusion d;
  d.topology_ = std::move(topology);
  d.weights_ = std::move(w);
  return d;
}

Tensor Diffusion::apply(const Tensor& psi) const {
  if (grid_) return depthwise_stencil(psi, *grid_, weights_);
  return graph_laplacian(*topology_, weights_, psi);
}

Tensor euler_step(const Tensor& psi, const OperatorCoeffs& c, const Tensor& j_anti, const Diffusion& diffusion,
                  double dt) {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw ArgumentError("euler_step: dt must be positive and finite");
  const std::size_t k = psi.cols();
  if (j_anti.rows() != k || j_anti.cols() != k)
    throw DimensionError("euler_step: J is " + shape_str(j_anti.shape()) + " for " + std::to_string(k) + " fields");
  for (const Tensor* t : {&c.sigma, &c.alpha, &c.gamma, &c.source})
    if (t->shape() != psi.shape())
      throw DimensionError("euler_step: coefficient shape " + shape_str(t->shape()) + " vs psi " +
                           shape_str(psi.shape()));

  const Tensor diffusion_term = neg(mul(c.sigma, diffusion.apply(psi)));
  check_term(diffusion_term, "diffusion");
  const Tensor advection_term = mul(c.alpha, matmul(psi, transpose(j_anti)));
  check_term(advection_term, "advection");
  const Tensor damping_term = neg(mul(c.gamma, psi));
  check_term(damping_term, "damping");
  check_term(c.source, "source");
  const Tensor rhs = add(add(add(diffusion_term, advection_term), damping_term), c.source);
  const Tensor next = add(psi, scale(rhs, dt));
  check_term(next, "update");
  return next;
}

Tensor evolve(const Tensor& psi0, const OperatorCoeffs& coeffs, const Tensor& j_anti, const Diffusion& diffusion,
              double dt, int substeps, std::vector<Tensor>* trajectory) {
  if (substeps < 1) throw ArgumentError("evolve: substeps must be >= 1");
  Tensor psi = psi0;
  if (trajectory) trajectory->push_back(psi.detach());
  for (int s = 0; s < substeps; ++s) {
    try {
      psi = euler_step(psi, coeffs, j_anti, diffusion, dt);
    } catch (const NumericError& e) {
      throw NumericError("substep " + std::to_string(s) + ": " + e.what());
    }
    if (trajectory) trajectory->push_back(psi.detach());
  }
  return psi;
}

MetriplecticBlock MetriplecticBlock::create(ModelParams& params, Rng& rng, std::string prefix, std::size_t in_dim,
                                            std::size_t fields) {
  MetriplecticBlock b{std::move(prefix), in_dim, fields};
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
  for (const char* head : {"psi", "sigma", "alpha", "gamma", "source"}) {
    std::vector<double> w(in_dim * fields);
    for (double& v : w) v = rng.uniform(-bound, bound);
    params.add(b.prefix + ".w_" + head, Tensor(Shape{in_dim, fields}, std::move(w)));
    params.add(b.prefix + ".b_" + head, Tensor::zeros(Shape{1, fields}));
  }
  std::vector<double> j(fields * fields);
  for (double& v : j) v = 0.1 * rng.normal();
  params.add(b.prefix + ".j_raw", Tensor(Shape{fields, fields}, std::move(j)));
  params.add(b.prefix + ".stencil", repeat_kernel(five_point_taps(), fields));
  return b;
}

ProjectionWeights MetriplecticBlock::projections(const ModelParams::Bound& p) const {
  auto g = [&](const char* n) { return p[prefix + "." + n]; };
  return {g("w_psi"),   g("b_psi"),   g("w_sigma"),  g("b_sigma"),  g("w_alpha"),
          g("b_alpha"), g("w_gamma"), g("b_gamma"), g("w_source"), g("b_source")};
}

Tensor MetriplecticBlock::j_raw(const ModelParams::Bound& p) const { return p[prefix + ".j_raw"]; }
Tensor MetriplecticBlock::stencil_kernels(const ModelParams::Bound& p) const { return p[prefix + ".stencil"]; }

SpectrumReport poisson_spectrum(const Tensor& j_anti, double threshold) {
  const std::size_t k = j_anti.rows();
  if (j_anti.cols() != k) throw DimensionError("poisson_spectrum: square matrix required");
  Eigen::MatrixXd m(k, k);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) m(i, j) = j_anti.at(i, j);
  SpectrumReport r;
  r.skew_residual = (m + m.transpose()).cwiseAbs().maxCoeff();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const auto sv = svd.singularValues();
  r.singular_values.assign(sv.data(), sv.data() + sv.size());
  std::sort(r.singular_values.rbegin(), r.singular_values.rend());
  for (std::size_t i = 0; i + 1 < k; i += 2)
    r.pair_gaps.push_back(std::abs(r.singular_values[i] - r.singular_values[i + 1]));
  r.rank = static_cast<std::size_t>(
      std::count_if(r.singular_values.begin(), r.singular_values.end(), [&](double s) { return s > threshold; }));
  r.casimir_dim = k - r.rank;
  return r;
}

DiagnosticsReport structure_diagnostics(const Tensor& j_anti, std::span<const Tensor> trajectory, const Tensor& alpha,
                                        double dt, std::span<const ScreenedSystem> systems) {
  if (trajectory.size() < 2) throw ArgumentError("structure_diagnostics: need at least two states");
  DiagnosticsReport r;
  r.spectrum = poisson_spectrum(j_anti);
  const Tensor jt = transpose(j_anti.detach());
  for (const Tensor& psi : trajectory) {
    double e = 0.0;
    for (double v : psi.values()) e += v * v;
    r.quad_energy.push_back(0.5 * e);
  }
  for (std::size_t n = 0; n + 1 < trajectory.size(); ++n) {
    // Expand E_{n+1} - E_n per entry so the subtraction does not cancel.
    const auto a = trajectory[n].values();
    const auto b = trajectory[n + 1].values();
    double drift = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) drift += 0.5 * (b[i] - a[i]) * (b[i] + a[i]);
    r.drift.push_back(drift);
    const Tensor adv = mul(alpha.detach(), matmul(trajectory[n].detach(), jt));
    double sq = 0.0;
    for (double v : adv.values()) sq += v * v;
    r.predicted_drift.push_back(0.5 * dt * dt * sq);
    r.max_identity_error = std::max(r.max_identity_error, std::abs(drift - r.predicted_drift.back()));
  }
  if (!systems.empty()) {
    const std::size_t k = trajectory.front().cols();
    if (systems.size() != k) throw DimensionError("structure_diagnostics: one system per field required");
    for (const Tensor& psi : trajectory) {
      double e = 0.0;
      std::vector<double> col(psi.rows()), zero(psi.rows(), 0.0);
      for (std::size_t f = 0; f < k; ++f) {
        for (std::size_t i = 0; i < psi.rows(); ++i) col[i] = psi.at(i, f);
        e += dirichlet_energy(systems[f], col, zero);
      }
      if (!r.dirichlet_energy.empty() && e > r.dirichlet_energy.back()) r.dirichlet_monotone = false;
      r.dirichlet_energy.push_back(e);
    }
  }
  return r;
}

}  // namespace mtpl
