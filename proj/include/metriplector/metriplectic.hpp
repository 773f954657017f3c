#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "metriplector/graph.hpp"
#include "metriplector/params.hpp"
#include "metriplector/tensor.hpp"

namespace mtpl {

/// Per-pixel, per-field coefficients of the metriplectic update; each is [n,K].
struct OperatorCoeffs {
  Tensor sigma;
  Tensor alpha;
  Tensor gamma;
  Tensor source;
};

inline constexpr double kGammaFloor = 0.1;
inline constexpr double kSourceClamp = 5.0;

/// Linear maps from features h [n,D] to the initial field and the coefficients.
struct ProjectionWeights {
  Tensor w_psi, b_psi;
  Tensor w_sigma, b_sigma;
  Tensor w_alpha, b_alpha;
  Tensor w_gamma, b_gamma;
  Tensor w_source, b_source;
};

struct Projected {
  Tensor psi;
  OperatorCoeffs coeffs;
};

/// psi = W h; sigma = softplus; alpha linear; gamma = softplus + 0.1; s = clamp(., +-5).
Projected project_operators(const Tensor& h, const ProjectionWeights& w);

/// J - J^T. Entry (j,i) is the exact negation of entry (i,j).
Tensor antisymmetrize(const Tensor& j_raw);

/// 5-point Laplacian with graph sign, so that -sigma * stencil(psi) diffuses.
std::array<double, 9> five_point_taps();

/// The operator applied in the sigma term: a depthwise grid stencil or a
/// weighted graph Laplacian. Both return L psi with L positive semidefinite
/// for the default initializations.
class Diffusion {
 public:
  static Diffusion stencil(GridShape grid, Tensor kernels);
  static Diffusion graph(TopologyPtr topology, Tensor w);

  Tensor apply(const Tensor& psi) const;
  bool is_stencil() const { return grid_.has_value(); }

 private:
  std::optional<GridShape> grid_;
  TopologyPtr topology_;
  Tensor weights_;
};

/// psi + dt [ -sigma L psi + alpha (J_anti psi) - gamma psi + s ]. J_anti acts
/// across the field axis at each pixel; alpha scales the product elementwise.
Tensor euler_step(const Tensor& psi, const OperatorCoeffs& coeffs, const Tensor& j_anti, const Diffusion& diffusion,
                  double dt);

/// `substeps` Euler steps with fixed coefficients.
Tensor evolve(const Tensor& psi0, const OperatorCoeffs& coeffs, const Tensor& j_anti, const Diffusion& diffusion,
              double dt, int substeps, std::vector<Tensor>* trajectory = nullptr);

/// Learned parameters of one metriplectic block, registered under `prefix`.
struct MetriplecticBlock {
  std::string prefix;
  std::size_t in_dim = 0;
  std::size_t fields = 0;

  static MetriplecticBlock create(ModelParams& params, Rng& rng, std::string prefix, std::size_t in_dim,
                                  std::size_t fields);
  ProjectionWeights projections(const ModelParams::Bound& p) const;
  Tensor j_raw(const ModelParams::Bound& p) const;
  Tensor stencil_kernels(const ModelParams::Bound& p) const;
};

struct SpectrumReport {
  std::vector<double> singular_values;  // descending
  std::vector<double> pair_gaps;        // |s_{2i} - s_{2i+1}|
  std::size_t rank = 0;
  std::size_t casimir_dim = 0;
  double skew_residual = 0.0;  // max |J + J^T|
};

inline constexpr double kRankThreshold = 1e-10;

SpectrumReport poisson_spectrum(const Tensor& j_anti, double threshold = kRankThreshold);

struct DiagnosticsReport {
  SpectrumReport spectrum;
  std::vector<double> quad_energy;      // 1/2 sum psi^2, per state
  std::vector<double> drift;            // E_{n+1} - E_n
  std::vector<double> predicted_drift;  // 1/2 dt^2 ||alpha J_anti psi_n||^2
  double max_identity_error = 0.0;
  std::vector<double> dirichlet_energy;  // empty without per-field systems
  bool dirichlet_monotone = true;
};

/// `systems` optionally holds one screened system per field for the
/// Dirichlet-energy track; alpha is the advection gain used for the trajectory.
DiagnosticsReport structure_diagnostics(const Tensor& j_anti, std::span<const Tensor> trajectory, const Tensor& alpha,
                                        double dt, std::span<const ScreenedSystem> systems = {});

}  // namespace mtpl
