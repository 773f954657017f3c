#pragma once

#include <array>
#include <cstddef>
#include <string_view>

#include "metriplector/graph.hpp"
#include "metriplector/tensor.hpp"

namespace mtpl {

/// Directional derivatives of every field, each [n,K].
struct GradientField {
  Tensor gx;
  Tensor gy;
};

/// Sobel/8: exact first derivative on linear ramps, in pixel units.
std::array<double, 9> sobel_x_taps();
std::array<double, 9> sobel_y_taps();
/// psi(r, c+1) - psi(r, c) and psi(r+1, c) - psi(r, c).
std::array<double, 9> forward_x_taps();
std::array<double, 9> forward_y_taps();

/// Depthwise gradients with replicate padding; kernels are [K,9] each.
GradientField gradients(const Tensor& psi, const GridShape& grid, const Tensor& kx, const Tensor& ky);

/// Columns: E_aa (K), E_ab for a<b (K(K-1)/2), V_ab for a<b (K(K-1)/2).
struct ReadoutFeatures {
  Tensor e_diag;
  Tensor e_cross;
  Tensor vorticity;
  Tensor concat() const;
};

ReadoutFeatures stress_energy(const Tensor& gx, const Tensor& gy);

/// Full T^{xy}_{ab} = gx_a gy_b split into symmetric and antisymmetric
/// halves, both [n, K*K] with column a*K+b.
struct ShearDecomposition {
  Tensor sym;
  Tensor anti;
};
ShearDecomposition decompose_shear(const Tensor& gx, const Tensor& gy);

/// Centered positions in [-1,1]^2: x follows columns, y follows rows. [n,2].
Tensor centered_positions(const GridShape& grid);

/// Columns: p_x (K), p_y (K), L (K), D (K), E_aa (K), then for a<b the
/// families E_ab, V_ab and the cross-current C_ab, each K(K-1)/2.
/// C_ab = psi_a (x gy_b - y gx_b) - psi_b (x gy_a - y gx_a).
Tensor noether_currents(const Tensor& psi, const Tensor& gx, const Tensor& gy, const Tensor& positions);

/// Columns: psi_a lap_a (K), then psi_a lap_b - psi_b lap_a for a<b.
Tensor field_curvature(const Tensor& psi, const Tensor& lap);
/// Single product psi_a * lap_b, [n,1].
Tensor curvature_product(const Tensor& psi, const Tensor& lap, std::size_t a, std::size_t b);

enum class ReadoutKind { StressEnergy, Curvature, Noether };

ReadoutKind parse_readout_kind(std::string_view name);
const char* readout_name(ReadoutKind kind);
std::size_t feature_count(ReadoutKind kind, std::size_t k);
std::size_t feature_count(std::string_view kind, std::size_t k);

/// Readout kernels for one layer: gradient stencils and the curvature Laplacian.
struct ReadoutKernels {
  Tensor kx;
  Tensor ky;
  Tensor laplacian;
};
ReadoutKernels default_readout_kernels(std::size_t k);

/// Dispatches to the selected readout; result is [n, feature_count(kind, K)].
Tensor readout(ReadoutKind kind, const Tensor& psi, const GridShape& grid, const ReadoutKernels& kernels);

}  // namespace mtpl
