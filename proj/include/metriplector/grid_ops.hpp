#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "metriplector/graph.hpp"
#include "metriplector/tensor.hpp"

namespace mtpl {

/// Depthwise 3x3 cross-correlation with replicate padding. x is [n,K] over
/// the grid layout; kernels is [K,9], row-major taps (dr, dc) in {-1,0,1}^2.
/// Differentiable in both x and kernels.
Tensor depthwise_stencil(const Tensor& x, const GridShape& grid, const Tensor& kernels);

/// Reference for depthwise_stencil: copies each image into a padded buffer
/// and runs the plain triple loop. Values only.
std::vector<double> depthwise_stencil_serial(std::span<const double> x, const GridShape& grid,
                                             std::span<const double> kernels, std::size_t k);

/// Same 3x3 kernel repeated for K fields.
Tensor repeat_kernel(const std::array<double, 9>& taps, std::size_t k);

/// Per-grid, per-field standardization (x - mean) / sqrt(var + eps).
Tensor normalize_fields(const Tensor& x, const GridShape& grid, double eps = 1e-6);

/// Per-grid, per-field mean removal.
Tensor center_fields(const Tensor& x, const GridShape& grid);

/// x / (max + eps) per segment of `segment` rows and per column. Meant for
/// nonnegative inputs such as dissipation; makes them scale free.
Tensor segment_max_normalize(const Tensor& x, std::size_t segment, double eps = 1e-12);

/// Unit step (row, col) of a scan direction.
struct Direction {
  int dr;
  int dc;
  const char* name;
};

/// N, S, E, W, NE, NW, SE, SW.
const std::array<Direction, 8>& scan_directions();

/// Exclusive cumulative sum travelling along `dir`: the value at a cell is
/// the sum of all cells strictly behind it on its line.
Tensor directional_scan(const Tensor& x, const GridShape& grid, Direction dir);

/// Graph Laplacian L_W x on a topology as a tape op (w is [m,1]).
Tensor graph_laplacian(const GraphTopology& topology, const Tensor& w, const Tensor& x);

/// Per-node D(i) = sum_j w_ij (x_i - x_j)^2 for every column of x.
Tensor dissipation_readout(const GraphTopology& topology, const Tensor& w, const Tensor& x);

}  // namespace mtpl
