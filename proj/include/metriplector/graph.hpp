#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstddef>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace mtpl {

struct Edge {
  std::size_t i;
  std::size_t j;
};

/// Layout of node indices when a topology is one or more stacked H x W grids
/// (row-major within a grid, grids back to back).
struct GridShape {
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t batch = 1;
  int connectivity = 4;

  std::size_t cells() const { return height * width; }
  std::size_t nodes() const { return height * width * batch; }
};

/// Immutable undirected graph. Each edge is stored once with i < j; a CSR
/// adjacency (neighbor, edge id) is built for row-parallel kernels.
class GraphTopology {
 public:
  GraphTopology(std::size_t n_nodes, std::vector<Edge> edges, std::vector<std::array<double, 2>> positions = {},
                std::optional<GridShape> grid = std::nullopt);

  std::size_t n_nodes() const { return n_; }
  std::size_t n_edges() const { return edges_.size(); }
  std::span<const Edge> edges() const { return edges_; }
  std::span<const std::array<double, 2>> positions() const { return positions_; }
  const std::optional<GridShape>& grid() const { return grid_; }

  std::span<const std::size_t> row_offsets() const { return offsets_; }
  std::span<const std::size_t> neighbors() const { return neighbors_; }
  std::span<const std::size_t> edge_ids() const { return edge_ids_; }
  std::size_t degree(std::size_t node) const { return offsets_[node + 1] - offsets_[node]; }

  /// Endpoint index arrays, handy for gather/scatter ops.
  const std::vector<std::size_t>& sources() const { return src_; }
  const std::vector<std::size_t>& targets() const { return dst_; }

 private:
  std::size_t n_;
  std::vector<Edge> edges_;
  std::vector<std::array<double, 2>> positions_;
  std::optional<GridShape> grid_;
  std::vector<std::size_t> offsets_, neighbors_, edge_ids_;
  std::vector<std::size_t> src_, dst_;
};

using TopologyPtr = std::shared_ptr<const GraphTopology>;

/// Row-major H x W grid with 4- or 8-connectivity; positions are
/// (row, col) scaled to [0, 1]. `batch` stacks independent copies.
GraphTopology grid_topology(std::size_t height, std::size_t width, int connectivity, std::size_t batch = 1);
/// All n(n-1)/2 edges, repeated over `batch` disjoint copies.
GraphTopology complete_topology(std::size_t n, std::size_t batch = 1);

/// Conductances and per-node damping over a shared topology; A = L_W + diag(lambda).
class ScreenedSystem {
 public:
  ScreenedSystem(TopologyPtr topology, std::vector<double> w, std::vector<double> lambda);

  const GraphTopology& topology() const { return *topology_; }
  const TopologyPtr& topology_ptr() const { return topology_; }
  std::span<const double> w() const { return w_; }
  std::span<const double> lambda() const { return lambda_; }
  std::size_t size() const { return lambda_.size(); }
  /// diag(A): weighted degree plus damping.
  std::vector<double> diagonal() const;

 private:
  TopologyPtr topology_;
  std::vector<double> w_;
  std::vector<double> lambda_;
};

/// out = (L_W + diag(lambda)) psi. Row-parallel over the CSR adjacency; each
/// row is summed in a fixed order, so the result does not depend on thread count.
void laplacian_apply(const ScreenedSystem& sys, std::span<const double> psi, std::span<double> out);
std::vector<double> laplacian_apply(const ScreenedSystem& sys, std::span<const double> psi);

/// Edge-loop reference kernel: scatters w_ij (psi_i - psi_j) to both endpoints.
void laplacian_apply_serial(const ScreenedSystem& sys, std::span<const double> psi, std::span<double> out);

inline constexpr std::size_t kDenseCap = 2000;

/// Dense A for oracles; throws ResourceError above `cap` nodes.
Eigen::MatrixXd assemble_dense(const ScreenedSystem& sys, std::size_t cap = kDenseCap);

/// 1/2 sum_e w (psi_i - psi_j)^2 + 1/2 sum lambda psi^2 - sum b psi.
double dirichlet_energy(const ScreenedSystem& sys, std::span<const double> psi, std::span<const double> b);

/// Graph text format: "n m" then m lines "i j w".
struct WeightedGraph {
  GraphTopology topology;
  std::vector<double> w;
};
WeightedGraph read_graph(std::istream& is);
void write_graph(std::ostream& os, const GraphTopology& topology, std::span<const double> w);

}  // namespace mtpl
