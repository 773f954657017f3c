#include "metriplector/graph.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <set>
#include <string>

#include "metriplector/errors.hpp"
#include "metriplector/parallel.hpp"

namespace mtpl {

GraphTopology::GraphTopology(std::size_t n_nodes, std::vector<Edge> edges, std::vector<std::array<double, 2>> positions,
                             std::optional<GridShape> grid)
    : n_(n_nodes), edges_(std::move(edges)), positions_(std::move(positions)), grid_(grid) {
  if (!positions_.empty() && positions_.size() != n_) throw DimensionError("one position per node required");
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const auto& e : edges_) {
    if (e.i == e.j) throw ArgumentError("self-loop at node " + std::to_string(e.i));
    if (e.i > e.j) throw ArgumentError("edge endpoints must satisfy i < j");
    if (e.j >= n_) throw ArgumentError("edge index " + std::to_string(e.j) + " out of range");
    if (!seen.emplace(e.i, e.j).second)
      throw ArgumentError("duplicate edge (" + std::to_string(e.i) + ", " + std::to_string(e.j) + ")");
  }
  if (grid_ && grid_->nodes() != n_) throw DimensionError("grid layout does not cover the node count");

  offsets_.assign(n_ + 1, 0);
  for (const auto& e : edges_) {
    ++offsets_[e.i + 1];
    ++offsets_[e.j + 1];
  }
  for (std::size_t k = 0; k < n_; ++k) offsets_[k + 1] += offsets_[k];
  neighbors_.resize(offsets_[n_]);
  edge_ids_.resize(offsets_[n_]);
  std::vector<std::size_t> fill(offsets_.begin(), offsets_.end() - 1);
  src_.reserve(edges_.size());
  dst_.reserve(edges_.size());
  for (std::size_t k = 0; k < edges_.size(); ++k) {
    const auto [i, j] = edges_[k];
    neighbors_[fill[i]] = j;
    edge_ids_[fill[i]++] = k;
    neighbors_[fill[j]] = i;
    edge_ids_[fill[j]++] = k;
    src_.push_back(i);
    dst_.push_back(j);
  }
}

GraphTopology grid_topology(std::size_t height, std::size_t width, int connectivity, std::size_t batch) {
  if (height < 1 || width < 1) throw ArgumentError("grid extents must be at least 1");
  if (connectivity != 4 && connectivity != 8) throw ArgumentError("grid connectivity must be 4 or 8");
  if (batch < 1) throw ArgumentError("grid batch must be at least 1");
  const std::size_t cells = height * width;
  std::vector<Edge> edges;
  std::vector<std::array<double, 2>> pos;
  pos.reserve(cells * batch);
  auto scaled = [](std::size_t k, std::size_t extent) {
    return extent > 1 ? static_cast<double>(k) / static_cast<double>(extent - 1) : 0.0;
  };
  for (std::size_t g = 0; g < batch; ++g) {
    const std::size_t base = g * cells;
    for (std::size_t r = 0; r < height; ++r)
      for (std::size_t c = 0; c < width; ++c) {
        const std::size_t i = base + r * width + c;
        pos.push_back({scaled(r, height), scaled(c, width)});
        if (c + 1 < width) edges.push_back({i, i + 1});
        if (r + 1 < height) edges.push_back({i, i + width});
        if (connectivity == 8 && r + 1 < height) {
          if (c + 1 < width) edges.push_back({i, i + width + 1});
          if (c > 0) edges.push_back({i, i + width - 1});
        }
      }
  }
  return GraphTopology(cells * batch, std::move(edges), std::move(pos),
                       GridShape{height, width, batch, connectivity});
}

GraphTopology complete_topology(std::size_t n, std::size_t batch) {
  std::vector<Edge> edges;
  for (std::size_t g = 0; g < batch; ++g)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) edges.push_back({g * n + i, g * n + j});
  return GraphTopology(n * batch, std::move(edges));
}

ScreenedSystem::ScreenedSystem(TopologyPtr topology, std::vector<double> w, std::vector<double> lambda)
    : topology_(std::move(topology)), w_(std::move(w)), lambda_(std::move(lambda)) {
  if (!topology_) throw ArgumentError("screened system needs a topology");
  if (w_.size() != topology_->n_edges())
    throw DimensionError("conductance count " + std::to_string(w_.size()) + " != edge count " +
                         std::to_string(topology_->n_edges()));
  if (lambda_.size() != topology_->n_nodes())
    throw DimensionError("damping count " + std::to_string(lambda_.size()) + " != node count " +
                         std::to_string(topology_->n_nodes()));
  for (double v : w_)
    if (!(v > 0.0) || !std::isfinite(v)) throw DomainError("conductances must be finite and strictly positive");
  for (double v : lambda_)
    if (!(v > 0.0) || !std::isfinite(v)) throw DomainError("damping must be finite and strictly positive");
}

std::vector<double> ScreenedSystem::diagonal() const {
  std::vector<double> d(lambda_);
  for (std::size_t k = 0; k < w_.size(); ++k) {
    const auto& e = topology_->edges()[k];
    d[e.i] += w_[k];
    d[e.j] += w_[k];
  }
  return d;
}

namespace {

void require_size(const ScreenedSystem& sys, std::size_t got, const char* what) {
  if (got != sys.size())
    throw DimensionError(std::string(what) + " length " + std::to_string(got) + " != node count " +
                         std::to_string(sys.size()));
}

}  // namespace

void laplacian_apply(const ScreenedSystem& sys, std::span<const double> psi, std::span<double> out) {
  require_size(sys, psi.size(), "psi");
  require_size(sys, out.size(), "output");
  const auto& topo = sys.topology();
  const auto offsets = topo.row_offsets();
  const auto nbr = topo.neighbors();
  const auto eid = topo.edge_ids();
  const auto w = sys.w();
  const auto lambda = sys.lambda();
  const long n = static_cast<long>(sys.size());
#pragma omp parallel for schedule(static) if (n > kParallelThreshold)
  for (long i = 0; i < n; ++i) {
    const auto row = static_cast<std::size_t>(i);
    const double pi = psi[row];
    double acc = 0.0;
    for (std::size_t k = offsets[row]; k < offsets[row + 1]; ++k) acc += w[eid[k]] * (pi - psi[nbr[k]]);
    out[row] = acc + lambda[row] * pi;
  }
}

std::vector<double> laplacian_apply(const ScreenedSystem& sys, std::span<const double> psi) {
  std::vector<double> out(sys.size());
  laplacian_apply(sys, psi, out);
  return out;
}

void laplacian_apply_serial(const ScreenedSystem& sys, std::span<const double> psi, std::span<double> out) {
  require_size(sys, psi.size(), "psi");
  require_size(sys, out.size(), "output");
  const auto lambda = sys.lambda();
  for (std::size_t i = 0; i < psi.size(); ++i) out[i] = lambda[i] * psi[i];
  const auto w = sys.w();
  const auto edges = sys.topology().edges();
  for (std::size_t k = 0; k < edges.size(); ++k) {
    const auto [i, j] = edges[k];
    const double flux = w[k] * (psi[i] - psi[j]);
    out[i] += flux;
    out[j] -= flux;
  }
}

Eigen::MatrixXd assemble_dense(const ScreenedSystem& sys, std::size_t cap) {
  const auto n = sys.size();
  if (n > cap)
    throw ResourceError("dense assembly of " + std::to_string(n) + " nodes exceeds cap " + std::to_string(cap));
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  const auto lambda = sys.lambda();
  for (std::size_t i = 0; i < n; ++i) a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = lambda[i];
  const auto edges = sys.topology().edges();
  const auto w = sys.w();
  for (std::size_t k = 0; k < edges.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(edges[k].i), j = static_cast<Eigen::Index>(edges[k].j);
    a(i, i) += w[k];
    a(j, j) += w[k];
    a(i, j) -= w[k];
    a(j, i) -= w[k];
  }
  return a;
}

double dirichlet_energy(const ScreenedSystem& sys, std::span<const double> psi, std::span<const double> b) {
  require_size(sys, psi.size(), "psi");
  require_size(sys, b.size(), "b");
  double e = 0.0;
  const auto edges = sys.topology().edges();
  const auto w = sys.w();
  for (std::size_t k = 0; k < edges.size(); ++k) {
    const double d = psi[edges[k].i] - psi[edges[k].j];
    e += 0.5 * w[k] * d * d;
  }
  const auto lambda = sys.lambda();
  for (std::size_t i = 0; i < psi.size(); ++i) e += 0.5 * lambda[i] * psi[i] * psi[i] - b[i] * psi[i];
  return e;
}

WeightedGraph read_graph(std::istream& is) {
  std::size_t n = 0, m = 0;
  if (!(is >> n >> m)) throw ArgumentError("graph text: expected header 'n m'");
  std::vector<std::pair<Edge, double>> rows;
  rows.reserve(m);
  for (std::size_t k = 0; k < m; ++k) {
    std::size_t i = 0, j = 0;
    double w = 0.0;
    if (!(is >> i >> j >> w)) throw ArgumentError("graph text: expected " + std::to_string(m) + " edge lines");
    if (i > j) std::swap(i, j);
    rows.push_back({{i, j}, w});
  }
  std::vector<Edge> edges;
  std::vector<double> w;
  for (const auto& [e, v] : rows) {
    edges.push_back(e);
    w.push_back(v);
  }
  return {GraphTopology(n, std::move(edges)), std::move(w)};
}

void write_graph(std::ostream& os, const GraphTopology& topology, std::span<const double> w) {
  if (w.size() != topology.n_edges()) throw DimensionError("one conductance per edge required");
  os << topology.n_nodes() << ' ' << topology.n_edges() << '\n';
  os.precision(17);
  for (std::size_t k = 0; k < w.size(); ++k)
    os << topology.edges()[k].i << ' ' << topology.edges()[k].j << ' ' << w[k] << '\n';
}

}  // namespace mtpl
