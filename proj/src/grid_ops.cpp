#include "metriplector/grid_ops.hpp"

#include <algorithm>
#include <cmath>

#include "metriplector/errors.hpp"
#include "metriplector/ops.hpp"
#include "metriplector/parallel.hpp"

namespace mtpl {
namespace {

void require_grid(const Tensor& x, const GridShape& grid, const char* op) {
  if (x.rows() != grid.nodes())
    throw DimensionError(std::string(op) + ": " + std::to_string(x.rows()) + " rows for a grid of " +
                         std::to_string(grid.nodes()) + " cells");
}

inline std::size_t clamp_index(long v, std::size_t extent) {
  return static_cast<std::size_t>(std::clamp<long>(v, 0, static_cast<long>(extent) - 1));
}

}  // namespace

Tensor depthwise_stencil(const Tensor& x, const GridShape& grid, const Tensor& kernels) {
  require_grid(x, grid, "depthwise_stencil");
  const std::size_t k = x.cols();
  if (kernels.numel() != 9 * k) throw DimensionError("depthwise_stencil: kernels must be [K,9]");
  const std::size_t h = grid.height, w = grid.width, cells = grid.cells();
  const auto xv = x.values();
  const auto kv = kernels.values();
  std::vector<double> out(x.numel(), 0.0);
  const long rows_total = static_cast<long>(grid.batch * h);
#pragma omp parallel for schedule(static) if (static_cast<long>(x.numel()) > kParallelThreshold)
  for (long gr = 0; gr < rows_total; ++gr) {
    const std::size_t g = static_cast<std::size_t>(gr) / h, r = static_cast<std::size_t>(gr) % h;
    const std::size_t base = g * cells;
    for (std::size_t c = 0; c < w; ++c) {
      double* o = out.data() + (base + r * w + c) * k;
      for (int dr = -1; dr <= 1; ++dr) {
        const std::size_t rr = clamp_index(static_cast<long>(r) + dr, h);
        for (int dc = -1; dc <= 1; ++dc) {
          const std::size_t cc = clamp_index(static_cast<long>(c) + dc, w);
          const double* in = xv.data() + (base + rr * w + cc) * k;
          const std::size_t tap = static_cast<std::size_t>((dr + 1) * 3 + (dc + 1));
          for (std::size_t f = 0; f < k; ++f) o[f] += kv[f * 9 + tap] * in[f];
        }
      }
    }
  }
  Tensor value(x.shape(), std::move(out));
  if (!x.tracked() && !kernels.tracked()) return value;
  const Tensor inputs[] = {x, kernels};
  return Tape::record(value, inputs, [x = x.detach(), kernels = kernels.detach(), grid, k](std::span<const double> g,
                                                                                         Tape::GradRefs& grads) {
    const std::size_t h = grid.height, w = grid.width, cells = grid.cells();
    const auto xv = x.values();
    const auto kv = kernels.values();
    for (std::size_t b = 0; b < grid.batch; ++b)
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
          const std::size_t out_idx = b * cells + r * w + c;
          for (int dr = -1; dr <= 1; ++dr) {
            const std::size_t rr = clamp_index(static_cast<long>(r) + dr, h);
            for (int dc = -1; dc <= 1; ++dc) {
              const std::size_t cc = clamp_index(static_cast<long>(c) + dc, w);
              const std::size_t in_idx = b * cells + rr * w + cc;
              const std::size_t tap = static_cast<std::size_t>((dr + 1) * 3 + (dc + 1));
              for (std::size_t f = 0; f < k; ++f) {
                const double gi = g[out_idx * k + f];
                if (grads[0]) (*grads[0])[in_idx * k + f] += kv[f * 9 + tap] * gi;
                if (grads[1]) (*grads[1])[f * 9 + tap] += xv[in_idx * k + f] * gi;
              }
            }
          }
        }
  });
}

std::vector<double> depthwise_stencil_serial(std::span<const double> x, const GridShape& grid,
                                             std::span<const double> kernels, std::size_t k) {
  const std::size_t h = grid.height, w = grid.width, cells = grid.cells();
  const std::size_t ph = h + 2, pw = w + 2;
  std::vector<double> out(x.size(), 0.0);
  std::vector<double> padded(ph * pw);
  for (std::size_t b = 0; b < grid.batch; ++b)
    for (std::size_t f = 0; f < k; ++f) {
      for (std::size_t r = 0; r < ph; ++r)
        for (std::size_t c = 0; c < pw; ++c) {
          const std::size_t sr = r == 0 ? 0 : (r == ph - 1 ? h - 1 : r - 1);
          const std::size_t sc = c == 0 ? 0 : (c == pw - 1 ? w - 1 : c - 1);
          padded[r * pw + c] = x[(b * cells + sr * w + sc) * k + f];
        }
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
          double acc = 0.0;
          for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 3; ++j) acc += kernels[f * 9 + i * 3 + j] * padded[(r + i) * pw + (c + j)];
          out[(b * cells + r * w + c) * k + f] = acc;
        }
    }
  return out;
}

Tensor repeat_kernel(const std::array<double, 9>& taps, std::size_t k) {
  std::vector<double> v;
  v.reserve(9 * k);
  for (std::size_t f = 0; f < k; ++f) v.insert(v.end(), taps.begin(), taps.end());
  return Tensor(Shape{k, 9}, std::move(v));
}

Tensor normalize_fields(const Tensor& x, const GridShape& grid, double eps) {
  require_grid(x, grid, "normalize_fields");
  const std::size_t k = x.cols(), cells = grid.cells();
  const auto xv = x.values();
  std::vector<double> out(x.numel());
  std::vector<double> inv_std(grid.batch * k);
  const double count = static_cast<double>(cells);
  for (std::size_t b = 0; b < grid.batch; ++b)
    for (std::size_t f = 0; f < k; ++f) {
      double mu = 0.0;
      for (std::size_t i = 0; i < cells; ++i) mu += xv[(b * cells + i) * k + f];
      mu /= count;
      double var = 0.0;
      for (std::size_t i = 0; i < cells; ++i) {
        const double d = xv[(b * cells + i) * k + f] - mu;
        var += d * d;
      }
      var /= count;
      const double s = 1.0 / std::sqrt(var + eps);
      inv_std[b * k + f] = s;
      for (std::size_t i = 0; i < cells; ++i) out[(b * cells + i) * k + f] = (xv[(b * cells + i) * k + f] - mu) * s;
    }
  Tensor value(x.shape(), std::move(out));
  if (!x.tracked()) return value;
  return Tape::record(value, std::span<const Tensor>(&x, 1), [y = value, inv_std, grid, k](std::span<const double> g,
                                                                                           Tape::GradRefs& grads) {
    auto& gx = *grads[0];
    const std::size_t cells = grid.cells();
    const double count = static_cast<double>(cells);
    const auto yv = y.values();
    for (std::size_t b = 0; b < grid.batch; ++b)
      for (std::size_t f = 0; f < k; ++f) {
        double gmean = 0.0, gy = 0.0;
        for (std::size_t i = 0; i < cells; ++i) {
          const std::size_t idx = (b * cells + i) * k + f;
          gmean += g[idx];
          gy += g[idx] * yv[idx];
        }
        gmean /= count;
        gy /= count;
        const double s = inv_std[b * k + f];
        for (std::size_t i = 0; i < cells; ++i) {
          const std::size_t idx = (b * cells + i) * k + f;
          gx[idx] += s * (g[idx] - gmean - yv[idx] * gy);
        }
      }
  });
}

namespace {
// Subtracts the per-grid mean of each column in place.
void remove_means(std::vector<double>& v, const GridShape& grid, std::size_t k) {
  const std::size_t cells = grid.cells();
  for (std::size_t b = 0; b < grid.batch; ++b)
    for (std::size_t f = 0; f < k; ++f) {
      double mu = 0.0;
      for (std::size_t i = 0; i < cells; ++i) mu += v[(b * cells + i) * k + f];
      mu /= static_cast<double>(cells);
      for (std::size_t i = 0; i < cells; ++i) v[(b * cells + i) * k + f] -= mu;
    }
}
}  // namespace

Tensor center_fields(const Tensor& x, const GridShape& grid) {
  require_grid(x, grid, "center_fields");
  const std::size_t k = x.cols();
  std::vector<double> out = x.to_vector();
  remove_means(out, grid, k);
  Tensor value(x.shape(), std::move(out));
  if (!x.tracked()) return value;
  // The centering projector is symmetric, so the adjoint centers g.
  return Tape::record(value, std::span<const Tensor>(&x, 1), [grid, k](std::span<const double> g,
                                                                       Tape::GradRefs& grads) {
    std::vector<double> back(g.begin(), g.end());
    remove_means(back, grid, k);
    auto& gx = *grads[0];
    for (std::size_t i = 0; i < back.size(); ++i) gx[i] += back[i];
  });
}

Tensor segment_max_normalize(const Tensor& x, std::size_t segment, double eps) {
  const std::size_t n = x.rows(), k = x.cols();
  if (segment == 0 || n % segment != 0) throw DimensionError("segment_max_normalize: segment must divide rows");
  const std::size_t groups = n / segment;
  const auto xv = x.values();
  std::vector<std::size_t> argmax(groups * k);
  std::vector<double> out(x.numel());
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t f = 0; f < k; ++f) {
      std::size_t best = g * segment;
      for (std::size_t i = g * segment; i < (g + 1) * segment; ++i)
        if (xv[i * k + f] > xv[best * k + f]) best = i;
      argmax[g * k + f] = best;
      const double denom = xv[best * k + f] + eps;
      for (std::size_t i = g * segment; i < (g + 1) * segment; ++i) out[i * k + f] = xv[i * k + f] / denom;
    }
  Tensor value(x.shape(), std::move(out));
  if (!x.tracked()) return value;
  return Tape::record(value, std::span<const Tensor>(&x, 1), [x = x.detach(), argmax, segment, groups, k, eps](
                                                                 std::span<const double> g, Tape::GradRefs& grads) {
    auto& gx = *grads[0];
    const auto xv = x.values();
    for (std::size_t s = 0; s < groups; ++s)
      for (std::size_t f = 0; f < k; ++f) {
        const std::size_t j = argmax[s * k + f];
        const double denom = xv[j * k + f] + eps;
        double dot = 0.0;
        for (std::size_t i = s * segment; i < (s + 1) * segment; ++i) {
          gx[i * k + f] += g[i * k + f] / denom;
          dot += g[i * k + f] * xv[i * k + f];
        }
        gx[j * k + f] -= dot / (denom * denom);
      }
  });
}

const std::array<Direction, 8>& scan_directions() {
  static const std::array<Direction, 8> dirs = {{{-1, 0, "N"},
                                                 {1, 0, "S"},
                                                 {0, 1, "E"},
                                                 {0, -1, "W"},
                                                 {-1, 1, "NE"},
                                                 {-1, -1, "NW"},
                                                 {1, 1, "SE"},
                                                 {1, -1, "SW"}}};
  return dirs;
}

namespace {

// out(r,c) = sum_{t>=1} x(r - t dr, c - t dc), walked from each line start.
std::vector<double> exclusive_scan(std::span<const double> x, const GridShape& grid, std::size_t k, int dr, int dc) {
  const long h = static_cast<long>(grid.height), w = static_cast<long>(grid.width);
  const std::size_t cells = grid.cells();
  std::vector<double> out(x.size(), 0.0);
  auto inside = [&](long r, long c) { return r >= 0 && r < h && c >= 0 && c < w; };
  for (std::size_t b = 0; b < grid.batch; ++b)
    for (long r = 0; r < h; ++r)
      for (long c = 0; c < w; ++c) {
        // Start cells are those with no predecessor along the direction.
        if (inside(r - dr, c - dc)) continue;
        std::vector<double> acc(k, 0.0);
        for (long rr = r, cc = c; inside(rr, cc); rr += dr, cc += dc) {
          const std::size_t idx = (b * cells + static_cast<std::size_t>(rr * w + cc)) * k;
          for (std::size_t f = 0; f < k; ++f) {
            out[idx + f] = acc[f];
            acc[f] += x[idx + f];
          }
        }
      }
  return out;
}

}  // namespace

Tensor directional_scan(const Tensor& x, const GridShape& grid, Direction dir) {
  require_grid(x, grid, "directional_scan");
  const std::size_t k = x.cols();
  Tensor value(x.shape(), exclusive_scan(x.values(), grid, k, dir.dr, dir.dc));
  if (!x.tracked()) return value;
  // Adjoint of an exclusive scan is the exclusive scan in the opposite direction.
  return Tape::record(value, std::span<const Tensor>(&x, 1), [grid, k, dir](std::span<const double> g,
                                                                            Tape::GradRefs& grads) {
    const auto back = exclusive_scan(g, grid, k, -dir.dr, -dir.dc);
    auto& gx = *grads[0];
    for (std::size_t i = 0; i < back.size(); ++i) gx[i] += back[i];
  });
}

Tensor graph_laplacian(const GraphTopology& topology, const Tensor& w, const Tensor& x) {
  if (x.rows() != topology.n_nodes()) throw DimensionError("graph_laplacian: one row per node required");
  if (w.numel() != topology.n_edges()) throw DimensionError("graph_laplacian: one conductance per edge required");
  const Tensor wc = w.reshape(Shape{topology.n_edges(), 1});
  const Tensor diff = sub(gather_rows(x, topology.sources()), gather_rows(x, topology.targets()));
  const Tensor flux = mul(diff, wc);
  return sub(scatter_add_rows(flux, topology.sources(), topology.n_nodes()),
             scatter_add_rows(flux, topology.targets(), topology.n_nodes()));
}

Tensor dissipation_readout(const GraphTopology& topology, const Tensor& w, const Tensor& x) {
  if (x.rows() != topology.n_nodes()) throw DimensionError("dissipation_readout: one row per node required");
  if (w.numel() != topology.n_edges()) throw DimensionError("dissipation_readout: one conductance per edge required");
  const Tensor wc = w.reshape(Shape{topology.n_edges(), 1});
  const Tensor diff = sub(gather_rows(x, topology.sources()), gather_rows(x, topology.targets()));
  const Tensor energy = mul(square(diff), wc);
  return add(scatter_add_rows(energy, topology.sources(), topology.n_nodes()),
             scatter_add_rows(energy, topology.targets(), topology.n_nodes()));
}

}  // namespace mtpl
