#include "metriplector/noether.hpp"

#include <string>
#include <vector>

#include "metriplector/errors.hpp"
#include "metriplector/grid_ops.hpp"
#include "metriplector/ops.hpp"

namespace mtpl {
namespace {

Tensor col(const Tensor& x, std::size_t j) { return slice_cols(x, j, 1); }

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
}

Tensor concat_or_empty(const std::vector<Tensor>& parts, std::size_t n) {
  if (parts.empty()) return Tensor::zeros(Shape{n, 0});
  return concat_cols(parts);
}

}  // namespace

std::array<double, 9> sobel_x_taps() {
  return {-1.0 / 8, 0, 1.0 / 8, -2.0 / 8, 0, 2.0 / 8, -1.0 / 8, 0, 1.0 / 8};
}
std::array<double, 9> sobel_y_taps() {
  return {-1.0 / 8, -2.0 / 8, -1.0 / 8, 0, 0, 0, 1.0 / 8, 2.0 / 8, 1.0 / 8};
}
std::array<double, 9> forward_x_taps() { return {0, 0, 0, 0, -1, 1, 0, 0, 0}; }
std::array<double, 9> forward_y_taps() { return {0, 0, 0, 0, -1, 0, 0, 1, 0}; }

GradientField gradients(const Tensor& psi, const GridShape& grid, const Tensor& kx, const Tensor& ky) {
  return {depthwise_stencil(psi, grid, kx), depthwise_stencil(psi, grid, ky)};
}

Tensor ReadoutFeatures::concat() const {
  std::vector<Tensor> parts{e_diag};
  if (e_cross.cols() > 0) {
    parts.push_back(e_cross);
    parts.push_back(vorticity);
  }
  return concat_cols(parts);
}

ReadoutFeatures stress_energy(const Tensor& gx, const Tensor& gy) {
  require_same(gx, gy, "stress_energy");
  const std::size_t k = gx.cols(), n = gx.rows();
  ReadoutFeatures f;
  f.e_diag = add(square(gx), square(gy));
  std::vector<Tensor> cross, vort;
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = a + 1; b < k; ++b) {
      const Tensor xa = col(gx, a), xb = col(gx, b), ya = col(gy, a), yb = col(gy, b);
      cross.push_back(add(mul(xa, xb), mul(ya, yb)));
      vort.push_back(sub(mul(xa, yb), mul(xb, ya)));
    }
  f.e_cross = concat_or_empty(cross, n);
  f.vorticity = concat_or_empty(vort, n);
  return f;
}

ShearDecomposition decompose_shear(const Tensor& gx, const Tensor& gy) {
  require_same(gx, gy, "decompose_shear");
  const std::size_t k = gx.cols(), n = gx.rows();
  std::vector<double> sym(n * k * k), anti(n * k * k);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b) {
        const double tab = gx.at(i, a) * gy.at(i, b);
        const double tba = gx.at(i, b) * gy.at(i, a);
        sym[i * k * k + a * k + b] = 0.5 * (tab + tba);
        anti[i * k * k + a * k + b] = 0.5 * (tab - tba);
      }
  return {Tensor(Shape{n, k * k}, std::move(sym)), Tensor(Shape{n, k * k}, std::move(anti))};
}

Tensor centered_positions(const GridShape& grid) {
  const std::size_t h = grid.height, w = grid.width;
  auto coord = [](std::size_t i, std::size_t extent) {
    return extent > 1 ? 2.0 * static_cast<double>(i) / static_cast<double>(extent - 1) - 1.0 : 0.0;
  };
  std::vector<double> v;
  v.reserve(grid.nodes() * 2);
  for (std::size_t b = 0; b < grid.batch; ++b)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) {
        v.push_back(coord(c, w));
        v.push_back(coord(r, h));
      }
  return Tensor(Shape{grid.nodes(), 2}, std::move(v));
}

Tensor noether_currents(const Tensor& psi, const Tensor& gx, const Tensor& gy, const Tensor& positions) {
  require_same(psi, gx, "noether_currents");
  require_same(gx, gy, "noether_currents");
  if (positions.rows() != psi.rows() || positions.cols() != 2)
    throw DimensionError("noether_currents: positions must be [n,2]");
  const Tensor x = col(positions, 0), y = col(positions, 1);
  const Tensor px = mul(psi, gx), py = mul(psi, gy);
  const Tensor l = sub(mul(x, py), mul(y, px));
  const Tensor d = add(mul(x, px), mul(y, py));
  const ReadoutFeatures se = stress_energy(gx, gy);
  std::vector<Tensor> parts{px, py, l, d, se.e_diag};
  const std::size_t k = psi.cols();
  if (k > 1) {
    // Rotational generator applied to each field: x gy - y gx.
    const Tensor rot = sub(mul(x, gy), mul(y, gx));
    std::vector<Tensor> cross;
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = a + 1; b < k; ++b)
        cross.push_back(sub(mul(col(psi, a), col(rot, b)), mul(col(psi, b), col(rot, a))));
    parts.push_back(se.e_cross);
    parts.push_back(se.vorticity);
    parts.push_back(concat_cols(cross));
  }
  return concat_cols(parts);
}

Tensor field_curvature(const Tensor& psi, const Tensor& lap) {
  require_same(psi, lap, "field_curvature");
  const std::size_t k = psi.cols();
  std::vector<Tensor> parts{mul(psi, lap)};
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = a + 1; b < k; ++b)
      parts.push_back(sub(curvature_product(psi, lap, a, b), curvature_product(psi, lap, b, a)));
  return concat_cols(parts);
}

Tensor curvature_product(const Tensor& psi, const Tensor& lap, std::size_t a, std::size_t b) {
  require_same(psi, lap, "curvature_product");
  if (a >= psi.cols() || b >= psi.cols()) throw DimensionError("curvature_product: field index out of range");
  return mul(col(psi, a), col(lap, b));
}

ReadoutKind parse_readout_kind(std::string_view name) {
  if (name == "stress" || name == "stress-energy") return ReadoutKind::StressEnergy;
  if (name == "curvature") return ReadoutKind::Curvature;
  if (name == "noether") return ReadoutKind::Noether;
  throw ArgumentError("unknown readout kind '" + std::string(name) + "'");
}

const char* readout_name(ReadoutKind kind) {
  switch (kind) {
    case ReadoutKind::StressEnergy:
      return "stress-energy";
    case ReadoutKind::Curvature:
      return "curvature";
    case ReadoutKind::Noether:
      return "noether";
  }
  return "?";
}

std::size_t feature_count(ReadoutKind kind, std::size_t k) {
  if (k < 1) throw ArgumentError("feature_count: K must be >= 1");
  const std::size_t pairs = k * (k - 1) / 2;
  switch (kind) {
    case ReadoutKind::StressEnergy:
      return k * k;
    case ReadoutKind::Curvature:
      return k + pairs;
    case ReadoutKind::Noether:
      return 5 * k + 3 * pairs;
  }
  throw ArgumentError("feature_count: unknown readout kind");
}

std::size_t feature_count(std::string_view kind, std::size_t k) { return feature_count(parse_readout_kind(kind), k); }

ReadoutKernels default_readout_kernels(std::size_t k) {
  // Curvature uses the analyst's sign: positive at a local minimum.
  return {repeat_kernel(sobel_x_taps(), k), repeat_kernel(sobel_y_taps(), k),
          repeat_kernel({0, 1, 0, 1, -4, 1, 0, 1, 0}, k)};
}

Tensor readout(ReadoutKind kind, const Tensor& psi, const GridShape& grid, const ReadoutKernels& kernels) {
  switch (kind) {
    case ReadoutKind::StressEnergy: {
      const GradientField g = gradients(psi, grid, kernels.kx, kernels.ky);
      return stress_energy(g.gx, g.gy).concat();
    }
    case ReadoutKind::Curvature:
      return field_curvature(psi, depthwise_stencil(psi, grid, kernels.laplacian));
    case ReadoutKind::Noether: {
      const GradientField g = gradients(psi, grid, kernels.kx, kernels.ky);
      return noether_currents(psi, g.gx, g.gy, centered_positions(grid));
    }
  }
  throw ArgumentError("readout: unknown kind");
}

}  // namespace mtpl
