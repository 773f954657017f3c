#include "metriplector/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "metriplector/errors.hpp"

namespace mtpl {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

std::size_t eff_rows(const Tensor& t) { return t.numel() == 1 ? 1 : t.rows(); }
std::size_t eff_cols(const Tensor& t) { return t.numel() == 1 ? 1 : t.cols(); }

struct Broadcast {
  Shape shape;
  std::size_t rows, cols;
  std::size_t a_rs, a_cs, b_rs, b_cs;  // 0 along broadcast axes
};

Broadcast broadcast(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) {
    const auto r = a.rows(), c = a.cols();
    return {a.shape(), r, c, c, 1, c, 1};
  }
  const auto ar = eff_rows(a), ac = eff_cols(a), br = eff_rows(b), bc = eff_cols(b);
  auto pick = [&](std::size_t x, std::size_t y) -> std::size_t {
    if (x == y || y == 1) return x;
    if (x == 1) return y;
    throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a.shape()) + " with " +
                         shape_str(b.shape()));
  };
  const auto r = pick(ar, br), c = pick(ac, bc);
  Shape shape;
  if (a.numel() == r * c && a.rank() >= 1)
    shape = a.shape();
  else if (b.numel() == r * c && b.rank() >= 1)
    shape = b.shape();
  else
    shape = Shape{r, c};
  return {shape,
          r,
          c,
          ar == 1 ? 0 : ac,
          ac == 1 ? 0 : std::size_t{1},
          br == 1 ? 0 : bc,
          bc == 1 ? 0 : std::size_t{1}};
}

template <typename F, typename Da, typename Db>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, F f, Da da, Db db) {
  const auto bc = broadcast(a, b, name);
  const auto av = a.values(), bv = b.values();
  std::vector<double> out(bc.rows * bc.cols);
  for (std::size_t r = 0; r < bc.rows; ++r)
    for (std::size_t c = 0; c < bc.cols; ++c)
      out[r * bc.cols + c] = f(av[r * bc.a_rs + c * bc.a_cs], bv[r * bc.b_rs + c * bc.b_cs]);
  Tensor value(bc.shape, std::move(out));
  if (!a.tracked() && !b.tracked()) return value;
  const Tensor inputs[] = {a, b};
  return Tape::record(value, inputs, [a = a.detach(), b = b.detach(), bc, da, db](
                                         std::span<const double> g, Tape::GradRefs& grads) {
    const auto av = a.values(), bv = b.values();
    for (std::size_t r = 0; r < bc.rows; ++r)
      for (std::size_t c = 0; c < bc.cols; ++c) {
        const auto ia = r * bc.a_rs + c * bc.a_cs, ib = r * bc.b_rs + c * bc.b_cs;
        const double gi = g[r * bc.cols + c];
        if (grads[0]) (*grads[0])[ia] += gi * da(av[ia], bv[ib]);
        if (grads[1]) (*grads[1])[ib] += gi * db(av[ia], bv[ib]);
      }
  });
}

// df receives (x, y=f(x)).
template <typename F, typename Df>
Tensor unary(const Tensor& x, F f, Df df) {
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  Tensor value(x.shape(), std::move(out));
  if (!x.tracked()) return value;
  return Tape::record(value, std::span<const Tensor>(&x, 1),
                      [x = x.detach(), y = value, df](std::span<const double> g, Tape::GradRefs& grads) {
                        auto& gx = *grads[0];
                        const auto xv = x.values(), yv = y.values();
                        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xv[i], yv[i]);
                      });
}

double softplus_value(double x) {
  if (x > 20.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected a rank-2 tensor, got " + shape_str(t.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "div", [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor scale(const Tensor& x, double c) {
  return unary(x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

Tensor add_scalar(const Tensor& x, double c) {
  return unary(x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& x) {
  return unary(x, [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor silu(const Tensor& x) {
  return unary(
      x, [](double v) { return v * sigmoid_value(v); },
      [](double v, double) {
        const double s = sigmoid_value(v);
        return s * (1.0 + v * (1.0 - s));
      });
}

Tensor softplus(const Tensor& x) {
  return unary(x, softplus_value, [](double v, double) { return sigmoid_value(v); });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, sigmoid_value, [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor exp(const Tensor& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor square(const Tensor& x) {
  return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  return unary(
      x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  Tensor value = Tensor::scalar(s);
  if (!x.tracked()) return value;
  return Tape::record(value, std::span<const Tensor>(&x, 1), [](std::span<const double> g, Tape::GradRefs& grads) {
    for (auto& v : *grads[0]) v += g[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor sum_rows(const Tensor& x) {
  const auto r = x.rows(), c = x.cols();
  std::vector<double> out(c, 0.0);
  const auto xv = x.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += xv[i * c + j];
  Tensor value(Shape{1, c}, std::move(out));
  if (!x.tracked()) return value;
  return Tape::record(value, std::span<const Tensor>(&x, 1), [r, c](std::span<const double> g, Tape::GradRefs& grads) {
    auto& gx = *grads[0];
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j];
  });
}

Tensor sum_cols(const Tensor& x) {
  const auto r = x.rows(), c = x.cols();
  std::vector<double> out(r, 0.0);
  const auto xv = x.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i] += xv[i * c + j];
  Tensor value(Shape{r, 1}, std::move(out));
  if (!x.tracked()) return value;
  return Tape::record(value, std::span<const Tensor>(&x, 1), [r, c](std::span<const double> g, Tape::GradRefs& grads) {
    auto& gx = *grads[0];
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[i];
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const auto n = a.rows(), k = a.cols(), m = b.cols();
  if (b.rows() != k)
    throw DimensionError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<double> out(n * m);
  MutMap(out.data(), n, m).noalias() = ConstMap(a.values().data(), n, k) * ConstMap(b.values().data(), k, m);
  Tensor value(Shape{n, m}, std::move(out));
  if (!a.tracked() && !b.tracked()) return value;
  const Tensor inputs[] = {a, b};
  return Tape::record(value, inputs, [a = a.detach(), b = b.detach(), n, k, m](std::span<const double> g,
                                                                              Tape::GradRefs& grads) {
    const ConstMap gm(g.data(), n, m);
    if (grads[0]) MutMap(grads[0]->data(), n, k).noalias() += gm * ConstMap(b.values().data(), k, m).transpose();
    if (grads[1]) MutMap(grads[1]->data(), k, m).noalias() += ConstMap(a.values().data(), n, k).transpose() * gm;
  });
}

Tensor transpose(const Tensor& x) {
  require_rank2(x, "transpose");
  const auto r = x.rows(), c = x.cols();
  std::vector<double> out(r * c);
  const auto xv = x.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xv[i * c + j];
  Tensor value(Shape{c, r}, std::move(out));
  if (!x.tracked()) return value;
  return Tape::record(value, std::span<const Tensor>(&x, 1), [r, c](std::span<const double> g, Tape::GradRefs& grads) {
    auto& gx = *grads[0];
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j * r + i];
  });
}

Tensor softmax_rows(const Tensor& x, double temperature) {
  const auto r = x.rows(), c = x.cols();
  if (c == 0 || x.numel() == 0) throw DimensionError("softmax over an empty axis");
  if (!(temperature > 0)) throw DomainError("softmax temperature must be positive");
  const auto xv = x.values();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = xv.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += out[i * c + j] = std::exp((row[j] - mx) / temperature);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= z;
  }
  Tensor value(x.shape(), std::move(out));
  if (!x.tracked()) return value;
  return Tape::record(value, std::span<const Tensor>(&x, 1),
                      [y = value, r, c, temperature](std::span<const double> g, Tape::GradRefs& grads) {
                        auto& gx = *grads[0];
                        const auto yv = y.values();
                        for (std::size_t i = 0; i < r; ++i) {
                          double dot = 0.0;
                          for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * yv[i * c + j];
                          for (std::size_t j = 0; j < c; ++j)
                            gx[i * c + j] += yv[i * c + j] * (g[i * c + j] - dot) / temperature;
                        }
                      });
}

Tensor log_softmax_rows(const Tensor& x) {
  const auto r = x.rows(), c = x.cols();
  if (c == 0 || x.numel() == 0) throw DimensionError("log_softmax over an empty axis");
  const auto xv = x.values();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = xv.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = row[j] - lse;
  }
  Tensor value(x.shape(), std::move(out));
  if (!x.tracked()) return value;
  return Tape::record(value, std::span<const Tensor>(&x, 1), [y = value, r, c](std::span<const double> g,
                                                                               Tape::GradRefs& grads) {
    auto& gx = *grads[0];
    const auto yv = y.values();
    for (std::size_t i = 0; i < r; ++i) {
      double gs = 0.0;
      for (std::size_t j = 0; j < c; ++j) gs += g[i * c + j];
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[i * c + j] - std::exp(yv[i * c + j]) * gs;
    }
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  return cross_entropy(logits, labels, {});
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels, std::span<const double> class_weights) {
  const auto r = logits.rows(), c = logits.cols();
  if (labels.size() != r) throw DimensionError("cross_entropy: one label per row required");
  if (!class_weights.empty() && class_weights.size() != c)
    throw DimensionError("cross_entropy: one weight per class required");
  auto weight = [&](int y) { return class_weights.empty() ? 1.0 : class_weights[static_cast<std::size_t>(y)]; };
  double total = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c)
      throw ArgumentError("cross_entropy: label out of range");
    const double w = weight(labels[i]);
    if (!(w >= 0.0)) throw ArgumentError("cross_entropy: class weights must be non-negative");
    total += w;
  }
  if (!(total > 0.0)) throw ArgumentError("cross_entropy: labels carry zero total weight");
  std::vector<double> pick(r * c, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    pick[i * c + static_cast<std::size_t>(labels[i])] = -weight(labels[i]) / total;
  return sum(mul(log_softmax_rows(logits), Tensor(logits.shape(), std::move(pick))));
}

Tensor cumsum(const Tensor& x, int axis) {
  const auto r = x.rows(), c = x.cols();
  if (axis != 0 && axis != 1) throw ArgumentError("cumsum: axis must be 0 or 1");
  const auto xv = x.values();
  std::vector<double> out(xv.begin(), xv.end());
  if (axis == 0) {
    for (std::size_t i = 1; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[i * c + j] += out[(i - 1) * c + j];
  } else {
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 1; j < c; ++j) out[i * c + j] += out[i * c + j - 1];
  }
  Tensor value(x.shape(), std::move(out));
  if (!x.tracked()) return value;
  // Adjoint of a prefix sum is the reversed (suffix) sum.
  return Tape::record(value, std::span<const Tensor>(&x, 1), [r, c, axis](std::span<const double> g,
                                                                          Tape::GradRefs& grads) {
    auto& gx = *grads[0];
    std::vector<double> acc(g.begin(), g.end());
    if (axis == 0) {
      for (std::size_t i = r - 1; i-- > 0;)
        for (std::size_t j = 0; j < c; ++j) acc[i * c + j] += acc[(i + 1) * c + j];
    } else {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = c - 1; j-- > 0;) acc[i * c + j] += acc[i * c + j + 1];
    }
    for (std::size_t k = 0; k < acc.size(); ++k) gx[k] += acc[k];
  });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> index) {
  const auto v = table.rows(), d = table.cols();
  std::vector<double> out(index.size() * d);
  const auto tv = table.values();
  for (std::size_t k = 0; k < index.size(); ++k) {
    if (index[k] >= v) throw DimensionError("gather_rows: index out of range");
    std::copy_n(tv.data() + index[k] * d, d, out.data() + k * d);
  }
  Tensor value(Shape{index.size(), d}, std::move(out));
  if (!table.tracked()) return value;
  return Tape::record(value, std::span<const Tensor>(&table, 1),
                      [idx = std::vector<std::size_t>(index.begin(), index.end()), d](std::span<const double> g,
                                                                                      Tape::GradRefs& grads) {
                        auto& gt = *grads[0];
                        for (std::size_t k = 0; k < idx.size(); ++k)
                          for (std::size_t j = 0; j < d; ++j) gt[idx[k] * d + j] += g[k * d + j];
                      });
}

Tensor scatter_add_rows(const Tensor& src, std::span<const std::size_t> index, std::size_t n) {
  const auto m = src.rows(), d = src.cols();
  if (index.size() != m) throw DimensionError("scatter_add_rows: one index per source row required");
  std::vector<double> out(n * d, 0.0);
  const auto sv = src.values();
  for (std::size_t k = 0; k < m; ++k) {
    if (index[k] >= n) throw DimensionError("scatter_add_rows: index out of range");
    for (std::size_t j = 0; j < d; ++j) out[index[k] * d + j] += sv[k * d + j];
  }
  Tensor value(Shape{n, d}, std::move(out));
  if (!src.tracked()) return value;
  return Tape::record(value, std::span<const Tensor>(&src, 1),
                      [idx = std::vector<std::size_t>(index.begin(), index.end()), d](std::span<const double> g,
                                                                                      Tape::GradRefs& grads) {
                        auto& gs = *grads[0];
                        for (std::size_t k = 0; k < idx.size(); ++k)
                          for (std::size_t j = 0; j < d; ++j) gs[k * d + j] += g[idx[k] * d + j];
                      });
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
  const auto r = x.rows(), c = x.cols();
  if (start + count > c) throw DimensionError("slice_cols: range exceeds column count");
  std::vector<double> out(r * count);
  const auto xv = x.values();
  for (std::size_t i = 0; i < r; ++i) std::copy_n(xv.data() + i * c + start, count, out.data() + i * count);
  Tensor value(Shape{r, count}, std::move(out));
  if (!x.tracked()) return value;
  return Tape::record(value, std::span<const Tensor>(&x, 1), [r, c, start, count](std::span<const double> g,
                                                                                  Tape::GradRefs& grads) {
    auto& gx = *grads[0];
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < count; ++j) gx[i * c + start + j] += g[i * count + j];
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: nothing to concatenate");
  const auto r = parts.front().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  bool any_tracked = false;
  for (const auto& p : parts) {
    if (p.rows() != r) throw DimensionError("concat_cols: row counts differ");
    widths.push_back(p.cols());
    total += p.cols();
    any_tracked = any_tracked || p.tracked();
  }
  std::vector<double> out(r * total);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pv = parts[k].values();
    for (std::size_t i = 0; i < r; ++i) std::copy_n(pv.data() + i * widths[k], widths[k], out.data() + i * total + off);
    off += widths[k];
  }
  Tensor value(Shape{r, total}, std::move(out));
  if (!any_tracked) return value;
  return Tape::record(value, parts, [r, total, widths](std::span<const double> g, Tape::GradRefs& grads) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (grads[k]) {
        auto& gk = *grads[k];
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j) gk[i * widths[k] + j] += g[i * total + off + j];
      }
      off += widths[k];
    }
  });
}

Tensor rowwise_dot(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError("rowwise_dot: shapes differ, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  return sum_cols(mul(a, b));
}

}  // namespace mtpl
