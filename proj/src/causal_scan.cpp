#include "metriplector/causal_scan.hpp"

#include <bit>
#include <cmath>
#include <string>

#include "metriplector/errors.hpp"
#include "metriplector/parallel.hpp"

namespace mtpl {

AffineChain coefficients(std::span<const double> w, std::span<const double> lambda, std::span<const double> b) {
  if (w.size() != lambda.size() || w.size() != b.size()) throw DimensionError("coefficients: lengths differ");
  AffineChain c;
  c.alpha.resize(w.size());
  c.beta.resize(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (!(w[i] > 0.0) || !(lambda[i] > 0.0))
      throw DomainError("coefficients: w and lambda must be positive (position " + std::to_string(i) + ")");
    const double s = w[i] + lambda[i];
    c.alpha[i] = w[i] / s;
    c.beta[i] = b[i] / s;
  }
  return c;
}

std::vector<double> scan_sequential(const AffineChain& chain, double psi0) {
  if (chain.size() == 0) throw DimensionError("scan over an empty chain");
  std::vector<double> psi(chain.size());
  double prev = psi0;
  for (std::size_t i = 0; i < chain.size(); ++i) prev = psi[i] = chain.alpha[i] * prev + chain.beta[i];
  return psi;
}

std::vector<double> scan_parallel(const AffineChain& chain, double psi0) {
  const std::size_t n = chain.size();
  if (n == 0) throw DimensionError("scan over an empty chain");
  const std::size_t padded = std::bit_ceil(n);
  std::vector<AffineElem> tree(padded);
  for (std::size_t i = 0; i < n; ++i) tree[i] = chain.elem(i);

  // Up-sweep: each right node absorbs its left sibling subtree.
  for (std::size_t stride = 1; stride < padded; stride *= 2) {
    const long pairs = static_cast<long>(padded / (2 * stride));
#pragma omp parallel for schedule(static) if (pairs > kParallelThreshold)
    for (long k = 0; k < pairs; ++k) {
      const std::size_t right = static_cast<std::size_t>(k) * 2 * stride + 2 * stride - 1;
      tree[right] = compose(tree[right], tree[right - stride]);
    }
  }
  // Down-sweep to exclusive prefixes.
  tree[padded - 1] = AffineElem{};
  for (std::size_t stride = padded / 2; stride >= 1; stride /= 2) {
    const long pairs = static_cast<long>(padded / (2 * stride));
#pragma omp parallel for schedule(static) if (pairs > kParallelThreshold)
    for (long k = 0; k < pairs; ++k) {
      const std::size_t right = static_cast<std::size_t>(k) * 2 * stride + 2 * stride - 1;
      const std::size_t left = right - stride;
      const AffineElem left_sum = tree[left];
      tree[left] = tree[right];
      tree[right] = compose(left_sum, tree[right]);
    }
    if (stride == 1) break;
  }

  std::vector<double> psi(n);
  const long nn = static_cast<long>(n);
#pragma omp parallel for schedule(static) if (nn > kParallelThreshold)
  for (long i = 0; i < nn; ++i) {
    const auto k = static_cast<std::size_t>(i);
    psi[k] = compose(chain.elem(k), tree[k])(psi0);
  }
  return psi;
}

ScanGradients scan_grad(std::span<const double> w, std::span<const double> lambda, std::span<const double> b,
                        std::span<const double> psi, std::span<const double> upstream, double psi0) {
  const std::size_t n = w.size();
  if (lambda.size() != n || b.size() != n || psi.size() != n || upstream.size() != n)
    throw DimensionError("scan_grad: lengths differ");
  ScanGradients g;
  g.w.resize(n);
  g.lambda.resize(n);
  g.b.resize(n);
  double v_next = 0.0, alpha_next = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double s = w[i] + lambda[i];
    const double v = upstream[i] + alpha_next * v_next;
    const double prev = i > 0 ? psi[i - 1] : psi0;
    const double inv_s2 = 1.0 / (s * s);
    g.w[i] = v * (prev * lambda[i] - b[i]) * inv_s2;
    g.lambda[i] = -v * (prev * w[i] + b[i]) * inv_s2;
    g.b[i] = v / s;
    v_next = v;
    alpha_next = w[i] / s;
  }
  return g;
}

namespace {

std::vector<double> column(const Tensor& t, std::size_t k) {
  const auto n = t.rows(), c = t.cols();
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = t[i * c + k];
  return v;
}

}  // namespace

Tensor causal_scan(const Tensor& w, const Tensor& lambda, const Tensor& b, double psi0, bool parallel) {
  if (w.shape() != b.shape() || lambda.shape() != b.shape())
    throw DimensionError("causal_scan: w, lambda and b must share one shape");
  const auto n = b.rows(), k = b.cols();
  std::vector<double> out(n * k);
  for (std::size_t f = 0; f < k; ++f) {
    const auto chain = coefficients(column(w, f), column(lambda, f), column(b, f));
    const auto psi = parallel ? scan_parallel(chain, psi0) : scan_sequential(chain, psi0);
    for (std::size_t i = 0; i < n; ++i) out[i * k + f] = psi[i];
  }
  Tensor result(b.shape(), std::move(out));
  if (!w.tracked() && !lambda.tracked() && !b.tracked()) return result;
  return custom_grad(result, {w, lambda, b},
                     [w = w.detach(), lambda = lambda.detach(), b = b.detach(), result, psi0, n, k](const Tensor& up) {
                       std::vector<double> gw(n * k), gl(n * k), gb(n * k);
                       for (std::size_t f = 0; f < k; ++f) {
                         const auto g = scan_grad(column(w, f), column(lambda, f), column(b, f), column(result, f),
                                                  column(up, f), psi0);
                         for (std::size_t i = 0; i < n; ++i) {
                           gw[i * k + f] = g.w[i];
                           gl[i * k + f] = g.lambda[i];
                           gb[i * k + f] = g.b[i];
                         }
                       }
                       return std::vector<Tensor>{Tensor(w.shape(), gw), Tensor(w.shape(), gl), Tensor(w.shape(), gb)};
                     });
}

Tensor causal_pool(const Tensor& x, std::size_t chunk) {
  if (chunk < 1) throw ArgumentError("causal_pool: chunk must be at least 1");
  const auto n = x.rows(), c = x.cols();
  const std::size_t full = n / chunk;
  // Means of completed chunks.
  std::vector<double> means(full * c, 0.0);
  const auto xv = x.values();
  for (std::size_t q = 0; q < full; ++q)
    for (std::size_t i = q * chunk; i < (q + 1) * chunk; ++i)
      for (std::size_t j = 0; j < c; ++j) means[q * c + j] += xv[i * c + j] / static_cast<double>(chunk);
  std::vector<double> out(n * c, 0.0);
  for (std::size_t i = chunk; i < n; ++i) {
    const std::size_t q = i / chunk - 1;
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = means[q * c + j];
  }
  Tensor value(x.shape(), std::move(out));
  if (!x.tracked()) return value;
  return Tape::record(value, std::span<const Tensor>(&x, 1), [n, c, chunk](std::span<const double> g,
                                                                           Tape::GradRefs& grads) {
    auto& gx = *grads[0];
    const std::size_t full = n / chunk;
    std::vector<double> gm(full * c, 0.0);
    for (std::size_t i = chunk; i < n; ++i)
      for (std::size_t j = 0; j < c; ++j) gm[(i / chunk - 1) * c + j] += g[i * c + j];
    for (std::size_t q = 0; q < full; ++q)
      for (std::size_t i = q * chunk; i < (q + 1) * chunk; ++i)
        for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += gm[q * c + j] / static_cast<double>(chunk);
  });
}

std::vector<Tensor> multiscale_pool(const Tensor& x, std::span<const std::size_t> sizes) {
  std::vector<Tensor> levels;
  std::size_t chunk = 1;
  for (auto s : sizes) {
    chunk *= s;
    levels.push_back(causal_pool(x, chunk));
  }
  return levels;
}

}  // namespace mtpl
