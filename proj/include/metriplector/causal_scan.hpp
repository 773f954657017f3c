#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "metriplector/tensor.hpp"

namespace mtpl {

/// x -> a x + b.
struct AffineElem {
  double a = 1.0;
  double b = 0.0;

  double operator()(double x) const { return a * x + b; }
};

/// later ∘ earlier.
inline AffineElem compose(const AffineElem& later, const AffineElem& earlier) {
  return {later.a * earlier.a, later.a * earlier.b + later.b};
}

/// psi_i = alpha_i psi_{i-1} + beta_i with alpha = w/(w+lambda), beta = b/(w+lambda).
struct AffineChain {
  std::vector<double> alpha;
  std::vector<double> beta;

  std::size_t size() const { return alpha.size(); }
  AffineElem elem(std::size_t i) const { return {alpha[i], beta[i]}; }
};

/// Throws DomainError unless w > 0 and lambda > 0 everywhere.
AffineChain coefficients(std::span<const double> w, std::span<const double> lambda, std::span<const double> b);

/// Left-to-right reference recurrence from boundary value psi0.
std::vector<double> scan_sequential(const AffineChain& chain, double psi0 = 0.0);

/// Up-sweep/down-sweep (Blelloch) scan over affine composition on a
/// power-of-two padded chain; tree levels run in parallel.
std::vector<double> scan_parallel(const AffineChain& chain, double psi0 = 0.0);

struct ScanGradients {
  std::vector<double> w;
  std::vector<double> lambda;
  std::vector<double> b;
};

/// Reverse adjoint recurrence v_i = upstream_i + alpha_{i+1} v_{i+1}, chained
/// through the coefficient formulas.
ScanGradients scan_grad(std::span<const double> w, std::span<const double> lambda, std::span<const double> b,
                        std::span<const double> psi, std::span<const double> upstream, double psi0 = 0.0);

/// Differentiable causal solve; w, lambda, b are [N,K] (columns are
/// independent chains); returns psi [N,K].
Tensor causal_scan(const Tensor& w, const Tensor& lambda, const Tensor& b, double psi0 = 0.0, bool parallel = true);

/// Position i receives the mean of the last completed chunk strictly before
/// its own chunk; positions in the first chunk receive zeros. x is [N,C].
Tensor causal_pool(const Tensor& x, std::size_t chunk);

/// Progressively coarser causal pools: level k uses chunk size
/// sizes[0] * ... * sizes[k].
std::vector<Tensor> multiscale_pool(const Tensor& x, std::span<const std::size_t> sizes);

}  // namespace mtpl
