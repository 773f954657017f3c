#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "metriplector/tensor.hpp"

namespace mtpl {

// Binary elementwise ops broadcast over 2-D views: operands must have equal
// shapes, or one of them is a [1,c] row, an [r,1] column or a single element.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double c);
Tensor add_scalar(const Tensor& x, double c);

Tensor relu(const Tensor& x);
Tensor silu(const Tensor& x);
/// log(1 + e^x), evaluated as x + log1p(e^-x) above 20.
Tensor softplus(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor square(const Tensor& x);
/// Gradient passes only where lo < x < hi.
Tensor clamp(const Tensor& x, double lo, double hi);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Column sums, [n,c] -> [1,c].
Tensor sum_rows(const Tensor& x);
/// Row sums, [n,c] -> [n,1].
Tensor sum_cols(const Tensor& x);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);

/// Row-wise softmax of x / temperature.
Tensor softmax_rows(const Tensor& x, double temperature = 1.0);
Tensor log_softmax_rows(const Tensor& x);
/// Mean negative log-likelihood of integer labels under row-wise softmax.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);
/// Per-class weighted mean: sum_i w[y_i] * nll_i / sum_i w[y_i].
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels, std::span<const double> class_weights);

/// Inclusive cumulative sum along axis (0 = down rows, 1 = along columns).
Tensor cumsum(const Tensor& x, int axis = 0);

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> index);
/// out[index[k]] += src[k]; out has n rows.
Tensor scatter_add_rows(const Tensor& src, std::span<const std::size_t> index, std::size_t n);

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);
Tensor concat_cols(const std::vector<Tensor>& parts);
/// Per-row dot product, [n,c] x [n,c] -> [n,1].
Tensor rowwise_dot(const Tensor& a, const Tensor& b);

}  // namespace mtpl
