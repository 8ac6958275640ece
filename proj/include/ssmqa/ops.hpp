#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ssmqa/tensor.hpp"

namespace ssmqa {

class Rng;

// Elementwise binary ops. `b` must have the same shape as `a` or a shape equal
// to a trailing suffix of it (repeated over a's leading dims).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

// a: [..., M, K]; b: [K, N] (shared) or [..., K, N] with a's leading dims.
Tensor matmul(const Tensor& a, const Tensor& b);
// Swaps the last two dims.
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, const Shape& shape);
// Columns [begin, end) of the last dim.
Tensor slice_last(const Tensor& a, std::int64_t begin, std::int64_t end);
// out[..., i] = a[..., index[i]]; grads scatter-add back.
Tensor index_select_last(const Tensor& a, std::span<const std::int64_t> index);
// Row lookup: ids shaped `ids_shape` select rows of table [V, d].
Tensor embedding(const Tensor& table, std::span<const std::int64_t> ids, const Shape& ids_shape);

enum class Unary { exp, sigmoid, silu, softplus, neg };

Tensor map_unary(const Tensor& x, Unary f);
inline Tensor exp(const Tensor& x) { return map_unary(x, Unary::exp); }
inline Tensor sigmoid(const Tensor& x) { return map_unary(x, Unary::sigmoid); }
inline Tensor silu(const Tensor& x) { return map_unary(x, Unary::silu); }
inline Tensor softplus(const Tensor& x) { return map_unary(x, Unary::softplus); }
inline Tensor neg(const Tensor& x) { return map_unary(x, Unary::neg); }

// Scalar helpers shared by ops and kernels.
double stable_sigmoid(double x);
double stable_softplus(double x);

Tensor softmax(const Tensor& x, int axis);
// y = gamma * x / sqrt(mean(x^2) + eps) over the last dim.
Tensor rmsnorm(const Tensor& x, const Tensor& gamma, double eps);

// Mean negative log-likelihood over rows of logits [..., V] whose target is
// not `ignore_index`. With `weights` (one per row) the loss is the weighted
// sum instead; ignored rows must carry weight 0.
Tensor cross_entropy(const Tensor& logits, std::span<const std::int64_t> targets, std::int64_t ignore_index,
                     std::span<const double> weights = {});

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Inverted dropout; identity when !training or p == 0.
Tensor dropout(const Tensor& x, double p, Rng& rng, bool training);

// Depthwise causal convolution over time. x: [..., T, C]; weight: [K, C];
// bias: [C]. Output t mixes inputs t-K+1..t (zero before the start).
Tensor causal_conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias);

} // namespace ssmqa
