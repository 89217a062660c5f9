// SPDX-License-Identifier: Apache-2.0
#pragma once

// Forward tensor operations without gradient tracking. The differentiable
// counterparts in autograd.hpp call these and register backward rules.

#include <cstddef>
#include <span>
#include <vector>

#include "hgsg/tensor.hpp"

namespace hgsg {

enum class PoolMode { Max, Mean };

const char* to_string(PoolMode mode);
PoolMode pool_mode_from_string(const std::string& name);

namespace ops {

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor sum(const Tensor& a);
Tensor relu(const Tensor& x);

/// [m x k] x [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);
/// [B x m x k] x [B x k x n] -> [B x m x n]
Tensor batched_matmul(const Tensor& a, const Tensor& b);
/// Swaps the last two axes of a rank-2 or rank-3 tensor.
Tensor transpose(const Tensor& a);

/// x[N x Cin x L], w[Cout x Cin], bias[Cout] -> [N x Cout x L]
Tensor conv1x1(const Tensor& x, const Tensor& w, const Tensor& bias);

/// Collapses the rows axis of m with a weighted sum: m[R x C] -> [1 x C] or,
/// batched, m[N x R x C] -> [N x 1 x C]. bias holds one value.
Tensor row_reduce_conv(const Tensor& m, const Tensor& w, const Tensor& bias);

struct PoolResult {
  Tensor value;
  /// For max pooling, the flat input offset that won each output element.
  std::vector<std::size_t> argmax;
};
/// Reduces `axis` and drops it from the shape.
PoolResult pool_axis(const Tensor& x, std::size_t axis, PoolMode mode);

/// x[N x C x L] * m[N x C] broadcast over the pixel axis.
Tensor broadcast_mul_over_pixels(const Tensor& x, const Tensor& m);

/// Row-wise softmax of [N x K] logits.
Tensor softmax(const Tensor& logits);
/// Mean negative log-likelihood of targets under softmax(logits).
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets);
std::vector<std::size_t> argmax_rows(const Tensor& logits);

struct BatchStats {
  Tensor mean;      // [C]
  Tensor variance;  // [C], biased
};
/// Per-channel statistics of x[N x C x L] over the N and L axes.
BatchStats batch_stats(const Tensor& x);

}  // namespace ops
}  // namespace hgsg
