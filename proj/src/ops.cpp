// SPDX-License-Identifier: Apache-2.0
#include "hgsg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hgsg/error.hpp"
#include "hgsg/kernels.hpp"

namespace hgsg {

const char* to_string(PoolMode mode) { return mode == PoolMode::Max ? "max" : "mean"; }

PoolMode pool_mode_from_string(const std::string& name) {
  if (name == "max") return PoolMode::Max;
  if (name == "mean" || name == "avg") return PoolMode::Mean;
  throw ParameterError("unknown pooling mode '" + name + "' (expected max or mean)");
}

namespace ops {

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " differ");
}

void require_rank(const char* op, const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank)
    throw DimensionError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) + ", got " +
                         shape_string(t.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return Tensor(a.shape(), std::move(out));
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return Tensor(a.shape(), std::move(out));
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
  return Tensor(a.shape(), std::move(out));
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return Tensor::scalar(s);
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return Tensor(x.shape(), std::move(out));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2, "left operand");
  require_rank("matmul", b, 2, "right operand");
  if (a.dim(1) != b.dim(0))
    throw DimensionError("matmul: inner dimensions differ for " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  kernels::gemm(a.data(), b.data(), out, m, k, n);
  return Tensor({m, n}, std::move(out));
}

Tensor batched_matmul(const Tensor& a, const Tensor& b) {
  require_rank("batched_matmul", a, 3, "left operand");
  require_rank("batched_matmul", b, 3, "right operand");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
    throw DimensionError("batched_matmul: incompatible shapes " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  const auto batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  std::vector<double> out(batch * m * n);
  for (std::size_t i = 0; i < batch; ++i)
    kernels::gemm(a.data().subspan(i * m * k, m * k), b.data().subspan(i * k * n, k * n),
                  std::span(out).subspan(i * m * n, m * n), m, k, n);
  return Tensor({batch, m, n}, std::move(out));
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2 && a.rank() != 3)
    throw DimensionError("transpose: expected rank 2 or 3, got " + shape_string(a.shape()));
  const std::size_t batch = a.rank() == 3 ? a.dim(0) : 1;
  const auto rows = a.dim(a.rank() - 2), cols = a.dim(a.rank() - 1);
  std::vector<double> out(a.size());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) out[b * rows * cols + c * rows + r] = a[b * rows * cols + r * cols + c];
  Shape shape = a.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  return Tensor(std::move(shape), std::move(out));
}

Tensor conv1x1(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require_rank("conv1x1", x, 3, "input");
  require_rank("conv1x1", w, 2, "weight");
  require_rank("conv1x1", bias, 1, "bias");
  if (w.dim(1) != x.dim(1) || bias.dim(0) != w.dim(0))
    throw DimensionError("conv1x1: channel mismatch between input " + shape_string(x.shape()) + ", weight " +
                         shape_string(w.shape()) + " and bias " + shape_string(bias.shape()));
  const auto n = x.dim(0), cin = x.dim(1), l = x.dim(2), cout = w.dim(0);
  std::vector<double> out(n * cout * l);
  kernels::conv1x1_forward(x.data(), w.data(), bias.data(), out, n, cin, cout, l);
  return Tensor({n, cout, l}, std::move(out));
}

Tensor row_reduce_conv(const Tensor& m, const Tensor& w, const Tensor& bias) {
  if (m.rank() != 2 && m.rank() != 3)
    throw DimensionError("row_reduce_conv: expected rank 2 or 3 input, got " + shape_string(m.shape()));
  require_rank("row_reduce_conv", w, 1, "weight");
  if (bias.size() != 1) throw DimensionError("row_reduce_conv: bias must hold one value");
  const std::size_t batch = m.rank() == 3 ? m.dim(0) : 1;
  const auto rows = m.dim(m.rank() - 2), cols = m.dim(m.rank() - 1);
  if (w.dim(0) != rows)
    throw DimensionError("row_reduce_conv: weight length " + std::to_string(w.dim(0)) +
                         " does not match the " + std::to_string(rows) + " rows of " + shape_string(m.shape()));
  std::vector<double> out(batch * cols);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < cols; ++c) {
      double s = 0.0;
      for (std::size_t r = 0; r < rows; ++r) s += w[r] * m[(b * rows + r) * cols + c];
      out[b * cols + c] = s + bias[0];
    }
  Shape shape = m.rank() == 3 ? Shape{batch, 1, cols} : Shape{1, cols};
  return Tensor(std::move(shape), std::move(out));
}

PoolResult pool_axis(const Tensor& x, std::size_t axis, PoolMode mode) {
  if (axis >= x.rank())
    throw DimensionError("pool_axis: axis " + std::to_string(axis) + " invalid for shape " +
                         shape_string(x.shape()));
  const auto& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const auto extent = s[axis];

  PoolResult result;
  std::vector<double> out(outer * inner);
  if (mode == PoolMode::Max) result.argmax.resize(out.size());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * extent * inner + i;
      if (mode == PoolMode::Max) {
        std::size_t best = base;
        for (std::size_t e = 1; e < extent; ++e)
          if (x[base + e * inner] > x[best]) best = base + e * inner;
        out[o * inner + i] = x[best];
        result.argmax[o * inner + i] = best;
      } else {
        double acc = 0.0;
        for (std::size_t e = 0; e < extent; ++e) acc += x[base + e * inner];
        out[o * inner + i] = acc / static_cast<double>(extent);
      }
    }
  Shape shape = s;
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  result.value = Tensor(std::move(shape), std::move(out));
  return result;
}

Tensor broadcast_mul_over_pixels(const Tensor& x, const Tensor& m) {
  require_rank("broadcast_mul_over_pixels", x, 3, "features");
  require_rank("broadcast_mul_over_pixels", m, 2, "multiplier");
  if (m.dim(0) != x.dim(0) || m.dim(1) != x.dim(1))
    throw DimensionError("broadcast_mul_over_pixels: leading dims of " + shape_string(x.shape()) +
                         " do not match " + shape_string(m.shape()));
  const auto rows = x.dim(0) * x.dim(1), l = x.dim(2);
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t p = 0; p < l; ++p) out[r * l + p] = x[r * l + p] * m[r];
  return Tensor(x.shape(), std::move(out));
}

Tensor softmax(const Tensor& logits) {
  require_rank("softmax", logits, 2, "logits");
  const auto n = logits.dim(0), k = logits.dim(1);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = logits.data().data() + i * k;
    const double m = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - m);
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] = std::exp(row[j] - m) / z;
  }
  return Tensor(logits.shape(), std::move(out));
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets) {
  require_rank("cross_entropy", logits, 2, "logits");
  const auto n = logits.dim(0), k = logits.dim(1);
  if (targets.size() != n)
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(n) + " rows");
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] >= k)
      throw LabelError("cross_entropy: target " + std::to_string(targets[i]) + " at row " + std::to_string(i) +
                           " is outside [0, " + std::to_string(k) + ")",
                       targets[i]);
    const double* row = logits.data().data() + i * k;
    const auto top = static_cast<std::size_t>(std::max_element(row, row + k) - row);
    // log-sum-exp split as max + log1p(rest) keeps near-one-hot rows accurate.
    double rest = 0.0;
    for (std::size_t j = 0; j < k; ++j)
      if (j != top) rest += std::exp(row[j] - row[top]);
    total += (row[top] - row[targets[i]]) + std::log1p(rest);
  }
  return Tensor::scalar(total / static_cast<double>(n));
}

std::vector<std::size_t> argmax_rows(const Tensor& logits) {
  require_rank("argmax_rows", logits, 2, "logits");
  const auto n = logits.dim(0), k = logits.dim(1);
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = logits.data().data() + i * k;
    out[i] = static_cast<std::size_t>(std::max_element(row, row + k) - row);
  }
  return out;
}

BatchStats batch_stats(const Tensor& x) {
  require_rank("batch_stats", x, 3, "input");
  const auto n = x.dim(0), c = x.dim(1), l = x.dim(2);
  const double count = static_cast<double>(n * l);
  std::vector<double> mean(c, 0.0), var(c, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t p = 0; p < l; ++p) s += x[(b * c + ch) * l + p];
    mean[ch] = s / count;
    double v = 0.0;
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t p = 0; p < l; ++p) {
        const double d = x[(b * c + ch) * l + p] - mean[ch];
        v += d * d;
      }
    var[ch] = v / count;
  }
  return {Tensor({c}, std::move(mean)), Tensor({c}, std::move(var))};
}

}  // namespace ops
}  // namespace hgsg
