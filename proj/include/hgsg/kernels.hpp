// SPDX-License-Identifier: Apache-2.0
#pragma once

// Raw numeric kernels behind the tensor ops. The top-level functions are
// OpenMP-parallel; kernels::serial holds the plain loop reference used by the
// tests and the benchmark. Both accumulate every output element in the same
// order, so their results are bitwise identical for any thread count.

#include <cstddef>
#include <span>

namespace hgsg::kernels {

/// c[m x n] = op(a) * op(b), where op(a) is m x k and op(b) is k x n.
/// transpose_a means a is stored k x m; transpose_b means b is stored n x k.
void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
          std::size_t k, std::size_t n, bool transpose_a = false, bool transpose_b = false);

/// out[n, co, l] = sum_ci w[co, ci] * x[n, ci, l] + bias[co]
void conv1x1_forward(std::span<const double> x, std::span<const double> w, std::span<const double> bias,
                     std::span<double> out, std::size_t batch, std::size_t in_channels,
                     std::size_t out_channels, std::size_t pixels);

/// dx[n, ci, l] = sum_co w[co, ci] * g[n, co, l]
void conv1x1_backward_input(std::span<const double> grad, std::span<const double> w, std::span<double> dx,
                            std::size_t batch, std::size_t in_channels, std::size_t out_channels,
                            std::size_t pixels);

/// dw[co, ci] = sum_n sum_l g[n, co, l] * x[n, ci, l]
void conv1x1_backward_weight(std::span<const double> grad, std::span<const double> x, std::span<double> dw,
                             std::size_t batch, std::size_t in_channels, std::size_t out_channels,
                             std::size_t pixels);

/// For each of `count` points of length `dim`, the index of the nearest
/// centroid (squared Euclidean, ties to the lower index) and that distance.
void nearest_centroid(std::span<const double> points, std::span<const double> centroids,
                      std::span<std::size_t> assignment, std::span<double> distance2, std::size_t count,
                      std::size_t clusters, std::size_t dim);

int max_threads();

namespace serial {

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
          std::size_t k, std::size_t n, bool transpose_a = false, bool transpose_b = false);
void conv1x1_forward(std::span<const double> x, std::span<const double> w, std::span<const double> bias,
                     std::span<double> out, std::size_t batch, std::size_t in_channels,
                     std::size_t out_channels, std::size_t pixels);
void conv1x1_backward_input(std::span<const double> grad, std::span<const double> w, std::span<double> dx,
                            std::size_t batch, std::size_t in_channels, std::size_t out_channels,
                            std::size_t pixels);
void conv1x1_backward_weight(std::span<const double> grad, std::span<const double> x, std::span<double> dw,
                             std::size_t batch, std::size_t in_channels, std::size_t out_channels,
                             std::size_t pixels);
void nearest_centroid(std::span<const double> points, std::span<const double> centroids,
                      std::span<std::size_t> assignment, std::span<double> distance2, std::size_t count,
                      std::size_t clusters, std::size_t dim);

}  // namespace serial

}  // namespace hgsg::kernels
