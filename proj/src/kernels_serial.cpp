// SPDX-License-Identifier: Apache-2.0
#include <limits>

#include "hgsg/kernels.hpp"

namespace hgsg::kernels::serial {

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
          std::size_t k, std::size_t n, bool transpose_a, bool transpose_b) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        double av = transpose_a ? a[p * m + i] : a[i * k + p];
        double bv = transpose_b ? b[j * k + p] : b[p * n + j];
        s += av * bv;
      }
      c[i * n + j] = s;
    }
  }
}

void conv1x1_forward(std::span<const double> x, std::span<const double> w, std::span<const double> bias,
                     std::span<double> out, std::size_t batch, std::size_t in_channels,
                     std::size_t out_channels, std::size_t pixels) {
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t co = 0; co < out_channels; ++co)
      for (std::size_t l = 0; l < pixels; ++l) {
        double s = 0.0;
        for (std::size_t ci = 0; ci < in_channels; ++ci)
          s += w[co * in_channels + ci] * x[(n * in_channels + ci) * pixels + l];
        out[(n * out_channels + co) * pixels + l] = s + bias[co];
      }
}

void conv1x1_backward_input(std::span<const double> grad, std::span<const double> w, std::span<double> dx,
                            std::size_t batch, std::size_t in_channels, std::size_t out_channels,
                            std::size_t pixels) {
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t ci = 0; ci < in_channels; ++ci)
      for (std::size_t l = 0; l < pixels; ++l) {
        double s = 0.0;
        for (std::size_t co = 0; co < out_channels; ++co)
          s += w[co * in_channels + ci] * grad[(n * out_channels + co) * pixels + l];
        dx[(n * in_channels + ci) * pixels + l] = s;
      }
}

void conv1x1_backward_weight(std::span<const double> grad, std::span<const double> x, std::span<double> dw,
                             std::size_t batch, std::size_t in_channels, std::size_t out_channels,
                             std::size_t pixels) {
  for (std::size_t co = 0; co < out_channels; ++co)
    for (std::size_t ci = 0; ci < in_channels; ++ci) {
      double s = 0.0;
      for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t l = 0; l < pixels; ++l)
          s += grad[(n * out_channels + co) * pixels + l] * x[(n * in_channels + ci) * pixels + l];
      dw[co * in_channels + ci] = s;
    }
}

void nearest_centroid(std::span<const double> points, std::span<const double> centroids,
                      std::span<std::size_t> assignment, std::span<double> distance2, std::size_t count,
                      std::size_t clusters, std::size_t dim) {
  for (std::size_t i = 0; i < count; ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_c = 0;
    for (std::size_t c = 0; c < clusters; ++c) {
      double d = 0.0;
      for (std::size_t t = 0; t < dim; ++t) {
        double diff = points[i * dim + t] - centroids[c * dim + t];
        d += diff * diff;
      }
      if (d < best) {
        best = d;
        best_c = c;
      }
    }
    assignment[i] = best_c;
    distance2[i] = best;
  }
}

}  // namespace hgsg::kernels::serial
