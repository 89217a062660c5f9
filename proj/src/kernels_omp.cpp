// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cstdint>
#include <limits>
#include <vector>

#include <omp.h>

#include "hgsg/kernels.hpp"

namespace hgsg::kernels {

namespace {

// Below this many multiply-adds the fork/join overhead dominates.
constexpr std::size_t kParallelWork = 1 << 14;

using index_t = std::int64_t;

}  // namespace

int max_threads() { return omp_get_max_threads(); }

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
          std::size_t k, std::size_t n, bool transpose_a, bool transpose_b) {
  const bool par = m * k * n >= kParallelWork;
#pragma omp parallel if (par)
  {
    std::vector<double> brow(transpose_b ? k : 0);
#pragma omp for schedule(static)
    for (index_t ii = 0; ii < static_cast<index_t>(m); ++ii) {
      auto i = static_cast<std::size_t>(ii);
      double* crow = c.data() + i * n;
      std::fill(crow, crow + n, 0.0);
      if (!transpose_b) {
        // i-p-j order: each c[i][j] still accumulates over p in ascending order.
        for (std::size_t p = 0; p < k; ++p) {
          const double av = transpose_a ? a[p * m + i] : a[i * k + p];
          const double* bp = b.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) crow[j] += av * bp[j];
        }
      } else {
        for (std::size_t p = 0; p < k; ++p) brow[p] = transpose_a ? a[p * m + i] : a[i * k + p];
        for (std::size_t j = 0; j < n; ++j) {
          const double* bj = b.data() + j * k;
          double s = 0.0;
          for (std::size_t p = 0; p < k; ++p) s += brow[p] * bj[p];
          crow[j] = s;
        }
      }
    }
  }
}

void conv1x1_forward(std::span<const double> x, std::span<const double> w, std::span<const double> bias,
                     std::span<double> out, std::size_t batch, std::size_t in_channels,
                     std::size_t out_channels, std::size_t pixels) {
  const bool par = batch * in_channels * out_channels * pixels >= kParallelWork;
  const auto rows = static_cast<index_t>(batch * out_channels);
#pragma omp parallel for schedule(static) if (par)
  for (index_t r = 0; r < rows; ++r) {
    const auto n = static_cast<std::size_t>(r) / out_channels;
    const auto co = static_cast<std::size_t>(r) % out_channels;
    double* orow = out.data() + static_cast<std::size_t>(r) * pixels;
    std::fill(orow, orow + pixels, 0.0);
    for (std::size_t ci = 0; ci < in_channels; ++ci) {
      const double wv = w[co * in_channels + ci];
      const double* xrow = x.data() + (n * in_channels + ci) * pixels;
      for (std::size_t l = 0; l < pixels; ++l) orow[l] += wv * xrow[l];
    }
    for (std::size_t l = 0; l < pixels; ++l) orow[l] += bias[co];
  }
}

void conv1x1_backward_input(std::span<const double> grad, std::span<const double> w, std::span<double> dx,
                            std::size_t batch, std::size_t in_channels, std::size_t out_channels,
                            std::size_t pixels) {
  const bool par = batch * in_channels * out_channels * pixels >= kParallelWork;
  const auto rows = static_cast<index_t>(batch * in_channels);
#pragma omp parallel for schedule(static) if (par)
  for (index_t r = 0; r < rows; ++r) {
    const auto n = static_cast<std::size_t>(r) / in_channels;
    const auto ci = static_cast<std::size_t>(r) % in_channels;
    double* drow = dx.data() + static_cast<std::size_t>(r) * pixels;
    std::fill(drow, drow + pixels, 0.0);
    for (std::size_t co = 0; co < out_channels; ++co) {
      const double wv = w[co * in_channels + ci];
      const double* grow = grad.data() + (n * out_channels + co) * pixels;
      for (std::size_t l = 0; l < pixels; ++l) drow[l] += wv * grow[l];
    }
  }
}

void conv1x1_backward_weight(std::span<const double> grad, std::span<const double> x, std::span<double> dw,
                             std::size_t batch, std::size_t in_channels, std::size_t out_channels,
                             std::size_t pixels) {
  const bool par = batch * in_channels * out_channels * pixels >= kParallelWork;
  const auto entries = static_cast<index_t>(out_channels * in_channels);
#pragma omp parallel for schedule(static) if (par)
  for (index_t e = 0; e < entries; ++e) {
    const auto co = static_cast<std::size_t>(e) / in_channels;
    const auto ci = static_cast<std::size_t>(e) % in_channels;
    double s = 0.0;
    for (std::size_t n = 0; n < batch; ++n) {
      const double* grow = grad.data() + (n * out_channels + co) * pixels;
      const double* xrow = x.data() + (n * in_channels + ci) * pixels;
      for (std::size_t l = 0; l < pixels; ++l) s += grow[l] * xrow[l];
    }
    dw[static_cast<std::size_t>(e)] = s;
  }
}

void nearest_centroid(std::span<const double> points, std::span<const double> centroids,
                      std::span<std::size_t> assignment, std::span<double> distance2, std::size_t count,
                      std::size_t clusters, std::size_t dim) {
  const bool par = count * clusters * dim >= kParallelWork;
#pragma omp parallel for schedule(static) if (par)
  for (index_t ii = 0; ii < static_cast<index_t>(count); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const double* p = points.data() + i * dim;
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_c = 0;
    for (std::size_t c = 0; c < clusters; ++c) {
      const double* q = centroids.data() + c * dim;
      double d = 0.0;
      for (std::size_t t = 0; t < dim; ++t) {
        const double diff = p[t] - q[t];
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

}  // namespace hgsg::kernels
