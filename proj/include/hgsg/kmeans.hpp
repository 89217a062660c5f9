// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace hgsg {

struct KMeansOptions {
  std::size_t k = 1;
  std::uint64_t seed = 0;
  std::size_t max_iters = 300;
  /// Stop once an iteration improves the SSE by less than this.
  double tol = 1e-12;
};

struct KMeansResult {
  std::vector<std::size_t> assignment;
  std::vector<std::vector<double>> centroids;
  double sse = 0.0;
  /// SSE after every Lloyd iteration; non-increasing.
  std::vector<double> sse_history;
  std::size_t iterations = 0;
  bool converged = false;
};

/// Lloyd's algorithm with k-means++ seeding, Euclidean distance.
///
/// Deterministic for a given (points order, k, seed): the seeding draws from
/// a splitmix-style stream and centroid sums are accumulated in point order.
/// A cluster left empty after assignment takes over the point farthest from
/// its centroid among clusters with more than one member.
KMeansResult kmeans(std::span<const std::vector<double>> points, const KMeansOptions& options);

double sum_squared_error(std::span<const std::vector<double>> points, std::span<const std::size_t> assignment,
                         std::span<const std::vector<double>> centroids);

}  // namespace hgsg
