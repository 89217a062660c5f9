// SPDX-License-Identifier: Apache-2.0
#include "hgsg/kmeans.hpp"

#include <algorithm>
#include <string>

#include "hgsg/error.hpp"
#include "hgsg/kernels.hpp"

namespace hgsg {

namespace {

// splitmix64; portable across standard libraries, unlike <random> distributions.
class SeedStream {
 public:
  explicit SeedStream(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

 private:
  std::uint64_t state_;
};

double squared_distance(const double* a, const double* b, std::size_t dim) {
  double d = 0.0;
  for (std::size_t t = 0; t < dim; ++t) {
    const double diff = a[t] - b[t];
    d += diff * diff;
  }
  return d;
}

std::vector<std::size_t> plus_plus_seeds(const std::vector<double>& flat, std::size_t n, std::size_t dim,
                                         std::size_t k, SeedStream& rng) {
  std::vector<std::size_t> chosen{static_cast<std::size_t>(rng.next() % n)};
  std::vector<double> nearest(n);
  for (std::size_t i = 0; i < n; ++i) nearest[i] = squared_distance(&flat[i * dim], &flat[chosen[0] * dim], dim);
  while (chosen.size() < k) {
    double total = 0.0;
    for (double d : nearest) total += d;
    std::size_t pick = n;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double run = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        run += nearest[i];
        if (nearest[i] > 0.0 && run > target) {
          pick = i;
          break;
        }
      }
      if (pick == n)  // rounding at the top of the range
        for (std::size_t i = n; i-- > 0;)
          if (nearest[i] > 0.0) {
            pick = i;
            break;
          }
    } else {
      // Every point coincides with a seed; take the lowest unused index.
      for (std::size_t i = 0; i < n && pick == n; ++i)
        if (std::find(chosen.begin(), chosen.end(), i) == chosen.end()) pick = i;
    }
    chosen.push_back(pick);
    for (std::size_t i = 0; i < n; ++i)
      nearest[i] = std::min(nearest[i], squared_distance(&flat[i * dim], &flat[pick * dim], dim));
  }
  return chosen;
}

}  // namespace

double sum_squared_error(std::span<const std::vector<double>> points, std::span<const std::size_t> assignment,
                         std::span<const std::vector<double>> centroids) {
  double sse = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i)
    sse += squared_distance(points[i].data(), centroids[assignment[i]].data(), points[i].size());
  return sse;
}

KMeansResult kmeans(std::span<const std::vector<double>> points, const KMeansOptions& options) {
  const std::size_t n = points.size();
  if (n == 0) throw ParameterError("kmeans: no points");
  const std::size_t k = options.k;
  if (k < 1 || k > n)
    throw ParameterError("kmeans: k = " + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
  const std::size_t dim = points[0].size();
  if (dim == 0) throw ParameterError("kmeans: zero-length vectors");
  std::vector<double> flat(n * dim);
  for (std::size_t i = 0; i < n; ++i) {
    if (points[i].size() != dim)
      throw ParameterError("kmeans: point " + std::to_string(i) + " has length " + std::to_string(points[i].size()) +
                           ", expected " + std::to_string(dim));
    std::copy(points[i].begin(), points[i].end(), flat.begin() + static_cast<std::ptrdiff_t>(i * dim));
  }

  SeedStream rng(options.seed);
  std::vector<double> centroids(k * dim);
  const auto seeds = plus_plus_seeds(flat, n, dim, k, rng);
  for (std::size_t c = 0; c < k; ++c)
    std::copy_n(&flat[seeds[c] * dim], dim, centroids.begin() + static_cast<std::ptrdiff_t>(c * dim));

  KMeansResult result;
  std::vector<std::size_t> assignment(n), previous;
  std::vector<double> dist2(n);
  std::vector<std::size_t> sizes(k);
  for (std::size_t iter = 0; iter < std::max<std::size_t>(1, options.max_iters); ++iter) {
    kernels::nearest_centroid(flat, centroids, assignment, dist2, n, k, dim);

    std::fill(sizes.begin(), sizes.end(), 0);
    for (auto a : assignment) ++sizes[a];
    for (std::size_t c = 0; c < k; ++c) {
      if (sizes[c] != 0) continue;
      std::size_t far = n;
      for (std::size_t i = 0; i < n; ++i)
        if (sizes[assignment[i]] > 1 && (far == n || dist2[i] > dist2[far])) far = i;
      --sizes[assignment[far]];
      assignment[far] = c;
      sizes[c] = 1;
      dist2[far] = 0.0;
      std::copy_n(&flat[far * dim], dim, centroids.begin() + static_cast<std::ptrdiff_t>(c * dim));
    }

    // Fixed summation order (point index) keeps the update reproducible.
    std::fill(centroids.begin(), centroids.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t t = 0; t < dim; ++t) centroids[assignment[i] * dim + t] += flat[i * dim + t];
    for (std::size_t c = 0; c < k; ++c)
      for (std::size_t t = 0; t < dim; ++t) centroids[c * dim + t] /= static_cast<double>(sizes[c]);

    double sse = 0.0;
    for (std::size_t i = 0; i < n; ++i) sse += squared_distance(&flat[i * dim], &centroids[assignment[i] * dim], dim);
    const bool same = assignment == previous;
    if (!result.sse_history.empty() && sse > result.sse_history.back() && !same)
      throw ContractError("kmeans: SSE increased at iteration " + std::to_string(iter));
    const double improvement = result.sse_history.empty() ? sse : result.sse_history.back() - sse;
    result.sse_history.push_back(sse);
    result.iterations = iter + 1;
    previous = assignment;
    if (same || (result.sse_history.size() > 1 && improvement < options.tol)) {
      result.converged = true;
      break;
    }
  }

  result.assignment = std::move(assignment);
  result.centroids.assign(k, std::vector<double>(dim));
  for (std::size_t c = 0; c < k; ++c)
    std::copy_n(&centroids[c * dim], dim, result.centroids[c].begin());
  result.sse = result.sse_history.back();
  return result;
}

}  // namespace hgsg
