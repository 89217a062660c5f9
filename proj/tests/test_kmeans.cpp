// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <random>

#include "hgsg/error.hpp"
#include "hgsg/kmeans.hpp"
#include "oracle.hpp"

using namespace hgsg;

namespace {

using Points = std::vector<std::vector<double>>;

Points gaussian_blobs(std::mt19937_64& rng, std::size_t per_cluster, const Points& centers, double sd) {
  std::normal_distribution<double> noise(0.0, sd);
  Points pts;
  for (std::size_t i = 0; i < per_cluster; ++i)
    for (const auto& c : centers) {
      auto p = c;
      for (auto& v : p) v += noise(rng);
      pts.push_back(p);
    }
  return pts;
}

bool non_increasing(const std::vector<double>& h) {
  for (std::size_t i = 1; i < h.size(); ++i)
    if (h[i] > h[i - 1]) return false;
  return true;
}

}  // namespace

TEST_CASE("kmeans examples") {
  const Points four{{0, 0}, {0, 1}, {10, 10}, {10, 11}};
  const auto r = kmeans(four, {2, 0});
  CHECK(oracle::canonical_labels(r.assignment) == std::vector<std::size_t>{0, 0, 1, 1});
  std::vector<std::size_t> best;
  CHECK(r.sse == doctest::Approx(oracle::best_partition(four, 2, &best)).epsilon(1e-12));
  CHECK(best == std::vector<std::size_t>{0, 0, 1, 1});

  const auto each = kmeans(four, {4, 3});
  CHECK(each.sse == 0.0);
  std::vector<std::size_t> sorted = each.assignment;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == std::vector<std::size_t>{0, 1, 2, 3});

  Points twice;
  for (const auto& p : four) {
    twice.push_back(p);
    twice.push_back(p);
  }
  auto c1 = kmeans(four, {2, 1}).centroids, c2 = kmeans(twice, {2, 1}).centroids;
  std::sort(c1.begin(), c1.end());
  std::sort(c2.begin(), c2.end());
  CHECK(c1 == c2);
}

TEST_CASE("kmeans errors") {
  const Points pts{{0, 0}, {1, 1}};
  CHECK_THROWS_AS(kmeans(pts, {0, 0}), ParameterError);
  CHECK_THROWS_AS(kmeans(pts, {3, 0}), ParameterError);
  CHECK_THROWS_AS(kmeans(Points{}, {1, 0}), ParameterError);
  CHECK_THROWS_AS(kmeans(Points{{0, 0}, {1}}, {1, 0}), ParameterError);
}

TEST_CASE("kmeans agrees with the exhaustive partition oracle on small separated sets") {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 10; ++trial) {
    const Points centers{{0, 0}, {8, 1}, {2, 9}};
    const auto pts = gaussian_blobs(rng, 3, centers, 0.5);
    std::vector<std::size_t> best;
    const double best_sse = oracle::best_partition(pts, 3, &best);
    const auto r = kmeans(pts, {3, static_cast<std::uint64_t>(trial)});
    CHECK(oracle::canonical_labels(r.assignment) == best);
    CHECK(r.sse == doctest::Approx(best_sse).epsilon(1e-12));
    CHECK(non_increasing(r.sse_history));
  }
}

TEST_CASE("kmeans recovers planted clusters and is deterministic") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    const Points centers{{0, 0, 0}, {10, 0, 0}};
    const auto pts = gaussian_blobs(rng, 20, centers, 1.0);
    const auto r = kmeans(pts, {2, seed});
    std::vector<std::size_t> truth(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) truth[i] = i % 2;
    CHECK(oracle::canonical_labels(r.assignment) == oracle::canonical_labels(truth));
    CHECK(non_increasing(r.sse_history));
    CHECK(r.sse == doctest::Approx(sum_squared_error(pts, r.assignment, r.centroids)).epsilon(1e-12));
    for (int rep = 0; rep < 10; ++rep) {
      const auto again = kmeans(pts, {2, seed});
      CHECK(again.assignment == r.assignment);
      CHECK(again.centroids == r.centroids);
    }
  }
}

TEST_CASE("kmeans keeps every cluster non-empty with duplicate points") {
  const Points pts{{1, 1}, {1, 1}, {1, 1}, {1, 1}, {5, 5}};
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto r = kmeans(pts, {3, seed});
    std::vector<std::size_t> count(3, 0);
    for (auto a : r.assignment) ++count[a];
    for (auto c : count) CHECK(c > 0);
  }
}
