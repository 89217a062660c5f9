// SPDX-License-Identifier: Apache-2.0
#pragma once

// Independent reference computations for the tests and the self-test.
// Nothing here calls the tensor engine, the autograd tape or the evaluator;
// tensors are read as flat storage and everything else is plain loops.

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "hgsg/hgm.hpp"
#include "hgsg/sgeval.hpp"

namespace hgsg::oracle {

/// Every HGM intermediate computed by straight-line loop nests.
/// Batch norm is not modelled; params.batch_norm must be false.
struct HGMLoopResult {
  std::vector<double> a_t, b_t, b_sqz, s, cc, a_out, a_out_prime, b_out;
};
HGMLoopResult hgm_loops(const FeaturePair& pair, const HGMParams& params);

/// Triple-loop matrix product of row-major m x k and k x n.
std::vector<double> matmul_loops(const std::vector<double>& a, const std::vector<double>& b, std::size_t m,
                                 std::size_t k, std::size_t n);

/// Central-difference derivative of a scalar function.
template <class F>
double central_difference(F f, double x, double eps) {
  return (f(x + eps) - f(x - eps)) / (2.0 * eps);
}

/// IoU of integer-coordinate boxes by counting unit cells.
double iou_by_cells(int ax1, int ay1, int ax2, int ay2, int bx1, int by1, int bx2, int by2);

/// Recall hits by exhaustive search: enumerate every one-to-one matching of
/// the top-k predictions to ground-truth relations they satisfy and keep the
/// one that is lexicographically best in rank order (each prediction prefers
/// to match, and to match the lowest-index relation). Uses its own IoU,
/// ranking and label tests.
std::size_t exhaustive_hits(const GroundTruthGraph& gt, const std::vector<PredictionTriplet>& preds, std::size_t k,
                            Task task, double iou_threshold);

/// Size of a maximum one-to-one matching, an upper bound on any matching.
std::size_t maximum_matching(const GroundTruthGraph& gt, const std::vector<PredictionTriplet>& preds, std::size_t k,
                             Task task, double iou_threshold);

struct RandomScene {
  GroundTruthGraph gt;
  std::vector<PredictionTriplet> preds;
};
/// Small scene (<= max_objects objects, <= max_relations relations) on an
/// integer grid, with predictions that copy, perturb or invent relations and
/// scores drawn from a small set so ties occur.
RandomScene random_scene(std::mt19937_64& rng, std::size_t max_objects, std::size_t max_relations,
                         std::size_t max_predictions, const std::string& image_id);

/// Minimum SSE over all k^n labelings of the points (small n only); writes
/// the optimal labeling, canonicalized so clusters are numbered by first
/// member.
double best_partition(const std::vector<std::vector<double>>& points, std::size_t k,
                      std::vector<std::size_t>* labels = nullptr);

/// Relabels clusters in order of first appearance.
std::vector<std::size_t> canonical_labels(const std::vector<std::size_t>& labels);

}  // namespace hgsg::oracle
