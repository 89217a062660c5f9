// SPDX-License-Identifier: Apache-2.0
#pragma once

// Recall@K evaluation of scene-graph predictions for predicate detection
// (PredDet), phrase detection (PhrDet) and scene graph generation (SGGen).

#include <cstddef>
#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hgsg/hierarchy.hpp"

namespace hgsg {

struct BBox {
  double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;

  /// Throws ValidationError unless x2 > x1, y2 > y1 and all are finite.
  void validate() const;
  double area() const { return (x2 - x1) * (y2 - y1); }
  bool operator==(const BBox&) const = default;
};

double iou(const BBox& a, const BBox& b);
BBox union_box(const BBox& a, const BBox& b);

struct SceneObject {
  std::int64_t label = 0;
  BBox box;
};

struct Relation {
  std::size_t subject = 0;  // index into objects
  std::size_t object = 0;
  std::int64_t predicate = 0;
};

struct GroundTruthGraph {
  std::string image_id;
  std::vector<SceneObject> objects;
  std::vector<Relation> relations;

  void validate() const;
};

struct PredictionTriplet {
  SceneObject subject;
  SceneObject object;
  std::int64_t predicate = 0;
  double score = 0.0;
};

struct ImagePredictions {
  std::string image_id;
  std::vector<PredictionTriplet> triplets;
};

enum class Task { PredDet, PhrDet, SGGen };
inline constexpr std::array<Task, 3> kAllTasks = {Task::PredDet, Task::PhrDet, Task::SGGen};
const char* to_string(Task task);
Task task_from_string(const std::string& name);

struct MatchOptions {
  double iou_threshold = 0.5;
  /// SGGen requires IoU > threshold instead of >= threshold.
  bool sggen_strict = false;
};

bool match_triplet(const PredictionTriplet& pred, const GroundTruthGraph& gt, const Relation& rel, Task task,
                   const MatchOptions& options = {});

struct RecallCount {
  std::size_t hits = 0;
  std::size_t gt_count = 0;
};

/// Ranks predictions by descending score (stable), keeps the top k and
/// matches greedily: each prediction in rank order takes the first
/// still-unmatched ground-truth relation it satisfies.
RecallCount recall_at_k(const GroundTruthGraph& gt, std::span<const PredictionTriplet> preds, std::size_t k, Task task,
                        const MatchOptions& options = {});

struct EvalOptions {
  std::vector<std::size_t> ks{50, 100};
  std::vector<Task> tasks{kAllTasks.begin(), kAllTasks.end()};
  MatchOptions match;
  /// Pool hits over the dataset instead of averaging per-image recall.
  bool micro = false;
};

struct RecallReport {
  /// task -> k -> recall in [0, 1]
  std::map<Task, std::map<std::size_t, double>> recall;
  std::size_t image_count = 0;  // images with at least one relation
  std::size_t gt_relation_count = 0;
  bool micro = false;
};

/// Images with no ground-truth relations are excluded; images without a
/// prediction entry score zero. Throws DataError for predictions of unknown
/// images.
RecallReport evaluate_dataset(std::span<const GroundTruthGraph> gts, std::span<const ImagePredictions> preds,
                              const EvalOptions& options = {});

/// Rewrites every predicate id through the hierarchy's fine -> coarse map.
std::vector<GroundTruthGraph> map_predicates(std::span<const GroundTruthGraph> gts, const HierarchyMap& map);
std::vector<ImagePredictions> map_predicates(std::span<const ImagePredictions> preds, const HierarchyMap& map);

/// JSON lines. Parse failures throw ParseError carrying the 1-based line.
std::vector<GroundTruthGraph> read_ground_truth(std::istream& in);
std::vector<GroundTruthGraph> read_ground_truth(const std::filesystem::path& path);
std::vector<ImagePredictions> read_predictions(std::istream& in);
std::vector<ImagePredictions> read_predictions(const std::filesystem::path& path);
void write_ground_truth(std::ostream& out, std::span<const GroundTruthGraph> gts);
void write_predictions(std::ostream& out, std::span<const ImagePredictions> preds);

void to_json(nlohmann::json& j, const RecallReport& r);
/// Rows PredDet / PhrDet / SGGen, one R@K column per k, values in percent.
std::string format_recall_table(const RecallReport& r);

}  // namespace hgsg
