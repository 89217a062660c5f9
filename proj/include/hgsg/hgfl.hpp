// SPDX-License-Identifier: Apache-2.0
#pragma once

// Hierarchy guided feature learning: a coarse and a fine branch over shared
// region features, each supervised by its own cross-entropy term, with the
// optional HGM refining the fine features from the coarse ones.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hgsg/autograd.hpp"
#include "hgsg/hgm.hpp"
#include "hgsg/hierarchy.hpp"

namespace hgsg {

enum class HeadParam : std::size_t { ConvWeight, ConvBias, ClassifierWeight, ClassifierBias };
inline constexpr std::size_t kHeadParamCount = 4;

/// conv1x1 + relu producing branch features, then mean over pixels and a
/// linear classifier.
struct BranchHead {
  std::array<Tensor, kHeadParamCount> params;  // [C x C], [C], [K x C], [K]

  static BranchHead random(std::size_t channels, std::size_t classes, std::uint64_t seed);

  const Tensor& operator[](HeadParam p) const { return params[static_cast<std::size_t>(p)]; }
  std::size_t channels() const { return params[0].dim(0); }
  std::size_t classes() const { return params[2].dim(0); }
  void validate() const;
};

struct HierarchicalHeads {
  BranchHead coarse;
  BranchHead fine;
  std::optional<HGMParams> hgm;

  /// coarse params, fine params, then HGM learnables when present.
  std::vector<Tensor> learnables() const;
  std::vector<std::string> learnable_names() const;
  void set_learnables(std::span<const Tensor> values);
  void validate() const;
};

struct HeadsBinding {
  std::array<Var, kHeadParamCount> coarse;
  std::array<Var, kHeadParamCount> fine;
  std::optional<HGMBinding> hgm;

  static HeadsBinding from(std::span<const Var> vars, const HierarchicalHeads& heads);
  static HeadsBinding bind(Tape& tape, const HierarchicalHeads& heads, bool requires_grad = true);
};

struct BranchOutputs {
  Var a;              // coarse branch features
  Var b;              // fine branch features, refined by HGM when present
  Var coarse_logits;  // N x K_coarse
  Var fine_logits;    // N x K_fine
};

BranchOutputs forward_branches(const Var& x, const HierarchicalHeads& heads, const HeadsBinding& binding,
                               NormMode mode = NormMode::Batch,
                               std::array<std::optional<ops::BatchStats>, kConvSiteCount>* bn_stats = nullptr);

struct BranchTensors {
  Tensor a, b, coarse_logits, fine_logits;
};
BranchTensors forward_branches(const Tensor& x, const HierarchicalHeads& heads, NormMode mode = NormMode::Batch);

/// Deployment path: evaluates the fine branch alone. Throws ConfigError when
/// the heads carry an HGM, since it needs the coarse features.
Tensor predict_fine_only(const Tensor& x, const HierarchicalHeads& heads);

std::vector<std::size_t> derive_coarse_targets(std::span<const std::size_t> fine_targets, const HierarchyMap& map);

struct HierLossConfig {
  double weight_coarse = 1.0;
  double weight_fine = 1.0;
};

/// weight_fine * CE(fine) + weight_coarse * CE(coarse, parents of the fine targets)
Var dual_loss(const Var& coarse_logits, const Var& fine_logits, std::span<const std::size_t> fine_targets,
              const HierarchyMap& map, const HierLossConfig& cfg);
double dual_loss(const Tensor& coarse_logits, const Tensor& fine_logits, std::span<const std::size_t> fine_targets,
                 const HierarchyMap& map, const HierLossConfig& cfg);

struct SyntheticRegionSpec {
  std::size_t regions = 96;
  std::size_t channels = 8;
  std::size_t pixels = 4;
  HierarchyMap hierarchy;  // over the fine classes
  double separation = 1.0;
  double noise = 0.1;
  std::uint64_t seed = 0;

  std::size_t fine_classes() const { return hierarchy.fine_count(); }
};

struct SyntheticDataset {
  Tensor features;  // regions x channels x pixels
  std::vector<std::size_t> fine_targets;
};

/// Class-conditional Gaussian features. Fine class k has mean
/// separation * (P[parent(k)] + 0.5 * Q[k]) with P, Q standard normal
/// patterns, so siblings share a parent offset. Classes are assigned
/// round-robin.
SyntheticDataset make_synthetic(const SyntheticRegionSpec& spec);

/// Contiguous blocks: fine class k belongs to parent k * parents / fine.
HierarchyMap block_hierarchy(std::size_t fine_classes, std::size_t parents);

struct StepRecord {
  std::size_t step = 0;
  double coarse_loss = 0.0;
  double fine_loss = 0.0;
  double fine_accuracy = 0.0;
  double coarse_accuracy = 0.0;
  /// Fraction whose predicted fine class has the correct parent.
  double derived_coarse_accuracy = 0.0;
};

struct TrainingReport {
  std::uint64_t seed = 0;
  std::size_t steps = 0;
  double lr = 0.0;
  HierLossConfig loss;
  bool hgm = false;
  std::vector<StepRecord> history;  // before each update
  StepRecord final;                 // after the last update
};

void to_json(nlohmann::json& j, const TrainingReport& r);
/// `step,coarse_loss,fine_loss` rows, the final evaluation last.
std::string loss_curve_csv(const TrainingReport& r);

struct TrainOptions {
  double lr = 0.5;
  std::size_t steps = 2000;
  HierLossConfig loss;
};

/// Full-batch gradient descent on dual_loss. Bit-deterministic for a given
/// spec, initial heads and options. `heads` is updated in place.
/// Throws TrainingError when the loss stops being finite.
TrainingReport train_toy(const SyntheticRegionSpec& spec, HierarchicalHeads& heads, const TrainOptions& options);

struct HeadsConfig {
  std::size_t channels = 8;
  std::size_t coarse_classes = 4;
  std::size_t fine_classes = 12;
  bool hgm = false;
  HGMDims hgm_dims{};  // defaults to HGMDims::halved(channels)
  PoolMode pooling = PoolMode::Max;
  bool batch_norm = false;
  std::uint64_t seed = 0;
};
HierarchicalHeads make_heads(const HeadsConfig& cfg);

}  // namespace hgsg
