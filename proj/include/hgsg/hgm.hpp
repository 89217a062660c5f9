// SPDX-License-Identifier: Apache-2.0
#pragma once

// Hierarchy guided module: reasons region-wise and channel-wise correlations
// between coarse-grained features A and fine-grained features B (both
// N regions x C channels x L pixels) and adds the back-projected correlation
// features to B as a residual.
//
//   A_t   = relu(conv(A))                         N x C1 x L
//   B_t   = relu(conv(B))                         N x C2 x L
//   B_sqz = relu(conv(B_t))                       N x L      (one channel)
//   S_i   = pool_m (A_t_i x B_sqz^T)[:, m]        N x C1
//   C_j   = relu(w . (B_t_j x A_t_j^T) + b)       N x C1
//   A_out = relu(conv(A_t + A_t * C))             N x C1 x L
//   A_out'= relu(conv(A_out + A_out * S))         N x C x L
//   B_out = B + A_out'
//
// Every conv is a 1x1 convolution shared across pixels. With batch_norm set,
// a per-channel batch norm sits between each conv and its relu.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hgsg/autograd.hpp"
#include "hgsg/tensor.hpp"

namespace hgsg {

struct HGMDims {
  std::size_t channels = 0;  // C
  std::size_t c1 = 0;        // transformed coarse channels
  std::size_t c2 = 0;        // transformed fine channels

  /// C1 = C2 = C / 2 (at least 1).
  static HGMDims halved(std::size_t channels);
  bool operator==(const HGMDims&) const = default;
};

enum class HGMWeight : std::size_t {
  TransformAWeight,       // C1 x C
  TransformABias,         // C1
  TransformBWeight,       // C2 x C
  TransformBBias,         // C2
  SqueezeWeight,          // 1 x C2
  SqueezeBias,            // 1
  ChannelReduceWeight,    // C2
  ChannelReduceBias,      // 1
  ProjectChannelWeight,   // C1 x C1
  ProjectChannelBias,     // C1
  ProjectRegionWeight,    // C x C1
  ProjectRegionBias,      // C
};
inline constexpr std::size_t kHGMWeightCount = 12;

/// The conv sites that carry an optional batch norm.
enum class ConvSite : std::size_t { TransformA, TransformB, Squeeze, ProjectChannel, ProjectRegion };
inline constexpr std::size_t kConvSiteCount = 5;

struct BatchNormSite {
  Tensor gamma;  // [channels]
  Tensor beta;
  Tensor running_mean;
  Tensor running_variance;
};

struct HGMParams {
  HGMDims dims;
  PoolMode pooling = PoolMode::Max;
  bool batch_norm = false;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
  std::array<Tensor, kHGMWeightCount> weights;
  std::array<BatchNormSite, kConvSiteCount> bn;

  static HGMParams zeros(HGMDims dims);
  /// Weights ~ N(0, 2 / fan_in), biases ~ N(0, bias_scale^2).
  static HGMParams random(HGMDims dims, std::uint64_t seed, double bias_scale = 0.1);

  const Tensor& operator[](HGMWeight w) const { return weights[static_cast<std::size_t>(w)]; }
  Tensor& operator[](HGMWeight w) { return weights[static_cast<std::size_t>(w)]; }

  Shape expected_shape(HGMWeight w) const;
  std::size_t site_channels(ConvSite site) const;

  /// Learnable tensors in a fixed order: the twelve weights, then gamma/beta of
  /// each conv site when batch_norm is on.
  std::vector<Tensor> learnables() const;
  std::vector<std::string> learnable_names() const;
  void set_learnables(std::span<const Tensor> values);

  /// Throws DimensionError unless every tensor matches dims.
  void validate() const;
};

const char* name_of(HGMWeight w);
const char* name_of(ConvSite site);

void to_json(nlohmann::json& j, const HGMParams& p);
void from_json(const nlohmann::json& j, HGMParams& p);

struct FeaturePair {
  Tensor a;  // coarse-grained region features, N x C x L
  Tensor b;  // fine-grained region features, N x C x L

  void validate() const;
};

/// Vars bound to an HGMParams' learnables on one tape.
struct HGMBinding {
  std::array<Var, kHGMWeightCount> weights;
  std::array<Var, kConvSiteCount> gamma;
  std::array<Var, kConvSiteCount> beta;

  const Var& operator[](HGMWeight w) const { return weights[static_cast<std::size_t>(w)]; }

  /// `vars` follows HGMParams::learnables() order.
  static HGMBinding from(std::span<const Var> vars, const HGMParams& p);
  /// Records p's learnables on the tape as leaves (or constants).
  static HGMBinding bind(Tape& tape, const HGMParams& p, bool requires_grad = true);
};

/// Which statistics a batch-norm site normalizes with.
enum class NormMode { Batch, Running };

struct HGMContext {
  const HGMParams& params;
  const HGMBinding& binding;
  NormMode mode = NormMode::Batch;
  /// Filled with batch statistics per site when batch norm runs in Batch mode.
  std::array<std::optional<ops::BatchStats>, kConvSiteCount>* batch_stats = nullptr;
};

struct Transformed {
  Var a_t;
  Var b_t;
};

Transformed transform(const Var& a, const Var& b, const HGMContext& ctx);
/// Returns S; the squeezed B (N x L) is written to *b_sqz when requested.
Var region_correlation(const Var& a_t, const Var& b_t, const HGMContext& ctx, Var* b_sqz = nullptr);
Var channel_correlation(const Var& a_t, const Var& b_t, const HGMContext& ctx);

struct Refined {
  Var a_out;
  Var a_out_prime;
  Var b_out;
};
Refined refine(const Var& b, const Var& a_t, const Var& s, const Var& cc, const HGMContext& ctx);

struct HGMTrace {
  Var a_t, b_t, b_sqz, s, cc, a_out, a_out_prime, b_out;
};
HGMTrace hgm_forward(const Var& a, const Var& b, const HGMContext& ctx);

/// Untracked evaluation of every intermediate.
struct HGMTensors {
  Tensor a_t, b_t, b_sqz, s, cc, a_out, a_out_prime, b_out;
};
HGMTensors hgm_evaluate(const FeaturePair& pair, const HGMParams& p, NormMode mode = NormMode::Batch);
Tensor hgm_forward(const FeaturePair& pair, const HGMParams& p, NormMode mode = NormMode::Batch);

/// Blends batch statistics into the running statistics with p.bn_momentum.
void update_running_stats(HGMParams& p, const std::array<std::optional<ops::BatchStats>, kConvSiteCount>& stats);

}  // namespace hgsg
