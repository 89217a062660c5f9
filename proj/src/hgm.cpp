// SPDX-License-Identifier: Apache-2.0
#include "hgsg/hgm.hpp"

#include <cmath>
#include <random>

#include "hgsg/error.hpp"

namespace hgsg {

namespace {

constexpr std::array<const char*, kHGMWeightCount> kWeightNames = {
    "transform_a.weight",     "transform_a.bias",     "transform_b.weight",    "transform_b.bias",
    "squeeze.weight",         "squeeze.bias",         "channel_reduce.weight", "channel_reduce.bias",
    "project_channel.weight", "project_channel.bias", "project_region.weight", "project_region.bias",
};

constexpr std::array<const char*, kConvSiteCount> kSiteNames = {
    "transform_a", "transform_b", "squeeze", "project_channel", "project_region",
};

constexpr std::array<HGMWeight, kConvSiteCount> kSiteWeight = {
    HGMWeight::TransformAWeight, HGMWeight::TransformBWeight, HGMWeight::SqueezeWeight,
    HGMWeight::ProjectChannelWeight, HGMWeight::ProjectRegionWeight,
};

std::size_t idx(HGMWeight w) { return static_cast<std::size_t>(w); }
std::size_t idx(ConvSite s) { return static_cast<std::size_t>(s); }

BatchNormSite identity_norm(std::size_t channels) {
  return {Tensor::full({channels}, 1.0), Tensor::zeros({channels}), Tensor::zeros({channels}),
          Tensor::full({channels}, 1.0)};
}

}  // namespace

const char* name_of(HGMWeight w) { return kWeightNames[idx(w)]; }
const char* name_of(ConvSite site) { return kSiteNames[idx(site)]; }

HGMDims HGMDims::halved(std::size_t channels) {
  const std::size_t half = std::max<std::size_t>(1, channels / 2);
  return {channels, half, half};
}

Shape HGMParams::expected_shape(HGMWeight w) const {
  const auto c = dims.channels, c1 = dims.c1, c2 = dims.c2;
  switch (w) {
    case HGMWeight::TransformAWeight: return {c1, c};
    case HGMWeight::TransformABias: return {c1};
    case HGMWeight::TransformBWeight: return {c2, c};
    case HGMWeight::TransformBBias: return {c2};
    case HGMWeight::SqueezeWeight: return {1, c2};
    case HGMWeight::SqueezeBias: return {1};
    case HGMWeight::ChannelReduceWeight: return {c2};
    case HGMWeight::ChannelReduceBias: return {1};
    case HGMWeight::ProjectChannelWeight: return {c1, c1};
    case HGMWeight::ProjectChannelBias: return {c1};
    case HGMWeight::ProjectRegionWeight: return {c, c1};
    case HGMWeight::ProjectRegionBias: return {c};
  }
  throw ContractError("unknown HGM weight");
}

std::size_t HGMParams::site_channels(ConvSite site) const {
  return expected_shape(kSiteWeight[idx(site)])[0];
}

HGMParams HGMParams::zeros(HGMDims dims) {
  if (dims.channels == 0 || dims.c1 == 0 || dims.c2 == 0)
    throw DimensionError("HGM dimensions must be positive");
  HGMParams p;
  p.dims = dims;
  for (std::size_t i = 0; i < kHGMWeightCount; ++i)
    p.weights[i] = Tensor::zeros(p.expected_shape(static_cast<HGMWeight>(i)));
  for (std::size_t s = 0; s < kConvSiteCount; ++s) p.bn[s] = identity_norm(p.site_channels(static_cast<ConvSite>(s)));
  return p;
}

HGMParams HGMParams::random(HGMDims dims, std::uint64_t seed, double bias_scale) {
  HGMParams p = zeros(dims);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < kHGMWeightCount; ++i) {
    const Shape shape = p.weights[i].shape();
    const bool is_weight = i % 2 == 0;
    // Weight tensors are [out x in] except the channel reduction, a vector over C2.
    const double fan_in = static_cast<double>(shape.size() == 2 ? shape[1] : shape[0]);
    const double sd = is_weight ? std::sqrt(2.0 / fan_in) : bias_scale;
    std::vector<double> data(shape_size(shape));
    for (auto& v : data) v = sd * normal(rng);
    p.weights[i] = Tensor(shape, std::move(data));
  }
  return p;
}

std::vector<Tensor> HGMParams::learnables() const {
  std::vector<Tensor> out(weights.begin(), weights.end());
  if (batch_norm)
    for (const auto& site : bn) {
      out.push_back(site.gamma);
      out.push_back(site.beta);
    }
  return out;
}

std::vector<std::string> HGMParams::learnable_names() const {
  std::vector<std::string> out(kWeightNames.begin(), kWeightNames.end());
  if (batch_norm)
    for (const char* site : kSiteNames) {
      out.push_back(std::string(site) + ".bn.gamma");
      out.push_back(std::string(site) + ".bn.beta");
    }
  return out;
}

void HGMParams::set_learnables(std::span<const Tensor> values) {
  const std::size_t expected = kHGMWeightCount + (batch_norm ? 2 * kConvSiteCount : 0);
  if (values.size() != expected)
    throw ContractError("set_learnables: expected " + std::to_string(expected) + " tensors, got " +
                        std::to_string(values.size()));
  for (std::size_t i = 0; i < kHGMWeightCount; ++i) weights[i] = values[i];
  if (batch_norm)
    for (std::size_t s = 0; s < kConvSiteCount; ++s) {
      bn[s].gamma = values[kHGMWeightCount + 2 * s];
      bn[s].beta = values[kHGMWeightCount + 2 * s + 1];
    }
  validate();
}

void HGMParams::validate() const {
  if (dims.channels == 0 || dims.c1 == 0 || dims.c2 == 0) throw DimensionError("HGM dimensions must be positive");
  for (std::size_t i = 0; i < kHGMWeightCount; ++i) {
    const auto w = static_cast<HGMWeight>(i);
    if (weights[i].shape() != expected_shape(w))
      throw DimensionError(std::string("HGM ") + name_of(w) + " has shape " + shape_string(weights[i].shape()) +
                           ", expected " + shape_string(expected_shape(w)));
  }
  for (std::size_t s = 0; s < kConvSiteCount; ++s) {
    const Shape want{site_channels(static_cast<ConvSite>(s))};
    const auto& site = bn[s];
    if (site.gamma.shape() != want || site.beta.shape() != want || site.running_mean.shape() != want ||
        site.running_variance.shape() != want)
      throw DimensionError(std::string("HGM batch norm at ") + kSiteNames[s] + " does not have " +
                           std::to_string(want[0]) + " channels");
  }
}

void to_json(nlohmann::json& j, const HGMParams& p) {
  j = nlohmann::json::object();
  j["dims"] = {{"channels", p.dims.channels}, {"c1", p.dims.c1}, {"c2", p.dims.c2}};
  j["pooling"] = to_string(p.pooling);
  j["batch_norm"] = p.batch_norm;
  j["bn_momentum"] = p.bn_momentum;
  j["bn_eps"] = p.bn_eps;
  auto& w = j["weights"] = nlohmann::json::object();
  for (std::size_t i = 0; i < kHGMWeightCount; ++i) w[kWeightNames[i]] = p.weights[i];
  auto& sites = j["bn_sites"] = nlohmann::json::object();
  for (std::size_t s = 0; s < kConvSiteCount; ++s)
    sites[kSiteNames[s]] = {{"gamma", p.bn[s].gamma},
                            {"beta", p.bn[s].beta},
                            {"running_mean", p.bn[s].running_mean},
                            {"running_variance", p.bn[s].running_variance}};
}

void from_json(const nlohmann::json& j, HGMParams& p) {
  const auto& d = j.at("dims");
  p = HGMParams::zeros({d.at("channels").get<std::size_t>(), d.at("c1").get<std::size_t>(),
                        d.at("c2").get<std::size_t>()});
  p.pooling = pool_mode_from_string(j.value("pooling", std::string("max")));
  p.batch_norm = j.value("batch_norm", false);
  p.bn_momentum = j.value("bn_momentum", 0.1);
  p.bn_eps = j.value("bn_eps", 1e-5);
  const auto& w = j.at("weights");
  for (std::size_t i = 0; i < kHGMWeightCount; ++i) p.weights[i] = w.at(kWeightNames[i]).get<Tensor>();
  if (j.contains("bn_sites"))
    for (std::size_t s = 0; s < kConvSiteCount; ++s) {
      const auto& site = j["bn_sites"].at(kSiteNames[s]);
      p.bn[s] = {site.at("gamma").get<Tensor>(), site.at("beta").get<Tensor>(),
                 site.at("running_mean").get<Tensor>(), site.at("running_variance").get<Tensor>()};
    }
  p.validate();
}

void FeaturePair::validate() const {
  if (a.rank() != 3 || a.shape() != b.shape())
    throw DimensionError("feature pair must be two N x C x L tensors of equal shape, got " +
                         shape_string(a.shape()) + " and " + shape_string(b.shape()));
}

HGMBinding HGMBinding::from(std::span<const Var> vars, const HGMParams& p) {
  const std::size_t expected = kHGMWeightCount + (p.batch_norm ? 2 * kConvSiteCount : 0);
  if (vars.size() != expected)
    throw ContractError("HGM binding needs " + std::to_string(expected) + " vars, got " + std::to_string(vars.size()));
  HGMBinding b;
  for (std::size_t i = 0; i < kHGMWeightCount; ++i) b.weights[i] = vars[i];
  if (p.batch_norm)
    for (std::size_t s = 0; s < kConvSiteCount; ++s) {
      b.gamma[s] = vars[kHGMWeightCount + 2 * s];
      b.beta[s] = vars[kHGMWeightCount + 2 * s + 1];
    }
  return b;
}

HGMBinding HGMBinding::bind(Tape& tape, const HGMParams& p, bool requires_grad) {
  std::vector<Var> vars;
  for (auto& t : p.learnables()) vars.push_back(tape.leaf(t, requires_grad));
  return from(vars, p);
}

namespace {

void require_features(const Var& x, std::size_t channels, const char* what) {
  if (x.value().rank() != 3 || x.shape()[1] != channels)
    throw DimensionError(std::string("HGM: ") + what + " must be N x " + std::to_string(channels) + " x L, got " +
                         shape_string(x.shape()));
}

Var conv_block(const Var& x, ConvSite site, const HGMContext& ctx) {
  const auto w = kSiteWeight[idx(site)];
  const auto b = static_cast<HGMWeight>(idx(w) + 1);
  Var y = conv1x1(x, ctx.binding[w], ctx.binding[b]);
  if (ctx.params.batch_norm) {
    const auto s = idx(site);
    if (ctx.mode == NormMode::Batch) {
      ops::BatchStats stats;
      y = batch_norm(y, ctx.binding.gamma[s], ctx.binding.beta[s], ctx.params.bn_eps, &stats);
      if (ctx.batch_stats) (*ctx.batch_stats)[s] = std::move(stats);
    } else {
      const auto& site_state = ctx.params.bn[s];
      y = batch_norm_fixed(y, ctx.binding.gamma[s], ctx.binding.beta[s], site_state.running_mean,
                           site_state.running_variance, ctx.params.bn_eps);
    }
  }
  return relu(y);
}

}  // namespace

Transformed transform(const Var& a, const Var& b, const HGMContext& ctx) {
  const auto c = ctx.params.dims.channels;
  require_features(a, c, "A");
  require_features(b, c, "B");
  if (a.shape() != b.shape())
    throw DimensionError("HGM: A " + shape_string(a.shape()) + " and B " + shape_string(b.shape()) + " differ");
  return {conv_block(a, ConvSite::TransformA, ctx), conv_block(b, ConvSite::TransformB, ctx)};
}

Var region_correlation(const Var& a_t, const Var& b_t, const HGMContext& ctx, Var* b_sqz) {
  const auto& d = ctx.params.dims;
  require_features(a_t, d.c1, "A_t");
  require_features(b_t, d.c2, "B_t");
  const auto n = a_t.shape()[0], l = a_t.shape()[2];
  if (b_t.shape()[0] != n || b_t.shape()[2] != l)
    throw DimensionError("HGM: A_t " + shape_string(a_t.shape()) + " and B_t " + shape_string(b_t.shape()) +
                         " disagree on regions or pixels");
  Var squeezed = reshape(conv_block(b_t, ConvSite::Squeeze, ctx), {n, l});
  if (b_sqz) *b_sqz = squeezed;
  // Row (i, c) of the product is A_t[i, c, :] against every region's squeezed B.
  Var full = matmul(reshape(a_t, {n * d.c1, l}), transpose(squeezed));
  return pool_axis(reshape(full, {n, d.c1, n}), 2, ctx.params.pooling);
}

Var channel_correlation(const Var& a_t, const Var& b_t, const HGMContext& ctx) {
  const auto& d = ctx.params.dims;
  require_features(a_t, d.c1, "A_t");
  require_features(b_t, d.c2, "B_t");
  const auto n = a_t.shape()[0];
  if (b_t.shape()[0] != n || b_t.shape()[2] != a_t.shape()[2])
    throw DimensionError("HGM: A_t " + shape_string(a_t.shape()) + " and B_t " + shape_string(b_t.shape()) +
                         " disagree on regions or pixels");
  Var corr = batched_matmul(b_t, transpose(a_t));  // N x C2 x C1
  Var reduced = row_reduce_conv(corr, ctx.binding[HGMWeight::ChannelReduceWeight],
                                ctx.binding[HGMWeight::ChannelReduceBias]);
  return relu(reshape(reduced, {n, d.c1}));
}

Refined refine(const Var& b, const Var& a_t, const Var& s, const Var& cc, const HGMContext& ctx) {
  const auto& d = ctx.params.dims;
  require_features(b, d.channels, "B");
  require_features(a_t, d.c1, "A_t");
  const auto n = a_t.shape()[0];
  if (s.shape() != Shape{n, d.c1} || cc.shape() != Shape{n, d.c1})
    throw DimensionError("HGM: correlations must be " + shape_string({n, d.c1}) + ", got S " +
                         shape_string(s.shape()) + " and C " + shape_string(cc.shape()));
  if (b.shape()[0] != n || b.shape()[2] != a_t.shape()[2])
    throw DimensionError("HGM: B " + shape_string(b.shape()) + " does not match A_t " + shape_string(a_t.shape()));
  Var a_out = conv_block(add(a_t, broadcast_mul_over_pixels(a_t, cc)), ConvSite::ProjectChannel, ctx);
  Var a_out_prime = conv_block(add(a_out, broadcast_mul_over_pixels(a_out, s)), ConvSite::ProjectRegion, ctx);
  return {a_out, a_out_prime, add(b, a_out_prime)};
}

HGMTrace hgm_forward(const Var& a, const Var& b, const HGMContext& ctx) {
  HGMTrace t;
  auto tr = transform(a, b, ctx);
  t.a_t = tr.a_t;
  t.b_t = tr.b_t;
  t.s = region_correlation(t.a_t, t.b_t, ctx, &t.b_sqz);
  t.cc = channel_correlation(t.a_t, t.b_t, ctx);
  auto r = refine(b, t.a_t, t.s, t.cc, ctx);
  t.a_out = r.a_out;
  t.a_out_prime = r.a_out_prime;
  t.b_out = r.b_out;
  return t;
}

HGMTensors hgm_evaluate(const FeaturePair& pair, const HGMParams& p, NormMode mode) {
  pair.validate();
  p.validate();
  Tape tape;
  const auto binding = HGMBinding::bind(tape, p, false);
  const HGMContext ctx{p, binding, mode, nullptr};
  const auto t = hgm_forward(tape.constant(pair.a), tape.constant(pair.b), ctx);
  return {t.a_t.value(), t.b_t.value(), t.b_sqz.value(), t.s.value(), t.cc.value(),
          t.a_out.value(), t.a_out_prime.value(), t.b_out.value()};
}

Tensor hgm_forward(const FeaturePair& pair, const HGMParams& p, NormMode mode) {
  return hgm_evaluate(pair, p, mode).b_out;
}

void update_running_stats(HGMParams& p, const std::array<std::optional<ops::BatchStats>, kConvSiteCount>& stats) {
  for (std::size_t s = 0; s < kConvSiteCount; ++s) {
    if (!stats[s]) continue;
    auto& site = p.bn[s];
    const double m = p.bn_momentum;
    std::vector<double> mean = site.running_mean.to_vector(), var = site.running_variance.to_vector();
    for (std::size_t c = 0; c < mean.size(); ++c) {
      mean[c] = (1.0 - m) * mean[c] + m * stats[s]->mean[c];
      var[c] = (1.0 - m) * var[c] + m * stats[s]->variance[c];
    }
    site.running_mean = Tensor(site.running_mean.shape(), std::move(mean));
    site.running_variance = Tensor(site.running_variance.shape(), std::move(var));
  }
}

}  // namespace hgsg
