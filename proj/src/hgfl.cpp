// SPDX-License-Identifier: Apache-2.0
#include "hgsg/hgfl.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "hgsg/error.hpp"

namespace hgsg {

namespace {

Tensor normal_tensor(Shape shape, double sd, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> data(shape_size(shape));
  for (auto& v : data) v = sd * normal(rng);
  return Tensor(std::move(shape), std::move(data));
}

Var branch_features(const Var& x, const std::array<Var, kHeadParamCount>& p) {
  return relu(conv1x1(x, p[0], p[1]));
}

Var classify(const Var& features, const std::array<Var, kHeadParamCount>& p) {
  const auto n = features.shape()[0], c = features.shape()[1];
  Var pooled = pool_axis(features, 2, PoolMode::Mean);
  Var logits = conv1x1(reshape(pooled, {n, c, 1}), p[2], p[3]);
  return reshape(logits, {n, p[2].shape()[0]});
}

void require_input(const Tensor& x, std::size_t channels) {
  if (x.rank() != 3 || x.dim(1) != channels)
    throw DimensionError("branch input must be N x " + std::to_string(channels) + " x L, got " +
                         shape_string(x.shape()));
}

}  // namespace

BranchHead BranchHead::random(std::size_t channels, std::size_t classes, std::uint64_t seed) {
  if (channels == 0 || classes == 0) throw DimensionError("branch head needs positive channels and classes");
  std::mt19937_64 rng(seed);
  BranchHead h;
  h.params[0] = normal_tensor({channels, channels}, std::sqrt(2.0 / static_cast<double>(channels)), rng);
  h.params[1] = normal_tensor({channels}, 0.1, rng);
  h.params[2] = normal_tensor({classes, channels}, std::sqrt(1.0 / static_cast<double>(channels)), rng);
  h.params[3] = Tensor::zeros({classes});
  return h;
}

void BranchHead::validate() const {
  const auto c = params[0].rank() == 2 ? params[0].dim(0) : 0;
  const auto k = params[2].rank() == 2 ? params[2].dim(0) : 0;
  if (c == 0 || params[0].shape() != Shape{c, c} || params[1].shape() != Shape{c} ||
      params[2].shape() != Shape{k, c} || params[3].shape() != Shape{k})
    throw DimensionError("branch head parameters have inconsistent shapes");
}

std::vector<Tensor> HierarchicalHeads::learnables() const {
  std::vector<Tensor> out(coarse.params.begin(), coarse.params.end());
  out.insert(out.end(), fine.params.begin(), fine.params.end());
  if (hgm) {
    auto h = hgm->learnables();
    out.insert(out.end(), h.begin(), h.end());
  }
  return out;
}

std::vector<std::string> HierarchicalHeads::learnable_names() const {
  static constexpr std::array<const char*, kHeadParamCount> names = {"conv.weight", "conv.bias", "classifier.weight",
                                                                     "classifier.bias"};
  std::vector<std::string> out;
  for (const char* n : names) out.push_back(std::string("coarse.") + n);
  for (const char* n : names) out.push_back(std::string("fine.") + n);
  if (hgm)
    for (auto& n : hgm->learnable_names()) out.push_back("hgm." + n);
  return out;
}

void HierarchicalHeads::set_learnables(std::span<const Tensor> values) {
  const std::size_t expected = 2 * kHeadParamCount + (hgm ? hgm->learnables().size() : 0);
  if (values.size() != expected)
    throw ContractError("heads expect " + std::to_string(expected) + " tensors, got " + std::to_string(values.size()));
  for (std::size_t i = 0; i < kHeadParamCount; ++i) {
    coarse.params[i] = values[i];
    fine.params[i] = values[kHeadParamCount + i];
  }
  if (hgm) hgm->set_learnables(values.subspan(2 * kHeadParamCount));
  validate();
}

void HierarchicalHeads::validate() const {
  coarse.validate();
  fine.validate();
  if (coarse.channels() != fine.channels()) throw DimensionError("coarse and fine branches differ in channels");
  if (coarse.classes() > fine.classes()) throw DimensionError("coarse head has more classes than the fine head");
  if (hgm) {
    hgm->validate();
    if (hgm->dims.channels != fine.channels()) throw DimensionError("HGM channels differ from the branch channels");
  }
}

HeadsBinding HeadsBinding::from(std::span<const Var> vars, const HierarchicalHeads& heads) {
  const std::size_t hgm_count = heads.hgm ? heads.hgm->learnables().size() : 0;
  if (vars.size() != 2 * kHeadParamCount + hgm_count) throw ContractError("heads binding has the wrong size");
  HeadsBinding b;
  for (std::size_t i = 0; i < kHeadParamCount; ++i) {
    b.coarse[i] = vars[i];
    b.fine[i] = vars[kHeadParamCount + i];
  }
  if (heads.hgm) b.hgm = HGMBinding::from(vars.subspan(2 * kHeadParamCount), *heads.hgm);
  return b;
}

HeadsBinding HeadsBinding::bind(Tape& tape, const HierarchicalHeads& heads, bool requires_grad) {
  std::vector<Var> vars;
  for (auto& t : heads.learnables()) vars.push_back(tape.leaf(t, requires_grad));
  return from(vars, heads);
}

BranchOutputs forward_branches(const Var& x, const HierarchicalHeads& heads, const HeadsBinding& binding,
                               NormMode mode, std::array<std::optional<ops::BatchStats>, kConvSiteCount>* bn_stats) {
  require_input(x.value(), heads.fine.channels());
  BranchOutputs out;
  out.a = branch_features(x, binding.coarse);
  out.b = branch_features(x, binding.fine);
  if (heads.hgm) {
    const HGMContext ctx{*heads.hgm, *binding.hgm, mode, bn_stats};
    out.b = hgm_forward(out.a, out.b, ctx).b_out;
  }
  out.coarse_logits = classify(out.a, binding.coarse);
  out.fine_logits = classify(out.b, binding.fine);
  return out;
}

BranchTensors forward_branches(const Tensor& x, const HierarchicalHeads& heads, NormMode mode) {
  heads.validate();
  Tape tape;
  const auto binding = HeadsBinding::bind(tape, heads, false);
  const auto out = forward_branches(tape.constant(x), heads, binding, mode);
  return {out.a.value(), out.b.value(), out.coarse_logits.value(), out.fine_logits.value()};
}

Tensor predict_fine_only(const Tensor& x, const HierarchicalHeads& heads) {
  if (heads.hgm) throw ConfigError("fine-only inference is unavailable with HGM: it needs the coarse features");
  heads.fine.validate();
  require_input(x, heads.fine.channels());
  Tape tape;
  std::array<Var, kHeadParamCount> fine;
  for (std::size_t i = 0; i < kHeadParamCount; ++i) fine[i] = tape.constant(heads.fine.params[i]);
  return classify(branch_features(tape.constant(x), fine), fine).value();
}

std::vector<std::size_t> derive_coarse_targets(std::span<const std::size_t> fine_targets, const HierarchyMap& map) {
  std::vector<std::size_t> out;
  out.reserve(fine_targets.size());
  for (auto t : fine_targets) out.push_back(map.coarse_of(t));
  return out;
}

namespace {

void check_widths(const Shape& coarse, const Shape& fine, const HierarchyMap& map) {
  if (coarse.size() != 2 || fine.size() != 2 || coarse[1] != map.coarse_count() || fine[1] != map.fine_count())
    throw DimensionError("dual_loss: logits " + shape_string(coarse) + " / " + shape_string(fine) +
                         " do not match a hierarchy of " + std::to_string(map.fine_count()) + " fine and " +
                         std::to_string(map.coarse_count()) + " coarse classes");
}

void check_weights(const HierLossConfig& cfg) {
  if (!(cfg.weight_coarse >= 0.0) || !(cfg.weight_fine >= 0.0))
    throw ParameterError("dual_loss weights must be non-negative");
}

}  // namespace

Var dual_loss(const Var& coarse_logits, const Var& fine_logits, std::span<const std::size_t> fine_targets,
              const HierarchyMap& map, const HierLossConfig& cfg) {
  check_weights(cfg);
  check_widths(coarse_logits.shape(), fine_logits.shape(), map);
  const auto coarse_targets = derive_coarse_targets(fine_targets, map);
  return add(scale(cross_entropy(fine_logits, fine_targets), cfg.weight_fine),
             scale(cross_entropy(coarse_logits, coarse_targets), cfg.weight_coarse));
}

double dual_loss(const Tensor& coarse_logits, const Tensor& fine_logits, std::span<const std::size_t> fine_targets,
                 const HierarchyMap& map, const HierLossConfig& cfg) {
  check_weights(cfg);
  check_widths(coarse_logits.shape(), fine_logits.shape(), map);
  const auto coarse_targets = derive_coarse_targets(fine_targets, map);
  return cfg.weight_fine * ops::cross_entropy(fine_logits, fine_targets).item() +
         cfg.weight_coarse * ops::cross_entropy(coarse_logits, coarse_targets).item();
}

HierarchyMap block_hierarchy(std::size_t fine_classes, std::size_t parents) {
  if (parents == 0 || parents > fine_classes) throw ParameterError("block hierarchy needs 1 <= parents <= fine classes");
  std::vector<std::string> fine, coarse;
  std::vector<std::size_t> parent;
  for (std::size_t p = 0; p < parents; ++p) coarse.push_back("parent" + std::to_string(p));
  for (std::size_t k = 0; k < fine_classes; ++k) {
    fine.push_back("class" + std::to_string(k));
    parent.push_back(k * parents / fine_classes);
  }
  return HierarchyMap(std::move(fine), std::move(coarse), std::move(parent));
}

SyntheticDataset make_synthetic(const SyntheticRegionSpec& spec) {
  const auto k = spec.fine_classes();
  if (spec.regions == 0 || spec.channels == 0 || spec.pixels == 0 || k == 0)
    throw ParameterError("synthetic spec needs positive regions, channels, pixels and classes");
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t pattern = spec.channels * spec.pixels;
  std::vector<double> parent_mean(spec.hierarchy.coarse_count() * pattern), child(k * pattern);
  for (auto& v : parent_mean) v = normal(rng);
  for (auto& v : child) v = normal(rng);

  SyntheticDataset ds;
  std::vector<double> x(spec.regions * pattern);
  for (std::size_t n = 0; n < spec.regions; ++n) {
    const std::size_t cls = n % k;
    const std::size_t parent = spec.hierarchy.coarse_of(cls);
    ds.fine_targets.push_back(cls);
    for (std::size_t i = 0; i < pattern; ++i)
      x[n * pattern + i] = spec.separation * (parent_mean[parent * pattern + i] + 0.5 * child[cls * pattern + i]) +
                           spec.noise * normal(rng);
  }
  ds.features = Tensor({spec.regions, spec.channels, spec.pixels}, std::move(x));
  return ds;
}

namespace {

StepRecord evaluate_step(std::size_t step, const Tensor& coarse_logits, const Tensor& fine_logits,
                         std::span<const std::size_t> fine_targets, std::span<const std::size_t> coarse_targets,
                         const HierarchyMap& map) {
  StepRecord r;
  r.step = step;
  r.coarse_loss = ops::cross_entropy(coarse_logits, coarse_targets).item();
  r.fine_loss = ops::cross_entropy(fine_logits, fine_targets).item();
  const auto fine_pred = ops::argmax_rows(fine_logits);
  const auto coarse_pred = ops::argmax_rows(coarse_logits);
  std::size_t fine_ok = 0, coarse_ok = 0, derived_ok = 0;
  for (std::size_t i = 0; i < fine_targets.size(); ++i) {
    fine_ok += fine_pred[i] == fine_targets[i];
    coarse_ok += coarse_pred[i] == coarse_targets[i];
    derived_ok += map.coarse_of(fine_pred[i]) == coarse_targets[i];
  }
  const double n = static_cast<double>(fine_targets.size());
  r.fine_accuracy = static_cast<double>(fine_ok) / n;
  r.coarse_accuracy = static_cast<double>(coarse_ok) / n;
  r.derived_coarse_accuracy = static_cast<double>(derived_ok) / n;
  return r;
}

}  // namespace

TrainingReport train_toy(const SyntheticRegionSpec& spec, HierarchicalHeads& heads, const TrainOptions& options) {
  if (!(options.lr >= 0.0)) throw ParameterError("learning rate must be non-negative");
  if (options.steps < 1) throw ParameterError("training needs at least one step");
  heads.validate();
  if (heads.fine.classes() != spec.hierarchy.fine_count() || heads.coarse.classes() != spec.hierarchy.coarse_count())
    throw DimensionError("head class counts do not match the hierarchy");
  if (heads.fine.channels() != spec.channels) throw DimensionError("head channels do not match the synthetic spec");

  const auto data = make_synthetic(spec);
  const auto coarse_targets = derive_coarse_targets(data.fine_targets, spec.hierarchy);

  TrainingReport report;
  report.seed = spec.seed;
  report.steps = options.steps;
  report.lr = options.lr;
  report.loss = options.loss;
  report.hgm = heads.hgm.has_value();

  for (std::size_t step = 0; step <= options.steps; ++step) {
    try {
      Tape tape;
      auto params = heads.learnables();
      std::vector<Var> vars;
      for (auto& p : params) vars.push_back(tape.leaf(p));
      const auto binding = HeadsBinding::from(vars, heads);
      std::array<std::optional<ops::BatchStats>, kConvSiteCount> stats;
      const auto out = forward_branches(tape.constant(data.features), heads, binding, NormMode::Batch, &stats);
      const auto rec = evaluate_step(step, out.coarse_logits.value(), out.fine_logits.value(), data.fine_targets,
                                     coarse_targets, spec.hierarchy);
      if (!std::isfinite(rec.coarse_loss) || !std::isfinite(rec.fine_loss))
        throw TrainingError("loss is not finite at step " + std::to_string(step), step);
      if (step == options.steps) {
        report.final = rec;
        break;
      }
      report.history.push_back(rec);

      const Var loss = dual_loss(out.coarse_logits, out.fine_logits, data.fine_targets, spec.hierarchy, options.loss);
      const auto grads = tape.backward(loss);
      for (std::size_t i = 0; i < params.size(); ++i) {
        const Tensor g = grads[vars[i]];
        auto w = params[i].to_vector();
        for (std::size_t j = 0; j < w.size(); ++j) w[j] -= options.lr * g[j];
        params[i] = Tensor(params[i].shape(), std::move(w));
      }
      heads.set_learnables(params);
      if (heads.hgm && heads.hgm->batch_norm) update_running_stats(*heads.hgm, stats);
    } catch (const NumericError& e) {
      throw TrainingError(std::string("training diverged at step ") + std::to_string(step) + ": " + e.what(), step);
    }
  }
  return report;
}

HierarchicalHeads make_heads(const HeadsConfig& cfg) {
  HierarchicalHeads heads;
  heads.coarse = BranchHead::random(cfg.channels, cfg.coarse_classes, cfg.seed * 3 + 1);
  heads.fine = BranchHead::random(cfg.channels, cfg.fine_classes, cfg.seed * 3 + 2);
  if (cfg.hgm) {
    const HGMDims dims = cfg.hgm_dims.channels == 0 ? HGMDims::halved(cfg.channels) : cfg.hgm_dims;
    HGMParams p = HGMParams::random(dims, cfg.seed * 3 + 3, 0.01);
    p.pooling = cfg.pooling;
    p.batch_norm = cfg.batch_norm;
    heads.hgm = std::move(p);
  }
  heads.validate();
  return heads;
}

namespace {

nlohmann::json record_json(const StepRecord& r) {
  return {{"step", r.step},
          {"coarse_loss", r.coarse_loss},
          {"fine_loss", r.fine_loss},
          {"fine_accuracy", r.fine_accuracy},
          {"coarse_accuracy", r.coarse_accuracy},
          {"derived_coarse_accuracy", r.derived_coarse_accuracy}};
}

}  // namespace

void to_json(nlohmann::json& j, const TrainingReport& r) {
  j = nlohmann::json::object();
  j["seed"] = r.seed;
  j["steps"] = r.steps;
  j["lr"] = r.lr;
  j["weight_coarse"] = r.loss.weight_coarse;
  j["weight_fine"] = r.loss.weight_fine;
  j["hgm"] = r.hgm;
  j["final"] = record_json(r.final);
  auto& h = j["history"] = nlohmann::json::array();
  for (const auto& rec : r.history) h.push_back(record_json(rec));
}

std::string loss_curve_csv(const TrainingReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << "step,coarse_loss,fine_loss\n";
  for (const auto& rec : r.history) os << rec.step << ',' << rec.coarse_loss << ',' << rec.fine_loss << '\n';
  os << r.final.step << ',' << r.final.coarse_loss << ',' << r.final.fine_loss << '\n';
  return os.str();
}

}  // namespace hgsg
