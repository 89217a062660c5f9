// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <random>

#include "hgsg/error.hpp"
#include "hgsg/grad_check.hpp"
#include "hgsg/hgfl.hpp"
#include "support.hpp"

using namespace hgsg;
using hgsg::test::random_tensor;

namespace {

HierarchicalHeads heads_for(std::size_t c, std::size_t kc, std::size_t kf, bool hgm, std::uint64_t seed) {
  HeadsConfig cfg;
  cfg.channels = c;
  cfg.coarse_classes = kc;
  cfg.fine_classes = kf;
  cfg.hgm = hgm;
  cfg.seed = seed;
  return make_heads(cfg);
}

double direct_ce(const Tensor& logits, std::span<const std::size_t> targets) {
  const auto n = logits.dim(0), k = logits.dim(1);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(logits.at({i, j}));
    total += std::log(z) - logits.at({i, targets[i]});
  }
  return total / static_cast<double>(n);
}

}  // namespace

TEST_CASE("forward_branches shapes and branch independence") {
  std::mt19937_64 rng(51);
  const auto x = random_tensor({4, 6, 9}, rng);
  auto heads = heads_for(6, 3, 7, false, 1);
  const auto out = forward_branches(x, heads);
  CHECK(out.coarse_logits.shape() == Shape{4, 3});
  CHECK(out.fine_logits.shape() == Shape{4, 7});
  CHECK(out.a.shape() == Shape{4, 6, 9});

  auto perturbed = heads;
  perturbed.coarse = BranchHead::random(6, 3, 99);
  CHECK(forward_branches(x, perturbed).fine_logits == out.fine_logits);
  CHECK(predict_fine_only(x, heads) == out.fine_logits);
  CHECK(predict_fine_only(x, perturbed) == out.fine_logits);

  auto with_zero_hgm = heads;
  with_zero_hgm.hgm = HGMParams::zeros(HGMDims::halved(6));
  CHECK(forward_branches(x, with_zero_hgm).fine_logits == out.fine_logits);
  CHECK_THROWS_AS(predict_fine_only(x, with_zero_hgm), ConfigError);
  CHECK_THROWS_AS(forward_branches(random_tensor({4, 5, 9}, rng), heads), DimensionError);
}

TEST_CASE("derive_coarse_targets examples") {
  const std::vector<std::size_t> fine{0, 3, 2, 1};
  CHECK(derive_coarse_targets(fine, HierarchyMap::identity({"a", "b", "c", "d"})) == fine);
  const HierarchyMap one({"a", "b", "c", "d"}, {"all"}, {0, 0, 0, 0});
  CHECK(derive_coarse_targets(fine, one) == std::vector<std::size_t>(4, 0));
  const auto vgh = block_hierarchy(275, 30);
  std::vector<std::size_t> all(275);
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  for (auto c : derive_coarse_targets(all, vgh)) CHECK(c < 30);
  const std::vector<std::size_t> bad{4};
  CHECK_THROWS_AS(derive_coarse_targets(bad, one), LabelError);
}

TEST_CASE("dual_loss examples") {
  const auto map = block_hierarchy(275, 30);
  const std::vector<std::size_t> targets{0, 100, 274};
  const double uniform = dual_loss(Tensor::zeros({3, 30}), Tensor::zeros({3, 275}), targets, map, {});
  CHECK(std::abs(uniform - (std::log(275.0) + std::log(30.0))) <= 1e-12);

  std::mt19937_64 rng(52);
  const auto cl = random_tensor({3, 30}, rng, -3, 3), fl = random_tensor({3, 275}, rng, -3, 3);
  const double fine_only = dual_loss(cl, fl, targets, map, {0.0, 1.0});
  CHECK(std::abs(fine_only - ops::cross_entropy(fl, targets).item()) <= 1e-12);

  const auto coarse_targets = derive_coarse_targets(targets, map);
  const double both = dual_loss(cl, fl, targets, map, {1.0, 1.0});
  CHECK(std::abs(both - (direct_ce(fl, targets) + direct_ce(cl, coarse_targets))) <= 1e-12);

  // linear in the coarse weight
  const double t3 = dual_loss(cl, fl, targets, map, {3.0, 1.0});
  CHECK(std::abs((t3 - fine_only) - 3.0 * (both - fine_only)) <= 1e-12);

  Tape tape;
  const auto v = dual_loss(tape.constant(cl), tape.constant(fl), targets, map, {1.0, 1.0});
  CHECK(std::abs(v.value().item() - both) <= 1e-12);
  CHECK_THROWS_AS(dual_loss(cl, cl, targets, map, {}), DimensionError);
  CHECK_THROWS_AS(dual_loss(cl, fl, targets, map, {-1.0, 1.0}), ParameterError);
}

TEST_CASE("fine-branch gradients do not reach the coarse branch without HGM") {
  std::mt19937_64 rng(53);
  const auto x = random_tensor({5, 4, 3}, rng);
  const std::vector<std::size_t> targets{0, 1, 2, 3, 4};
  const auto map = block_hierarchy(5, 2);
  for (bool hgm : {false, true}) {
    const auto heads = heads_for(4, 2, 5, hgm, 2);
    Tape tape;
    const auto binding = HeadsBinding::bind(tape, heads);
    const auto out = forward_branches(tape.constant(x), heads, binding);
    const auto loss = dual_loss(out.coarse_logits, out.fine_logits, targets, map, {0.0, 1.0});
    const auto grads = tape.backward(loss);
    double coarse_grad = 0.0;
    for (const auto& v : binding.coarse)
      for (double g : grads[v].data()) coarse_grad = std::max(coarse_grad, std::abs(g));
    if (hgm)
      CHECK(coarse_grad > 0.0);
    else
      CHECK(coarse_grad == 0.0);
  }
}

TEST_CASE("heads with HGM pass the gradient check end to end") {
  std::mt19937_64 rng(54);
  HeadsConfig cfg;
  cfg.channels = 4;
  cfg.coarse_classes = 2;
  cfg.fine_classes = 3;
  cfg.hgm = true;
  cfg.hgm_dims = {4, 3, 3};
  cfg.seed = 3;
  auto heads = make_heads(cfg);
  heads.hgm = HGMParams::random({4, 3, 3}, 17);
  const auto x = random_tensor({3, 4, 5}, rng);
  const std::vector<std::size_t> targets{0, 2, 1};
  const auto map = block_hierarchy(3, 2);
  LossFunction f = [&](Tape& tape, std::span<const Var> v) {
    const auto binding = HeadsBinding::from(v, heads);
    const auto out = forward_branches(tape.constant(x), heads, binding);
    return dual_loss(out.coarse_logits, out.fine_logits, targets, map, {});
  };
  const auto params = heads.learnables();
  const auto report = grad_check(f, params, 1e-5, 1e-4, heads.learnable_names());
  for (std::size_t i = 0; i < report.names.size(); ++i) {
    CAPTURE(report.names[i]);
    CHECK(report.max_relative_error[i] <= 1e-4);
  }
}

TEST_CASE("synthetic data encodes the hierarchy") {
  SyntheticRegionSpec spec;
  spec.hierarchy = block_hierarchy(12, 4);
  const auto ds = make_synthetic(spec);
  CHECK(ds.features.shape() == Shape{96, 8, 4});
  CHECK(ds.fine_targets[13] == 1);
  CHECK(make_synthetic(spec).features == ds.features);
  spec.seed = 1;
  CHECK_FALSE(make_synthetic(spec).features == ds.features);
  CHECK(block_hierarchy(12, 4).fine_to_coarse()[11] == 3);
  CHECK_THROWS_AS(block_hierarchy(3, 4), ParameterError);
}

TEST_CASE("zero learning rate keeps the loss constant") {
  SyntheticRegionSpec spec;
  spec.hierarchy = block_hierarchy(12, 4);
  auto heads = heads_for(8, 4, 12, true, 0);
  const auto before = heads.learnables();
  const auto report = train_toy(spec, heads, {0.0, 5, {}});
  REQUIRE(report.history.size() == 5);
  for (const auto& r : report.history) {
    CHECK(r.fine_loss == report.history[0].fine_loss);
    CHECK(r.coarse_loss == report.history[0].coarse_loss);
  }
  CHECK(report.final.fine_loss == report.history[0].fine_loss);
  CHECK(heads.learnables()[0] == before[0]);
  CHECK_THROWS_AS(train_toy(spec, heads, {0.1, 0, {}}), ParameterError);
}

TEST_CASE("toy training converges deterministically") {
  SyntheticRegionSpec spec;
  spec.hierarchy = block_hierarchy(12, 4);
  for (bool hgm : {false, true}) {
    CAPTURE(hgm);
    auto heads = heads_for(8, 4, 12, hgm, 0);
    auto copy = heads;
    const auto report = train_toy(spec, heads, {});
    CHECK(report.final.fine_loss < 0.1);
    CHECK(report.final.coarse_loss < 0.1);
    for (const auto& r : report.history) CHECK(r.derived_coarse_accuracy >= r.fine_accuracy);
    const auto again = train_toy(spec, copy, {});
    CHECK(nlohmann::json(again).dump() == nlohmann::json(report).dump());
    CHECK(loss_curve_csv(report).rfind("step,coarse_loss,fine_loss\n", 0) == 0);
  }
}

TEST_CASE("divergence is reported with its step") {
  SyntheticRegionSpec spec;
  spec.hierarchy = block_hierarchy(12, 4);
  spec.separation = 1e3;
  auto heads = heads_for(8, 4, 12, false, 0);
  try {
    train_toy(spec, heads, {1e6, 50, {}});
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(e.step() < 50);
  }
}
