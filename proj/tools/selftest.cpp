// SPDX-License-Identifier: Apache-2.0
// `hgsg selftest`: the invariant suite, runnable from an installed binary.
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>

#include <json.hpp>

#include "commands.hpp"
#include "hgsg/autograd.hpp"
#include "hgsg/error.hpp"
#include "hgsg/grad_check.hpp"
#include "hgsg/hgfl.hpp"
#include "hgsg/hgm.hpp"
#include "hgsg/kernels.hpp"
#include "hgsg/kmeans.hpp"
#include "oracle.hpp"
#include "support.hpp"

namespace hgsg::cli {

namespace {

using test::random_tensor;
using test::uniform;

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

struct Outcome {
  bool pass = true;
  std::string detail;
};

Outcome check_grad() {
  std::mt19937_64 rng(7);
  // Branch heads and every HGM weight group, end to end through the dual loss.
  HeadsConfig hc;
  hc.channels = 4;
  hc.coarse_classes = 2;
  hc.fine_classes = 3;
  hc.hgm = true;
  hc.hgm_dims = {4, 3, 3};
  hc.seed = 1;
  auto heads = make_heads(hc);
  heads.hgm = HGMParams::random({4, 3, 3}, 2);
  const auto x = random_tensor({3, 4, 5}, rng);
  const std::vector<std::size_t> targets{0, 2, 1};
  const auto map = block_hierarchy(3, 2);
  LossFunction model = [&](Tape& tape, std::span<const Var> v) {
    const auto binding = HeadsBinding::from(v, heads);
    const auto out = forward_branches(tape.constant(x), heads, binding);
    return dual_loss(out.coarse_logits, out.fine_logits, targets, map, {});
  };
  const auto params = heads.learnables();
  const auto r1 = grad_check(model, params, 1e-5, 1e-4, heads.learnable_names());

  // Elementwise ops and both batch-norm forms.
  const std::vector<Tensor> small{random_tensor({3, 2, 4}, rng), random_tensor({2}, rng, 0.5, 1.5),
                                  random_tensor({2}, rng)};
  const auto mean = random_tensor({2}, rng), var = random_tensor({2}, rng, 0.5, 2.0);
  const auto probe = random_tensor({3, 2, 4}, rng);
  LossFunction elementwise = [&](Tape& tape, std::span<const Var> v) {
    const auto p = tape.constant(probe);
    const auto bn = batch_norm(v[0], v[1], v[2], 1e-5);
    const auto fixed = batch_norm_fixed(v[0], v[1], v[2], mean, var, 1e-5);
    return sum(mul(add(mul(bn, p), fixed), add(v[0], p)));
  };
  const auto r2 = grad_check(elementwise, small, 1e-5, 1e-4);

  Outcome o;
  o.pass = r1.pass && r2.pass;
  o.detail = "max relative error " + sci(std::max(r1.worst, r2.worst));
  if (!r1.pass)
    for (std::size_t i = 0; i < r1.names.size(); ++i)
      if (r1.max_relative_error[i] > r1.tolerance) o.detail += ", " + r1.names[i];
  return o;
}

Outcome check_zero_identity() {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 20; ++i) {
    const auto n = uniform(rng, 1, 4), c = uniform(rng, 1, 6), l = uniform(rng, 1, 8);
    const FeaturePair pair{random_tensor({n, c, l}, rng), random_tensor({n, c, l}, rng)};
    if (!(hgm_forward(pair, HGMParams::zeros({c, uniform(rng, 1, 4), uniform(rng, 1, 4)})) == pair.b))
      return {false, "instance " + std::to_string(i)};
  }
  return {true, "20 configurations"};
}

Outcome check_loop_oracle() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const auto n = uniform(rng, 1, 4), c = uniform(rng, 1, 6), c1 = uniform(rng, 1, 4), c2 = uniform(rng, 1, 4),
               l = uniform(rng, 1, 8);
    auto p = HGMParams::random({c, c1, c2}, seed + 100);
    p.pooling = seed % 2 ? PoolMode::Mean : PoolMode::Max;
    const FeaturePair pair{random_tensor({n, c, l}, rng), random_tensor({n, c, l}, rng)};
    const auto ref = oracle::hgm_loops(pair, p).b_out;
    const auto got = hgm_forward(pair, p);
    for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(got[i] - ref[i]));
  }
  return {worst <= 1e-9, "max abs diff " + sci(worst)};
}

Outcome check_dual_loss() {
  const auto map = block_hierarchy(275, 30);
  const std::vector<std::size_t> targets{0, 137, 274};
  const double uniform_loss = dual_loss(Tensor::zeros({3, 30}), Tensor::zeros({3, 275}), targets, map, {});
  std::mt19937_64 rng(3);
  const auto cl = random_tensor({3, 30}, rng), fl = random_tensor({3, 275}, rng);
  const double fine_only = dual_loss(cl, fl, targets, map, {0.0, 1.0});
  const double e1 = std::abs(uniform_loss - std::log(275.0) - std::log(30.0));
  const double e2 = std::abs(fine_only - ops::cross_entropy(fl, targets).item());
  return {e1 <= 1e-12 && e2 <= 1e-12, "errors " + sci(e1) + ", " + sci(e2)};
}

Outcome check_kmeans() {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<std::vector<double>> pts;
    for (int i = 0; i < 40; ++i) pts.push_back({(i % 2) * 10.0 + noise(rng), noise(rng)});
    const auto r = kmeans(pts, {2, seed});
    for (std::size_t i = 0; i < pts.size(); ++i)
      if ((r.assignment[i] == r.assignment[0]) != (i % 2 == 0)) return {false, "seed " + std::to_string(seed)};
    for (std::size_t i = 1; i < r.sse_history.size(); ++i)
      if (r.sse_history[i] > r.sse_history[i - 1]) return {false, "SSE increased, seed " + std::to_string(seed)};
  }
  return {true, "10 seeds"};
}

Outcome check_recall() {
  std::mt19937_64 rng(5);
  for (auto task : kAllTasks) {
    std::vector<GroundTruthGraph> gts;
    std::vector<ImagePredictions> preds;
    for (int i = 0; i < 50; ++i) {
      auto s = oracle::random_scene(rng, 5, 8, 10, "img" + std::to_string(i));
      for (std::size_t k : {1u, 3u, 50u})
        if (recall_at_k(s.gt, s.preds, k, task).hits != oracle::exhaustive_hits(s.gt, s.preds, k, task, 0.5))
          return {false, std::string(to_string(task)) + " scene " + std::to_string(i)};
      gts.push_back(s.gt);
      preds.push_back({s.gt.image_id, s.preds});
    }
    const auto rep = evaluate_dataset(gts, preds, {{50, 100}, {task}, {}, false});
    if (rep.recall.at(task).at(100) < rep.recall.at(task).at(50)) return {false, "recall not monotone in K"};
  }
  const BBox a{0, 0, 10, 10};
  const bool boxes = iou(a, a) == 1.0 && iou(a, {20, 20, 30, 30}) == 0.0 &&
                     std::abs(iou(a, {5, 0, 15, 10}) - 1.0 / 3.0) <= 1e-12;
  return {boxes, boxes ? "50 scenes per task" : "IoU reference cases"};
}

Outcome check_kernels() {
  std::mt19937_64 rng(9);
  const std::size_t m = 40, k = 30, n = 50;
  std::vector<double> a(m * k), b(k * n), c1(m * n), c2(m * n);
  std::normal_distribution<double> d;
  for (auto& v : a) v = d(rng);
  for (auto& v : b) v = d(rng);
  kernels::gemm(a, b, c1, m, k, n);
  kernels::serial::gemm(a, b, c2, m, k, n);
  return {c1 == c2, std::to_string(kernels::max_threads()) + " threads"};
}

}  // namespace

int cmd_selftest(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> suite = {
      {"grad_check", check_grad},           {"hgm_zero_identity", check_zero_identity},
      {"hgm_loop_oracle", check_loop_oracle}, {"dual_loss", check_dual_loss},
      {"kmeans_planted", check_kmeans},     {"recall_oracle", check_recall},
      {"kernel_parity", check_kernels},
  };
  if (!cfg.corrupt_backward.empty()) set_backward_fault(cfg.corrupt_backward, 1.5);
  nlohmann::json results = nlohmann::json::array();
  std::vector<std::string> failed;
  for (const auto& [name, fn] : suite) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, e.what()};
    }
    if (!o.pass) failed.push_back(name);
    results.push_back({{"name", name}, {"pass", o.pass}, {"detail", o.detail}});
    if (!cfg.json) out << (o.pass ? "PASS " : "FAIL ") << name << " (" << o.detail << ")\n";
  }
  clear_backward_fault();
  if (cfg.json) out << nlohmann::json{{"pass", failed.empty()}, {"properties", results}}.dump(2) << "\n";
  for (const auto& f : failed) err << "selftest failed: " << f << "\n";
  return failed.empty() ? kOk : kSelftestFailed;
}

}  // namespace hgsg::cli
