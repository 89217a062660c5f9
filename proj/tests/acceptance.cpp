// SPDX-License-Identifier: Apache-2.0
// Acceptance run: one PASS/FAIL line per criterion, exit 1 if any fails.
// Tolerances and time limits are fixed here and not configurable.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "commands.hpp"
#include "hgsg/grad_check.hpp"
#include "hgsg/hgfl.hpp"
#include "hgsg/hgm.hpp"
#include "hgsg/hierarchy.hpp"
#include "hgsg/kmeans.hpp"
#include "hgsg/ops.hpp"
#include "hgsg/sgeval.hpp"
#include "oracle.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace hgsg;
using test::random_tensor;
using test::uniform;

namespace {

const fs::path kFixtures = HGSG_FIXTURE_DIR;

struct Verdict {
  bool pass;
  std::string detail;
};

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

// zero identity: bitwise, 20 configs
Verdict zero_identity() {
  std::mt19937_64 rng(2024);
  for (int i = 0; i < 20; ++i) {
    const auto n = uniform(rng, 1, 4), c = uniform(rng, 1, 8), c1 = uniform(rng, 1, 5), c2 = uniform(rng, 1, 5),
               l = uniform(rng, 1, 8);
    const FeaturePair pair{random_tensor({n, c, l}, rng, -3, 3), random_tensor({n, c, l}, rng, -3, 3)};
    for (auto pool : {PoolMode::Max, PoolMode::Mean}) {
      auto p = HGMParams::zeros({c, c1, c2});
      p.pooling = pool;
      const auto out = hgm_forward(pair, p);
      if (out.shape() != pair.b.shape() || !std::equal(out.data().begin(), out.data().end(), pair.b.data().begin()))
        return {false, "configuration " + std::to_string(i) + " differs from B"};
    }
  }
  return {true, "20 configurations, both poolings, bitwise"};
}

Verdict oracle_equivalence() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(500 + seed);
    // The last instance sits at the size bound.
    const bool corner = seed == 19;
    const std::size_t n = corner ? 4 : uniform(rng, 1, 4), c = corner ? 6 : uniform(rng, 1, 6),
                      c1 = corner ? 4 : uniform(rng, 1, 4), c2 = corner ? 4 : uniform(rng, 1, 4),
                      l = corner ? 8 : uniform(rng, 1, 8);
    auto p = HGMParams::random({c, c1, c2}, 900 + seed);
    p.pooling = seed % 2 ? PoolMode::Mean : PoolMode::Max;
    const FeaturePair pair{random_tensor({n, c, l}, rng), random_tensor({n, c, l}, rng)};
    const auto ref = oracle::hgm_loops(pair, p);
    const auto got = hgm_forward(pair, p);
    for (std::size_t i = 0; i < got.size(); ++i) worst = std::max(worst, std::abs(got[i] - ref.b_out[i]));
  }
  return {worst <= 1e-9, "20 instances, max abs diff " + sci(worst) + " (limit 1e-9)"};
}

Verdict end_to_end_grad() {
  constexpr double kEps = 1e-5, kTol = 1e-4;
  std::mt19937_64 rng(31);
  HeadsConfig hc;
  hc.channels = 4;
  hc.coarse_classes = 2;
  hc.fine_classes = 4;
  hc.hgm = true;
  hc.hgm_dims = {4, 3, 3};
  hc.seed = 8;
  auto heads = make_heads(hc);
  heads.hgm = HGMParams::random({4, 3, 3}, 77);
  const auto x = random_tensor({3, 4, 5}, rng);
  const std::vector<std::size_t> targets{3, 0, 2};
  const auto map = block_hierarchy(4, 2);
  LossFunction f = [&](Tape& tape, std::span<const Var> v) {
    const auto binding = HeadsBinding::from(v, heads);
    const auto out = forward_branches(tape.constant(x), heads, binding);
    return dual_loss(out.coarse_logits, out.fine_logits, targets, map, {});
  };
  const auto r = grad_check(f, heads.learnables(), kEps, kTol, heads.learnable_names());
  std::string detail = std::to_string(r.names.size()) + " tensors, max rel err " + sci(r.worst) + " (limit 1e-4)";
  for (std::size_t i = 0; i < r.names.size(); ++i)
    if (r.max_relative_error[i] > kTol) detail += ", " + r.names[i];
  return {r.pass && r.worst <= kTol, detail};
}

Verdict dual_loss_contract() {
  const auto map = block_hierarchy(275, 30);
  std::mt19937_64 rng(4);
  std::vector<std::size_t> targets;
  for (int i = 0; i < 6; ++i) targets.push_back(uniform(rng, 0, 274));
  const auto cl = random_tensor({6, 30}, rng, -4, 4), fl = random_tensor({6, 275}, rng, -4, 4);
  // Direct softmax formula as the fine-only reference.
  double ref = 0.0;
  for (std::size_t r = 0; r < 6; ++r) {
    double m = -1e300;
    for (std::size_t k = 0; k < 275; ++k) m = std::max(m, fl.at({r, k}));
    double z = 0.0;
    for (std::size_t k = 0; k < 275; ++k) z += std::exp(fl.at({r, k}) - m);
    ref += m + std::log(z) - fl.at({r, targets[r]});
  }
  ref /= 6.0;
  const double e1 = std::abs(dual_loss(cl, fl, targets, map, {0.0, 1.0}) - ref);
  const double e2 =
      std::abs(dual_loss(Tensor::zeros({6, 30}), Tensor::zeros({6, 275}), targets, map, {}) - std::log(275.0 * 30.0));
  return {e1 <= 1e-12 && e2 <= 1e-12, "fine-only err " + sci(e1) + ", uniform 275(30) err " + sci(e2) + " (limit 1e-12)"};
}

Verdict toy_training() {
  SyntheticRegionSpec spec;
  spec.hierarchy = block_hierarchy(12, 4);
  std::string detail;
  bool ok = true;
  for (const bool hgm : {false, true}) {
    HeadsConfig hc;
    hc.hgm = hgm;
    auto heads = make_heads(hc);
    const HierLossConfig loss = hgm ? HierLossConfig{1.0, 1.0} : HierLossConfig{0.0, 1.0};
    // The baseline does not train its coarse head; its coarse CE is not part
    // of the criterion's claim and is reported only.
    const auto r = train_toy(spec, heads, {0.5, 2000, loss});
    bool implication = true;
    for (const auto& s : r.history) implication = implication && s.derived_coarse_accuracy >= s.fine_accuracy;
    implication = implication && r.final.derived_coarse_accuracy >= r.final.fine_accuracy;
    const bool converged = r.final.fine_loss < 0.1 && (!hgm || r.final.coarse_loss < 0.1);
    ok = ok && converged && implication;
    detail += std::string(hgm ? "hgfl_hgm" : "baseline") + " fine " + sci(r.final.fine_loss) + " coarse " +
              sci(r.final.coarse_loss) + (implication ? "" : " IMPLICATION BROKEN") + "; ";
  }
  return {ok, detail + "limit 0.1"};
}

Verdict kmeans_planted() {
  std::size_t checked = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed + 40);
    std::normal_distribution<double> noise(0.0, 0.5);  // separation 10 = 20x noise
    std::vector<std::vector<double>> pts;
    std::vector<std::size_t> truth;
    for (int i = 0; i < 30; ++i) {
      const std::size_t c = (i * 7) % 3 == 0 ? 1 : 0;
      pts.push_back({c * 10.0 + noise(rng), noise(rng), noise(rng)});
      truth.push_back(c);
    }
    const auto r = kmeans(pts, {2, seed});
    for (std::size_t i = 0; i < pts.size(); ++i)
      if ((r.assignment[i] == r.assignment[0]) != (truth[i] == truth[0]))
        return {false, "seed " + std::to_string(seed) + " misassigns point " + std::to_string(i)};
    for (std::size_t i = 1; i < r.sse_history.size(); ++i)
      if (r.sse_history[i] > r.sse_history[i - 1])
        return {false, "seed " + std::to_string(seed) + " SSE rose at iteration " + std::to_string(i)};
    checked += r.sse_history.size();
  }
  return {true, "10 seeds, 100% accuracy, " + std::to_string(checked) + " SSE steps non-increasing"};
}

Verdict hierarchy_totality() {
  const auto lex = load_lexicon(kFixtures / "vg_msdn_lexicon.json");
  const auto table = load_word_vectors(kFixtures / "word_vectors.txt");
  if (lex.size() != 50) return {false, "fixture has " + std::to_string(lex.size()) + " labels"};
  AutoClusterOptions opt;
  opt.k = 8;
  const auto map = build_hierarchy_auto(lex, table, opt);
  std::size_t nonempty = 0;
  for (std::size_t c = 0; c < map.coarse_count(); ++c) nonempty += !map.children(c).empty();
  bool total = map.fine_count() == 50;
  for (std::size_t i = 0; total && i < map.fine_count(); ++i)
    total = map.fine_labels()[i] == lex.entries()[i].label && map.coarse_of(i) < map.coarse_count();
  return {map.coarse_count() == 8 && nonempty == 8 && total,
          std::to_string(map.coarse_count()) + " parents, " + std::to_string(nonempty) + " non-empty, map " +
              (total ? "total" : "NOT total")};
}

Verdict recall_oracle() {
  const std::vector<std::size_t> ks{1, 3, 50, 100};
  EvalOptions options;
  options.ks = ks;
  std::size_t instances = 0;
  for (Task task : kAllTasks) {
    options.tasks = {task};
    std::mt19937_64 rng(static_cast<std::uint64_t>(task) * 1000 + 1);
    for (int i = 0; i < 50; ++i) {
      auto scene = oracle::random_scene(rng, 5, 8, 10, "s" + std::to_string(i));
      if (scene.gt.relations.empty()) scene.gt.relations.push_back({0, 1, 0});
      const std::vector<GroundTruthGraph> gts{scene.gt};
      const std::vector<ImagePredictions> preds{{scene.gt.image_id, scene.preds}};
      const auto report = evaluate_dataset(gts, preds, options);
      double prev = -1.0;
      for (auto k : ks) {
        const double want = static_cast<double>(oracle::exhaustive_hits(scene.gt, scene.preds, k, task, 0.5)) /
                            static_cast<double>(scene.gt.relations.size());
        const double got = report.recall.at(task).at(k);
        if (got != want)
          return {false, std::string(to_string(task)) + " scene " + std::to_string(i) + " k=" + std::to_string(k)};
        if (got < prev) return {false, "recall decreased with K"};
        prev = got;
      }
      ++instances;
    }
  }
  const double e1 = std::abs(iou({0, 0, 4, 3}, {0, 0, 4, 3}) - 1.0);
  const double e2 = std::abs(iou({0, 0, 1, 1}, {2, 2, 3, 3}));
  const double e3 = std::abs(iou({0, 0, 2, 1}, {1, 0, 3, 1}) - 1.0 / 3.0);
  const bool iou_ok = e1 <= 1e-12 && e2 <= 1e-12 && e3 <= 1e-12;
  return {iou_ok, std::to_string(instances) + " scenes exact at K in {1,3,50,100}, monotone; IoU cases err " +
                      sci(std::max({e1, e2, e3}))};
}

struct CliRun {
  int code;
  std::string out;
};

CliRun cli(std::vector<std::string> args) {
  args.insert(args.begin(), "hgsg");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::main(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Concatenates stdout and every file the command wrote.
std::string snapshot(const CliRun& r, const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::string s = std::to_string(r.code) + "\n" + r.out;
  for (const auto& f : files) s += "\n--" + fs::relative(f, dir).string() + "\n" + slurp(f);
  return s;
}

Verdict determinism() {
  const fs::path root = fs::temp_directory_path() / "hgsg_acceptance";
  const std::string lex = (kFixtures / "vg_msdn_lexicon.json").string(), vec = (kFixtures / "word_vectors.txt").string(),
                    gt = (kFixtures / "eval_gt.jsonl").string(), pred = (kFixtures / "eval_pred.jsonl").string();
  using Builder = std::function<std::vector<std::string>(const fs::path&)>;
  const std::vector<std::pair<std::string, Builder>> commands = {
      {"hierarchy build",
       [&](const fs::path& d) {
         return std::vector<std::string>{"hierarchy", "build", "--lexicon", lex, "--vectors", vec, "--k", "8",
                                         "--seed", "5", "--out", (d / "h.json").string()};
       }},
      {"toy-train",
       [&](const fs::path& d) {
         return std::vector<std::string>{"toy-train", "--steps", "150", "--seed", "5", "--out", d.string()};
       }},
      {"eval", [&](const fs::path& d) {
         return std::vector<std::string>{"eval", "--gt", gt, "--pred", pred, "--json", "--out", (d / "r.json").string()};
       }}};
  std::string detail;
  for (const auto& [name, build] : commands) {
    std::vector<std::string> snaps;
    for (int rep = 0; rep < 2; ++rep) {
      // Different directories, so paths are the same only after relativizing.
      const fs::path dir = root / std::to_string(rep);
      fs::remove_all(dir);
      fs::create_directories(dir);
      auto args = build(dir);
      const auto r = cli(args);
      if (r.code != 0) return {false, name + " exited " + std::to_string(r.code)};
      std::string snap = snapshot(r, dir);
      for (std::size_t pos; (pos = snap.find(dir.string())) != std::string::npos;)
        snap.replace(pos, dir.string().size(), "<dir>");
      snaps.push_back(snap);
    }
    if (snaps[0] != snaps[1]) return {false, name + " output differs between runs"};
    detail += name + " (" + std::to_string(snaps[0].size()) + " bytes) ";
  }
  fs::remove_all(root);
  return {true, detail + "identical"};
}

struct Criterion {
  const char* name;
  double seconds;  // limit; 0 = none
  Verdict (*run)();
};

}  // namespace

int main() {
  const Criterion criteria[] = {
      {"hgm_zero_identity", 1.0, zero_identity},
      {"hgm_oracle_equivalence", 5.0, oracle_equivalence},
      {"end_to_end_grad_check", 30.0, end_to_end_grad},
      {"dual_loss_contract", 0.0, dual_loss_contract},
      {"hgfl_toy_training", 60.0, toy_training},
      {"kmeans_planted_partition", 0.0, kmeans_planted},
      {"hierarchy_totality", 0.0, hierarchy_totality},
      {"recall_oracle", 0.0, recall_oracle},
      {"determinism", 0.0, determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v{false, ""};
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = c.seconds <= 0.0 || secs < c.seconds;
    const bool pass = v.pass && in_time;
    failed += !pass;
    std::printf("%s %s: %s [%.3f s%s]\n", pass ? "PASS" : "FAIL", c.name, v.detail.c_str(), secs,
                c.seconds > 0.0 ? (in_time ? ", within limit" : ", OVER LIMIT") : "");
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(std::size(criteria)) - failed, std::size(criteria));
  return failed == 0 ? 0 : 1;
}
