// SPDX-License-Identifier: Apache-2.0
#include <CLI11.hpp>

#include "commands.hpp"
#include "hgsg/error.hpp"

namespace hgsg::cli {

namespace {

constexpr const char* kExitCodes =
    "Exit codes: 0 ok, 1 selftest failure, 2 missing file or parse error, 3 embedding failure,\n"
    "4 parameter error, 5 prediction image id not in ground truth, 6 training divergence.";

void add_common(CLI::App& app, RunConfig& cfg) {
  app.add_option("--seed", cfg.seed, "Random seed")->capture_default_str();
  app.add_flag("--json", cfg.json, "Machine-readable JSON on standard output");
}

}  // namespace

int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  std::string pooling = "max", oov = "skip";
  std::vector<std::string> tasks;

  CLI::App app{"Predicate hierarchy, hierarchy guided module and scene-graph recall tools", "hgsg"};
  app.footer(kExitCodes);
  app.require_subcommand(1);

  auto* hierarchy = app.add_subcommand("hierarchy", "Predicate label hierarchies");
  hierarchy->require_subcommand(1);
  auto* build = hierarchy->add_subcommand("build", "Cluster a lexicon into parent classes");
  build->add_option("--lexicon", cfg.lexicon, "Lexicon JSON [{label, count}]")->required();
  build->add_option("--vectors", cfg.vectors, "Word vectors, one `token v1 ... vd` per line");
  build->add_option("--method", cfg.method, "auto (k-means on embeddings) or keyword")
      ->check(CLI::IsMember({"auto", "keyword"}))
      ->capture_default_str();
  build->add_option("--k", cfg.k, "Number of parent classes")->capture_default_str();
  build->add_option("--oov", oov, "Missing tokens: skip, zero or error")->capture_default_str();
  build->add_option("--rules", cfg.rules, "Keyword rule overrides (JSON)");
  build->add_option("--out", cfg.out, "Hierarchy JSON to write")->default_str("hierarchy.json");
  add_common(*build, cfg);

  auto* lexicon = app.add_subcommand("lexicon", "Predicate lexicons");
  lexicon->require_subcommand(1);
  auto* clean = lexicon->add_subcommand("clean", "Normalize, merge, drop and filter raw labels");
  clean->add_option("--lexicon", cfg.lexicon, "Raw lexicon JSON [{label, count}]")->required();
  clean->add_option("--rules", cfg.rules, "Cleaning rules JSON {min_freq, merge, drop}");
  clean->add_option("--out", cfg.out, "Cleaned lexicon to write (default: standard output)");
  clean->add_flag("--json", cfg.json, "Machine-readable JSON summary");

  auto* eval = app.add_subcommand("eval", "Recall@K for PredDet, PhrDet and SGGen");
  eval->add_option("--gt", cfg.gt, "Ground-truth JSON lines")->required();
  eval->add_option("--pred", cfg.pred, "Prediction JSON lines")->required();
  eval->add_option("--hierarchy", cfg.hierarchy, "Map predicate ids to parent classes before matching");
  eval->add_option("--ks", cfg.ks, "Comma-separated K values")->delimiter(',')->capture_default_str();
  eval->add_option("--task", tasks, "Comma-separated tasks (preddet, phrdet, sggen)")->delimiter(',');
  eval->add_flag("--micro", cfg.micro, "Pool hits over the dataset instead of averaging per image");
  eval->add_option("--iou", cfg.iou, "IoU threshold")->capture_default_str();
  eval->add_flag("--sggen-strict", cfg.sggen_strict, "SGGen requires IoU above the threshold");
  eval->add_option("--out", cfg.out, "Also write the JSON report here");
  eval->add_flag("--json", cfg.json, "Machine-readable JSON on standard output");

  auto* toy = app.add_subcommand("toy-train", "Baseline vs hierarchy-guided training on synthetic regions");
  toy->add_option("--lr", cfg.lr, "Learning rate")->capture_default_str();
  toy->add_option("--steps", cfg.steps, "Gradient steps")->capture_default_str();
  toy->add_option("--pooling", pooling, "HGM region pooling: max or mean")->capture_default_str();
  toy->add_flag("--bn", cfg.bn, "Batch norm inside the HGM");
  toy->add_flag("!--no-hgm", cfg.hgm, "Train the hierarchy-guided variant without the HGM");
  toy->add_option("--regions", cfg.regions, "Synthetic regions")->capture_default_str();
  toy->add_option("--channels", cfg.channels, "Feature channels")->capture_default_str();
  toy->add_option("--pixels", cfg.pixels, "Pixels per region")->capture_default_str();
  toy->add_option("--fine-classes", cfg.fine_classes, "Fine classes")->capture_default_str();
  toy->add_option("--coarse-classes", cfg.coarse_classes, "Parent classes")->capture_default_str();
  toy->add_option("--separation", cfg.separation, "Class mean scale")->capture_default_str();
  toy->add_option("--noise", cfg.noise, "Noise standard deviation")->capture_default_str();
  toy->add_option("--out", cfg.out, "Report directory")->default_str("toy_train");
  add_common(*toy, cfg);

  auto* selftest = app.add_subcommand("selftest", "Run the invariant suite");
  selftest->add_flag("--json", cfg.json, "Machine-readable JSON on standard output");
  selftest->add_option("--corrupt-backward", cfg.corrupt_backward, "Scale one op's backward rule (negative control)")
      ->group("");

  try {
    app.parse(argc, argv);
    cfg.pooling = pool_mode_from_string(pooling);
    cfg.oov = oov_policy_from_string(oov);
    if (!tasks.empty()) {
      cfg.tasks.clear();
      for (const auto& t : tasks) cfg.tasks.push_back(task_from_string(t));
    }
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kParameterError;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kParameterError;
  }

  if (*build) cfg.command = "hierarchy build";
  else if (*clean) cfg.command = "lexicon clean";
  else if (*eval) cfg.command = "eval";
  else if (*toy) cfg.command = "toy-train";
  else cfg.command = "selftest";
  return run(cfg, out, err);
}

}  // namespace hgsg::cli
