// SPDX-License-Identifier: Apache-2.0
#include "commands.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "hgsg/error.hpp"
#include "hgsg/hgfl.hpp"

namespace hgsg::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class MissingFile : public Error {
 public:
  explicit MissingFile(const fs::path& path) : Error("missing file: " + path.string()) {}
};

void require_file(const fs::path& path, const char* flag) {
  if (path.empty()) throw ParameterError(std::string(flag) + " is required");
  if (!fs::is_regular_file(path)) throw MissingFile(path);
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFile(path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what(), 0);
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParameterError("cannot write " + path.string());
  out << text;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// Maps library errors onto the documented exit codes.
template <class F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const MissingFile& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  } catch (const EmbeddingError& e) {
    err << "error: " << e.what() << "\n";
    err << "labels without embeddings:\n";
    for (const auto& l : e.labels()) err << "  " << l << "\n";
    return kEmbeddingError;
  } catch (const ParseError& e) {
    err << "error: " << e.what();
    if (e.line() > 0) err << " (line " << e.line() << ")";
    err << "\n";
    return kInputError;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return kIdMismatch;
  } catch (const TrainingError& e) {
    err << "error: " << e.what() << " (step " << e.step() << ")\n";
    return kDivergence;
  } catch (const ValidationError& e) {
    err << "error: invalid input: " << e.what() << "\n";
    return kInputError;
  } catch (const LabelError& e) {
    err << "error: invalid input: " << e.what() << "\n";
    return kInputError;
  } catch (const json::exception& e) {
    err << "error: malformed input: " << e.what() << "\n";
    return kInputError;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kParameterError;
  }
}

std::string lexicon_text(const PredicateLexicon& lex) {
  std::string s = "[\n";
  const json j = lex;
  for (std::size_t i = 0; i < j.size(); ++i) s += "  " + j[i].dump() + (i + 1 < j.size() ? ",\n" : "\n");
  return s + "]\n";
}

}  // namespace

int cmd_hierarchy_build(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    require_file(cfg.lexicon, "--lexicon");
    const auto lexicon = load_lexicon(cfg.lexicon);
    HierarchyMap map;
    if (cfg.method == "auto") {
      require_file(cfg.vectors, "--vectors");
      const auto table = load_word_vectors(cfg.vectors);
      AutoClusterOptions opts;
      opts.k = cfg.k;
      opts.seed = cfg.seed;
      opts.oov = cfg.oov;
      map = build_hierarchy_auto(lexicon, table, opts);
    } else if (cfg.method == "keyword") {
      auto rules = KeywordRuleConfig::defaults();
      if (!cfg.rules.empty()) {
        require_file(cfg.rules, "--rules");
        rules = keyword_rules_from_json(read_json_file(cfg.rules));
      }
      map = build_hierarchy_by_keyword(lexicon, rules);
    } else {
      throw ParameterError("unknown method '" + cfg.method + "' (expected auto or keyword)");
    }
    const fs::path path = cfg.out.empty() ? fs::path("hierarchy.json") : cfg.out;
    std::ostringstream file;
    save_hierarchy(map, file);
    write_text(path, file.str());

    if (cfg.json) {
      json clusters = json::array();
      for (std::size_t c = 0; c < map.coarse_count(); ++c) {
        json members = json::array();
        for (auto i : map.children(c)) members.push_back(map.fine_labels()[i]);
        clusters.push_back({{"index", c}, {"name", map.coarse_names()[c]}, {"size", members.size()},
                            {"members", members}});
      }
      json summary = {{"method", cfg.method}, {"fine", map.fine_count()}, {"coarse", map.coarse_count()},
                      {"output", path.string()}, {"clusters", clusters}};
      if (cfg.method == "auto") {
        summary["k"] = cfg.k;
        summary["seed"] = cfg.seed;
      }
      out << summary.dump(2) << "\n";
    } else {
      out << map.fine_count() << " labels -> " << map.coarse_count() << " parents (" << cfg.method;
      if (cfg.method == "auto") out << ", k=" << cfg.k << ", seed=" << cfg.seed;
      out << "), written to " << path.string() << "\n";
      for (std::size_t c = 0; c < map.coarse_count(); ++c) {
        const auto kids = map.children(c);
        out << "  [" << c << "] " << map.coarse_names()[c] << " (" << kids.size() << "):";
        for (std::size_t i = 0; i < kids.size() && i < 5; ++i) out << (i ? ", " : " ") << map.fine_labels()[kids[i]];
        if (kids.size() > 5) out << ", ...";
        out << "\n";
      }
    }
    return int(kOk);
  });
}

int cmd_lexicon_clean(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    require_file(cfg.lexicon, "--lexicon");
    const auto raw = load_raw_lexicon(cfg.lexicon);
    CleaningRules rules;
    if (!cfg.rules.empty()) {
      require_file(cfg.rules, "--rules");
      rules = cleaning_rules_from_json(read_json_file(cfg.rules));
    }
    const auto lex = clean_labels(raw, rules);
    const auto text = lexicon_text(lex);
    if (cfg.out.empty()) {
      out << text;
    } else {
      write_text(cfg.out, text);
      if (cfg.json)
        out << json{{"input", raw.size()}, {"output", lex.size()}, {"path", cfg.out.string()}}.dump(2) << "\n";
      else
        out << raw.size() << " raw labels -> " << lex.size() << " cleaned labels, written to " << cfg.out.string()
            << "\n";
    }
    return int(kOk);
  });
}

int cmd_eval(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    require_file(cfg.gt, "--gt");
    require_file(cfg.pred, "--pred");
    auto gts = read_ground_truth(cfg.gt);
    auto preds = read_predictions(cfg.pred);
    if (!cfg.hierarchy.empty()) {
      require_file(cfg.hierarchy, "--hierarchy");
      const auto map = load_hierarchy(cfg.hierarchy);
      gts = map_predicates(gts, map);
      preds = map_predicates(preds, map);
    }
    EvalOptions opts;
    opts.ks = cfg.ks;
    opts.tasks = cfg.tasks;
    opts.match = {cfg.iou, cfg.sggen_strict};
    opts.micro = cfg.micro;
    const auto report = evaluate_dataset(gts, preds, opts);
    json j = report;
    j["level"] = cfg.hierarchy.empty() ? "fine" : "coarse";
    if (!cfg.out.empty()) write_text(cfg.out, j.dump(2) + "\n");
    if (cfg.json) {
      out << j.dump(2) << "\n";
    } else {
      out << format_recall_table(report);
      out << "images: " << report.image_count << ", relations: " << report.gt_relation_count
          << ", averaging: " << (report.micro ? "micro" : "per-image") << ", level: " << j["level"].get<std::string>()
          << "\n";
    }
    return int(kOk);
  });
}

int cmd_toy_train(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (cfg.steps < 1) throw ParameterError("--steps must be at least 1");
    if (!(cfg.lr >= 0.0)) throw ParameterError("--lr must be non-negative");
    SyntheticRegionSpec spec;
    spec.regions = cfg.regions;
    spec.channels = cfg.channels;
    spec.pixels = cfg.pixels;
    spec.hierarchy = block_hierarchy(cfg.fine_classes, cfg.coarse_classes);
    spec.separation = cfg.separation;
    spec.noise = cfg.noise;
    spec.seed = cfg.seed;

    HeadsConfig base_cfg;
    base_cfg.channels = cfg.channels;
    base_cfg.coarse_classes = cfg.coarse_classes;
    base_cfg.fine_classes = cfg.fine_classes;
    base_cfg.seed = cfg.seed;
    HeadsConfig hgfl_cfg = base_cfg;
    hgfl_cfg.hgm = cfg.hgm;
    hgfl_cfg.pooling = cfg.pooling;
    hgfl_cfg.batch_norm = cfg.bn;

    struct Variant {
      std::string name;
      HeadsConfig heads;
      HierLossConfig loss;
      TrainingReport report;
    };
    std::vector<Variant> variants{{"baseline", base_cfg, {0.0, 1.0}, {}},
                                  {cfg.hgm ? "hgfl_hgm" : "hgfl", hgfl_cfg, {1.0, 1.0}, {}}};
    for (auto& v : variants) {
      auto heads = make_heads(v.heads);
      v.report = train_toy(spec, heads, {cfg.lr, cfg.steps, v.loss});
    }

    const fs::path dir = cfg.out.empty() ? fs::path("toy_train") : cfg.out;
    fs::create_directories(dir);
    json comparison = {{"seed", cfg.seed},
                       {"steps", cfg.steps},
                       {"lr", cfg.lr},
                       {"spec",
                        {{"regions", spec.regions},
                         {"channels", spec.channels},
                         {"pixels", spec.pixels},
                         {"fine_classes", cfg.fine_classes},
                         {"coarse_classes", cfg.coarse_classes},
                         {"separation", spec.separation},
                         {"noise", spec.noise}}},
                       {"variants", json::array()}};
    for (const auto& v : variants) {
      write_text(dir / (v.name + ".json"), json(v.report).dump(1) + "\n");
      write_text(dir / (v.name + "_loss.csv"), loss_curve_csv(v.report));
      const json full = v.report;
      bool implication = true;
      for (const auto& r : v.report.history) implication = implication && r.derived_coarse_accuracy >= r.fine_accuracy;
      comparison["variants"].push_back({{"name", v.name},
                                        {"hgm", v.report.hgm},
                                        {"weight_coarse", v.loss.weight_coarse},
                                        {"weight_fine", v.loss.weight_fine},
                                        {"final", full["final"]},
                                        {"derived_covers_fine", implication}});
    }
    write_text(dir / "comparison.json", comparison.dump(2) + "\n");

    if (cfg.json) {
      out << comparison.dump(2) << "\n";
    } else {
      out << "variant     fine_ce    coarse_ce  fine_acc  coarse_acc  derived_acc\n";
      for (const auto& v : variants) {
        const auto& f = v.report.final;
        char line[160];
        std::snprintf(line, sizeof line, "%-10s %9s %11s %9s %11s %12s\n", v.name.c_str(),
                      fixed(f.fine_loss, 5).c_str(), fixed(f.coarse_loss, 5).c_str(), fixed(f.fine_accuracy, 4).c_str(),
                      fixed(f.coarse_accuracy, 4).c_str(), fixed(f.derived_coarse_accuracy, 4).c_str());
        out << line;
      }
      out << "reports written to " << dir.string() << "\n";
    }
    return int(kOk);
  });
}

int run(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  if (cfg.command == "hierarchy build") return cmd_hierarchy_build(cfg, out, err);
  if (cfg.command == "lexicon clean") return cmd_lexicon_clean(cfg, out, err);
  if (cfg.command == "eval") return cmd_eval(cfg, out, err);
  if (cfg.command == "toy-train") return cmd_toy_train(cfg, out, err);
  if (cfg.command == "selftest") return cmd_selftest(cfg, out, err);
  err << "error: unknown command '" << cfg.command << "'\n";
  return kParameterError;
}

}  // namespace hgsg::cli
