// SPDX-License-Identifier: Apache-2.0
#include "hgsg/sgeval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include <omp.h>

namespace hgsg {

void BBox::validate() const {
  if (!std::isfinite(x1) || !std::isfinite(y1) || !std::isfinite(x2) || !std::isfinite(y2) || !(x2 > x1) ||
      !(y2 > y1)) {
    std::ostringstream os;
    os << "degenerate box [" << x1 << ", " << y1 << ", " << x2 << ", " << y2 << "]";
    throw ValidationError(os.str());
  }
}

double iou(const BBox& a, const BBox& b) {
  a.validate();
  b.validate();
  const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (w <= 0.0 || h <= 0.0) return 0.0;
  const double inter = w * h;
  return inter / (a.area() + b.area() - inter);
}

BBox union_box(const BBox& a, const BBox& b) {
  a.validate();
  b.validate();
  return {std::min(a.x1, b.x1), std::min(a.y1, b.y1), std::max(a.x2, b.x2), std::max(a.y2, b.y2)};
}

void GroundTruthGraph::validate() const {
  for (const auto& o : objects) o.box.validate();
  for (const auto& r : relations) {
    if (r.subject >= objects.size() || r.object >= objects.size())
      throw ValidationError("image " + image_id + ": relation refers to a missing object");
    if (r.subject == r.object) throw ValidationError("image " + image_id + ": relation from an object to itself");
  }
}

const char* to_string(Task task) {
  switch (task) {
    case Task::PredDet: return "PredDet";
    case Task::PhrDet: return "PhrDet";
    case Task::SGGen: return "SGGen";
  }
  return "?";
}

Task task_from_string(const std::string& name) {
  std::string lower;
  for (char c : name) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (lower == "preddet") return Task::PredDet;
  if (lower == "phrdet") return Task::PhrDet;
  if (lower == "sggen" || lower == "sgdet") return Task::SGGen;
  throw ParameterError("unknown task '" + name + "' (expected PredDet, PhrDet or SGGen)");
}

bool match_triplet(const PredictionTriplet& pred, const GroundTruthGraph& gt, const Relation& rel, Task task,
                   const MatchOptions& options) {
  const auto& s = gt.objects.at(rel.subject);
  const auto& o = gt.objects.at(rel.object);
  if (pred.subject.label != s.label || pred.object.label != o.label || pred.predicate != rel.predicate) return false;
  switch (task) {
    case Task::PredDet:
      return true;
    case Task::PhrDet:
      return iou(union_box(pred.subject.box, pred.object.box), union_box(s.box, o.box)) >= options.iou_threshold;
    case Task::SGGen: {
      const double si = iou(pred.subject.box, s.box), oi = iou(pred.object.box, o.box);
      if (options.sggen_strict) return si > options.iou_threshold && oi > options.iou_threshold;
      return si >= options.iou_threshold && oi >= options.iou_threshold;
    }
  }
  throw ParameterError("unknown task");
}

RecallCount recall_at_k(const GroundTruthGraph& gt, std::span<const PredictionTriplet> preds, std::size_t k, Task task,
                        const MatchOptions& options) {
  if (k < 1) throw ParameterError("recall_at_k: k must be at least 1");
  RecallCount out{0, gt.relations.size()};
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return preds[a].score > preds[b].score; });
  order.resize(std::min(k, order.size()));
  std::vector<bool> taken(gt.relations.size(), false);
  for (auto p : order)
    for (std::size_t r = 0; r < gt.relations.size(); ++r)
      if (!taken[r] && match_triplet(preds[p], gt, gt.relations[r], task, options)) {
        taken[r] = true;
        ++out.hits;
        break;
      }
  return out;
}

RecallReport evaluate_dataset(std::span<const GroundTruthGraph> gts, std::span<const ImagePredictions> preds,
                              const EvalOptions& options) {
  std::unordered_map<std::string, std::size_t> gt_index;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    gts[i].validate();
    if (!gt_index.emplace(gts[i].image_id, i).second)
      throw DataError("ground truth lists image '" + gts[i].image_id + "' twice");
  }
  std::vector<std::vector<PredictionTriplet>> per_image(gts.size());
  for (const auto& p : preds) {
    auto it = gt_index.find(p.image_id);
    if (it == gt_index.end()) throw DataError("prediction for unknown image '" + p.image_id + "'");
    auto& dst = per_image[it->second];
    dst.insert(dst.end(), p.triplets.begin(), p.triplets.end());
  }
  for (std::size_t k : options.ks)
    if (k < 1) throw ParameterError("recall K must be at least 1");

  std::vector<std::size_t> included;
  for (std::size_t i = 0; i < gts.size(); ++i)
    if (!gts[i].relations.empty()) included.push_back(i);

  RecallReport report;
  report.micro = options.micro;
  report.image_count = included.size();
  for (auto i : included) report.gt_relation_count += gts[i].relations.size();

  const std::size_t nk = options.ks.size(), nt = options.tasks.size();
  // hits[image][task][k]; each image is independent, the sums below run in image order.
  std::vector<std::size_t> hits(included.size() * nt * nk, 0);
  std::exception_ptr failure;
  const auto count = static_cast<std::int64_t>(included.size());
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t ii = 0; ii < count; ++ii) {
    try {
      const auto img = included[static_cast<std::size_t>(ii)];
      for (std::size_t t = 0; t < nt; ++t)
        for (std::size_t kk = 0; kk < nk; ++kk)
          hits[(static_cast<std::size_t>(ii) * nt + t) * nk + kk] =
              recall_at_k(gts[img], per_image[img], options.ks[kk], options.tasks[t], options.match).hits;
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  for (std::size_t t = 0; t < nt; ++t)
    for (std::size_t kk = 0; kk < nk; ++kk) {
      double value = 0.0;
      if (!included.empty()) {
        if (options.micro) {
          std::size_t total = 0;
          for (std::size_t i = 0; i < included.size(); ++i) total += hits[(i * nt + t) * nk + kk];
          value = static_cast<double>(total) / static_cast<double>(report.gt_relation_count);
        } else {
          double acc = 0.0;
          for (std::size_t i = 0; i < included.size(); ++i)
            acc += static_cast<double>(hits[(i * nt + t) * nk + kk]) /
                   static_cast<double>(gts[included[i]].relations.size());
          value = acc / static_cast<double>(included.size());
        }
      }
      report.recall[options.tasks[t]][options.ks[kk]] = value;
    }
  return report;
}

std::vector<GroundTruthGraph> map_predicates(std::span<const GroundTruthGraph> gts, const HierarchyMap& map) {
  std::vector<GroundTruthGraph> out(gts.begin(), gts.end());
  for (auto& g : out)
    for (auto& r : g.relations) {
      if (r.predicate < 0) throw LabelError("negative predicate id in image " + g.image_id, 0);
      r.predicate = static_cast<std::int64_t>(map.coarse_of(static_cast<std::size_t>(r.predicate)));
    }
  return out;
}

std::vector<ImagePredictions> map_predicates(std::span<const ImagePredictions> preds, const HierarchyMap& map) {
  std::vector<ImagePredictions> out(preds.begin(), preds.end());
  for (auto& p : out)
    for (auto& t : p.triplets) {
      if (t.predicate < 0) throw LabelError("negative predicate id in image " + p.image_id, 0);
      t.predicate = static_cast<std::int64_t>(map.coarse_of(static_cast<std::size_t>(t.predicate)));
    }
  return out;
}

namespace {

BBox box_from_json(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 4) throw ValidationError("bbox must have four coordinates");
  BBox b{v[0], v[1], v[2], v[3]};
  b.validate();
  return b;
}

nlohmann::json box_to_json(const BBox& b) { return nlohmann::json::array({b.x1, b.y1, b.x2, b.y2}); }

std::string image_id_from_json(const nlohmann::json& j) {
  const auto& id = j.at("image_id");
  return id.is_string() ? id.get<std::string>() : id.dump();
}

template <class Parse>
auto read_lines(std::istream& in, Parse parse) {
  std::vector<decltype(parse(nlohmann::json{}))> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what(), line_no);
    } catch (const ValidationError& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what(), line_no);
    }
  }
  return out;
}

}  // namespace

std::vector<GroundTruthGraph> read_ground_truth(std::istream& in) {
  return read_lines(in, [](const nlohmann::json& j) {
    GroundTruthGraph g;
    g.image_id = image_id_from_json(j);
    for (const auto& o : j.at("objects")) g.objects.push_back({o.at("label").get<std::int64_t>(), box_from_json(o.at("bbox"))});
    for (const auto& r : j.at("relations"))
      g.relations.push_back(
          {r.at("subj").get<std::size_t>(), r.at("obj").get<std::size_t>(), r.at("predicate").get<std::int64_t>()});
    g.validate();
    return g;
  });
}

std::vector<ImagePredictions> read_predictions(std::istream& in) {
  return read_lines(in, [](const nlohmann::json& j) {
    ImagePredictions p;
    p.image_id = image_id_from_json(j);
    for (const auto& t : j.at("triplets")) {
      PredictionTriplet tr;
      tr.subject = {t.at("subj_label").get<std::int64_t>(), box_from_json(t.at("subj_bbox"))};
      tr.object = {t.at("obj_label").get<std::int64_t>(), box_from_json(t.at("obj_bbox"))};
      tr.predicate = t.at("predicate").get<std::int64_t>();
      tr.score = t.at("score").get<double>();
      if (!std::isfinite(tr.score)) throw ValidationError("prediction score is not finite");
      p.triplets.push_back(tr);
    }
    return p;
  });
}

namespace {

template <class T, class Reader>
std::vector<T> read_path(const std::filesystem::path& path, Reader reader) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string(), 0);
  try {
    return reader(in);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.line());
  }
}

}  // namespace

std::vector<GroundTruthGraph> read_ground_truth(const std::filesystem::path& path) {
  return read_path<GroundTruthGraph>(path, [](std::istream& in) { return read_ground_truth(in); });
}

std::vector<ImagePredictions> read_predictions(const std::filesystem::path& path) {
  return read_path<ImagePredictions>(path, [](std::istream& in) { return read_predictions(in); });
}

void write_ground_truth(std::ostream& out, std::span<const GroundTruthGraph> gts) {
  for (const auto& g : gts) {
    nlohmann::json j = nlohmann::json::object();
    j["image_id"] = g.image_id;
    auto& objs = j["objects"] = nlohmann::json::array();
    for (const auto& o : g.objects) objs.push_back({{"label", o.label}, {"bbox", box_to_json(o.box)}});
    auto& rels = j["relations"] = nlohmann::json::array();
    for (const auto& r : g.relations) rels.push_back({{"subj", r.subject}, {"obj", r.object}, {"predicate", r.predicate}});
    out << j.dump() << '\n';
  }
}

void write_predictions(std::ostream& out, std::span<const ImagePredictions> preds) {
  for (const auto& p : preds) {
    nlohmann::json j = nlohmann::json::object();
    j["image_id"] = p.image_id;
    auto& ts = j["triplets"] = nlohmann::json::array();
    for (const auto& t : p.triplets)
      ts.push_back({{"subj_label", t.subject.label},
                    {"subj_bbox", box_to_json(t.subject.box)},
                    {"obj_label", t.object.label},
                    {"obj_bbox", box_to_json(t.object.box)},
                    {"predicate", t.predicate},
                    {"score", t.score}});
    out << j.dump() << '\n';
  }
}

void to_json(nlohmann::json& j, const RecallReport& r) {
  j = nlohmann::json::object();
  j["images"] = r.image_count;
  j["gt_relations"] = r.gt_relation_count;
  j["averaging"] = r.micro ? "micro" : "per-image";
  auto& rec = j["recall"] = nlohmann::json::object();
  for (const auto& [task, byk] : r.recall) {
    auto& t = rec[to_string(task)] = nlohmann::json::object();
    for (const auto& [k, v] : byk) t["R@" + std::to_string(k)] = v;
  }
}

std::string format_recall_table(const RecallReport& r) {
  std::ostringstream os;
  std::set<std::size_t> ks;
  for (const auto& [task, byk] : r.recall)
    for (const auto& [k, v] : byk) ks.insert(k);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-8s", "Task");
  os << buf;
  for (auto k : ks) {
    std::snprintf(buf, sizeof buf, " %8s", ("R@" + std::to_string(k)).c_str());
    os << buf;
  }
  os << '\n';
  for (const auto& [task, byk] : r.recall) {
    std::snprintf(buf, sizeof buf, "%-8s", to_string(task));
    os << buf;
    for (auto k : ks) {
      auto it = byk.find(k);
      if (it == byk.end())
        std::snprintf(buf, sizeof buf, " %8s", "-");
      else
        std::snprintf(buf, sizeof buf, " %8.2f", 100.0 * it->second);
      os << buf;
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace hgsg
