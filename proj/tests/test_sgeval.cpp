// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <random>
#include <sstream>

#include "hgsg/error.hpp"
#include "hgsg/sgeval.hpp"
#include "oracle.hpp"

using namespace hgsg;

namespace {

GroundTruthGraph two_relation_scene() {
  GroundTruthGraph g;
  g.image_id = "img";
  g.objects = {{1, {0, 0, 10, 10}}, {2, {20, 0, 30, 10}}, {3, {0, 20, 10, 30}}};
  g.relations = {{0, 1, 5}, {2, 1, 6}};
  return g;
}

PredictionTriplet copy_of(const GroundTruthGraph& g, const Relation& r, double score) {
  return {g.objects[r.subject], g.objects[r.object], r.predicate, score};
}

}  // namespace

TEST_CASE("iou examples and properties") {
  const BBox a{0, 0, 10, 10};
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, {20, 20, 30, 30}) == 0.0);
  CHECK(iou(a, {10, 0, 20, 10}) == 0.0);
  CHECK(std::abs(iou(a, {5, 0, 15, 10}) - 1.0 / 3.0) <= 1e-12);
  CHECK(std::abs(oracle::iou_by_cells(0, 0, 10, 10, 5, 0, 15, 10) - 1.0 / 3.0) <= 1e-12);
  std::mt19937_64 rng(61);
  std::uniform_int_distribution<int> coord(0, 12), ext(1, 6);
  for (int trial = 0; trial < 200; ++trial) {
    const int ax = coord(rng), ay = coord(rng), bx = coord(rng), by = coord(rng);
    const int aw = ext(rng), ah = ext(rng), bw = ext(rng), bh = ext(rng);
    const BBox p{double(ax), double(ay), double(ax + aw), double(ay + ah)};
    const BBox q{double(bx), double(by), double(bx + bw), double(by + bh)};
    const double v = iou(p, q);
    CHECK(v == iou(q, p));
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    CHECK(std::abs(v - oracle::iou_by_cells(ax, ay, ax + aw, ay + ah, bx, by, bx + bw, by + bh)) <= 1e-12);
  }
  CHECK_THROWS_AS(iou(a, {0, 0, 0, 5}), ValidationError);
  CHECK_THROWS_AS(BBox({5, 0, 1, 1}).validate(), ValidationError);
}

TEST_CASE("union_box examples") {
  const BBox a{0, 0, 1, 1}, b{2, 2, 3, 3};
  CHECK(union_box(a, a) == a);
  CHECK(union_box(a, b) == BBox{0, 0, 3, 3});
  CHECK(union_box(a, b) == union_box(b, a));
}

TEST_CASE("match_triplet examples") {
  const auto g = two_relation_scene();
  const auto exact = copy_of(g, g.relations[0], 1.0);
  for (auto t : kAllTasks) CHECK(match_triplet(exact, g, g.relations[0], t));

  // Shift both boxes so each overlaps its ground truth with IoU 0.4 (and so does the union).
  auto shifted = exact;
  const double dy = 10.0 * 0.6 / 1.4;
  shifted.subject.box.y1 += dy;
  shifted.subject.box.y2 += dy;
  shifted.object.box.y1 += dy;
  shifted.object.box.y2 += dy;
  CHECK(std::abs(iou(shifted.subject.box, g.objects[0].box) - 0.4) < 1e-12);
  CHECK(match_triplet(shifted, g, g.relations[0], Task::PredDet));
  CHECK_FALSE(match_triplet(shifted, g, g.relations[0], Task::SGGen));
  CHECK(std::abs(iou(union_box(shifted.subject.box, shifted.object.box),
                     union_box(g.objects[0].box, g.objects[1].box)) - 0.4) < 1e-12);
  CHECK_FALSE(match_triplet(shifted, g, g.relations[0], Task::PhrDet));

  auto wrong = exact;
  wrong.predicate = 9;
  for (auto t : kAllTasks) CHECK_FALSE(match_triplet(wrong, g, g.relations[0], t));

  // IoU exactly at the threshold: inclusive by default, exclusive with the strict flag.
  auto half = exact;
  half.subject.box = {0, 0, 10, 5};
  CHECK(iou(half.subject.box, g.objects[0].box) == 0.5);
  CHECK(match_triplet(half, g, g.relations[0], Task::SGGen));
  CHECK_FALSE(match_triplet(half, g, g.relations[0], Task::SGGen, {0.5, true}));
}

TEST_CASE("recall_at_k examples") {
  const auto g = two_relation_scene();
  const std::vector<PredictionTriplet> perfect{copy_of(g, g.relations[0], 0.9), copy_of(g, g.relations[1], 0.8)};
  for (auto t : kAllTasks) CHECK(recall_at_k(g, perfect, 50, t).hits == 2);

  auto miss = copy_of(g, g.relations[1], 0.8);
  miss.predicate = 0;
  const std::vector<PredictionTriplet> half{copy_of(g, g.relations[0], 0.9), miss};
  const auto r = recall_at_k(g, half, 50, Task::SGGen);
  CHECK(r.hits == 1);
  CHECK(r.gt_count == 2);
  CHECK(oracle::exhaustive_hits(g, half, 50, Task::SGGen, 0.5) == 1);

  auto junk = copy_of(g, g.relations[0], 0.9);
  junk.predicate = 0;
  const std::vector<PredictionTriplet> second{junk, copy_of(g, g.relations[0], 0.5)};
  CHECK(recall_at_k(g, second, 1, Task::PredDet).hits == 0);
  CHECK(recall_at_k(g, second, 2, Task::PredDet).hits == 1);
  CHECK(recall_at_k(g, {}, 50, Task::PredDet).hits == 0);

  // A single prediction matches at most one of two duplicate relations.
  auto dup = g;
  dup.relations.push_back(dup.relations[0]);
  const std::vector<PredictionTriplet> once{copy_of(g, g.relations[0], 0.9)};
  CHECK(recall_at_k(dup, once, 50, Task::PredDet).hits == 1);

  // Equal scores keep input order.
  const std::vector<PredictionTriplet> tied{junk, copy_of(g, g.relations[0], 0.9)};
  CHECK(recall_at_k(g, tied, 1, Task::PredDet).hits == 0);
}

TEST_CASE("recall agrees with the exhaustive oracle and respects task ordering") {
  std::mt19937_64 rng(62);
  for (int scene_no = 0; scene_no < 150; ++scene_no) {
    const auto s = oracle::random_scene(rng, 5, 8, 10, "s" + std::to_string(scene_no));
    for (std::size_t k : {1u, 2u, 3u, 5u, 50u, 100u}) {
      std::array<std::size_t, 3> hits{};
      for (std::size_t t = 0; t < 3; ++t) {
        const auto task = kAllTasks[t];
        hits[t] = recall_at_k(s.gt, s.preds, k, task).hits;
        CHECK(hits[t] == oracle::exhaustive_hits(s.gt, s.preds, k, task, 0.5));
        CHECK(hits[t] <= oracle::maximum_matching(s.gt, s.preds, k, task, 0.5));
        CHECK(hits[t] <= recall_at_k(s.gt, s.preds, k + 1, task).hits);
      }
      CHECK(hits[1] <= hits[0]);
      CHECK(hits[2] <= hits[0]);
      // label-only matching is a pure multiset intersection, where greedy is optimal
      CHECK(hits[0] == oracle::maximum_matching(s.gt, s.preds, k, Task::PredDet, 0.5));
    }
  }
}

TEST_CASE("evaluate_dataset aggregation") {
  const auto g = two_relation_scene();
  auto empty = g;
  empty.image_id = "empty";
  empty.relations.clear();
  auto other = g;
  other.image_id = "other";
  const std::vector<GroundTruthGraph> gts{g, empty, other};
  const std::vector<ImagePredictions> preds{{"img", {copy_of(g, g.relations[0], 0.9)}},
                                            {"other", {copy_of(g, g.relations[0], 0.9), copy_of(g, g.relations[1], 0.1)}}};
  const auto rep = evaluate_dataset(gts, preds);
  CHECK(rep.image_count == 2);
  CHECK(rep.gt_relation_count == 4);
  for (auto t : kAllTasks) {
    CHECK(rep.recall.at(t).at(50) == 0.75);
    CHECK(rep.recall.at(t).at(100) == 0.75);
  }

  // per-image mean differs from pooled recall when images have different sizes
  auto big = g;
  big.image_id = "big";
  big.relations = {{0, 1, 5}, {0, 2, 5}, {1, 2, 5}, {2, 0, 5}};
  const std::vector<GroundTruthGraph> gts2{g, big};
  const std::vector<ImagePredictions> p2{{"img", {copy_of(g, g.relations[0], 0.9)}}};
  EvalOptions opts;
  CHECK(evaluate_dataset(gts2, p2, opts).recall.at(Task::PredDet).at(50) == 0.25);
  opts.micro = true;
  CHECK(std::abs(evaluate_dataset(gts2, p2, opts).recall.at(Task::PredDet).at(50) - 1.0 / 6.0) < 1e-15);

  CHECK(evaluate_dataset(gts, std::vector<ImagePredictions>{}).recall.at(Task::SGGen).at(100) == 0.0);
  const std::vector<ImagePredictions> unknown{{"nope", {}}};
  CHECK_THROWS_AS(evaluate_dataset(gts, unknown), DataError);
  opts.ks = {0};
  CHECK_THROWS_AS(evaluate_dataset(gts, preds, opts), ParameterError);
}

TEST_CASE("evaluate_dataset is invariant to image order") {
  std::mt19937_64 rng(63);
  std::vector<GroundTruthGraph> gts;
  std::vector<ImagePredictions> preds;
  for (int i = 0; i < 30; ++i) {
    auto s = oracle::random_scene(rng, 5, 8, 60, "img" + std::to_string(i));
    gts.push_back(s.gt);
    preds.push_back({s.gt.image_id, s.preds});
  }
  const auto base = evaluate_dataset(gts, preds);
  for (std::size_t t = 0; t < 3; ++t)
    CHECK(base.recall.at(kAllTasks[t]).at(100) >= base.recall.at(kAllTasks[t]).at(50));
  std::shuffle(gts.begin(), gts.end(), rng);
  std::shuffle(preds.begin(), preds.end(), rng);
  const auto shuffled = evaluate_dataset(gts, preds, {});
  for (auto t : kAllTasks)
    for (std::size_t k : {50u, 100u}) CHECK(std::abs(shuffled.recall.at(t).at(k) - base.recall.at(t).at(k)) < 1e-12);
}

TEST_CASE("jsonl round trip and parse errors") {
  const auto g = two_relation_scene();
  const std::vector<GroundTruthGraph> gts{g};
  std::stringstream buf;
  write_ground_truth(buf, gts);
  const auto back = read_ground_truth(buf);
  REQUIRE(back.size() == 1);
  CHECK(back[0].objects[2].box == g.objects[2].box);
  CHECK(back[0].relations[1].predicate == 6);

  const std::vector<ImagePredictions> preds{{"img", {copy_of(g, g.relations[0], 0.25)}}};
  std::stringstream pbuf;
  write_predictions(pbuf, preds);
  const auto pback = read_predictions(pbuf);
  CHECK(pback[0].triplets[0].score == 0.25);
  CHECK(pback[0].triplets[0].object.box == g.objects[1].box);

  std::istringstream bad(
      "{\"image_id\":\"a\",\"objects\":[],\"relations\":[]}\n\n{\"image_id\":\"b\",\"objects\":[}\n");
  try {
    read_ground_truth(bad);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  std::istringstream bad_rel(
      "{\"image_id\":\"a\",\"objects\":[{\"label\":1,\"bbox\":[0,0,1,1]}],\"relations\":[{\"subj\":0,\"obj\":0,\"predicate\":1}]}\n");
  CHECK_THROWS(read_ground_truth(bad_rel));
}

TEST_CASE("coarse remapping and the recall table") {
  const auto g = two_relation_scene();
  std::vector<std::string> fine;
  for (int i = 0; i < 7; ++i) fine.push_back("p" + std::to_string(i));
  const HierarchyMap map(fine, {"low", "high"}, {0, 0, 0, 0, 1, 1, 1});
  auto wrong = copy_of(g, g.relations[0], 0.9);
  wrong.predicate = 4;  // same parent as 5
  const std::vector<GroundTruthGraph> gts{g};
  const std::vector<ImagePredictions> preds{{"img", {wrong}}};
  CHECK(evaluate_dataset(gts, preds).recall.at(Task::PredDet).at(50) == 0.0);
  const auto cg = map_predicates(gts, map);
  const auto cp = map_predicates(preds, map);
  CHECK(cg[0].relations[0].predicate == 1);
  const auto rep = evaluate_dataset(cg, cp);
  CHECK(rep.recall.at(Task::PredDet).at(50) == 0.5);

  const auto table = format_recall_table(rep);
  CHECK(table.find("PredDet") < table.find("PhrDet"));
  CHECK(table.find("PhrDet") < table.find("SGGen"));
  CHECK(table.find("50.00") != std::string::npos);
  CHECK(table.find("R@100") != std::string::npos);
  const nlohmann::json j = rep;
  CHECK(j.at("recall").at("PredDet").at("R@50") == 0.5);
  CHECK(task_from_string("sggen") == Task::SGGen);
  CHECK_THROWS_AS(task_from_string("detect"), ParameterError);
}
