// SPDX-License-Identifier: Apache-2.0
#include "oracle.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>

namespace hgsg::oracle {

namespace {

double relu(double x) { return x > 0.0 ? x : 0.0; }

const double* raw(const HGMParams& p, HGMWeight w) { return p[w].data().data(); }

}  // namespace

HGMLoopResult hgm_loops(const FeaturePair& pair, const HGMParams& p) {
  if (p.batch_norm) throw std::invalid_argument("hgm_loops does not model batch norm");
  const std::size_t N = pair.a.dim(0), C = pair.a.dim(1), L = pair.a.dim(2);
  const std::size_t C1 = p.dims.c1, C2 = p.dims.c2;
  const double* A = pair.a.data().data();
  const double* B = pair.b.data().data();
  const double* Wta = raw(p, HGMWeight::TransformAWeight);
  const double* bta = raw(p, HGMWeight::TransformABias);
  const double* Wtb = raw(p, HGMWeight::TransformBWeight);
  const double* btb = raw(p, HGMWeight::TransformBBias);
  const double* Ws = raw(p, HGMWeight::SqueezeWeight);
  const double* bs = raw(p, HGMWeight::SqueezeBias);
  const double* Wc = raw(p, HGMWeight::ChannelReduceWeight);
  const double* bc = raw(p, HGMWeight::ChannelReduceBias);
  const double* Wac = raw(p, HGMWeight::ProjectChannelWeight);
  const double* bac = raw(p, HGMWeight::ProjectChannelBias);
  const double* Wbs = raw(p, HGMWeight::ProjectRegionWeight);
  const double* bbs = raw(p, HGMWeight::ProjectRegionBias);

  HGMLoopResult r;
  r.a_t.assign(N * C1 * L, 0.0);
  r.b_t.assign(N * C2 * L, 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t l = 0; l < L; ++l) {
      for (std::size_t o = 0; o < C1; ++o) {
        double s = bta[o];
        for (std::size_t c = 0; c < C; ++c) s += Wta[o * C + c] * A[(n * C + c) * L + l];
        r.a_t[(n * C1 + o) * L + l] = relu(s);
      }
      for (std::size_t o = 0; o < C2; ++o) {
        double s = btb[o];
        for (std::size_t c = 0; c < C; ++c) s += Wtb[o * C + c] * B[(n * C + c) * L + l];
        r.b_t[(n * C2 + o) * L + l] = relu(s);
      }
    }

  r.b_sqz.assign(N * L, 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t l = 0; l < L; ++l) {
      double s = bs[0];
      for (std::size_t c = 0; c < C2; ++c) s += Ws[c] * r.b_t[(n * C2 + c) * L + l];
      r.b_sqz[n * L + l] = relu(s);
    }

  // Region-wise: for region i and channel c, correlate with every region m, then pool over m.
  r.s.assign(N * C1, 0.0);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t c = 0; c < C1; ++c) {
      double best = -std::numeric_limits<double>::infinity(), total = 0.0;
      for (std::size_t m = 0; m < N; ++m) {
        double v = 0.0;
        for (std::size_t l = 0; l < L; ++l) v += r.a_t[(i * C1 + c) * L + l] * r.b_sqz[m * L + l];
        best = std::max(best, v);
        total += v;
      }
      r.s[i * C1 + c] = p.pooling == PoolMode::Max ? best : total / static_cast<double>(N);
    }

  // Channel-wise: per region j, C2 x C1 correlation collapsed over C2 by the weight vector.
  r.cc.assign(N * C1, 0.0);
  for (std::size_t j = 0; j < N; ++j)
    for (std::size_t c1 = 0; c1 < C1; ++c1) {
      double s = 0.0;
      for (std::size_t c2 = 0; c2 < C2; ++c2) {
        double corr = 0.0;
        for (std::size_t l = 0; l < L; ++l) corr += r.b_t[(j * C2 + c2) * L + l] * r.a_t[(j * C1 + c1) * L + l];
        s += Wc[c2] * corr;
      }
      r.cc[j * C1 + c1] = relu(s + bc[0]);
    }

  r.a_out.assign(N * C1 * L, 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t o = 0; o < C1; ++o) {
        double s = bac[o];
        for (std::size_t c = 0; c < C1; ++c) {
          const double at = r.a_t[(n * C1 + c) * L + l];
          s += Wac[o * C1 + c] * (at + at * r.cc[n * C1 + c]);
        }
        r.a_out[(n * C1 + o) * L + l] = relu(s);
      }

  r.a_out_prime.assign(N * C * L, 0.0);
  r.b_out.assign(N * C * L, 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t o = 0; o < C; ++o) {
        double s = bbs[o];
        for (std::size_t c = 0; c < C1; ++c) {
          const double ao = r.a_out[(n * C1 + c) * L + l];
          s += Wbs[o * C1 + c] * (ao + ao * r.s[n * C1 + c]);
        }
        const auto idx = (n * C + o) * L + l;
        r.a_out_prime[idx] = relu(s);
        r.b_out[idx] = B[idx] + r.a_out_prime[idx];
      }
  return r;
}

std::vector<double> matmul_loops(const std::vector<double>& a, const std::vector<double>& b, std::size_t m,
                                 std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
  return c;
}

double iou_by_cells(int ax1, int ay1, int ax2, int ay2, int bx1, int by1, int bx2, int by2) {
  long inter = 0, uni = 0;
  const int lo_x = std::min(ax1, bx1), hi_x = std::max(ax2, bx2);
  const int lo_y = std::min(ay1, by1), hi_y = std::max(ay2, by2);
  for (int x = lo_x; x < hi_x; ++x)
    for (int y = lo_y; y < hi_y; ++y) {
      const bool in_a = x >= ax1 && x < ax2 && y >= ay1 && y < ay2;
      const bool in_b = x >= bx1 && x < bx2 && y >= by1 && y < by2;
      inter += in_a && in_b;
      uni += in_a || in_b;
    }
  return static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

double box_iou(const BBox& a, const BBox& b) {
  const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ix * iy;
  const double uni = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
  return inter / uni;
}

BBox enclosing(const BBox& a, const BBox& b) {
  return {std::min(a.x1, b.x1), std::min(a.y1, b.y1), std::max(a.x2, b.x2), std::max(a.y2, b.y2)};
}

bool satisfies(const PredictionTriplet& p, const GroundTruthGraph& gt, const Relation& r, Task task, double thr) {
  const auto& s = gt.objects[r.subject];
  const auto& o = gt.objects[r.object];
  const bool labels = p.subject.label == s.label && p.object.label == o.label && p.predicate == r.predicate;
  if (!labels) return false;
  if (task == Task::PredDet) return true;
  if (task == Task::PhrDet) return box_iou(enclosing(p.subject.box, p.object.box), enclosing(s.box, o.box)) >= thr;
  return box_iou(p.subject.box, s.box) >= thr && box_iou(p.object.box, o.box) >= thr;
}

std::vector<std::size_t> top_k(const std::vector<PredictionTriplet>& preds, std::size_t k) {
  // Selection by repeated scan: highest score, lowest index first.
  std::vector<std::size_t> chosen;
  std::vector<bool> used(preds.size(), false);
  while (chosen.size() < std::min(k, preds.size())) {
    std::size_t best = preds.size();
    for (std::size_t i = 0; i < preds.size(); ++i)
      if (!used[i] && (best == preds.size() || preds[i].score > preds[best].score)) best = i;
    used[best] = true;
    chosen.push_back(best);
  }
  return chosen;
}

}  // namespace

std::size_t exhaustive_hits(const GroundTruthGraph& gt, const std::vector<PredictionTriplet>& preds, std::size_t k,
                            Task task, double thr) {
  const auto ranked = top_k(preds, k);
  const std::size_t R = gt.relations.size();
  // Key per prediction: 0 = unmatched, otherwise R - relation index (higher is preferred).
  std::vector<std::size_t> key(ranked.size(), 0), best_key;
  std::vector<bool> taken(R, false);
  std::size_t best_hits = 0;
  std::function<void(std::size_t)> visit = [&](std::size_t pos) {
    if (pos == ranked.size()) {
      if (best_key.empty() || key > best_key) {
        best_key = key;
        best_hits = static_cast<std::size_t>(std::count_if(key.begin(), key.end(), [](std::size_t v) { return v > 0; }));
      }
      return;
    }
    key[pos] = 0;
    visit(pos + 1);
    for (std::size_t r = 0; r < R; ++r)
      if (!taken[r] && satisfies(preds[ranked[pos]], gt, gt.relations[r], task, thr)) {
        taken[r] = true;
        key[pos] = R - r;
        visit(pos + 1);
        taken[r] = false;
        key[pos] = 0;
      }
  };
  visit(0);
  return best_hits;
}

std::size_t maximum_matching(const GroundTruthGraph& gt, const std::vector<PredictionTriplet>& preds, std::size_t k,
                             Task task, double thr) {
  const auto ranked = top_k(preds, k);
  const std::size_t R = gt.relations.size();
  std::vector<bool> taken(R, false);
  std::size_t best = 0;
  std::function<void(std::size_t, std::size_t)> visit = [&](std::size_t pos, std::size_t hits) {
    best = std::max(best, hits);
    if (pos == ranked.size()) return;
    visit(pos + 1, hits);
    for (std::size_t r = 0; r < R; ++r)
      if (!taken[r] && satisfies(preds[ranked[pos]], gt, gt.relations[r], task, thr)) {
        taken[r] = true;
        visit(pos + 1, hits + 1);
        taken[r] = false;
      }
  };
  visit(0, 0);
  return best;
}

RandomScene random_scene(std::mt19937_64& rng, std::size_t max_objects, std::size_t max_relations,
                         std::size_t max_predictions, const std::string& image_id) {
  auto uni = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  RandomScene scene;
  scene.gt.image_id = image_id;
  const auto n_obj = static_cast<std::size_t>(uni(2, static_cast<int>(max_objects)));
  for (std::size_t i = 0; i < n_obj; ++i) {
    const int x = uni(0, 20), y = uni(0, 20);
    scene.gt.objects.push_back({uni(0, 2), BBox{double(x), double(y), double(x + uni(2, 8)), double(y + uni(2, 8))}});
  }
  const auto n_rel = static_cast<std::size_t>(uni(0, static_cast<int>(max_relations)));
  for (std::size_t r = 0; r < n_rel; ++r) {
    const auto s = static_cast<std::size_t>(uni(0, static_cast<int>(n_obj) - 1));
    auto o = static_cast<std::size_t>(uni(0, static_cast<int>(n_obj) - 2));
    if (o >= s) ++o;
    scene.gt.relations.push_back({s, o, uni(0, 2)});
  }
  auto jitter = [&](const BBox& b) {
    const double dx = uni(-2, 2), dy = uni(-2, 2), dw = uni(-1, 1);
    BBox out{b.x1 + dx, b.y1 + dy, b.x2 + dx + dw, b.y2 + dy};
    if (out.x2 <= out.x1) out.x2 = out.x1 + 1;
    return out;
  };
  const auto n_pred = static_cast<std::size_t>(uni(0, static_cast<int>(max_predictions)));
  for (std::size_t p = 0; p < n_pred; ++p) {
    PredictionTriplet t;
    if (!scene.gt.relations.empty() && uni(0, 3) > 0) {
      const auto& r = scene.gt.relations[static_cast<std::size_t>(uni(0, static_cast<int>(n_rel) - 1))];
      const auto& s = scene.gt.objects[r.subject];
      const auto& o = scene.gt.objects[r.object];
      t.subject = {uni(0, 4) == 0 ? uni(0, 2) : s.label, uni(0, 1) ? jitter(s.box) : s.box};
      t.object = {uni(0, 4) == 0 ? uni(0, 2) : o.label, uni(0, 1) ? jitter(o.box) : o.box};
      t.predicate = uni(0, 4) == 0 ? uni(0, 2) : r.predicate;
    } else {
      const auto& s = scene.gt.objects[static_cast<std::size_t>(uni(0, static_cast<int>(n_obj) - 1))];
      const auto& o = scene.gt.objects[static_cast<std::size_t>(uni(0, static_cast<int>(n_obj) - 1))];
      t.subject = {uni(0, 2), jitter(s.box)};
      t.object = {uni(0, 2), jitter(o.box)};
      t.predicate = uni(0, 2);
    }
    t.score = uni(0, 4) * 0.25;
    scene.preds.push_back(t);
  }
  return scene;
}

double best_partition(const std::vector<std::vector<double>>& points, std::size_t k, std::vector<std::size_t>* labels) {
  const std::size_t n = points.size(), dim = points.at(0).size();
  std::vector<std::size_t> cur(n, 0), best_labels;
  double best = std::numeric_limits<double>::infinity();
  while (true) {
    std::vector<std::size_t> count(k, 0);
    for (auto c : cur) ++count[c];
    if (std::all_of(count.begin(), count.end(), [](std::size_t c) { return c > 0; })) {
      double sse = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        std::vector<double> mean(dim, 0.0);
        for (std::size_t i = 0; i < n; ++i)
          if (cur[i] == c)
            for (std::size_t t = 0; t < dim; ++t) mean[t] += points[i][t] / static_cast<double>(count[c]);
        for (std::size_t i = 0; i < n; ++i)
          if (cur[i] == c)
            for (std::size_t t = 0; t < dim; ++t) sse += (points[i][t] - mean[t]) * (points[i][t] - mean[t]);
      }
      if (sse < best - 1e-12) {
        best = sse;
        best_labels = cur;
      }
    }
    std::size_t pos = 0;
    while (pos < n && ++cur[pos] == k) cur[pos++] = 0;
    if (pos == n) break;
  }
  if (labels) *labels = canonical_labels(best_labels);
  return best;
}

std::vector<std::size_t> canonical_labels(const std::vector<std::size_t>& labels) {
  std::vector<std::size_t> map, out;
  std::vector<std::size_t> seen;
  for (auto l : labels) {
    auto it = std::find(seen.begin(), seen.end(), l);
    if (it == seen.end()) {
      seen.push_back(l);
      out.push_back(seen.size() - 1);
    } else {
      out.push_back(static_cast<std::size_t>(it - seen.begin()));
    }
  }
  return out;
}

}  // namespace hgsg::oracle
