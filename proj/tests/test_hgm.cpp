// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "hgsg/error.hpp"
#include "hgsg/grad_check.hpp"
#include "hgsg/hgm.hpp"
#include "oracle.hpp"
#include "support.hpp"

using namespace hgsg;
using hgsg::test::random_tensor;
using hgsg::test::uniform;

namespace {

double max_diff(const Tensor& t, const std::vector<double>& ref) {
  REQUIRE(t.size() == ref.size());
  double m = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) m = std::max(m, std::abs(t[i] - ref[i]));
  return m;
}

FeaturePair random_pair(std::mt19937_64& rng, std::size_t n, std::size_t c, std::size_t l) {
  return {random_tensor({n, c, l}, rng), random_tensor({n, c, l}, rng)};
}

bool non_negative(const Tensor& t) {
  for (double v : t.data())
    if (v < 0.0) return false;
  return true;
}

// Runs one stage on constant inputs.
struct Stage {
  Tape tape;
  HGMParams params;
  HGMBinding binding;
  explicit Stage(HGMParams p) : params(std::move(p)), binding(HGMBinding::bind(tape, params, false)) {}
  HGMContext ctx() const { return {params, binding, NormMode::Batch, nullptr}; }
};

}  // namespace

TEST_CASE("transform examples") {
  std::mt19937_64 rng(31);
  const auto pair = random_pair(rng, 3, 4, 5);
  {
    Stage st(HGMParams::zeros({4, 2, 3}));
    const auto t = transform(st.tape.constant(pair.a), st.tape.constant(pair.b), st.ctx());
    CHECK(t.a_t.value() == Tensor::zeros({3, 2, 5}));
    CHECK(t.b_t.value() == Tensor::zeros({3, 3, 5}));
  }
  {
    auto p = HGMParams::zeros({4, 4, 4});
    p[HGMWeight::TransformAWeight] = test::identity(4);
    Stage st(p);
    const auto a = random_tensor({3, 4, 5}, rng, 0.0, 1.0);
    const auto t = transform(st.tape.constant(a), st.tape.constant(a), st.ctx());
    CHECK(t.a_t.value() == a);
  }
  const auto p = HGMParams::random({4, 3, 2}, 7);
  const auto ref = oracle::hgm_loops(pair, p);
  const auto ev = hgm_evaluate(pair, p);
  CHECK(max_diff(ev.a_t, ref.a_t) < 1e-12);
  CHECK(max_diff(ev.b_t, ref.b_t) < 1e-12);
  Stage st(p);
  CHECK_THROWS_AS(transform(st.tape.constant(random_tensor({3, 5, 5}, rng)), st.tape.constant(pair.b), st.ctx()),
                  DimensionError);
}

TEST_CASE("region correlation examples") {
  std::mt19937_64 rng(32);
  {
    // One region: pooling over a size-one axis leaves A_t x B_sqz^T.
    const auto p = HGMParams::random({3, 2, 2}, 1);
    const auto ev = hgm_evaluate(random_pair(rng, 1, 3, 4), p);
    for (std::size_t c = 0; c < 2; ++c) {
      double s = 0.0;
      for (std::size_t l = 0; l < 4; ++l) s += ev.a_t.at({0, c, l}) * ev.b_sqz.at({0, l});
      CHECK(std::abs(ev.s.at({0, c}) - s) < 1e-15);
    }
  }
  {
    Stage st(HGMParams::random({3, 2, 2}, 2, 0.0));
    const auto a_t = st.tape.constant(random_tensor({2, 2, 3}, rng, 0.0, 1.0));
    const auto s = region_correlation(a_t, st.tape.constant(Tensor::zeros({2, 2, 3})), st.ctx());
    CHECK(s.value() == Tensor::zeros({2, 2}));
  }
  for (auto mode : {PoolMode::Max, PoolMode::Mean}) {
    auto p = HGMParams::random({3, 2, 2}, 3);
    p.pooling = mode;
    const auto pair = random_pair(rng, 2, 3, 3);
    const auto ref = oracle::hgm_loops(pair, p);
    const auto ev = hgm_evaluate(pair, p);
    CHECK(max_diff(ev.b_sqz, ref.b_sqz) < 1e-9);
    CHECK(max_diff(ev.s, ref.s) < 1e-9);
  }
}

TEST_CASE("channel correlation examples") {
  std::mt19937_64 rng(33);
  {
    auto p = HGMParams::zeros({3, 2, 3});
    p[HGMWeight::ChannelReduceWeight] = Tensor({3}, {0, 1, 0});
    Stage st(p);
    const auto a_t = random_tensor({2, 2, 4}, rng), b_t = random_tensor({2, 3, 4}, rng);
    const auto cc = channel_correlation(st.tape.constant(a_t), st.tape.constant(b_t), st.ctx()).value();
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t c1 = 0; c1 < 2; ++c1) {
        double v = 0.0;
        for (std::size_t l = 0; l < 4; ++l) v += b_t.at({j, 1, l}) * a_t.at({j, c1, l});
        CHECK(std::abs(cc.at({j, c1}) - std::max(0.0, v)) < 1e-15);
      }
  }
  {
    auto p = HGMParams::random({3, 2, 3}, 4);
    p[HGMWeight::ChannelReduceBias] = Tensor({1}, {0.7});
    Stage st(p);
    const auto cc = channel_correlation(st.tape.constant(Tensor::zeros({2, 2, 4})),
                                        st.tape.constant(random_tensor({2, 3, 4}, rng)), st.ctx());
    CHECK(cc.value() == Tensor::full({2, 2}, 0.7));
  }
  const auto p = HGMParams::random({4, 3, 3}, 5);
  const auto pair = random_pair(rng, 3, 4, 5);
  CHECK(max_diff(hgm_evaluate(pair, p).cc, oracle::hgm_loops(pair, p).cc) < 1e-9);
}

TEST_CASE("refine examples") {
  std::mt19937_64 rng(34);
  {
    auto p = HGMParams::random({3, 2, 2}, 6);
    for (auto w : {HGMWeight::ProjectChannelWeight, HGMWeight::ProjectChannelBias, HGMWeight::ProjectRegionWeight,
                   HGMWeight::ProjectRegionBias})
      p[w] = Tensor::zeros(p.expected_shape(w));
    const auto pair = random_pair(rng, 2, 3, 4);
    CHECK(hgm_forward(pair, p) == pair.b);
  }
  {
    auto p = HGMParams::zeros({3, 3, 2});
    p[HGMWeight::ProjectChannelWeight] = test::identity(3);
    p[HGMWeight::ProjectRegionWeight] = test::identity(3);
    Stage st(p);
    const auto b = random_tensor({2, 3, 4}, rng), a_t = random_tensor({2, 3, 4}, rng, 0.0, 1.0);
    const auto zero = st.tape.constant(Tensor::zeros({2, 3}));
    const auto r = refine(st.tape.constant(b), st.tape.constant(a_t), zero, zero, st.ctx());
    CHECK(r.b_out.value() == ops::add(b, a_t));
  }
  const auto p = HGMParams::random({5, 3, 2}, 8);
  const auto pair = random_pair(rng, 3, 5, 4);
  const auto ref = oracle::hgm_loops(pair, p);
  const auto ev = hgm_evaluate(pair, p);
  CHECK(max_diff(ev.a_out, ref.a_out) < 1e-9);
  CHECK(max_diff(ev.a_out_prime, ref.a_out_prime) < 1e-9);
  CHECK(max_diff(ev.b_out, ref.b_out) < 1e-9);
}

TEST_CASE("hgm_forward keeps B's shape and non-negative intermediates") {
  std::mt19937_64 rng(35);
  for (int trial = 0; trial < 30; ++trial) {
    const auto n = uniform(rng, 1, 4), c = uniform(rng, 1, 6), c1 = uniform(rng, 1, 4), c2 = uniform(rng, 1, 4),
               l = uniform(rng, 1, 8);
    auto p = HGMParams::random({c, c1, c2}, rng());
    p.pooling = trial % 2 ? PoolMode::Mean : PoolMode::Max;
    const auto pair = random_pair(rng, n, c, l);
    const auto ev = hgm_evaluate(pair, p);
    CHECK(ev.b_out.shape() == pair.b.shape());
    CHECK(ev.s.shape() == Shape{n, c1});
    CHECK(ev.cc.shape() == Shape{n, c1});
    for (const auto* t : {&ev.a_t, &ev.b_t, &ev.b_sqz, &ev.s, &ev.cc, &ev.a_out, &ev.a_out_prime})
      CHECK(non_negative(*t));
    CHECK(hgm_forward(pair, HGMParams::zeros({c, c1, c2})) == pair.b);
  }
}

TEST_CASE("hgm_forward matches the loop oracle on seeded instances") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const auto n = uniform(rng, 1, 4), c = uniform(rng, 1, 6), c1 = uniform(rng, 1, 4), c2 = uniform(rng, 1, 4),
               l = uniform(rng, 1, 8);
    auto p = HGMParams::random({c, c1, c2}, seed + 100);
    p.pooling = seed % 2 ? PoolMode::Mean : PoolMode::Max;
    const auto pair = random_pair(rng, n, c, l);
    const auto ref = oracle::hgm_loops(pair, p);
    CHECK(max_diff(hgm_forward(pair, p), ref.b_out) <= 1e-9);
  }
}

TEST_CASE("hgm gradients pass the central-difference check for every weight group") {
  for (auto mode : {PoolMode::Max, PoolMode::Mean}) {
    std::mt19937_64 rng(36);
    auto p = HGMParams::random({4, 3, 3}, 9);
    p.pooling = mode;
    const auto pair = random_pair(rng, 3, 4, 5);
    const auto probe = random_tensor({3, 4, 5}, rng);
    std::vector<Tensor> params = p.learnables();
    params.push_back(pair.a);
    params.push_back(pair.b);
    auto names = p.learnable_names();
    names.push_back("A");
    names.push_back("B");
    LossFunction f = [&](Tape& tape, std::span<const Var> v) {
      const auto binding = HGMBinding::from(v.first(kHGMWeightCount), p);
      const HGMContext ctx{p, binding, NormMode::Batch, nullptr};
      return sum(mul(hgm_forward(v[kHGMWeightCount], v[kHGMWeightCount + 1], ctx).b_out, tape.constant(probe)));
    };
    const auto report = grad_check(f, params, 1e-5, 1e-4, names);
    for (std::size_t i = 0; i < report.names.size(); ++i) {
      CAPTURE(report.names[i]);
      CHECK(report.max_relative_error[i] <= 1e-4);
    }
  }
}

TEST_CASE("batch norm path") {
  std::mt19937_64 rng(37);
  auto p = HGMParams::random({4, 2, 2}, 10);
  p.batch_norm = true;
  const auto pair = random_pair(rng, 3, 4, 5);
  CHECK(p.learnables().size() == kHGMWeightCount + 2 * kConvSiteCount);
  const auto batch = hgm_evaluate(pair, p, NormMode::Batch);
  CHECK(batch.b_out.shape() == pair.b.shape());
  CHECK(non_negative(batch.a_t));

  // Batch-normalized transform output has per-channel mean zero before relu,
  // so with gamma 1, beta 0 roughly half the activations are clipped.
  Tape tape;
  const auto binding = HGMBinding::bind(tape, p);
  std::array<std::optional<ops::BatchStats>, kConvSiteCount> stats;
  const HGMContext ctx{p, binding, NormMode::Batch, &stats};
  hgm_forward(tape.constant(pair.a), tape.constant(pair.b), ctx);
  for (const auto& s : stats) CHECK(s.has_value());
  auto updated = p;
  update_running_stats(updated, stats);
  const auto& site = updated.bn[static_cast<std::size_t>(ConvSite::TransformA)];
  for (std::size_t c = 0; c < 2; ++c)
    CHECK(site.running_mean[c] == doctest::Approx(0.1 * stats[0]->mean[c]).epsilon(1e-12));

  // Running statistics at their initial values (mean 0, variance 1) make the
  // norm a near-identity, so the result is close to the plain forward.
  auto plain = p;
  plain.batch_norm = false;
  CHECK(max_abs_diff(hgm_forward(pair, p, NormMode::Running), hgm_forward(pair, plain)) < 1e-4);

  // gamma and beta receive gradients in training mode
  const std::vector<Tensor> params = p.learnables();
  const auto probe = random_tensor({3, 4, 5}, rng);
  LossFunction f = [&](Tape& t, std::span<const Var> v) {
    const auto b = HGMBinding::from(v, p);
    const HGMContext c{p, b, NormMode::Batch, nullptr};
    return sum(mul(hgm_forward(t.constant(pair.a), t.constant(pair.b), c).b_out, t.constant(probe)));
  };
  const auto names = p.learnable_names();
  const auto report = grad_check(f, params, 1e-5, 1e-4, names);
  // A bias right before a batch norm is cancelled by the mean subtraction, so
  // its true gradient is zero and the relative error only measures noise.
  Tape t;
  std::vector<Var> vars;
  for (const auto& v : params) vars.push_back(t.leaf(v));
  const auto grads = t.backward(f(t, vars));
  for (std::size_t i = 0; i < names.size(); ++i) {
    CAPTURE(names[i]);
    const bool cancelled = i % 2 == 1 && i < kHGMWeightCount && names[i] != "channel_reduce.bias";
    if (cancelled)
      CHECK(max_abs_diff(grads[vars[i]], Tensor::zeros(params[i].shape())) < 1e-12);
    else
      CHECK(report.max_relative_error[i] <= 1e-4);
  }
}

TEST_CASE("params validation and json round trip") {
  auto p = HGMParams::random({6, 3, 2}, 11);
  p.pooling = PoolMode::Mean;
  p.batch_norm = true;
  nlohmann::json j = p;
  const auto back = j.get<HGMParams>();
  CHECK(back.dims == p.dims);
  CHECK(back.pooling == PoolMode::Mean);
  CHECK(back.batch_norm);
  for (std::size_t i = 0; i < kHGMWeightCount; ++i) CHECK(back.weights[i] == p.weights[i]);
  auto bad = p;
  bad[HGMWeight::SqueezeWeight] = Tensor::zeros({2, 2});
  CHECK_THROWS_AS(bad.validate(), DimensionError);
  CHECK_THROWS_AS(HGMParams::zeros({0, 1, 1}), DimensionError);
  CHECK(HGMDims::halved(512) == HGMDims{512, 256, 256});
  CHECK(HGMDims::halved(1) == HGMDims{1, 1, 1});
  std::mt19937_64 rng(38);
  CHECK_THROWS_AS(hgm_forward(FeaturePair{random_tensor({2, 6, 3}, rng), random_tensor({2, 6, 4}, rng)}, p),
                  DimensionError);
}

TEST_CASE("golden fixture reproduces") {
  std::ifstream in(std::string(HGSG_FIXTURE_DIR) + "/hgm_golden.json");
  REQUIRE(in.good());
  const auto j = nlohmann::json::parse(in);
  REQUIRE(j.at("cases").size() > 0);
  for (const auto& c : j.at("cases")) {
    const FeaturePair pair{c.at("a").get<Tensor>(), c.at("b").get<Tensor>()};
    const auto params = c.at("params").get<HGMParams>();
    const auto expected = c.at("b_out").get<Tensor>();
    CHECK(max_abs_diff(hgm_forward(pair, params), expected) <= 1e-12);
  }
}
