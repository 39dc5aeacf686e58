#include <gtest/gtest.h>

#include <cmath>

#include "pedkd/error.hpp"
#include "pedkd/grad_suite.hpp"
#include "pedkd/gradcheck.hpp"
#include "pedkd/rng.hpp"
#include "pedkd/trajectory.hpp"

using namespace pedkd;

namespace {

std::array<Point, kHistoryLen> random_history(Rng& rng) {
  std::array<Point, kHistoryLen> h;
  for (auto& p : h) p = {rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)};
  return h;
}

std::vector<Scene> ambiguity_scenes(std::uint64_t seed, std::size_t n) {
  SceneParams sp = ambiguity_params();
  sp.height = 32;
  sp.width = 32;
  std::vector<Scene> out;
  for (auto s : derive_seeds(seed, "traj", n)) out.push_back(generate_scene(s, sp));
  return out;
}

}  // namespace

TEST(Rollout, ZeroWeightsPredictOrigin) {
  RnnPredictor rnn({2, 8, 0}, 1);
  for (auto* p : rnn.parameters()) p->value.fill(0.0);
  Rng rng(1);
  for (const Point& p : rnn_rollout(rnn, random_history(rng))) {
    EXPECT_EQ(p.x, 0.0);
    EXPECT_EQ(p.y, 0.0);
  }
}

TEST(Rollout, BitIdenticalAcrossCalls) {
  RnnPredictor rnn({2, 8, 3}, 2);
  Rng rng(2);
  const auto h = random_history(rng);
  const Tensor e({3}, std::vector<double>{0.2, 1.5, -0.3});
  const auto a = rnn_rollout(rnn, h, &e), b = rnn_rollout(rnn, h, &e);
  EXPECT_EQ(a, b);
}

TEST(Rollout, OneUnitRecursionMatchesHandArithmetic) {
  RnnPredictor rnn({1, 1, 0}, 3);
  const double a1 = 0.7, a2 = -0.4, c = 0.9, d = 0.1, o1 = 1.3, o2 = -0.6, p1 = 0.05, p2 = 0.2;
  rnn.w_x(0).value = Tensor({2, 1}, std::vector<double>{a1, a2});
  rnn.w_h(0).value = Tensor({1, 1}, std::vector<double>{c});
  rnn.b(0).value = Tensor({1}, std::vector<double>{d});
  rnn.w_o().value = Tensor({1, 2}, std::vector<double>{o1, o2});
  rnn.b_o().value = Tensor({2}, std::vector<double>{p1, p2});
  Rng rng(3);
  const auto hist = random_history(rng);

  double h = 0.0;
  for (const Point& x : hist) h = std::tanh(a1 * x.x + a2 * x.y + c * h + d);
  double x = hist.back().x, y = hist.back().y;
  std::vector<Point> expected;
  for (int step = 0; step < 2; ++step) {
    h = std::tanh(a1 * x + a2 * y + c * h + d);
    x = o1 * h + p1;
    y = o2 * h + p2;
    expected.push_back({x, y});
  }

  Tensor ht({1, kHistoryLen, 2});
  for (std::size_t t = 0; t < kHistoryLen; ++t) {
    ht[2 * t] = hist[t].x;
    ht[2 * t + 1] = hist[t].y;
  }
  Graph g;
  const Tensor& out = g.value(rnn.rollout(g, ht, nullptr, ParamMode::frozen, 2));
  ASSERT_EQ(out.shape(), Shape({1, 2, 2}));
  for (std::size_t s = 0; s < 2; ++s) {
    EXPECT_NEAR(out[2 * s], expected[s].x, 1e-12);
    EXPECT_NEAR(out[2 * s + 1], expected[s].y, 1e-12);
  }
}

TEST(Rollout, ModeEmbeddingMismatchRejected) {
  Rng rng(4);
  const auto h = random_history(rng);
  const Tensor e({3}, 1.0);
  RnnPredictor base({2, 4, 0}, 1), fused({2, 4, 3}, 1);
  EXPECT_THROW(rnn_rollout(base, h, &e), ContractError);
  EXPECT_THROW(rnn_rollout(fused, h), ContractError);
  const Tensor wrong({4}, 1.0);
  EXPECT_THROW(rnn_rollout(fused, h, &wrong), ContractError);
}

TEST(Rollout, FortyStepGradientMatchesFiniteDifferences) {
  RnnPredictor rnn({2, 5, 2}, 6);
  Rng rng(6);
  Tensor hist({3, kHistoryLen, 2}), emb({3, 2}), fut({3, kFutureLen, 2});
  for (auto& v : hist.data()) v = rng.uniform(-0.5, 0.5);
  for (auto& v : emb.data()) v = rng.uniform(0.0, 2.0);
  for (auto& v : fut.data()) v = rng.uniform(-3.0, 3.0);
  auto r = grad_check(
      [&](Graph& g) { return g.smooth_l1(rnn.rollout(g, hist, &emb, ParamMode::trainable), g.constant(fut)); },
      rnn.parameters(), 1e-6);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST(AdeFde, ForcedCases) {
  std::vector<Point> truth(kFutureLen);
  for (std::size_t i = 0; i < kFutureLen; ++i) truth[i] = {0.1 * static_cast<double>(i), -0.05 * static_cast<double>(i)};
  auto e = ade_fde(truth, truth);
  EXPECT_EQ(e.ade, 0.0);
  EXPECT_EQ(e.fde, 0.0);

  std::vector<Point> zero(kFutureLen), shifted(kFutureLen), last(kFutureLen);
  for (std::size_t i = 0; i < kFutureLen; ++i) shifted[i] = {1.0, 0.0};
  last.back() = {3.0, 0.0};
  e = ade_fde(shifted, zero);
  EXPECT_EQ(e.ade, 1.0);
  EXPECT_EQ(e.fde, 1.0);
  e = ade_fde(last, zero);
  EXPECT_NEAR(e.ade, 0.1, 1e-15);
  EXPECT_EQ(e.fde, 3.0);

  EXPECT_THROW(ade_fde(std::vector<Point>(29), zero), ContractError);
}

TEST(AdeFde, BoundedByLargestStepError) {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Point> a(kFutureLen), b(kFutureLen);
    double worst = 0.0;
    for (std::size_t i = 0; i < kFutureLen; ++i) {
      a[i] = {rng.normal(), rng.normal()};
      b[i] = {rng.normal(), rng.normal()};
      worst = std::max(worst, std::hypot(a[i].x - b[i].x, a[i].y - b[i].y));
    }
    const auto e = ade_fde(a, b);
    EXPECT_GE(e.ade, 0.0);
    EXPECT_LE(e.ade, worst);
    EXPECT_GE(e.fde, 0.0);
  }
}

TEST(Oracle, KnownBehaviorReachesNoiseLevel) {
  const auto scenes = ambiguity_scenes(8, 200);
  const auto samples = make_trajectories(scenes, 8);
  const auto e = evaluate_oracle(samples, scenes);
  EXPECT_LT(e.ade, 2.0 * kTrajNoise);
  EXPECT_GT(e.ade, 0.0);
}

TEST(Ambiguity, OnlyWaitingAndCrossing) {
  for (const auto& s : ambiguity_scenes(9, 100))
    EXPECT_TRUE(s.truth.behavior == Behavior::waiting || s.truth.behavior == Behavior::crossing);
}

TEST(TrainTraj, LossDecreasesAndIsDeterministic) {
  const auto scenes = ambiguity_scenes(10, 96);
  const auto data = make_traj_dataset(make_trajectories(scenes, 10));
  TrajConfig tc;
  tc.hidden = 8;
  tc.train = {10, 16, 3e-3, 10};
  const auto a = train_traj(tc, data, TrajMode::baseline);
  const auto b = train_traj(tc, data, TrajMode::baseline);
  EXPECT_LT(a.history.train_loss.back(), a.history.train_loss.front());
  EXPECT_EQ(a.history.train_loss, b.history.train_loss);
  EXPECT_THROW(train_traj(tc, data, TrajMode::fusion), ContractError);
}

TEST(TrainTraj, FusionLeavesEncoderUntouched) {
  const auto scenes = ambiguity_scenes(11, 48);
  StudentConfig sc;
  sc.height = 32;
  sc.width = 32;
  sc.embed_dim = 8;
  sc.num_classes = 4;
  sc.conv_channels = {4, 4, 4};
  StudentEncoder enc(sc, 11);
  std::vector<Tensor> before;
  for (auto* p : enc.parameters()) before.push_back(p->value);
  std::vector<const Tensor*> imgs;
  for (const auto& s : scenes) imgs.push_back(&s.image);
  const Tensor emb = embed_all(enc, stack_images(imgs));
  const auto data = make_traj_dataset(make_trajectories(scenes, 11), &emb);
  TrajConfig tc;
  tc.hidden = 8;
  tc.train = {2, 16, 3e-3, 11};
  auto trained = train_traj(tc, data, TrajMode::fusion);
  EXPECT_TRUE(trained.model.fusion());
  const auto params = enc.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) EXPECT_EQ(params[i]->value, before[i]) << params[i]->name;
  const auto e = evaluate_traj(trained.model, data);
  EXPECT_TRUE(std::isfinite(e.ade));
  EXPECT_TRUE(std::isfinite(e.fde));
}

TEST(TrajMode, NamesRoundTrip) {
  for (auto m : {TrajMode::baseline, TrajMode::fusion}) EXPECT_EQ(parse_traj_mode(traj_mode_name(m)), m);
  EXPECT_THROW(parse_traj_mode("lstm"), ContractError);
}

TEST(GradientSuite, EveryModulePasses) {
  const auto entries = gradient_suite(3);
  EXPECT_EQ(entries.size(), 6u);
  for (const auto& e : entries) EXPECT_LT(e.report.max_rel_error, kGradSuiteTolerance) << e.name << " " << e.report.worst;
  EXPECT_TRUE(suite_passes(entries));
}
