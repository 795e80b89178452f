#include "adapmtl/weighting.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "test_util.hpp"

using adapmtl::LossWindow;
using adapmtl::Tape;
using adapmtl::Tensor;
using adapmtl::WeightingState;
using adapmtl::weighted_total_loss;

namespace {

TEST(LossWindow, RingEvictsOldestFirst) {
  LossWindow w(3);
  for (double v : {1.0, 2.0, 3.0, 4.0}) w.push(v);
  EXPECT_EQ(w.contents(), (std::vector<double>{2, 3, 4}));
  EXPECT_EQ(w.size(), 3u);
  EXPECT_EQ(w.count(), 4u);
}

TEST(LossWindow, NonFinitePushSignalsDivergence) {
  LossWindow w(4);
  EXPECT_THROW(w.push(std::nan("")), adapmtl::NumericError);
  EXPECT_THROW(w.push(INFINITY), adapmtl::NumericError);
}

TEST(LossWindow, QueriesUseAtMostCapacityValues) {
  LossWindow w(400);
  for (int i = 0; i < 500; ++i) w.push(static_cast<double>(i));
  EXPECT_EQ(w.size(), 400u);
  EXPECT_EQ(w.count(), 500u);
  // values 100..499 survive; their mean is 299.5
  EXPECT_DOUBLE_EQ(w.mean(), 299.5);
}

TEST(LossWindow, AvgDeviationHandValues) {
  LossWindow a(8);
  for (double v : {1.0, 1.0, 1.0}) a.push(v);
  EXPECT_DOUBLE_EQ(a.avg_deviation(), 0.0);

  LossWindow b(8);
  for (double v : {0.0, 2.0}) b.push(v);
  EXPECT_DOUBLE_EQ(b.avg_deviation(), 1.0);

  LossWindow c(8);
  for (double v : {1.0, 2.0, 3.0}) c.push(v);
  EXPECT_DOUBLE_EQ(c.avg_deviation(), 2.0 / 3.0);
}

TEST(LossWindow, InsufficientDataErrors) {
  LossWindow w(4);
  EXPECT_THROW(w.mean(), adapmtl::StateError);
  w.push(1.0);
  EXPECT_THROW(w.avg_deviation(), adapmtl::StateError);
}

TEST(LossWindow, RestoreRoundTrip) {
  for (int pushes : {3, 7, 12}) {
    LossWindow w(5);
    std::mt19937_64 rng(pushes);
    for (int i = 0; i < pushes; ++i)
      w.push(std::uniform_real_distribution<double>(0.0, 4.0)(rng));
    LossWindow restored(5);
    restored.restore(w.contents(), w.count());
    EXPECT_EQ(restored.contents(), w.contents());
    EXPECT_EQ(restored.count(), w.count());
    if (w.size() >= 2)
      EXPECT_DOUBLE_EQ(restored.avg_deviation(), w.avg_deviation());
    // Pushing the same value into both keeps them in lockstep.
    LossWindow w2 = w;
    restored.push(9.0);
    w2.push(9.0);
    EXPECT_EQ(restored.contents(), w2.contents());
  }
}

// A single outlier among 400 entries moves the mean absolute deviation by a
// vanishing amount relative to the outlier itself.
TEST(LossWindow, OutlierDamping) {
  for (double delta : {1.0, 10.0, 1000.0}) {
    LossWindow w(400);
    for (int i = 0; i < 399; ++i) w.push(1.0);
    w.push(1.0 + delta);
    EXPECT_LT(w.avg_deviation(), delta / 100.0);
    // direct computation: mad = 2*399*delta/400^2
    EXPECT_NEAR(w.avg_deviation(), 2.0 * 399.0 * delta / (400.0 * 400.0),
                1e-9 * delta);
  }
}

WeightingState two_task_state(double lambda = 1.0, std::size_t warmup = 0,
                              std::size_t backbone = 100,
                              std::size_t heads = 100) {
  return WeightingState({"a", "b"}, 400, lambda, warmup, backbone, heads);
}

TEST(ComputeBetas, WorkedExample) {
  // window {1,3}: mean 2, mad 1, ratio 0.5; window {0,0,0,4}: mean 1,
  // mad 1.5, ratio 1.5.  Normalized {0.5, 1.5}; inverses {2, 2/3}.
  auto state = two_task_state();
  state.push_loss(0, 1.0);
  state.push_loss(0, 3.0);
  for (double v : {0.0, 0.0, 0.0, 4.0}) state.push_loss(1, v);
  const auto betas = state.compute_betas(0);
  ASSERT_EQ(betas.size(), 2u);
  EXPECT_NEAR(betas[0], 2.0, 1e-12);
  EXPECT_NEAR(betas[1], 2.0 / 3.0, 1e-12);
}

TEST(ComputeBetas, LambdaAndRatioScaleTheResult) {
  auto state = WeightingState({"a", "b"}, 400, 2.5, 0, 300, 100);
  state.push_loss(0, 1.0);
  state.push_loss(0, 3.0);
  for (double v : {0.0, 0.0, 0.0, 4.0}) state.push_loss(1, v);
  const auto betas = state.compute_betas(0);
  const double lam_ratio = 2.5 * 3.0;
  EXPECT_NEAR(betas[0], 2.0 * lam_ratio, 1e-12);
  EXPECT_NEAR(betas[1], (2.0 / 3.0) * lam_ratio, 1e-12);
}

TEST(ComputeBetas, WarmupIsExactlyOne) {
  auto state = two_task_state(3.0, 5);
  for (int i = 0; i < 10; ++i) {
    state.push_loss(0, 1.0 + i);
    state.push_loss(1, 2.0 + i);
  }
  for (std::size_t epoch = 0; epoch < 5; ++epoch) {
    for (double b : state.compute_betas(epoch)) {
      EXPECT_EQ(b, 1.0);  // bit-exact
    }
  }
  // first post-warm-up epoch departs from 1
  const auto after = state.compute_betas(5);
  EXPECT_NE(after[0], 1.0);
}

TEST(ComputeBetas, ShortWindowKeepsBetaOne) {
  auto state = two_task_state();
  state.push_loss(0, 1.0);
  state.push_loss(0, 2.0);
  state.push_loss(1, 1.0);  // only one entry
  for (double b : state.compute_betas(0)) EXPECT_EQ(b, 1.0);
}

TEST(ComputeBetas, SymmetricTasksGetEqualBetas) {
  auto state = WeightingState({"a", "b", "c"}, 400, 1.0, 0, 120, 60);
  for (std::size_t t = 0; t < 3; ++t) {
    state.push_loss(t, 1.0);
    state.push_loss(t, 3.0);
  }
  const auto betas = state.compute_betas(0);
  const double expect = 1.0 * 120.0 / 60.0;
  for (double b : betas) EXPECT_NEAR(b, expect, 1e-12);
}

TEST(ComputeBetas, MeanBetaTimesNIsLambdaRatio) {
  std::mt19937_64 rng(123);
  for (int trial = 0; trial < 50; ++trial) {
    auto state = WeightingState({"a", "b", "c"}, 64, 1.7, 0, 250, 100);
    std::vector<double> r(3);
    for (std::size_t t = 0; t < 3; ++t) {
      for (int i = 0; i < 20; ++i)
        state.push_loss(t, std::uniform_real_distribution<double>(0.5, 4.0)(
                               rng));
      r[t] = state.window(t).avg_deviation() / state.window(t).mean();
    }
    const auto betas = state.compute_betas(0);
    const double mean_r = (r[0] + r[1] + r[2]) / 3.0;
    double acc = 0.0;
    for (std::size_t t = 0; t < 3; ++t) acc += betas[t] * (r[t] / mean_r);
    EXPECT_NEAR(acc / 3.0, 1.7 * 2.5, 1e-9);
  }
}

TEST(ComputeBetas, HomogeneityUnderGlobalScaling) {
  std::mt19937_64 rng(321);
  for (int trial = 0; trial < 100; ++trial) {
    const double c =
        std::uniform_real_distribution<double>(0.1, 50.0)(rng);
    auto a = two_task_state();
    auto b = two_task_state();
    for (std::size_t t = 0; t < 2; ++t)
      for (int i = 0; i < 12; ++i) {
        const double v =
            std::uniform_real_distribution<double>(0.25, 3.0)(rng);
        a.push_loss(t, v);
        b.push_loss(t, c * v);
      }
    const auto ba = a.compute_betas(0);
    const auto bb = b.compute_betas(0);
    for (std::size_t t = 0; t < 2; ++t)
      EXPECT_LT(testutil::rel_err(ba[t], bb[t], 1e-12), 1e-9);
  }
}

// Inflating one task's deviations (holding its mean fixed) strictly lowers
// that task's beta and raises the others'.
TEST(ComputeBetas, ScaleResponse) {
  auto make_state = [](double d0, double d1, double d2) {
    auto s = WeightingState({"a", "b", "c"}, 16, 1.0, 0, 100, 100);
    const double means[3] = {2.0, 3.0, 1.5};
    const double devs[3] = {d0, d1, d2};
    for (std::size_t t = 0; t < 3; ++t) {
      s.push_loss(t, means[t] - devs[t]);
      s.push_loss(t, means[t] + devs[t]);
    }
    return s;
  };
  auto base = make_state(0.2, 0.3, 0.15);
  auto inflated = make_state(0.2, 0.9, 0.15);  // task b deviations x3
  const auto b0 = base.compute_betas(0);
  const auto b1 = inflated.compute_betas(0);
  EXPECT_LT(b1[1], b0[1]);
  EXPECT_GT(b1[0], b0[0]);
  EXPECT_GT(b1[2], b0[2]);
}

TEST(ComputeBetas, DegenerateWindowsStayFinite) {
  auto state = two_task_state();
  // task 0: all zeros (mean clamps); task 1: constant (deviation clamps)
  for (int i = 0; i < 4; ++i) {
    state.push_loss(0, 0.0);
    state.push_loss(1, 2.0);
  }
  for (double b : state.compute_betas(0)) {
    EXPECT_TRUE(std::isfinite(b));
    EXPECT_GT(b, 0.0);
  }
}

TEST(WeightedTotalLoss, LinearityAndValidation) {
  Tape tape;
  auto a = Tensor::scalar(3.0, true);
  auto b = Tensor::scalar(7.0, true);
  EXPECT_DOUBLE_EQ(weighted_total_loss(tape, {1.0, 1.0}, {a, b}).item(),
                   10.0);
  EXPECT_DOUBLE_EQ(weighted_total_loss(tape, {2.0, 0.0}, {a, b}).item(), 6.0);
  EXPECT_THROW(weighted_total_loss(tape, {1.0}, {a, b}), adapmtl::ShapeError);
  EXPECT_THROW(weighted_total_loss(tape, {-1.0, 1.0}, {a, b}),
               adapmtl::Error);
}

TEST(WeightedTotalLoss, GradientScalesLinearlyInBeta) {
  auto grad_at = [](double beta) {
    Tape tape;
    auto w = Tensor::leaf({3}, {0.5, -1.0, 2.0}, true);
    auto l1 = tape.sum(tape.mul(w, w));
    auto l2 = tape.sum(w);
    auto total = weighted_total_loss(tape, {beta, 1.0}, {l1, l2});
    tape.backward(total);
    return w.grad();
  };
  const auto g1 = grad_at(1.0);
  const auto g2 = grad_at(2.0);
  // subtract the beta-independent contribution from l2 (all ones)
  for (std::size_t i = 0; i < g1.size(); ++i)
    EXPECT_LT(testutil::rel_err(g2[i] - 1.0, 2.0 * (g1[i] - 1.0), 1e-12),
              1e-9);
}

}  // namespace
