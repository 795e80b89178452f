#include "adapmtl/model.hpp"

#include <gtest/gtest.h>

#include <set>
#include <vector>

#include "test_util.hpp"

using adapmtl::build_model;
using adapmtl::EffectiveParams;
using adapmtl::forward_task;
using adapmtl::HeadSpec;
using adapmtl::LossKind;
using adapmtl::ModelSpec;
using adapmtl::MultitaskModel;
using adapmtl::Tape;
using adapmtl::Tensor;

namespace {

ModelSpec two_head_spec() {
  ModelSpec spec;
  spec.input_dim = 4;
  spec.backbone_widths = {8};
  spec.heads.push_back({"a", 8, {2}, LossKind::L1});
  spec.heads.push_back({"b", 8, {1}, LossKind::L1});
  return spec;
}

TEST(BuildModel, ParamCountsByHand) {
  auto model = build_model(two_head_spec(), -20.0, 1);
  auto counts = adapmtl::param_counts(model);
  EXPECT_EQ(counts.size(), 3u);
  EXPECT_EQ(counts.at("backbone"), 40u);   // 4*8 + 8
  EXPECT_EQ(counts.at("head:a"), 18u);     // 8*2 + 2
  EXPECT_EQ(counts.at("head:b"), 9u);      // 8*1 + 1
  std::size_t total = 0;
  for (const auto& [_, n] : counts) total += n;
  EXPECT_EQ(total, 67u);
}

TEST(BuildModel, SingleTaskIsValid) {
  ModelSpec spec;
  spec.input_dim = 3;
  spec.backbone_widths = {5};
  spec.heads.push_back({"only", 5, {2}, LossKind::Mse});
  auto model = build_model(spec, -20.0, 7);
  EXPECT_EQ(model.task_count(), 1u);
}

TEST(BuildModel, RejectsBadSpecs) {
  ModelSpec no_heads;
  no_heads.input_dim = 3;
  no_heads.backbone_widths = {5};
  EXPECT_THROW(build_model(no_heads, -20.0, 1), adapmtl::ConfigError);

  auto zero_width = two_head_spec();
  zero_width.backbone_widths = {0};
  EXPECT_THROW(build_model(zero_width, -20.0, 1), adapmtl::ConfigError);

  auto mismatched = two_head_spec();
  mismatched.heads[1].input_dim = 6;  // backbone produces 8
  EXPECT_THROW(build_model(mismatched, -20.0, 1), adapmtl::ConfigError);

  auto empty_head = two_head_spec();
  empty_head.heads[0].widths.clear();
  EXPECT_THROW(build_model(empty_head, -20.0, 1), adapmtl::ConfigError);
}

TEST(BuildModel, ThetaInitialisedPerComponent) {
  auto model = build_model(two_head_spec(), -20.0, 1);
  for (const auto* c : model.components()) {
    EXPECT_DOUBLE_EQ(c->theta.item(), -20.0);
    EXPECT_TRUE(c->theta.requires_grad());
    EXPECT_GT(c->alpha(), 0.0);
    EXPECT_LT(c->alpha(), 1.0);
  }
  // Distinct theta parameters: T+1 of them.
  std::set<const adapmtl::TensorNode*> nodes;
  for (const auto* c : model.components()) nodes.insert(c->theta.node());
  EXPECT_EQ(nodes.size(), 3u);
}

TEST(BuildModel, ParameterPartitionIsDisjoint) {
  auto model = build_model(two_head_spec(), -20.0, 3);
  std::set<const adapmtl::TensorNode*> seen;
  std::size_t listed = 0;
  for (const auto* c : model.components()) {
    for (const auto& t : c->weights) {
      EXPECT_TRUE(seen.insert(t.node()).second);
      listed += t.size();
    }
    for (const auto& t : c->biases) {
      EXPECT_TRUE(seen.insert(t.node()).second);
      listed += t.size();
    }
  }
  std::size_t counted = 0;
  for (const auto& [_, n] : adapmtl::param_counts(model)) counted += n;
  EXPECT_EQ(listed, counted);
}

TEST(ForwardTask, AllZeroWeightsGiveZeroOutput) {
  auto model = build_model(two_head_spec(), -20.0, 5);
  for (auto* c : model.components())
    for (auto& w : c->weights)
      std::fill(w.values().begin(), w.values().end(), 0.0);
  Tape tape;
  auto x = Tensor::leaf({1, 4}, {1.0, -2.0, 0.5, 3.0});
  auto out = forward_task(tape, model, x, 0);
  for (double v : out.values()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(ForwardTask, MatchesStraightLineRecomputation) {
  ModelSpec spec;
  spec.input_dim = 3;
  spec.backbone_widths = {4};
  spec.heads.push_back({"t", 4, {2}, LossKind::Mse});
  auto model = build_model(spec, -20.0, 42);

  // e1 input through the exact arithmetic, written out longhand.
  std::vector<double> x = {1.0, 0.0, 0.0};
  const auto& w0 = model.backbone.weights[0].values();  // [3,4]
  const auto& b0 = model.backbone.biases[0].values();
  std::vector<double> h(4);
  for (std::size_t j = 0; j < 4; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < 3; ++i) acc += x[i] * w0[i * 4 + j];
    acc += b0[j];
    h[j] = acc > 0.0 ? acc : 0.0;
  }
  const auto& w1 = model.heads[0].weights[0].values();  // [4,2]
  const auto& b1 = model.heads[0].biases[0].values();
  std::vector<double> y(2);
  for (std::size_t j = 0; j < 2; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < 4; ++i) acc += h[i] * w1[i * 2 + j];
    y[j] = acc + b1[j];
  }

  Tape tape;
  auto out = forward_task(tape, model, Tensor::leaf({1, 3}, x), 0);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_DOUBLE_EQ(out.values()[0], y[0]);
  EXPECT_DOUBLE_EQ(out.values()[1], y[1]);
}

TEST(ForwardTask, HeadIsolationAndBackboneSharing) {
  auto model = build_model(two_head_spec(), -20.0, 11);
  std::mt19937_64 rng(3);
  auto xv = testutil::random_values(rng, 8);
  auto x = Tensor::leaf({2, 4}, xv);

  auto run = [&](std::size_t task) {
    Tape tape;
    return forward_task(tape, model, x, task).values();
  };
  const auto t0_before = run(0);
  const auto t1_before = run(1);

  // Perturbing head 1 leaves task 0 bit-identical.  The final head bias is
  // purely additive, so the change always reaches the output.
  model.heads[1].biases.back().values()[0] += 0.5;
  EXPECT_EQ(run(0), t0_before);
  EXPECT_NE(run(1), t1_before);

  // Perturbing the backbone changes every task; a large bias bump forces the
  // corresponding ReLU unit active for any input.
  const auto t0_mid = run(0);
  const auto t1_mid = run(1);
  model.backbone.biases[0].values()[0] += 10.0;
  EXPECT_NE(run(0), t0_mid);
  EXPECT_NE(run(1), t1_mid);
}

TEST(ForwardTask, ErrorsOnBadInputs) {
  auto model = build_model(two_head_spec(), -20.0, 1);
  Tape tape;
  auto x = Tensor::leaf({1, 4}, {1, 2, 3, 4});
  EXPECT_THROW(forward_task(tape, model, x, 2), adapmtl::Error);
  auto bad = Tensor::leaf({1, 3}, {1, 2, 3});
  EXPECT_THROW(forward_task(tape, model, bad, 0), adapmtl::ShapeError);
}

TEST(ForwardTask, EffectiveWeightsReplaceRawOnes) {
  auto model = build_model(two_head_spec(), -20.0, 9);
  Tape tape;
  auto x = Tensor::leaf({1, 4}, {0.5, -1.0, 2.0, 0.25});

  EXPECT_EQ(model.raw_forward_calls, 0u);
  auto raw = forward_task(tape, model, x, 0);
  EXPECT_EQ(model.raw_forward_calls, 1u);

  // Identity effective params reproduce the raw output and do not bump the
  // raw-forward counter.
  EffectiveParams eff;
  eff.backbone_weights = model.backbone.weights;
  for (const auto& h : model.heads) eff.head_weights.push_back(h.weights);
  auto same = forward_task(tape, model, x, 0, &eff);
  EXPECT_EQ(model.raw_forward_calls, 1u);
  EXPECT_EQ(same.values(), raw.values());

  // Halved backbone weights propagate through the effective path.
  std::vector<double> halved = model.backbone.weights[0].values();
  for (auto& v : halved) v *= 0.5;
  eff.backbone_weights[0] = Tensor::leaf({4, 8}, halved);
  auto scaled = forward_task(tape, model, x, 0, &eff);
  EXPECT_NE(scaled.values(), raw.values());
}

}  // namespace
