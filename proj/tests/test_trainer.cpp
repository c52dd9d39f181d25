#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "doc/losses.hpp"
#include "doc/trainer.hpp"

using namespace doc;

namespace {

struct Toy {
  Dataset reference;
  Dataset target;
};

const Toy& toy() {
  static const Toy t = [] {
    const Dataset all = synth_shapes(4, 24, 8, 0.4, 17);
    const Dataset target_class = all.select_classes({3});
    return Toy{all.select_classes({0, 1, 2}), target_class};
  }();
  return t;
}

Model toy_model(std::uint64_t seed = 2) {
  return Model::build(desk_backbone(3, 6, 2, 3), toy().reference.shape, seed);
}

Batch first(const Dataset& d, std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i * (d.size() / n);
  return Batch::from(d, idx);
}

std::vector<double> trainable_values(const Model& m) {
  std::vector<double> out;
  for (const auto& t : m.trainable_tensors()) out.insert(out.end(), t.data().begin(), t.data().end());
  return out;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

TrainConfig quick(double lambda, double lr) {
  TrainConfig c;
  c.lambda = lambda;
  c.learning_rate = lr;
  c.batch_size_target = 8;
  c.batch_size_reference = 8;
  return c;
}

}  // namespace

TEST(TrainStep, LambdaZeroEqualsCrossEntropyStepOnTrainableLayers) {
  const Batch ref = first(toy().reference, 8), tgt = first(toy().target, 8);
  Model a = toy_model(), b = toy_model();
  train_step(a, ref, tgt, quick(0.0, 0.05));

  // Hand-built reference update: descriptive loss only, frozen prefix skipped.
  b.zero_grad();
  backward(cross_entropy_loss(b.forward_logits(ref.images), ref.labels));
  for (auto t : b.trainable_tensors()) {
    auto w = t.mutable_data();
    const auto g = t.grad();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= 0.05 * (g[i] + 5e-4 * w[i]);
  }
  EXPECT_LE(max_abs_diff(trainable_values(a), trainable_values(b)), 1e-15);
  EXPECT_EQ(a.frozen_hash(), b.frozen_hash());
}

TEST(TrainStep, ZeroLearningRateLeavesParametersUnchanged) {
  Model m = toy_model();
  const auto before = m.hash();
  train_step(m, first(toy().reference, 8), first(toy().target, 8), quick(0.1, 0.0));
  EXPECT_EQ(m.hash(), before);
}

TEST(TrainStep, SmallStepDecreasesTheCompositeLoss) {
  const Batch ref = first(toy().reference, 12), tgt = first(toy().target, 12);
  auto evaluate = [&](const Model& m) {
    NoGradGuard g;
    const double ld = cross_entropy_loss(m.forward_logits(ref.images), ref.labels).item();
    const double lc = compactness_loss(m.forward_features(tgt.images)).item();
    return ld + 0.5 * lc;
  };
  Model m = toy_model();
  TrainConfig cfg = quick(0.5, 1e-3);
  cfg.weight_decay = 0.0;
  const double before = evaluate(m);
  const LossBundle reported = train_step(m, ref, tgt, cfg);
  EXPECT_NEAR(reported.total, before, 1e-12);
  EXPECT_LT(evaluate(m), before);
}

TEST(TrainStep, RejectsTinyTargetBatchesAndBadConfig) {
  Model m = toy_model();
  EXPECT_THROW(train_step(m, first(toy().reference, 4), first(toy().target, 1), quick(0.1, 0.1)), ValueError);
  TrainConfig bad = quick(-1.0, 0.1);
  EXPECT_THROW(train_step(m, first(toy().reference, 4), first(toy().target, 4), bad), ValueError);
  Batch wrong{Tensor::zeros({4, 1, 9, 9}), {0, 0, 0, 0}};
  EXPECT_THROW(train_step(m, wrong, first(toy().target, 4), quick(0.1, 0.1)), ShapeError);
}

TEST(Train, ZeroIterationsIsIdentity) {
  TrainConfig cfg = quick(0.1, 0.1);
  cfg.iterations = 0;
  const Model m = toy_model();
  const auto r = train(m, toy().reference, toy().target, cfg);
  EXPECT_EQ(r.model.hash(), m.hash());
  EXPECT_TRUE(r.log.records.empty());
}

TEST(Train, DeterministicForAFixedSeed) {
  TrainConfig cfg = quick(0.1, 0.05);
  cfg.iterations = 20;
  cfg.seed = 4;
  const auto a = train(toy_model(), toy().reference, toy().target, cfg);
  const auto b = train(toy_model(), toy().reference, toy().target, cfg);
  EXPECT_EQ(a.model.hash(), b.model.hash());
  EXPECT_EQ(a.log.to_csv(), b.log.to_csv());
  cfg.seed = 5;
  EXPECT_NE(train(toy_model(), toy().reference, toy().target, cfg).model.hash(), a.model.hash());
}

TEST(Train, LogHasOneRowPerIterationAndCountsEpochs) {
  TrainConfig cfg = quick(0.1, 0.01);
  cfg.iterations = 7;
  const auto r = train(toy_model(), toy().reference, toy().target, cfg, "lambda=0.1\n");
  ASSERT_EQ(r.log.records.size(), 7u);
  // 24 target samples at 8 per batch: three batches per epoch.
  EXPECT_DOUBLE_EQ(r.log.records[2].epoch, 1.0);
  EXPECT_DOUBLE_EQ(r.log.records[6].epoch, 7.0 / 3.0);
  const std::string csv = r.log.to_csv();
  EXPECT_EQ(csv.rfind("# lambda=0.1\niteration,epoch,l_D,l_C,l\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2 + 7);
  EXPECT_EQ(r.model.metadata().iterations, 7u);
}

TEST(Train, FrozenPrefixUntouched) {
  TrainConfig cfg = quick(0.1, 0.5);
  cfg.iterations = 10;
  const Model m = toy_model();
  const auto r = train(m, toy().reference, toy().target, cfg);
  EXPECT_EQ(r.model.frozen_hash(), m.frozen_hash());
  EXPECT_NE(r.model.hash(), m.hash());
}

TEST(Train, ReferenceHeadMismatchIsShapeError) {
  const Model m = Model::build(desk_backbone(5, 6, 2, 3), toy().reference.shape, 0);
  EXPECT_THROW(train(m, toy().reference, toy().target, quick(0.1, 0.1)), ShapeError);
}

TEST(Memeff, MatchJointIsBitIdenticalToTwoBranchOver100Steps) {
  TrainConfig joint = quick(0.3, 0.05);
  joint.iterations = 100;
  joint.seed = 9;
  TrainConfig memeff = joint;
  memeff.variant = Variant::memory_efficient;
  const auto a = train(toy_model(), toy().reference, toy().target, joint);
  const auto b = train(toy_model(), toy().reference, toy().target, memeff);
  EXPECT_EQ(max_abs_diff(trainable_values(a.model), trainable_values(b.model)), 0.0);
  EXPECT_EQ(a.model.hash(), b.model.hash());
}

TEST(Memeff, ConvexAverageEndpoints) {
  const Batch ref = first(toy().reference, 8), tgt = first(toy().target, 8);
  TrainConfig avg = quick(1.0, 0.05);
  avg.variant = Variant::memory_efficient;
  avg.memeff_weighting = MemeffWeighting::convex_average;

  // lambda = 1: only the compactness gradient survives.
  Model a = toy_model(), b = toy_model();
  train_step_memeff(a, ref, tgt, avg);
  TrainConfig compact_only = quick(1.0, 0.05);
  compact_only.objective = Objective::compactness_only;
  train_step(b, ref, tgt, compact_only);
  EXPECT_LE(max_abs_diff(trainable_values(a), trainable_values(b)), 1e-15);

  // lambda = 0: only the descriptive gradient survives.
  avg.lambda = 0.0;
  Model c = toy_model(), d = toy_model();
  train_step_memeff(c, ref, tgt, avg);
  train_step(d, ref, tgt, quick(0.0, 0.05));
  EXPECT_LE(max_abs_diff(trainable_values(c), trainable_values(d)), 1e-15);
}

TEST(Objective, CompactnessOnlyDrivesLossTowardZero) {
  TrainConfig cfg = quick(1.0, 2.0);
  cfg.objective = Objective::compactness_only;
  cfg.iterations = 150;
  const auto r = train(toy_model(), toy().reference, toy().target, cfg);
  EXPECT_LT(r.log.records.back().loss.compactness, 0.1 * r.log.records.front().loss.compactness);
  EXPECT_EQ(r.log.records.back().loss.descriptive, 0.0);
}

TEST(Objective, LogitTapReadsTheHead) {
  const Batch ref = first(toy().reference, 8), tgt = first(toy().target, 8);
  TrainConfig cfg = quick(0.1, 0.0);
  cfg.loss_tap = LossTap::logits;
  Model m = toy_model();
  const auto bundle = train_step(m, ref, tgt, cfg);
  NoGradGuard g;
  EXPECT_DOUBLE_EQ(bundle.compactness, compactness_loss(m.forward_logits(tgt.images)).item());
}

TEST(Pretrain, SeparableToyReachesHighAccuracy) {
  const Dataset data = synth_shapes(3, 40, 8, 0.2, 5);
  Model m = Model::build(desk_backbone(3, 16, 4, 8), data.shape, 1);
  const auto r = pretrain_reference(std::move(m), data, PretrainConfig{25, 0.1, 0.0, 16, 2});
  EXPECT_GT(accuracy(r.model, data), 0.95);
  EXPECT_LT(r.log.records.back().loss.descriptive, r.log.records.front().loss.descriptive);
}

TEST(Pretrain, TrainsTheFrozenPrefixToo) {
  const Model m = toy_model();
  const auto r = pretrain_reference(m, toy().reference, PretrainConfig{1, 0.1, 0.0, 16, 0});
  EXPECT_NE(r.model.frozen_hash(), m.frozen_hash());
  EXPECT_FALSE(r.model.params()[0].weight.requires_grad());
}
