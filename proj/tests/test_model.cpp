#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <vector>

#include "doc/checkpoint.hpp"
#include "doc/finite_difference.hpp"
#include "doc/losses.hpp"
#include "doc/model.hpp"
#include "doc/trainer.hpp"

using namespace doc;
namespace fs = std::filesystem;

namespace {

Tensor random_images(std::uint64_t seed, std::size_t n, const ImageShape& s) {
  Rng rng(seed);
  std::vector<double> v(n * s.numel());
  for (auto& x : v) x = rng.uniform();
  return Tensor({n, s.channels, s.height, s.width}, std::move(v));
}

std::vector<double> flat_params(const Model& m) {
  std::vector<double> out;
  for (const auto& t : m.all_tensors()) out.insert(out.end(), t.data().begin(), t.data().end());
  return out;
}

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path temp_path(const std::string& name) { return fs::temp_directory_path() / ("doc_test_model_" + name); }

Model small_model(std::uint64_t seed = 1) { return Model::build(desk_backbone(3, 6, 2, 3), ImageShape{1, 8, 8}, seed); }

}  // namespace

TEST(Build, SameSeedGivesIdenticalParameters) {
  const Model a = small_model(9), b = small_model(9), c = small_model(10);
  EXPECT_EQ(flat_params(a), flat_params(b));
  EXPECT_NE(flat_params(a), flat_params(c));
  EXPECT_EQ(a.hash(), b.hash());
}

TEST(Build, RejectsBrokenChains) {
  auto layers = desk_backbone(3);
  layers[3] = LayerSpec::conv(16, 3, 1, 1, /*in_channels=*/5);  // chain provides 8
  EXPECT_THROW(Model::build(layers, {}, 0), ShapeError);
  EXPECT_THROW(Model::build({LayerSpec::conv(4, 3), LayerSpec::fully_connected(2)}, {}, 0), ShapeError);
  EXPECT_THROW(Model::build({LayerSpec::flatten(), LayerSpec::fully_connected(2)}, {}, 0), ShapeError);
  EXPECT_THROW(Model::build(desk_backbone(3), {}, 0, /*frozen_layers=*/4), ValueError);
}

TEST(Build, DefaultBackboneOn28x28) {
  const Model m = Model::build(desk_backbone(7), ImageShape{}, 0);
  const auto out = m.forward(random_images(1, 2, ImageShape{}));
  EXPECT_EQ(out.features.shape(), (Shape{2, 64}));
  EXPECT_EQ(out.logits.shape(), (Shape{2, 7}));
  EXPECT_EQ(m.feature_dim(), 64u);
  EXPECT_EQ(m.class_count(), 7u);
  // A single un-batched image is accepted too.
  EXPECT_EQ(m.forward_logits(Tensor::zeros({1, 28, 28})).shape(), (Shape{1, 7}));
  EXPECT_THROW(m.forward(Tensor::zeros({1, 2, 28, 28})), ShapeError);
}

TEST(Build, FrozenPrefixIsFirstConvOnly) {
  const Model m = Model::build(desk_backbone(4), ImageShape{}, 0);
  ASSERT_EQ(m.params().size(), 4u);
  EXPECT_FALSE(m.params()[0].trainable);
  EXPECT_EQ(m.params()[0].name, "conv1");
  for (std::size_t i = 1; i < 4; ++i) EXPECT_TRUE(m.params()[i].trainable) << m.params()[i].name;
  EXPECT_FALSE(m.params()[0].weight.requires_grad());
}

TEST(Forward, FeaturesAreDeterministicAndPure) {
  const Model m = small_model();
  const Tensor x = random_images(2, 3, m.input_shape());
  const auto a = m.forward_features(x), b = m.forward_features(x);
  EXPECT_EQ(std::vector<double>(a.data().begin(), a.data().end()), std::vector<double>(b.data().begin(), b.data().end()));
  EXPECT_EQ(a.shape(), (Shape{3, 6}));
}

TEST(Forward, ZeroWeightModelOutputsBiasImage) {
  Model m = small_model();
  for (auto& p : m.params()) {
    for (auto& v : p.weight.mutable_data()) v = 0.0;
    for (std::size_t i = 0; i < p.bias.numel(); ++i) p.bias.mutable_data()[i] = 0.1 * static_cast<double>(i + 1);
  }
  // Hand evaluation: every layer sees a constant input, so g(x) = relu(b_fc1).
  const auto f = m.forward_features(random_images(3, 4, m.input_shape()));
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t j = 0; j < 6; ++j) EXPECT_DOUBLE_EQ(f[r * 6 + j], 0.1 * static_cast<double>(j + 1));
  }
}

TEST(Forward, LogitsAndSoftmax) {
  const Model m = small_model();
  const Tensor logits = m.forward_logits(random_images(4, 2, m.input_shape()));
  ASSERT_EQ(logits.dim(1), 3u);
  for (std::size_t r = 0; r < 2; ++r) {
    const auto p = softmax_row(logits.data().subspan(r * 3, 3));
    EXPECT_NEAR(p[0] + p[1] + p[2], 1.0, 1e-12);
  }
}

TEST(Forward, CrossEntropyGradientThroughModel) {
  Model m = small_model(5);
  const Tensor x = random_images(5, 4, m.input_shape());
  const std::vector<std::size_t> labels{0, 2, 1, 1};
  m.zero_grad();
  backward(cross_entropy_loss(m.forward_logits(x), labels));
  auto value = [&] {
    NoGradGuard g;
    return cross_entropy_loss(m.forward_logits(x), labels).item();
  };
  for (auto& p : m.params()) {
    if (!p.trainable) continue;
    const std::vector<double> analytic(p.weight.grad().begin(), p.weight.grad().end());
    const auto numeric = finite_difference_grad(value, p.weight.mutable_data(), 1e-6);
    EXPECT_LT(relative_error(analytic, numeric), 1e-5) << p.name;
  }
}

TEST(Params, SingleStoreSharedByAllPaths) {
  Model m = small_model();
  const auto trainable = m.trainable_tensors();
  EXPECT_TRUE(trainable[0].same_storage(m.params()[1].weight));
  // Gradients from two forward passes land in the same tensors.
  const Tensor x = random_images(6, 3, m.input_shape());
  backward(add(sum(m.forward(x).features), sum(m.forward_logits(x))));
  EXPECT_TRUE(m.params()[1].weight.has_grad());
}

TEST(Params, CopyIsDeep) {
  Model a = small_model();
  Model b = a;
  b.params()[2].weight.mutable_data()[0] += 1.0;
  EXPECT_NE(a.params()[2].weight[0], b.params()[2].weight[0]);
  EXPECT_NE(a.hash(), b.hash());
}

TEST(Params, FrozenPrefixHashSurvivesTraining) {
  Model m = small_model(7);
  const auto before = m.frozen_hash();
  const auto trainable_before = flat_params(m);
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  for (int i = 0; i < 5; ++i) {
    const Batch ref{random_images(10 + i, 4, m.input_shape()), {0, 1, 2, 0}};
    const Batch tgt{random_images(20 + i, 4, m.input_shape()), {}};
    train_step(m, ref, tgt, cfg);
  }
  EXPECT_EQ(m.frozen_hash(), before);
  EXPECT_NE(flat_params(m), trainable_before);
}

TEST(Checkpoint, RoundTripIsBitIdentical) {
  Model m = small_model(11);
  m.metadata().config = "lambda=0.1\nseed=3\n";
  m.metadata().iterations = 42;
  const auto p1 = temp_path("rt1.ckpt"), p2 = temp_path("rt2.ckpt");
  save_checkpoint(m, p1.string());
  const Model loaded = load_checkpoint(p1.string());
  EXPECT_EQ(flat_params(loaded), flat_params(m));
  EXPECT_EQ(loaded.hash(), m.hash());
  EXPECT_EQ(loaded.metadata().config, m.metadata().config);
  EXPECT_EQ(loaded.metadata().iterations, 42u);
  EXPECT_EQ(loaded.frozen_layers(), m.frozen_layers());
  save_checkpoint(loaded, p2.string());
  EXPECT_EQ(read_bytes(p1), read_bytes(p2));
  fs::remove(p1);
  fs::remove(p2);
}

TEST(Checkpoint, TruncatedOrCorruptFilesAreRejected) {
  const auto bytes = encode_checkpoint(small_model());
  for (std::size_t keep : {std::size_t{0}, std::size_t{5}, bytes.size() / 2, bytes.size() - 1}) {
    EXPECT_THROW(decode_checkpoint(BinaryReader({bytes.begin(), bytes.begin() + static_cast<long>(keep)}, "t")),
                 FormatError)
        << keep;
  }
  auto flipped = bytes;
  flipped[flipped.size() / 2] ^= 0x10;
  EXPECT_THROW(decode_checkpoint(BinaryReader(flipped, "t")), FormatError);
  EXPECT_THROW(load_checkpoint(temp_path("missing.ckpt").string()), IoError);
}

TEST(Checkpoint, MismatchedLayerSpecIsShapeError) {
  const auto bytes = encode_checkpoint(small_model());
  EXPECT_THROW(decode_checkpoint(BinaryReader(bytes, "t"), desk_backbone(3, 7, 2, 3)), ShapeError);
  EXPECT_NO_THROW(decode_checkpoint(BinaryReader(bytes, "t"), desk_backbone(3, 6, 2, 3)));
}
