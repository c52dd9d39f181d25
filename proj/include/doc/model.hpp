#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "doc/binary_io.hpp"
#include "doc/errors.hpp"
#include "doc/ops.hpp"
#include "doc/random.hpp"
#include "doc/tensor.hpp"

namespace doc {

enum class LayerKind : std::uint8_t { conv = 1, relu = 2, maxpool = 3, flatten = 4, fully_connected = 5 };

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t width = 0;     // conv: output channels; fully connected: output features
  std::size_t kernel = 0;    // conv kernel / pooling window
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t in_width = 0;  // expected input channels/features; 0 = take whatever the chain provides

  static LayerSpec conv(std::size_t channels, std::size_t kernel, std::size_t stride = 1, std::size_t padding = 0,
                        std::size_t in_channels = 0) {
    return {LayerKind::conv, channels, kernel, stride, padding, in_channels};
  }
  static LayerSpec relu() { return {LayerKind::relu}; }
  static LayerSpec maxpool(std::size_t window, std::size_t stride) {
    return {LayerKind::maxpool, 0, window, stride, 0, 0};
  }
  static LayerSpec flatten() { return {LayerKind::flatten}; }
  static LayerSpec fully_connected(std::size_t width, std::size_t in_features = 0) {
    return {LayerKind::fully_connected, width, 0, 1, 0, in_features};
  }

  bool parameterized() const { return kind == LayerKind::conv || kind == LayerKind::fully_connected; }
  bool operator==(const LayerSpec&) const = default;
};

struct ImageShape {
  std::size_t channels = 1;
  std::size_t height = 28;
  std::size_t width = 28;

  std::size_t numel() const { return channels * height * width; }
  bool operator==(const ImageShape&) const = default;
};

// Two 3x3 conv + relu + 2x2 max-pool blocks, a hidden fully connected layer
// whose (rectified) output is the feature g(x), and a linear head over the
// reference classes.
inline std::vector<LayerSpec> desk_backbone(std::size_t classes, std::size_t feature_width = 64,
                                            std::size_t conv1 = 8, std::size_t conv2 = 16) {
  return {LayerSpec::conv(conv1, 3, 1, 1), LayerSpec::relu(),       LayerSpec::maxpool(2, 2),
          LayerSpec::conv(conv2, 3, 1, 1), LayerSpec::relu(),       LayerSpec::maxpool(2, 2),
          LayerSpec::flatten(),            LayerSpec::fully_connected(feature_width), LayerSpec::relu(),
          LayerSpec::fully_connected(classes)};
}

struct LayerParams {
  std::string name;
  std::size_t layer_index = 0;
  Tensor weight;  // conv: [out x in x k x k]; fully connected: [in x out]
  Tensor bias;    // [out]
  bool trainable = true;
};

struct ModelMetadata {
  std::uint64_t seed = 0;
  std::uint64_t iterations = 0;
  double lambda = 0.0;
  std::string config;  // resolved run configuration, echoed into checkpoints
};

// Feature extractor g = g_l o g_s followed by the classifier head h_c.
//
// g_s is the run of leading parameterized layers marked frozen; their
// tensors never require gradients, so no training path can update them. The
// head is the final fully connected layer and g(x) is the activation that
// feeds it. There is one parameter store: every loss path reads the same
// tensors, which is how the reference and secondary branches stay tied.
class Model {
 public:
  struct Outputs {
    Tensor features;
    Tensor logits;
  };

  static Model build(std::vector<LayerSpec> layers, ImageShape input, std::uint64_t seed,
                     std::size_t frozen_layers = 1) {
    Model m;
    m.layers_ = std::move(layers);
    m.input_ = input;
    m.frozen_layers_ = frozen_layers;
    m.metadata_.seed = seed;
    m.validate_and_allocate();
    m.initialise(seed);
    return m;
  }

  Model() = default;
  Model(const Model& other) { *this = other; }
  Model& operator=(const Model& other) {
    if (this == &other) return *this;
    layers_ = other.layers_;
    input_ = other.input_;
    frozen_layers_ = other.frozen_layers_;
    feature_dim_ = other.feature_dim_;
    metadata_ = other.metadata_;
    params_.clear();
    for (const auto& p : other.params_) {
      LayerParams copy = p;
      copy.weight = Tensor(p.weight.shape(), {p.weight.data().begin(), p.weight.data().end()}, p.trainable);
      copy.bias = Tensor(p.bias.shape(), {p.bias.data().begin(), p.bias.data().end()}, p.trainable);
      params_.push_back(std::move(copy));
    }
    return *this;
  }
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const std::vector<LayerSpec>& layers() const { return layers_; }
  const ImageShape& input_shape() const { return input_; }
  std::size_t frozen_layers() const { return frozen_layers_; }
  std::size_t feature_dim() const { return feature_dim_; }
  std::size_t class_count() const { return layers_.back().width; }
  ModelMetadata& metadata() { return metadata_; }
  const ModelMetadata& metadata() const { return metadata_; }

  std::vector<LayerParams>& params() { return params_; }
  const std::vector<LayerParams>& params() const { return params_; }

  std::vector<Tensor> trainable_tensors() const { return collect(true); }
  std::vector<Tensor> frozen_tensors() const { return collect(false); }
  std::vector<Tensor> all_tensors() const {
    std::vector<Tensor> out;
    for (const auto& p : params_) {
      out.push_back(p.weight);
      out.push_back(p.bias);
    }
    return out;
  }

  // Gradient tracking follows the trainable flags unless overridden, e.g.
  // for full-network pre-training.
  void track_all_gradients(bool all) {
    for (auto& p : params_) {
      p.weight.set_requires_grad(all || p.trainable);
      p.bias.set_requires_grad(all || p.trainable);
    }
  }

  void zero_grad() {
    for (auto& p : params_) {
      p.weight.zero_grad();
      p.bias.zero_grad();
    }
  }

  // x: [n x c x h x w] or a single [c x h x w] image.
  Outputs forward(const Tensor& x) const {
    Tensor h = as_batch(x);
    const std::size_t head = layers_.size() - 1;
    for (std::size_t i = 0; i < head; ++i) h = apply(i, h);
    return {h, apply(head, h)};
  }

  Tensor forward_features(const Tensor& x) const {
    Tensor h = as_batch(x);
    for (std::size_t i = 0; i + 1 < layers_.size(); ++i) h = apply(i, h);
    return h;
  }

  Tensor forward_logits(const Tensor& x) const { return forward(x).logits; }

  Tensor head(const Tensor& features) const { return apply(layers_.size() - 1, features); }

  // Identity of the architecture plus every parameter bit.
  std::uint64_t hash() const {
    Fnv1a h;
    hash_architecture(h);
    for (const auto& p : params_) hash_params(h, p);
    return h.digest();
  }

  std::uint64_t frozen_hash() const {
    Fnv1a h;
    for (const auto& p : params_) {
      if (!p.trainable) hash_params(h, p);
    }
    return h.digest();
  }

 private:
  std::vector<Tensor> collect(bool trainable) const {
    std::vector<Tensor> out;
    for (const auto& p : params_) {
      if (p.trainable != trainable) continue;
      out.push_back(p.weight);
      out.push_back(p.bias);
    }
    return out;
  }

  Tensor as_batch(const Tensor& x) const {
    const Shape expected{input_.channels, input_.height, input_.width};
    if (x.rank() == 3 && x.shape() == expected) {
      return Tensor({1, input_.channels, input_.height, input_.width}, {x.data().begin(), x.data().end()});
    }
    if (x.rank() != 4 || Shape(x.shape().begin() + 1, x.shape().end()) != expected) {
      throw ShapeError("model input " + shape_string(x.shape()) + " does not match " +
                       shape_string(expected));
    }
    return x;
  }

  const LayerParams* params_for(std::size_t layer) const {
    for (const auto& p : params_) {
      if (p.layer_index == layer) return &p;
    }
    return nullptr;
  }

  Tensor apply(std::size_t i, const Tensor& h) const {
    const auto& spec = layers_[i];
    switch (spec.kind) {
      case LayerKind::conv: {
        const auto* p = params_for(i);
        return add_bias(conv2d(h, p->weight, spec.stride, spec.padding), p->bias);
      }
      case LayerKind::fully_connected: {
        const auto* p = params_for(i);
        return add_bias(matmul(h, p->weight), p->bias);
      }
      case LayerKind::relu:
        return relu(h);
      case LayerKind::maxpool:
        return maxpool2d(h, spec.kernel, spec.stride);
      case LayerKind::flatten:
        return flatten(h);
    }
    throw ValueError("unknown layer kind");
  }

  void validate_and_allocate() {
    if (layers_.empty()) throw ShapeError("model has no layers");
    if (input_.channels == 0 || input_.height == 0 || input_.width == 0) {
      throw ShapeError("input shape must be positive");
    }
    if (layers_.back().kind != LayerKind::fully_connected) {
      throw ShapeError("the last layer (classifier head) must be fully connected");
    }
    bool has_conv = false, has_fc = false;
    std::size_t parameterized = 0;
    // Running activation shape: {c, h, w} while spatial, {features} once flat.
    Shape shape{input_.channels, input_.height, input_.width};
    std::size_t conv_count = 0, fc_count = 0;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& spec = layers_[i];
      const std::string where = "layer " + std::to_string(i) + ": ";
      switch (spec.kind) {
        case LayerKind::conv: {
          if (shape.size() != 3) throw ShapeError(where + "conv after flatten");
          if (spec.width == 0 || spec.kernel == 0 || spec.stride == 0) {
            throw ShapeError(where + "conv needs positive channels, kernel and stride");
          }
          if (spec.in_width != 0 && spec.in_width != shape[0]) {
            throw ShapeError(where + "conv expects " + std::to_string(spec.in_width) + " input channels, chain provides " +
                             std::to_string(shape[0]));
          }
          if (spec.kernel > shape[1] + 2 * spec.padding || spec.kernel > shape[2] + 2 * spec.padding) {
            throw ShapeError(where + "conv kernel larger than padded input " + shape_string(shape));
          }
          LayerParams p;
          p.name = "conv" + std::to_string(++conv_count);
          p.layer_index = i;
          p.weight = Tensor::zeros({spec.width, shape[0], spec.kernel, spec.kernel});
          p.bias = Tensor::zeros({spec.width});
          params_.push_back(std::move(p));
          shape = {spec.width, conv_output_extent(shape[1], spec.kernel, spec.stride, spec.padding),
                   conv_output_extent(shape[2], spec.kernel, spec.stride, spec.padding)};
          has_conv = true;
          ++parameterized;
          break;
        }
        case LayerKind::maxpool:
          if (shape.size() != 3) throw ShapeError(where + "maxpool after flatten");
          if (spec.kernel == 0 || spec.stride == 0 || spec.kernel > shape[1] || spec.kernel > shape[2]) {
            throw ShapeError(where + "pooling window does not fit input " + shape_string(shape));
          }
          shape = {shape[0], (shape[1] - spec.kernel) / spec.stride + 1, (shape[2] - spec.kernel) / spec.stride + 1};
          break;
        case LayerKind::flatten:
          shape = {shape_numel(shape)};
          break;
        case LayerKind::relu:
          break;
        case LayerKind::fully_connected: {
          if (shape.size() != 1) throw ShapeError(where + "fully connected layer needs a flattened input");
          if (spec.width == 0) throw ShapeError(where + "fully connected width must be positive");
          if (spec.in_width != 0 && spec.in_width != shape[0]) {
            throw ShapeError(where + "fully connected layer expects " + std::to_string(spec.in_width) +
                             " inputs, chain provides " + std::to_string(shape[0]));
          }
          LayerParams p;
          p.name = "fc" + std::to_string(++fc_count);
          p.layer_index = i;
          p.weight = Tensor::zeros({shape[0], spec.width});
          p.bias = Tensor::zeros({spec.width});
          params_.push_back(std::move(p));
          if (i + 1 == layers_.size()) feature_dim_ = shape[0];
          shape = {spec.width};
          has_fc = true;
          ++parameterized;
          break;
        }
      }
    }
    if (!has_conv || !has_fc) throw ShapeError("model needs at least one conv and one fully connected layer");
    if (frozen_layers_ >= parameterized) {
      throw ValueError("cannot freeze " + std::to_string(frozen_layers_) + " of " + std::to_string(parameterized) +
                       " parameterized layers; the head must stay trainable");
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
      params_[i].trainable = i >= frozen_layers_;
      params_[i].weight.set_requires_grad(params_[i].trainable);
      params_[i].bias.set_requires_grad(params_[i].trainable);
    }
  }

  // He-style uniform fan-in scaling, zero biases.
  void initialise(std::uint64_t seed) {
    Rng rng(seed);
    for (auto& p : params_) {
      const auto& s = p.weight.shape();
      const std::size_t fan_in = s.size() == 4 ? s[1] * s[2] * s[3] : s[0];
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      for (auto& v : p.weight.mutable_data()) v = rng.uniform(-bound, bound);
    }
  }

  void hash_architecture(Fnv1a& h) const {
    h.update_u64(input_.channels);
    h.update_u64(input_.height);
    h.update_u64(input_.width);
    h.update_u64(frozen_layers_);
    for (const auto& l : layers_) {
      h.update_u64(static_cast<std::uint64_t>(l.kind));
      h.update_u64(l.width);
      h.update_u64(l.kernel);
      h.update_u64(l.stride);
      h.update_u64(l.padding);
    }
  }

  static void hash_params(Fnv1a& h, const LayerParams& p) {
    h.update(p.name);
    for (double v : p.weight.data()) h.update_f64(v);
    for (double v : p.bias.data()) h.update_f64(v);
  }

  std::vector<LayerSpec> layers_;
  ImageShape input_;
  std::size_t frozen_layers_ = 1;
  std::size_t feature_dim_ = 0;
  ModelMetadata metadata_;
  std::vector<LayerParams> params_;
};

}  // namespace doc
