#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "doc/data.hpp"
#include "doc/errors.hpp"
#include "doc/losses.hpp"
#include "doc/model.hpp"
#include "doc/ops.hpp"
#include "doc/random.hpp"

namespace doc {

enum class Variant { two_branch, memory_efficient };

// How the memory-efficient variant combines its two recorded gradients:
// match_joint uses grad l_D + lambda grad l_C (the two-branch update);
// convex_average uses (1 - lambda) grad l_D + lambda grad l_C.
enum class MemeffWeighting { match_joint, convex_average };

// composite: l = l_D + lambda l_C.
// compactness_only: l = l_C with the reference branch removed, the ablation
// that collapses to a trivial feature.
enum class Objective { composite, compactness_only };

// Where l_C reads the secondary branch: the feature g(x) that templates are
// built from, or the head logits.
enum class LossTap { features, logits };

struct TrainConfig {
  double lambda = 0.1;
  double learning_rate = 5e-5;
  double weight_decay = 5e-4;
  std::size_t iterations = 700;
  std::size_t batch_size_target = 32;
  std::size_t batch_size_reference = 32;
  std::uint64_t seed = 0;
  Variant variant = Variant::two_branch;
  MemeffWeighting memeff_weighting = MemeffWeighting::match_joint;
  Objective objective = Objective::composite;
  LossTap loss_tap = LossTap::features;
  ShufflePolicy shuffle = ShufflePolicy::reshuffle;

  void validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ValueError("lambda must be finite and >= 0");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ValueError("learning_rate must be >= 0");
    if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) throw ValueError("weight_decay must be >= 0");
    if (batch_size_target < 2) throw ValueError("batch_size_target must be >= 2 (l_C needs two samples)");
    if (batch_size_reference < 1) throw ValueError("batch_size_reference must be >= 1");
  }
};

struct Batch {
  Tensor images;
  std::vector<std::size_t> labels;

  static Batch from(const Dataset& data, std::span<const std::size_t> indices) {
    return {data.batch(indices), data.labels(indices)};
  }
};

struct TrainRecord {
  std::size_t iteration = 0;
  double epoch = 0.0;  // samples consumed from the epoch-defining dataset / its size
  LossBundle loss;
};

struct TrainLog {
  std::vector<TrainRecord> records;
  std::string config;               // resolved configuration echoed into the CSV header
  std::vector<std::string> notes;  // post-run diagnostics, emitted after the config

  std::string to_csv() const {
    std::ostringstream out;
    std::istringstream lines(config);
    for (std::string line; std::getline(lines, line);) out << "# " << line << '\n';
    for (const auto& note : notes) out << "# " << note << '\n';
    out << "iteration,epoch,l_D,l_C,l\n";
    out << std::setprecision(17);
    for (const auto& r : records) {
      out << r.iteration << ',' << r.epoch << ',' << r.loss.descriptive << ',' << r.loss.compactness << ','
          << r.loss.total << '\n';
    }
    return out.str();
  }
};

namespace detail {

inline void require_trainable_input(const Model& m, const Batch& b, const char* which) {
  const auto& s = m.input_shape();
  if (b.images.rank() != 4 || b.images.dim(1) != s.channels || b.images.dim(2) != s.height ||
      b.images.dim(3) != s.width) {
    throw ShapeError(std::string(which) + " batch " + shape_string(b.images.shape()) + " does not match model input");
  }
}

inline std::vector<std::vector<double>> snapshot_grads(const std::vector<Tensor>& tensors) {
  std::vector<std::vector<double>> out;
  out.reserve(tensors.size());
  for (const auto& t : tensors) {
    if (t.has_grad()) {
      out.emplace_back(t.grad().begin(), t.grad().end());
    } else {
      out.emplace_back(t.numel(), 0.0);
    }
  }
  return out;
}

inline Tensor tapped(const Model::Outputs& out, LossTap tap) {
  return tap == LossTap::features ? out.features : out.logits;
}

}  // namespace detail

// w <- w - lr (grad + weight_decay w) for every given tensor. Tensors that
// received no gradient are treated as having a zero gradient.
inline void sgd_update(std::vector<Tensor> params, double lr, double weight_decay) {
  for (auto& t : params) {
    auto w = t.mutable_data();
    const auto g = t.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g.empty() ? 0.0 : g[i];
      w[i] -= lr * (gi + weight_decay * w[i]);
    }
  }
}

// One DOC update with tied reference and secondary branches. Both branches
// run through the same parameter tensors, so the composite backward pass
// accumulates grad l_D + lambda grad l_C into a single store.
inline LossBundle train_step(Model& m, const Batch& reference, const Batch& target, const TrainConfig& cfg) {
  cfg.validate();
  detail::require_trainable_input(m, target, "target");
  if (target.images.dim(0) < 2) throw ValueError("target batch needs at least 2 samples");
  m.zero_grad();

  const auto secondary = m.forward(target.images);
  const Tensor compact = compactness_loss(detail::tapped(secondary, cfg.loss_tap));
  LossBundle bundle;
  if (cfg.objective == Objective::compactness_only) {
    backward(compact);
    bundle = composite(0.0, compact.item(), 1.0);
  } else {
    detail::require_trainable_input(m, reference, "reference");
    const Tensor descriptive = cross_entropy_loss(m.forward_logits(reference.images), reference.labels);
    const Tensor total = add(descriptive, scale(compact, cfg.lambda));
    backward(total);
    bundle = composite(descriptive.item(), compact.item(), cfg.lambda);
  }
  sgd_update(m.trainable_tensors(), cfg.learning_rate, cfg.weight_decay);
  return bundle;
}

// Single-network variant: a reference pass and a target pass are
// back-propagated separately, their gradients recorded, and one update is
// applied from the weighted combination chosen by cfg.memeff_weighting.
inline LossBundle train_step_memeff(Model& m, const Batch& reference, const Batch& target, const TrainConfig& cfg) {
  cfg.validate();
  detail::require_trainable_input(m, target, "target");
  if (target.images.dim(0) < 2) throw ValueError("target batch needs at least 2 samples");
  const auto params = m.trainable_tensors();
  const bool with_reference = cfg.objective == Objective::composite;

  double w_descriptive = 1.0, w_compact = cfg.lambda;
  if (!with_reference) {
    w_descriptive = 0.0;
    w_compact = 1.0;
  } else if (cfg.memeff_weighting == MemeffWeighting::convex_average) {
    w_descriptive = 1.0 - cfg.lambda;
  }

  // Weights enter at the root of each pass, exactly where the joint tape
  // applies them, so match_joint reproduces train_step bit for bit.
  double descriptive_value = 0.0;
  std::vector<std::vector<double>> descriptive_grad;
  if (with_reference) {
    detail::require_trainable_input(m, reference, "reference");
    m.zero_grad();
    const Tensor descriptive = cross_entropy_loss(m.forward_logits(reference.images), reference.labels);
    backward(scale(descriptive, w_descriptive));
    descriptive_value = descriptive.item();
    descriptive_grad = detail::snapshot_grads(params);
  }

  m.zero_grad();
  const Tensor compact = compactness_loss(detail::tapped(m.forward(target.images), cfg.loss_tap));
  backward(scale(compact, w_compact));
  const auto compact_grad = detail::snapshot_grads(params);

  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor t = params[p];
    auto g = t.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] = with_reference ? descriptive_grad[p][i] + compact_grad[p][i] : compact_grad[p][i];
    }
  }
  sgd_update(params, cfg.learning_rate, cfg.weight_decay);
  return with_reference ? composite(descriptive_value, compact.item(), cfg.lambda)
                        : composite(0.0, compact.item(), 1.0);
}

struct TrainResult {
  Model model;
  TrainLog log;
};

// Fixed-budget DOC fine-tuning. Batches come from two independently seeded
// streams; target batches smaller than 2 are dropped. Epochs are counted on
// the target dataset.
inline TrainResult train(Model m, const Dataset& reference, const Dataset& target, const TrainConfig& cfg,
                         const std::string& config_echo = {}) {
  cfg.validate();
  if (target.size() < 2) throw ValueError("target dataset needs at least 2 samples");
  const bool with_reference = cfg.objective == Objective::composite;
  if (with_reference && reference.size() == 0) throw ValueError("reference dataset is empty");
  if (with_reference && reference.class_count() != m.class_count()) {
    throw ShapeError("reference dataset has " + std::to_string(reference.class_count()) +
                     " classes but the model head has " + std::to_string(m.class_count()) + " outputs");
  }

  TrainLog log;
  log.config = config_echo;
  BatchStream target_stream(target, cfg.batch_size_target, derive_seed(cfg.seed, 2), 2, cfg.shuffle);
  std::optional<BatchStream> reference_stream;
  if (with_reference) {
    reference_stream.emplace(reference, cfg.batch_size_reference, derive_seed(cfg.seed, 1), 1, cfg.shuffle);
  }

  std::size_t consumed = 0;
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const auto tgt_idx = target_stream.next();
    const Batch tgt = Batch::from(target, tgt_idx);
    Batch ref;
    if (with_reference) ref = Batch::from(reference, reference_stream->next());
    LossBundle loss;
    try {
      loss = cfg.variant == Variant::two_branch ? train_step(m, ref, tgt, cfg) : train_step_memeff(m, ref, tgt, cfg);
    } catch (const NumericError& e) {
      throw NumericError("training aborted at iteration " + std::to_string(it) + ": " + e.what());
    }
    consumed += tgt_idx.size();
    log.records.push_back({it, static_cast<double>(consumed) / static_cast<double>(target.size()), loss});
  }
  m.zero_grad();
  if (cfg.iterations > 0) {
    m.metadata().iterations += cfg.iterations;
    m.metadata().lambda = cfg.lambda;
    if (!config_echo.empty()) m.metadata().config = config_echo;
  }
  return {std::move(m), std::move(log)};
}

struct PretrainConfig {
  std::size_t epochs = 10;
  double learning_rate = 0.05;
  double weight_decay = 5e-4;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

// One plain cross-entropy step over every parameter, including the prefix
// that DOC fine-tuning keeps frozen.
inline double cross_entropy_step(Model& m, const Batch& batch, double lr, double weight_decay) {
  m.track_all_gradients(true);
  m.zero_grad();
  double value = 0.0;
  try {
    const Tensor loss = cross_entropy_loss(m.forward_logits(batch.images), batch.labels);
    backward(loss);
    value = loss.item();
    sgd_update(m.all_tensors(), lr, weight_decay);
  } catch (...) {
    m.track_all_gradients(false);
    throw;
  }
  m.zero_grad();
  m.track_all_gradients(false);
  return value;
}

// Supervised training of the whole network on the reference classes,
// producing the starting point W_0 for DOC fine-tuning.
inline TrainResult pretrain_reference(Model m, const Dataset& reference, const PretrainConfig& cfg,
                                      const std::string& config_echo = {}) {
  if (reference.class_count() < 2) throw ValueError("pre-training needs a reference dataset with at least 2 classes");
  if (reference.class_count() != m.class_count()) {
    throw ShapeError("reference dataset has " + std::to_string(reference.class_count()) +
                     " classes but the model head has " + std::to_string(m.class_count()) + " outputs");
  }
  if (cfg.batch_size == 0) throw ValueError("batch size must be positive");
  TrainLog log;
  log.config = config_echo;
  if (cfg.epochs == 0) return {std::move(m), std::move(log)};

  const std::size_t per_epoch = (reference.size() + cfg.batch_size - 1) / cfg.batch_size;
  BatchStream stream(reference, cfg.batch_size, derive_seed(cfg.seed, 3));
  std::size_t consumed = 0;
  for (std::size_t it = 0; it < cfg.epochs * per_epoch; ++it) {
    const auto idx = stream.next();
    const double loss = cross_entropy_step(m, Batch::from(reference, idx), cfg.learning_rate, cfg.weight_decay);
    consumed += idx.size();
    log.records.push_back({it, static_cast<double>(consumed) / static_cast<double>(reference.size()),
                           composite(loss, 0.0, 0.0)});
  }
  m.metadata().iterations += cfg.epochs * per_epoch;
  if (!config_echo.empty()) m.metadata().config = config_echo;
  return {std::move(m), std::move(log)};
}

// Fraction of samples whose arg-max logit equals the label.
inline double accuracy(const Model& m, const Dataset& data, std::size_t batch_size = 128) {
  if (data.size() == 0) return 0.0;
  NoGradGuard no_grad;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(data.size(), start + batch_size); ++i) idx.push_back(i);
    const Tensor logits = m.forward_logits(data.batch(idx));
    const std::size_t classes = logits.dim(1);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const auto row = logits.data().subspan(r * classes, classes);
      const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      if (best == data.samples[idx[r]].label) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace doc
