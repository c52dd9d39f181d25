#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <tuple>
#include <vector>

#include "doc/data.hpp"
#include "doc/model.hpp"
#include "doc/protocol.hpp"
#include "doc/trainer.hpp"

namespace doc {

// The synthetic one-class task: ten shape classes, one target, one held-out
// alien class and the remaining eight as the reference set.
//
// Fine-tuning uses fixed batch orders whose cycles divide the 50-iteration
// smoothing window: 1600 reference images at 32 per batch and 100 target
// images at 50 per batch.
struct DeskTaskConfig {
  std::size_t classes = 10;
  std::size_t per_class = 200;
  std::size_t image_size = 16;
  double noise = 1.2;

  std::size_t feature_width = 64;
  PretrainConfig pretrain{15, 0.05, 5e-4, 32, 0};

  TrainConfig doc = [] {
    TrainConfig c;
    c.lambda = 1.0;
    c.learning_rate = 0.01;
    c.batch_size_target = 50;
    c.batch_size_reference = 32;
    c.shuffle = ShufflePolicy::once;
    return c;
  }();
  // The compactness-only ablation needs a far larger step to reach its
  // collapsed fixed point within the same iteration budget.
  double ablation_learning_rate = 10.0;

  std::size_t template_count = 40;
  std::vector<std::size_t> template_sweep;
};

struct DeskSplit {
  Dataset data;       // target and alien classes
  Dataset reference;  // the other classes
  std::string target;
  std::string alien;
};

// Seed s uses class s mod C as target and (s + C/2) mod C as alien.
inline DeskSplit desk_split(const DeskTaskConfig& cfg, std::uint64_t seed) {
  if (cfg.classes < 4) throw ValueError("desk task needs at least 4 classes");
  const Dataset all = synth_shapes(cfg.classes, cfg.per_class, cfg.image_size, cfg.noise, derive_seed(seed, 100));
  const std::size_t target = seed % cfg.classes;
  const std::size_t alien = (seed + cfg.classes / 2) % cfg.classes;
  std::vector<std::size_t> rest;
  for (std::size_t c = 0; c < cfg.classes; ++c) {
    if (c != target && c != alien) rest.push_back(c);
  }
  return {all.select_classes({target, alien}), all.select_classes(rest), all.class_names[target],
          all.class_names[alien]};
}

// W_0 for a reference set: the desk backbone trained with cross-entropy.
// Results are memoised per (reference source, class count, size, seed) so
// the methods compared on one seed share the same starting point.
class DeskBaseFactory {
 public:
  explicit DeskBaseFactory(DeskTaskConfig cfg) : cfg_(std::move(cfg)) {}

  Model operator()(const Dataset& reference, std::uint64_t seed) {
    const Key key{reference.source, reference.class_count(), reference.size(), seed};
    if (const auto it = cache_.find(key); it != cache_.end()) return it->second;
    Model base = Model::build(desk_backbone(reference.class_count(), cfg_.feature_width), reference.shape, seed);
    PretrainConfig pc = cfg_.pretrain;
    pc.seed = seed;
    Model trained = pretrain_reference(std::move(base), reference, pc).model;
    cache_.emplace(key, trained);
    return trained;
  }

 private:
  using Key = std::tuple<std::string, std::size_t, std::size_t, std::uint64_t>;
  DeskTaskConfig cfg_;
  std::map<Key, Model> cache_;
};

struct DeskSeedResult {
  DeskSplit split;
  ProtocolReport pretrained;  // W_0 features
  ProtocolReport doc;
  ProtocolReport ablation;    // compactness loss only
};

inline ProtocolConfig desk_protocol(const DeskTaskConfig& cfg, const DeskSplit& split, std::uint64_t seed) {
  ProtocolConfig p;
  p.classes = {split.target};
  p.template_count = cfg.template_count;
  p.template_sweep = cfg.template_sweep;
  p.seed = seed;
  return p;
}

// All three methods on one seed, sharing W_0.
inline DeskSeedResult run_desk_seed(const DeskTaskConfig& cfg, std::uint64_t seed) {
  DeskSeedResult r{desk_split(cfg, seed), {}, {}, {}};
  auto factory = std::make_shared<DeskBaseFactory>(cfg);
  auto make_base = [factory](const Dataset& ref, std::uint64_t s) { return (*factory)(ref, s); };
  const ProtocolConfig proto = desk_protocol(cfg, r.split, seed);

  TrainConfig ablation = cfg.doc;
  ablation.learning_rate = cfg.ablation_learning_rate;
  r.pretrained = run_protocol(r.split.data, r.split.reference, {make_base, cfg.doc, Method::pretrained_features}, proto);
  r.doc = run_protocol(r.split.data, r.split.reference, {make_base, cfg.doc, Method::doc}, proto);
  r.ablation = run_protocol(r.split.data, r.split.reference, {make_base, ablation, Method::compactness_only}, proto);
  return r;
}

}  // namespace doc
