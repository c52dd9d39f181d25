#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "doc/binary_io.hpp"
#include "doc/data.hpp"
#include "doc/errors.hpp"
#include "doc/model.hpp"
#include "doc/random.hpp"

namespace doc {

using FeatureVector = std::vector<double>;

// Features g(v_1) ... g(v_n) of target training samples, tagged with the
// identity of the model that produced them.
struct TemplateSet {
  std::vector<FeatureVector> features;
  std::vector<std::uint64_t> source_ids;
  std::uint64_t model_hash = 0;
  std::string config;

  std::size_t size() const { return features.size(); }
  std::size_t dim() const { return features.empty() ? 0 : features.front().size(); }

  void validate() const {
    if (features.empty()) throw ValueError("template set is empty");
    if (source_ids.size() != features.size()) throw ShapeError("template set has mismatched id list");
    for (const auto& f : features) {
      if (f.size() != dim() || f.empty()) throw ShapeError("templates have inconsistent dimensions");
    }
  }
};

enum class MatchRule { nearest, mean_of_k_nearest };

struct MatchOptions {
  MatchRule rule = MatchRule::nearest;
  std::size_t k = 1;          // used by mean_of_k_nearest
  bool l2_normalize = false;  // applied to query and templates alike
};

inline void l2_normalize(FeatureVector& v) {
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm > 0.0) {
    for (auto& x : v) x /= norm;
  }
}

// g(x) for the selected samples, row by row, without recording a tape.
inline std::vector<FeatureVector> extract_features(const Model& m, const Dataset& data,
                                                   std::span<const std::size_t> indices,
                                                   std::size_t batch_size = 128) {
  NoGradGuard no_grad;
  std::vector<FeatureVector> out;
  out.reserve(indices.size());
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const auto chunk = indices.subspan(start, std::min(batch_size, indices.size() - start));
    const Tensor f = m.forward_features(data.batch(chunk));
    const std::size_t k = f.dim(1);
    for (std::size_t r = 0; r < chunk.size(); ++r) {
      out.emplace_back(f.data().begin() + static_cast<std::ptrdiff_t>(r * k),
                       f.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * k));
    }
  }
  return out;
}

inline std::vector<FeatureVector> extract_features(const Model& m, const Dataset& data) {
  std::vector<std::size_t> all(data.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return extract_features(m, data, all);
}

// Draws `count` distinct samples of the target training set (seeded) and
// stores their features.
inline TemplateSet generate_templates(const Model& m, const Dataset& target_train, std::size_t count,
                                      std::uint64_t seed) {
  if (count == 0) throw ValueError("template count must be positive");
  if (count > target_train.size()) {
    throw ValueError("template count " + std::to_string(count) + " exceeds the " +
                     std::to_string(target_train.size()) + " available target samples");
  }
  std::vector<std::size_t> order(target_train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  // Partial Fisher-Yates: the first `count` slots are a uniform sample.
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(order.size() - i));
    std::swap(order[i], order[j]);
  }
  order.resize(count);
  TemplateSet set;
  set.features = extract_features(m, target_train, order);
  for (auto i : order) set.source_ids.push_back(target_train.samples[i].id);
  set.model_hash = m.hash();
  return set;
}

inline double euclidean(std::span<const double> a, std::span<const double> b) {
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    total += d * d;
  }
  return std::sqrt(total);
}

// S_y: Euclidean distance from g(y) to the nearest template (or the mean of
// the k nearest distances).
inline double match_score(std::span<const double> feature, const TemplateSet& templates,
                          const MatchOptions& options = {}) {
  if (templates.features.empty()) throw ValueError("cannot score against an empty template set");
  if (feature.size() != templates.dim()) {
    throw ShapeError("feature of dimension " + std::to_string(feature.size()) + " vs templates of dimension " +
                     std::to_string(templates.dim()));
  }
  FeatureVector query(feature.begin(), feature.end());
  if (options.l2_normalize) l2_normalize(query);
  std::vector<double> distances;
  distances.reserve(templates.size());
  for (const auto& t : templates.features) {
    if (options.l2_normalize) {
      FeatureVector unit = t;
      l2_normalize(unit);
      distances.push_back(euclidean(query, unit));
    } else {
      distances.push_back(euclidean(query, t));
    }
  }
  if (options.rule == MatchRule::nearest || options.k <= 1) {
    return *std::min_element(distances.begin(), distances.end());
  }
  const std::size_t k = std::min(options.k, distances.size());
  std::partial_sort(distances.begin(), distances.begin() + static_cast<std::ptrdiff_t>(k), distances.end());
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) total += distances[i];
  return total / static_cast<double>(k);
}

struct Decision {
  double score = 0.0;
  int label = 0;  // 1: member of the enrolled class, 0: alien
  double threshold = 0.0;
};

// 1 iff score <= delta.
inline int classify(double score, double delta) { return score <= delta ? 1 : 0; }

inline Decision decide(double score, double delta) { return {score, classify(score, delta), delta}; }

// Scores samples with a template set, refusing templates made by a
// different model.
inline std::vector<double> score_samples(const Model& m, const TemplateSet& templates, const Dataset& data,
                                         std::span<const std::size_t> indices, const MatchOptions& options = {}) {
  templates.validate();
  if (templates.model_hash != m.hash()) {
    throw ValueError("template set was extracted with a different model (hash mismatch)");
  }
  std::vector<double> scores;
  for (const auto& f : extract_features(m, data, indices)) scores.push_back(match_score(f, templates, options));
  return scores;
}

// Template file:
//   "DOCTMPL\0", u32 version (1), u64 model hash, u32 length + config text,
//   u32 count, u32 dim, count x u64 source id, count*dim float64 features,
//   u64 FNV-1a checksum.
inline constexpr std::string_view kTemplateMagic{"DOCTMPL\0", 8};
inline constexpr std::uint32_t kTemplateVersion = 1;

inline void save_templates(const TemplateSet& set, const std::string& path) {
  set.validate();
  BinaryWriter w;
  w.bytes(kTemplateMagic);
  w.u32(kTemplateVersion);
  w.u64(set.model_hash);
  w.string(set.config);
  w.u32(static_cast<std::uint32_t>(set.size()));
  w.u32(static_cast<std::uint32_t>(set.dim()));
  for (auto id : set.source_ids) w.u64(id);
  for (const auto& f : set.features) w.f64s(f);
  w.seal();
  w.write_file(path);
}

inline TemplateSet load_templates(const std::string& path) {
  auto r = BinaryReader::from_file(path);
  r.verify_seal();
  r.expect_magic(kTemplateMagic);
  const auto version = r.u32();
  if (version != kTemplateVersion) r.fail("unsupported template version " + std::to_string(version));
  TemplateSet set;
  set.model_hash = r.u64();
  set.config = r.string();
  const auto count = r.u32();
  const auto dim = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) set.source_ids.push_back(r.u64());
  for (std::uint32_t i = 0; i < count; ++i) set.features.push_back(r.f64s(dim));
  r.expect_end();
  set.validate();
  return set;
}

}  // namespace doc
