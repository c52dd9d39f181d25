#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "doc/errors.hpp"

namespace doc {

// Lower scores are more target-like: a sample is called positive when
// score <= delta.
struct ScoredOutcome {
  double score = 0.0;
  int truth = 0;  // 1 positive (target class), 0 alien
};

struct RocPoint {
  double threshold = 0.0;  // -inf for the all-negative starting point
  double fpr = 0.0;
  double tpr = 0.0;
  std::size_t false_positives = 0;
  std::size_t true_positives = 0;
};

namespace detail {

inline void count_classes(std::span<const ScoredOutcome> outcomes, std::size_t& positives, std::size_t& negatives) {
  positives = negatives = 0;
  for (const auto& o : outcomes) {
    if (!std::isfinite(o.score)) throw ValueError("ROC input contains a non-finite score");
    if (o.truth != 0 && o.truth != 1) throw ValueError("ROC truth labels must be 0 or 1");
    (o.truth == 1 ? positives : negatives) += 1;
  }
  if (positives == 0 || negatives == 0) {
    throw ValueError("ROC needs at least one positive and one negative outcome");
  }
}

}  // namespace detail

// Operating points for every distinct threshold, starting at (0, 0). Equal
// scores are admitted together, so ties form a single (possibly diagonal)
// step.
inline std::vector<RocPoint> roc(std::span<const ScoredOutcome> outcomes) {
  std::size_t positives = 0, negatives = 0;
  detail::count_classes(outcomes, positives, negatives);
  std::vector<ScoredOutcome> sorted(outcomes.begin(), outcomes.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const ScoredOutcome& a, const ScoredOutcome& b) { return a.score < b.score; });
  std::vector<RocPoint> curve;
  curve.push_back({-std::numeric_limits<double>::infinity(), 0.0, 0.0, 0, 0});
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    const double threshold = sorted[i].score;
    for (; i < sorted.size() && sorted[i].score == threshold; ++i) (sorted[i].truth == 1 ? tp : fp) += 1;
    curve.push_back({threshold, static_cast<double>(fp) / static_cast<double>(negatives),
                     static_cast<double>(tp) / static_cast<double>(positives), fp, tp});
  }
  return curve;
}

// Trapezoidal area under roc(). Accumulated in integer counts, so it equals
// the Mann-Whitney statistic (ties counted 1/2) exactly.
inline double auc(std::span<const ScoredOutcome> outcomes) {
  const auto curve = roc(outcomes);
  const auto& last = curve.back();
  std::uint64_t twice_area = 0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    const auto dfp = curve[i].false_positives - curve[i - 1].false_positives;
    twice_area += dfp * (curve[i].true_positives + curve[i - 1].true_positives);
  }
  return static_cast<double>(twice_area) /
         (2.0 * static_cast<double>(last.true_positives) * static_cast<double>(last.false_positives));
}

struct EerPoint {
  double rate = 0.0;       // FPR == FNR at the crossing
  double threshold = 0.0;  // score threshold at (or interpolated to) the crossing
};

// Equal error rate: where FPR = FNR = 1 - TPR along the ROC curve, linearly
// interpolated between the two operating points that bracket the crossing.
inline EerPoint eer_point(std::span<const ScoredOutcome> outcomes) {
  const auto curve = roc(outcomes);
  auto gap = [](const RocPoint& p) { return p.fpr - (1.0 - p.tpr); };
  for (std::size_t i = 1; i < curve.size(); ++i) {
    const double g0 = gap(curve[i - 1]);
    const double g1 = gap(curve[i]);
    if (g1 < 0.0) continue;
    if (g1 == 0.0 || g0 >= 0.0) return {curve[i].fpr, curve[i].threshold};
    const double t = g0 / (g0 - g1);
    const double rate = curve[i - 1].fpr + t * (curve[i].fpr - curve[i - 1].fpr);
    const double lo = std::isfinite(curve[i - 1].threshold) ? curve[i - 1].threshold : curve[i].threshold;
    return {rate, lo + t * (curve[i].threshold - lo)};
  }
  return {curve.back().fpr, curve.back().threshold};
}

inline double eer(std::span<const ScoredOutcome> outcomes) { return eer_point(outcomes).rate; }

// Mann-Whitney by explicit pair enumeration; an independent check on auc().
inline double pairwise_auc(std::span<const ScoredOutcome> outcomes) {
  double wins = 0.0;
  std::size_t pairs = 0;
  for (const auto& p : outcomes) {
    if (p.truth != 1) continue;
    for (const auto& n : outcomes) {
      if (n.truth != 0) continue;
      ++pairs;
      if (p.score < n.score) {
        wins += 1.0;
      } else if (p.score == n.score) {
        wins += 0.5;
      }
    }
  }
  if (pairs == 0) throw ValueError("pairwise AUC needs both classes");
  return wins / static_cast<double>(pairs);
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};

inline MeanStd mean_std(std::span<const double> values) {
  if (values.empty()) return {};
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(values.size()))};
}

}  // namespace doc
