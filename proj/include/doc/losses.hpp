#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "doc/errors.hpp"
#include "doc/tensor.hpp"

namespace doc {

// n x k matrix of features, one row per sample in the batch.
class FeatureBatch {
 public:
  FeatureBatch(std::size_t rows, std::size_t cols, std::vector<double> values)
      : rows_(rows), cols_(cols), values_(std::move(values)) {
    if (rows_ < 2) {
      throw ValueError("compactness loss needs a batch of at least 2 samples, got " + std::to_string(rows_));
    }
    if (cols_ == 0 || values_.size() != rows_ * cols_) {
      throw ShapeError("feature batch of " + std::to_string(values_.size()) + " values is not " +
                       std::to_string(rows_) + "x" + std::to_string(cols_));
    }
    for (double v : values_) {
      if (!std::isfinite(v)) throw NumericError("feature batch contains a non-finite value");
    }
  }

  static FeatureBatch from_tensor(const Tensor& x) {
    if (x.rank() != 2) throw ShapeError("feature batch must be 2-d, got " + shape_string(x.shape()));
    return FeatureBatch(x.dim(0), x.dim(1), std::vector<double>(x.data().begin(), x.data().end()));
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::span<const double> values() const { return values_; }
  double operator()(std::size_t i, std::size_t j) const { return values_[i * cols_ + j]; }

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<double> values_;
};

namespace detail {

// z_i = x_i - m_i, where m_i is the mean of the other n-1 rows.
inline std::vector<double> leave_one_out_residuals(const FeatureBatch& x) {
  const std::size_t n = x.rows(), k = x.cols();
  std::vector<double> column_sum(k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) column_sum[j] += x(i, j);
  }
  const double inv = 1.0 / static_cast<double>(n - 1);
  std::vector<double> z(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const double rest_mean = (column_sum[j] - x(i, j)) * inv;
      z[i * k + j] = x(i, j) - rest_mean;
    }
  }
  return z;
}

}  // namespace detail

// l_C = (1/(nk)) * sum_i z_i^T z_i
inline double compactness_forward(const FeatureBatch& x) {
  const auto z = detail::leave_one_out_residuals(x);
  double total = 0.0;
  for (double v : z) total += v * v;
  return total / static_cast<double>(x.rows() * x.cols());
}

// d l_C / d x_ij = 2/((n-1)nk) * [ n z_ij - sum_i' z_i'j ]
//
// The correction term sums over the batch index within column j. It is zero
// in exact arithmetic, but keeping it makes the column sums of the gradient
// vanish to rounding.
inline std::vector<double> compactness_backward(const FeatureBatch& x) {
  const std::size_t n = x.rows(), k = x.cols();
  const auto z = detail::leave_one_out_residuals(x);
  std::vector<double> z_column_sum(k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) z_column_sum[j] += z[i * k + j];
  }
  const double nd = static_cast<double>(n);
  const double factor = 2.0 / ((nd - 1.0) * nd * static_cast<double>(k));
  std::vector<double> grad(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      grad[i * k + j] = factor * (nd * z[i * k + j] - z_column_sum[j]);
    }
  }
  return grad;
}

namespace detail {

inline void check_labels(std::span<const std::size_t> labels, std::size_t rows, std::size_t classes) {
  if (labels.size() != rows) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(rows) + " rows");
  }
  for (auto label : labels) {
    if (label >= classes) {
      throw ValueError("cross_entropy: label " + std::to_string(label) + " outside [0, " +
                       std::to_string(classes) + ")");
    }
  }
}

// Per-row -log softmax(row)[label], stabilised by subtracting the row max.
// log(sum exp) is evaluated as log1p over the non-max terms so that
// confident rows keep full relative precision.
inline double row_cross_entropy(std::span<const double> row, std::size_t label) {
  std::size_t top = 0;
  for (std::size_t j = 1; j < row.size(); ++j) {
    if (row[j] > row[top]) top = j;
  }
  const double peak = row[top];
  double rest = 0.0;
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (j != top) rest += std::exp(row[j] - peak);
  }
  return std::log1p(rest) - (row[label] - peak);
}

}  // namespace detail

// Mean over the batch of -log softmax(logits_i)[label_i]; logits is n x C.
inline double cross_entropy(std::span<const double> logits, std::size_t rows, std::size_t classes,
                            std::span<const std::size_t> labels) {
  if (rows == 0 || classes == 0 || logits.size() != rows * classes) {
    throw ShapeError("cross_entropy: logits do not form a " + std::to_string(rows) + "x" +
                     std::to_string(classes) + " matrix");
  }
  detail::check_labels(labels, rows, classes);
  double total = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    total += detail::row_cross_entropy(logits.subspan(i * classes, classes), labels[i]);
  }
  return total / static_cast<double>(rows);
}

inline std::vector<double> softmax_row(std::span<const double> row) {
  double peak = row[0];
  for (double v : row) peak = std::max(peak, v);
  std::vector<double> p(row.size());
  double total = 0.0;
  for (std::size_t j = 0; j < row.size(); ++j) {
    p[j] = std::exp(row[j] - peak);
    total += p[j];
  }
  for (auto& v : p) v /= total;
  return p;
}

struct LossBundle {
  double descriptive = 0.0;  // l_D
  double compactness = 0.0;  // l_C
  double total = 0.0;        // l
  double lambda = 0.0;
};

// l = l_D + lambda * l_C
inline LossBundle composite(double descriptive, double compactness, double lambda) {
  if (!(lambda >= 0.0)) throw ValueError("composite loss weight lambda must be >= 0");
  if (!(descriptive >= 0.0) || !(compactness >= 0.0)) {
    throw ValueError("loss components must be non-negative");
  }
  return {descriptive, compactness, descriptive + lambda * compactness, lambda};
}

// Tape-aware wrappers.

inline Tensor compactness_loss(const Tensor& features) {
  const auto batch = FeatureBatch::from_tensor(features);
  const double value = compactness_forward(batch);
  return detail::make_result({1}, {value}, "compactness", {features},
                             [features](const detail::Node& self) {
                               const auto grad = compactness_backward(FeatureBatch::from_tensor(features));
                               auto& g = self.parents[0]->grad;
                               const double up = self.grad[0];
                               for (std::size_t i = 0; i < g.size(); ++i) g[i] += up * grad[i];
                             });
}

inline Tensor cross_entropy_loss(const Tensor& logits, std::vector<std::size_t> labels) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy: logits must be 2-d, got " + shape_string(logits.shape()));
  const std::size_t n = logits.dim(0), classes = logits.dim(1);
  const double value = cross_entropy(logits.data(), n, classes, labels);
  return detail::make_result(
      {1}, {value}, "cross_entropy", {logits},
      [logits, labels = std::move(labels), n, classes](const detail::Node& self) {
        auto& g = self.parents[0]->grad;
        const double up = self.grad[0] / static_cast<double>(n);
        const auto x = logits.data();
        for (std::size_t i = 0; i < n; ++i) {
          const auto p = softmax_row(x.subspan(i * classes, classes));
          for (std::size_t j = 0; j < classes; ++j) {
            const double target = j == labels[i] ? 1.0 : 0.0;
            g[i * classes + j] += up * (p[j] - target);
          }
        }
      });
}

}  // namespace doc
