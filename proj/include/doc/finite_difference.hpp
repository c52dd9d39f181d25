#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "doc/errors.hpp"
#include "doc/tensor.hpp"

namespace doc {

// Central differences (f(x + eps e_i) - f(x - eps e_i)) / 2eps, coordinate by
// coordinate. f must return a scalar tensor; it is evaluated without tape.
inline Tensor finite_difference_grad(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                                     double eps) {
  if (!(eps > 0.0)) throw ValueError("finite_difference_grad: eps must be positive");
  NoGradGuard no_grad;
  Tensor probe = x.clone();
  auto values = probe.mutable_data();
  std::vector<double> grad(values.size());
  auto evaluate = [&] {
    const Tensor out = f(probe);
    if (!out.defined() || !out.is_scalar()) {
      throw ShapeError("finite_difference_grad: function output is not scalar");
    }
    return out.item();
  };
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + eps;
    const double up = evaluate();
    values[i] = saved - eps;
    const double down = evaluate();
    values[i] = saved;
    grad[i] = (up - down) / (2.0 * eps);
  }
  return Tensor(x.shape(), std::move(grad));
}

// In-place variant for buffers owned elsewhere (model parameters). The buffer
// is restored bit-exactly after each probe.
inline std::vector<double> finite_difference_grad(const std::function<double()>& f, std::span<double> values,
                                                  double eps) {
  if (!(eps > 0.0)) throw ValueError("finite_difference_grad: eps must be positive");
  std::vector<double> grad(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + eps;
    const double up = f();
    values[i] = saved - eps;
    const double down = f();
    values[i] = saved;
    grad[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

// max_i |a_i - b_i| / max(||a||_inf, ||b||_inf); 0 when both are zero.
inline double relative_error(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("relative_error: length mismatch");
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
  }
  return scale == 0.0 ? 0.0 : diff / scale;
}

}  // namespace doc
