#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "doc/errors.hpp"
#include "doc/tensor.hpp"

namespace doc {

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

inline std::span<double> parent_grad(const Node& self, std::size_t i) {
  return self.parents[i]->grad;
}

inline bool parent_tracked(const Node& self, std::size_t i) {
  return self.parents[i]->requires_grad;
}

// Parameter-facing rules sum their whole contribution locally and add it in
// one pass, so a tensor used by k ops receives exactly k additions. That
// keeps a joint backward pass bit-identical to separate passes whose
// gradients are summed afterwards.
inline void accumulate(std::span<double> grad, const std::vector<double>& contribution) {
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += contribution[i];
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return detail::make_result(a.shape(), std::move(out), "add", {a, b}, [](const detail::Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!detail::parent_tracked(self, p)) continue;
      auto g = detail::parent_grad(self, p);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return detail::make_result(a.shape(), std::move(out), "mul", {a, b},
                             [a, b](const detail::Node& self) {
                               const auto x = a.data();
                               const auto y = b.data();
                               if (detail::parent_tracked(self, 0)) {
                                 auto g = detail::parent_grad(self, 0);
                                 for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y[i];
                               }
                               if (detail::parent_tracked(self, 1)) {
                                 auto g = detail::parent_grad(self, 1);
                                 for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * x[i];
                               }
                             });
}

inline Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return detail::make_result(a.shape(), std::move(out), "scale", {a},
                             [factor](const detail::Node& self) {
                               auto g = detail::parent_grad(self, 0);
                               for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
                             });
}

inline Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return detail::make_result({1}, {total}, "sum", {a}, [](const detail::Node& self) {
    auto g = detail::parent_grad(self, 0);
    for (auto& v : g) v += self.grad[0];
  });
}

// a[m x p] * b[p x q]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), p = a.dim(1), q = b.dim(1);
  std::vector<double> out(m * q, 0.0);
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * q;
    for (std::size_t r = 0; r < p; ++r) {
      const double xv = x[i * p + r];
      const double* yrow = y.data() + r * q;
      for (std::size_t j = 0; j < q; ++j) row[j] += xv * yrow[j];
    }
  }
  return detail::make_result(
      {m, q}, std::move(out), "matmul", {a, b}, [a, b, m, p, q](const detail::Node& self) {
        const auto x = a.data();
        const auto y = b.data();
        const auto& up = self.grad;
        if (detail::parent_tracked(self, 0)) {
          auto ga = detail::parent_grad(self, 0);
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t r = 0; r < p; ++r) {
              double acc = 0.0;
              for (std::size_t j = 0; j < q; ++j) acc += up[i * q + j] * y[r * q + j];
              ga[i * p + r] += acc;
            }
          }
        }
        if (detail::parent_tracked(self, 1)) {
          std::vector<double> local(p * q, 0.0);
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t r = 0; r < p; ++r) {
              const double xv = x[i * p + r];
              double* lrow = local.data() + r * q;
              for (std::size_t j = 0; j < q; ++j) lrow[j] += xv * up[i * q + j];
            }
          }
          detail::accumulate(detail::parent_grad(self, 1), local);
        }
      });
}

// Adds bias[f] along axis 1 of x[n x f x ...].
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() < 2 || bias.rank() != 1 || bias.dim(0) != x.dim(1)) {
    throw ShapeError("add_bias: bias " + shape_string(bias.shape()) + " does not match input " +
                     shape_string(x.shape()));
  }
  const std::size_t n = x.dim(0), f = x.dim(1);
  const std::size_t inner = x.numel() / (n * f);
  std::vector<double> out(x.data().begin(), x.data().end());
  const auto b = bias.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < f; ++c) {
      double* block = out.data() + (i * f + c) * inner;
      for (std::size_t s = 0; s < inner; ++s) block[s] += b[c];
    }
  }
  return detail::make_result(x.shape(), std::move(out), "add_bias", {x, bias},
                             [n, f, inner](const detail::Node& self) {
                               const auto& up = self.grad;
                               if (detail::parent_tracked(self, 0)) {
                                 auto gx = detail::parent_grad(self, 0);
                                 for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += up[i];
                               }
                               if (detail::parent_tracked(self, 1)) {
                                 std::vector<double> local(f, 0.0);
                                 for (std::size_t i = 0; i < n; ++i) {
                                   for (std::size_t c = 0; c < f; ++c) {
                                     const double* block = up.data() + (i * f + c) * inner;
                                     double acc = 0.0;
                                     for (std::size_t s = 0; s < inner; ++s) acc += block[s];
                                     local[c] += acc;
                                   }
                                 }
                                 detail::accumulate(detail::parent_grad(self, 1), local);
                               }
                             });
}

inline Tensor relu(const Tensor& x) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  return detail::make_result(x.shape(), std::move(out), "relu", {x}, [x](const detail::Node& self) {
    const auto in = x.data();
    auto g = detail::parent_grad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (in[i] > 0.0) g[i] += self.grad[i];
    }
  });
}

// [n x ...] -> [n x rest]
inline Tensor flatten(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("flatten: expected a batched tensor, got " + shape_string(x.shape()));
  const std::size_t n = x.dim(0);
  std::vector<double> out(x.data().begin(), x.data().end());
  return detail::make_result({n, x.numel() / n}, std::move(out), "flatten", {x},
                             [](const detail::Node& self) {
                               auto g = detail::parent_grad(self, 0);
                               for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                             });
}

inline std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                                      std::size_t padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

namespace detail {

// Output positions o with 0 <= o*stride + k - padding < in, as [lo, hi).
inline std::pair<std::size_t, std::size_t> valid_range(std::size_t out, std::size_t in, std::size_t k,
                                                       std::size_t stride, std::size_t padding) {
  std::size_t lo = 0;
  if (k < padding) lo = (padding - k + stride - 1) / stride;
  std::size_t hi = 0;
  if (in + padding > k) hi = std::min(out, (in + padding - k - 1) / stride + 1);
  if (hi < lo) hi = lo;
  return {lo, hi};
}

}  // namespace detail

// Cross-correlation of input[n x c x h x w] with kernel[f x c x kh x kw] and
// zero padding.
inline Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding) {
  if (input.rank() != 4 || kernel.rank() != 4 || input.dim(1) != kernel.dim(1)) {
    throw ShapeError("conv2d: incompatible input " + shape_string(input.shape()) + " and kernel " +
                     shape_string(kernel.shape()));
  }
  if (stride == 0) throw ValueError("conv2d: stride must be positive");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t f = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kh > h + 2 * padding || kw > w + 2 * padding) {
    throw ShapeError("conv2d: kernel " + shape_string(kernel.shape()) + " larger than padded input " +
                     shape_string(input.shape()));
  }
  const std::size_t oh = conv_output_extent(h, kh, stride, padding);
  const std::size_t ow = conv_output_extent(w, kw, stride, padding);
  std::vector<double> out(n * f * oh * ow, 0.0);
  const auto in = input.data();
  const auto k = kernel.data();
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t o = 0; o < f; ++o) {
      double* dst = out.data() + (b * f + o) * oh * ow;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double* src = in.data() + (b * c + ch) * h * w;
        for (std::size_t i = 0; i < kh; ++i) {
          const auto [ylo, yhi] = detail::valid_range(oh, h, i, stride, padding);
          for (std::size_t j = 0; j < kw; ++j) {
            const double wv = k[((o * c + ch) * kh + i) * kw + j];
            const auto [xlo, xhi] = detail::valid_range(ow, w, j, stride, padding);
            for (std::size_t y = ylo; y < yhi; ++y) {
              const double* row = src + (y * stride + i - padding) * w;
              double* drow = dst + y * ow;
              for (std::size_t x = xlo; x < xhi; ++x) drow[x] += wv * row[x * stride + j - padding];
            }
          }
        }
      }
    }
  }
  return detail::make_result(
      {n, f, oh, ow}, std::move(out), "conv2d", {input, kernel},
      [input, kernel, stride, padding, n, c, h, w, f, kh, kw, oh, ow](const detail::Node& self) {
        const auto in = input.data();
        const auto k = kernel.data();
        const auto& up = self.grad;
        const bool want_in = detail::parent_tracked(self, 0);
        const bool want_k = detail::parent_tracked(self, 1);
        std::span<double> gin = want_in ? detail::parent_grad(self, 0) : std::span<double>{};
        std::vector<double> gk(want_k ? kernel.numel() : 0, 0.0);
        for (std::size_t b = 0; b < n; ++b) {
          for (std::size_t o = 0; o < f; ++o) {
            const double* g = up.data() + (b * f + o) * oh * ow;
            for (std::size_t ch = 0; ch < c; ++ch) {
              const std::size_t plane = (b * c + ch) * h * w;
              for (std::size_t i = 0; i < kh; ++i) {
                const auto [ylo, yhi] = detail::valid_range(oh, h, i, stride, padding);
                for (std::size_t j = 0; j < kw; ++j) {
                  const std::size_t kidx = ((o * c + ch) * kh + i) * kw + j;
                  const double wv = k[kidx];
                  const auto [xlo, xhi] = detail::valid_range(ow, w, j, stride, padding);
                  double acc = 0.0;
                  for (std::size_t y = ylo; y < yhi; ++y) {
                    const std::size_t base = plane + (y * stride + i - padding) * w;
                    const double* grow = g + y * ow;
                    if (want_k) {
                      const double* row = in.data() + base;
                      for (std::size_t x = xlo; x < xhi; ++x) acc += grow[x] * row[x * stride + j - padding];
                    }
                    if (want_in) {
                      double* row = gin.data() + base;
                      for (std::size_t x = xlo; x < xhi; ++x) row[x * stride + j - padding] += wv * grow[x];
                    }
                  }
                  if (want_k) gk[kidx] += acc;
                }
              }
            }
          }
        }
        if (want_k) detail::accumulate(detail::parent_grad(self, 1), gk);
      });
}

// Max over size x size windows; ties resolve to the first element in
// row-major window order.
inline Tensor maxpool2d(const Tensor& input, std::size_t size, std::size_t stride) {
  if (input.rank() != 4) throw ShapeError("maxpool2d: expected 4-d input, got " + shape_string(input.shape()));
  if (size == 0 || stride == 0) throw ValueError("maxpool2d: size and stride must be positive");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (size > h || size > w) {
    throw ShapeError("maxpool2d: window " + std::to_string(size) + " larger than input " +
                     shape_string(input.shape()));
  }
  const std::size_t oh = (h - size) / stride + 1;
  const std::size_t ow = (w - size) / stride + 1;
  std::vector<double> out(n * c * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  const auto in = input.data();
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        std::size_t best = base + (y * stride) * w + x * stride;
        for (std::size_t i = 0; i < size; ++i) {
          for (std::size_t j = 0; j < size; ++j) {
            const std::size_t idx = base + (y * stride + i) * w + x * stride + j;
            if (in[idx] > in[best]) best = idx;
          }
        }
        const std::size_t o = (plane * oh + y) * ow + x;
        out[o] = in[best];
        argmax[o] = best;
      }
    }
  }
  return detail::make_result({n, c, oh, ow}, std::move(out), "maxpool2d", {input},
                             [argmax = std::move(argmax)](const detail::Node& self) {
                               auto g = detail::parent_grad(self, 0);
                               for (std::size_t o = 0; o < argmax.size(); ++o) g[argmax[o]] += self.grad[o];
                             });
}

}  // namespace doc
