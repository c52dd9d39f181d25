#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "doc/finite_difference.hpp"
#include "doc/losses.hpp"
#include "doc/model.hpp"
#include "doc/ops.hpp"
#include "doc/random.hpp"
#include "doc/trainer.hpp"

namespace doc {

struct GradcheckOptions {
  std::uint64_t seed = 0;
  std::size_t trials = 5;           // random batches per (n, k) cell
  double gradient_tolerance = 1e-6;  // relative, analytic vs finite differences
  double identity_tolerance = 1e-12;
  // Test hook: analytic gradients are replaced by g (1 + perturb) + perturb
  // before comparison, so a non-zero value must make the harness fail.
  double perturb = 0.0;
};

struct CheckResult {
  std::string name;
  double measured = 0.0;
  double tolerance = 0.0;
  bool passed() const { return measured <= tolerance; }
};

struct GradcheckReport {
  std::vector<CheckResult> checks;

  bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed(); });
  }

  double max_gradient_error() const {
    double worst = 0.0;
    for (const auto& c : checks) {
      if (c.name.starts_with("grad")) worst = std::max(worst, c.measured);
    }
    return worst;
  }

  std::string to_text() const {
    std::ostringstream out;
    out << std::scientific << std::setprecision(3);
    for (const auto& c : checks) {
      out << (c.passed() ? "PASS " : "FAIL ") << std::left << std::setw(44) << c.name << " error " << c.measured
          << " (tol " << c.tolerance << ")\n";
    }
    out << (passed() ? "gradcheck: all checks passed\n" : "gradcheck: FAILED\n");
    return out.str();
  }
};

namespace detail {

inline Tensor random_tensor(Rng& rng, Shape shape, double scale = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = scale * rng.normal();
  return Tensor(std::move(shape), std::move(v));
}

inline void apply_perturbation(std::vector<double>& g, double perturb) {
  if (perturb == 0.0) return;
  for (auto& x : g) x = x * (1.0 + perturb) + perturb;
}

// Analytic gradient of a tape-built scalar w.r.t. x vs central differences.
template <typename F>
double tape_vs_fd(const F& f, const Tensor& x, double eps, double perturb) {
  Tensor leaf(x.shape(), {x.data().begin(), x.data().end()}, true);
  backward(f(leaf));
  std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
  apply_perturbation(analytic, perturb);
  const Tensor numeric = finite_difference_grad(f, x, eps);
  return relative_error(analytic, numeric.data());
}

}  // namespace detail

// Compactness gradient against finite differences on random n x k batches.
// l_C is quadratic, so a wide step has no truncation error and keeps
// rounding noise far below the tolerance.
inline double check_compactness_gradient(Rng& rng, std::size_t n, std::size_t k, std::size_t trials,
                                         double perturb = 0.0) {
  double worst = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const Tensor x = detail::random_tensor(rng, {n, k});
    auto analytic = compactness_backward(FeatureBatch::from_tensor(x));
    detail::apply_perturbation(analytic, perturb);
    const Tensor numeric = finite_difference_grad(
        [](const Tensor& v) { return Tensor::scalar(compactness_forward(FeatureBatch::from_tensor(v))); }, x, 1e-3);
    worst = std::max(worst, relative_error(analytic, numeric.data()));
  }
  return worst;
}

// |l_C - n^2 / (k (n-1)^2) * mean per-dimension variance| / l_C.
inline double variance_identity_error(const FeatureBatch& x) {
  const std::size_t n = x.rows(), k = x.cols();
  double variance_sum = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += x(i, j);
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) ss += (x(i, j) - mean) * (x(i, j) - mean);
    variance_sum += ss / static_cast<double>(n);
  }
  const double nd = static_cast<double>(n);
  const double predicted = nd * nd / ((nd - 1.0) * (nd - 1.0)) * variance_sum / static_cast<double>(k);
  const double lc = compactness_forward(x);
  return lc == 0.0 ? std::abs(predicted) : std::abs(lc - predicted) / lc;
}

// Tiny instance of the desk architecture used by the end-to-end check.
inline Model gradcheck_model(std::uint64_t seed) {
  return Model::build(desk_backbone(3, 6, 2, 3), ImageShape{1, 8, 8}, seed);
}

// Every trainable tensor of a model under l_D + lambda l_C against finite
// differences of the same composite value. Returns one error per tensor.
inline std::vector<std::pair<std::string, double>> check_model_gradients(Model& m, const Tensor& reference_images,
                                                                         const std::vector<std::size_t>& labels,
                                                                         const Tensor& target_images, double lambda,
                                                                         double perturb = 0.0) {
  m.zero_grad();
  const Tensor loss = add(cross_entropy_loss(m.forward_logits(reference_images), labels),
                          scale(compactness_loss(m.forward(target_images).features), lambda));
  backward(loss);
  auto value = [&] {
    NoGradGuard no_grad;
    const double ld = cross_entropy_loss(m.forward_logits(reference_images), labels).item();
    const double lc = compactness_forward(FeatureBatch::from_tensor(m.forward(target_images).features));
    return ld + lambda * lc;
  };
  std::vector<std::pair<std::string, double>> out;
  for (auto& p : m.params()) {
    if (!p.trainable) continue;
    for (auto* t : {&p.weight, &p.bias}) {
      std::vector<double> analytic(t->numel(), 0.0);
      if (t->has_grad()) analytic.assign(t->grad().begin(), t->grad().end());
      detail::apply_perturbation(analytic, perturb);
      const auto numeric = finite_difference_grad(value, t->mutable_data(), 1e-6);
      out.emplace_back(p.name + (t == &p.weight ? ".weight" : ".bias"), relative_error(analytic, numeric));
    }
  }
  m.zero_grad();
  return out;
}

// The full invariant suite: loss identities, per-op and end-to-end gradient
// checks, frozen-prefix isolation and variant equivalence.
inline GradcheckReport run_gradcheck(const GradcheckOptions& opt = {}) {
  GradcheckReport report;
  Rng rng(opt.seed);
  const double gtol = opt.gradient_tolerance;

  for (std::size_t n : {2, 4, 8}) {
    for (std::size_t k : {1, 16, 64}) {
      report.checks.push_back({"grad compactness n=" + std::to_string(n) + " k=" + std::to_string(k),
                               check_compactness_gradient(rng, n, k, opt.trials, opt.perturb), gtol});
    }
  }

  double identity = 0.0, closed_form = 0.0, column_sum = 0.0;
  for (std::size_t t = 0; t < 20; ++t) {
    const std::size_t n = 2 + rng.below(15), k = 1 + rng.below(64);
    const auto x = FeatureBatch::from_tensor(detail::random_tensor(rng, {n, k}));
    identity = std::max(identity, variance_identity_error(x));
    const auto g = compactness_backward(x);
    // dl_C/dx_ij = 2n / (k (n-1)^2) (x_ij - mean_j); the column sums vanish.
    const double nd = static_cast<double>(n);
    const double c = 2.0 * nd / (static_cast<double>(k) * (nd - 1.0) * (nd - 1.0));
    std::vector<double> expected(n * k);
    double scale_ref = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      double mean = 0.0, sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) mean += x(i, j) / nd;
      for (std::size_t i = 0; i < n; ++i) {
        expected[i * k + j] = c * (x(i, j) - mean);
        sum += g[i * k + j];
        scale_ref = std::max(scale_ref, std::abs(g[i * k + j]));
      }
      column_sum = std::max(column_sum, std::abs(sum) / std::max(scale_ref, 1e-300));
    }
    closed_form = std::max(closed_form, relative_error(g, expected));
  }
  report.checks.push_back({"identity l_C vs batch variance", identity, opt.identity_tolerance});
  report.checks.push_back({"identity l_C gradient closed form", closed_form, 1e-10});
  report.checks.push_back({"identity l_C gradient column sums", column_sum, 1e-10});

  {
    const Tensor logits = detail::random_tensor(rng, {5, 4}, 2.0);
    const std::vector<std::size_t> labels{0, 3, 1, 1, 2};
    report.checks.push_back(
        {"grad cross entropy",
         detail::tape_vs_fd([&](const Tensor& z) { return cross_entropy_loss(z, labels); }, logits, 1e-6, opt.perturb),
         gtol});
  }
  {
    const Tensor a = detail::random_tensor(rng, {3, 4});
    const Tensor b = detail::random_tensor(rng, {4, 2});
    report.checks.push_back(
        {"grad matmul", detail::tape_vs_fd([&](const Tensor& x) { return sum(mul(matmul(x, b), matmul(x, b))); }, a,
                                           1e-6, opt.perturb),
         gtol});
  }
  {
    const Tensor input = detail::random_tensor(rng, {2, 2, 6, 6});
    const Tensor kernel = detail::random_tensor(rng, {3, 2, 3, 3});
    auto f_kernel = [&](const Tensor& w) {
      const Tensor y = maxpool2d(relu(conv2d(input, w, 2, 1)), 2, 1);
      return sum(mul(y, y));
    };
    auto f_input = [&](const Tensor& x) {
      const Tensor y = conv2d(x, kernel, 1, 1);
      return sum(mul(y, y));
    };
    report.checks.push_back({"grad conv2d kernel", detail::tape_vs_fd(f_kernel, kernel, 1e-6, opt.perturb), gtol});
    report.checks.push_back({"grad conv2d input", detail::tape_vs_fd(f_input, input, 1e-6, opt.perturb), gtol});
  }

  Model m = gradcheck_model(derive_seed(opt.seed, 1));
  const Tensor ref = detail::random_tensor(rng, {4, 1, 8, 8});
  const Tensor tgt = detail::random_tensor(rng, {4, 1, 8, 8});
  const std::vector<std::size_t> labels{0, 1, 2, 1};
  const std::uint64_t frozen_before = m.frozen_hash();
  for (const auto& [name, err] : check_model_gradients(m, ref, labels, tgt, 0.1, opt.perturb)) {
    report.checks.push_back({"grad model " + name, err, gtol});
  }

  // The frozen prefix has no gradient slot and survives an update.
  {
    TrainConfig cfg;
    cfg.learning_rate = 0.1;
    train_step(m, {ref, labels}, {tgt, {}}, cfg);
    double leaked = 0.0;
    for (const auto& t : m.frozen_tensors()) leaked += t.has_grad() ? 1.0 : 0.0;
    leaked += m.frozen_hash() == frozen_before ? 0.0 : 1.0;
    report.checks.push_back({"frozen prefix untouched", leaked, 0.0});
  }

  // Memory-efficient match-joint and two-branch updates coincide.
  {
    Model a = gradcheck_model(derive_seed(opt.seed, 2));
    Model b = a;
    TrainConfig cfg;
    cfg.learning_rate = 0.05;
    cfg.lambda = 0.5;
    TrainConfig memeff = cfg;
    memeff.variant = Variant::memory_efficient;
    double gap = 0.0;
    for (int step = 0; step < 10; ++step) {
      const Batch r{detail::random_tensor(rng, {4, 1, 8, 8}), {2, 0, 1, 2}};
      const Batch t{detail::random_tensor(rng, {3, 1, 8, 8}), {}};
      train_step(a, r, t, cfg);
      train_step_memeff(b, r, t, memeff);
    }
    const auto pa = a.all_tensors(), pb = b.all_tensors();
    for (std::size_t i = 0; i < pa.size(); ++i) {
      for (std::size_t j = 0; j < pa[i].numel(); ++j) gap = std::max(gap, std::abs(pa[i][j] - pb[i][j]));
    }
    report.checks.push_back({"variant equivalence (10 steps, L-inf)", gap, 0.0});
  }
  return report;
}

}  // namespace doc
