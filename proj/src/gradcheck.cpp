/*
 * Copyright DRNet Contributors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include "drnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "drnet/error.hpp"
#include "drnet/gumbel.hpp"
#include "drnet/network.hpp"
#include "drnet/objective.hpp"
#include "drnet/ops.hpp"
#include "drnet/rng.hpp"

namespace drnet {

double finite_difference_gradcheck(const ScalarFn& analytic, const ScalarFn& reference, const Tensor& input,
                                   double h) {
  if (!(h > 0.0)) throw ArgumentError("finite-difference step must be positive");
  Variable x(input, true);
  Variable out = analytic(x);
  if (out.value().numel() != 1) throw DimensionError("gradcheck function must return a scalar");
  out.backward();
  const Tensor grad = x.has_grad() ? x.grad() : Tensor(input.shape(), 0.0);

  double worst = 0.0;
  Tensor probe = input;
  for (std::size_t i = 0; i < input.numel(); ++i) {
    const double original = probe[i];
    probe[i] = original + h;
    const double up = reference(Variable(probe)).item();
    probe[i] = original - h;
    const double down = reference(Variable(probe)).item();
    probe[i] = original;
    const double numeric = (up - down) / (2.0 * h);
    const double a = grad[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

double finite_difference_gradcheck(const ScalarFn& fn, const Tensor& input, double h) {
  return finite_difference_gradcheck(fn, fn, input, h);
}

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng, double scale = 1.0) {
  Tensor t(shape);
  for (double& v : t.data()) v = scale * standard_normal(rng);
  return t;
}

/// Pushes every entry at least `margin` away from zero.
Tensor away_from_zero(Tensor t, double margin) {
  for (double& v : t.data()) {
    if (std::abs(v) < margin) v = (v < 0.0 ? -1.0 : 1.0) * (margin + 0.1 + std::abs(v));
  }
  return t;
}

/// Distinct values per sample-channel plane, at least 0.04 apart.
Tensor distinct_planes(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  const std::size_t plane = shape[2] * shape[3];
  std::vector<double> levels(plane);
  for (std::size_t base = 0; base < t.numel(); base += plane) {
    for (std::size_t i = 0; i < plane; ++i) levels[i] = -1.0 + 0.05 * static_cast<double>(i);
    for (std::size_t i = plane; i > 1; --i) std::swap(levels[i - 1], levels[uniform_index(rng, i)]);
    for (std::size_t i = 0; i < plane; ++i) t[base + i] = levels[i] + 0.01 * uniform_open01(rng);
  }
  return t;
}

Tensor positive_rows(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t({rows, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += (t.at(r, c) = 0.2 + uniform_open01(rng));
    for (std::size_t c = 0; c < cols; ++c) t.at(r, c) /= total;
  }
  return t;
}

struct Composite {
  Tensor weight;  // conv [3,2,3,3]
  BNBank bn{"composite.bn", 3, 1};
  Tensor fc_w;    // [4,3]
  Tensor fc_b;
  std::vector<int> targets{1, 3};

  struct Trace {
    Variable pre_relu;
    Variable relu_out;
    Variable loss;
  };

  Trace run(const Variable& x) {
    Trace t;
    Variable c = conv2d(x, Variable(weight), std::nullopt, 1, 1);
    t.pre_relu = resolution_aware_bn(c, bn, 0, true);
    t.relu_out = relu(t.pre_relu);
    Variable p = max_pool2d(t.relu_out, 2, 2);
    Variable g = global_avg_pool(p);
    t.loss = softmax_cross_entropy(linear(g, Variable(fc_w), Variable(fc_b)), targets);
    return t;
  }

  /// Smallest distance of any activation from a relu or max-pool kink.
  double kink_distance(const Tensor& input) {
    NoGradGuard no_grad;
    Trace t = run(Variable(input));
    double worst = 1e300;
    for (double v : t.pre_relu.value().data()) worst = std::min(worst, std::abs(v));
    const Tensor& r = t.relu_out.value();
    for (std::size_t n = 0; n < r.dim(0); ++n)
      for (std::size_t ch = 0; ch < r.dim(1); ++ch)
        for (std::size_t i = 0; i + 1 < r.dim(2); i += 2)
          for (std::size_t j = 0; j + 1 < r.dim(3); j += 2) {
            std::vector<double> w{r.at(n, ch, i, j), r.at(n, ch, i, j + 1), r.at(n, ch, i + 1, j),
                                  r.at(n, ch, i + 1, j + 1)};
            std::sort(w.begin(), w.end(), std::greater<>());
            if (w[0] > 0.0) worst = std::min(worst, w[0] - w[1]);
          }
    return worst;
  }
};

}  // namespace

std::vector<GradcheckResult> run_gradcheck_suite(double h, double tolerance) {
  std::vector<GradcheckResult> results;
  auto record = [&](std::string name, double err) {
    results.push_back({std::move(name), err, err < tolerance});
  };
  Rng rng = make_rng(20240601, 7);

  {
    const Tensor w = random_tensor({3, 2, 3, 3}, rng, 0.5);
    const Tensor b = random_tensor({3}, rng);
    const Tensor x = random_tensor({2, 2, 5, 5}, rng);
    const Tensor loss_w = random_tensor({2, 3, 3, 3}, rng);
    record("conv2d/input", finite_difference_gradcheck(
                               [&](const Variable& v) {
                                 return weighted_sum(conv2d(v, Variable(w), Variable(b), 2, 1), loss_w);
                               },
                               x, h));
    record("conv2d/weight", finite_difference_gradcheck(
                                [&](const Variable& v) {
                                  return weighted_sum(conv2d(Variable(x), v, Variable(b), 2, 1), loss_w);
                                },
                                w, h));
    record("conv2d/bias", finite_difference_gradcheck(
                              [&](const Variable& v) {
                                return weighted_sum(conv2d(Variable(x), Variable(w), v, 2, 1), loss_w);
                              },
                              b, h));
  }
  {
    const Tensor w = random_tensor({4, 5}, rng);
    const Tensor b = random_tensor({4}, rng);
    const Tensor x = random_tensor({3, 5}, rng);
    const Tensor loss_w = random_tensor({3, 4}, rng);
    record("linear/input", finite_difference_gradcheck(
                               [&](const Variable& v) { return weighted_sum(linear(v, Variable(w), Variable(b)), loss_w); },
                               x, h));
    record("linear/weight", finite_difference_gradcheck(
                                [&](const Variable& v) { return weighted_sum(linear(Variable(x), v, Variable(b)), loss_w); },
                                w, h));
    record("linear/bias", finite_difference_gradcheck(
                              [&](const Variable& v) { return weighted_sum(linear(Variable(x), Variable(w), v), loss_w); },
                              b, h));
  }
  {
    const Tensor x = away_from_zero(random_tensor({2, 3, 4, 4}, rng), 1e-3);
    const Tensor loss_w = random_tensor(x.shape(), rng);
    record("relu", finite_difference_gradcheck([&](const Variable& v) { return weighted_sum(relu(v), loss_w); }, x, h));
  }
  {
    const Tensor x = distinct_planes({2, 2, 6, 6}, rng);
    const Tensor loss_w = random_tensor({2, 2, 3, 3}, rng);
    record("max_pool2d", finite_difference_gradcheck(
                             [&](const Variable& v) { return weighted_sum(max_pool2d(v, 3, 2, 1), loss_w); }, x, h));
  }
  {
    const Tensor x = random_tensor({2, 3, 4, 4}, rng);
    const Tensor loss_w = random_tensor({2, 3}, rng);
    record("global_avg_pool", finite_difference_gradcheck(
                                  [&](const Variable& v) { return weighted_sum(global_avg_pool(v), loss_w); }, x, h));
  }
  {
    BNBank site("gradcheck.bn", 3, 2);
    for (int j = 0; j < 2; ++j) {
      BankState& b = site.slot(j);
      b.gamma.var.mutable_value() = away_from_zero(random_tensor({3}, rng), 0.2);
      b.beta.var.mutable_value() = random_tensor({3}, rng);
      b.running_mean = random_tensor({3}, rng);
      for (std::size_t c = 0; c < 3; ++c) b.running_var[c] = 0.5 + uniform_open01(rng);
    }
    const Tensor x = random_tensor({4, 3, 3, 3}, rng);
    const Tensor loss_w = random_tensor(x.shape(), rng);
    record("resolution_aware_bn/train", finite_difference_gradcheck(
                                            [&](const Variable& v) {
                                              return weighted_sum(resolution_aware_bn(v, site, 1, true), loss_w);
                                            },
                                            x, h));
    record("resolution_aware_bn/eval", finite_difference_gradcheck(
                                           [&](const Variable& v) {
                                             return weighted_sum(resolution_aware_bn(v, site, 1, false), loss_w);
                                           },
                                           x, h));
    const Tensor x2 = random_tensor({5, 3}, rng);
    const Tensor loss_w2 = random_tensor(x2.shape(), rng);
    record("resolution_aware_bn/train_flat", finite_difference_gradcheck(
                                                 [&](const Variable& v) {
                                                   return weighted_sum(resolution_aware_bn(v, site, 0, true), loss_w2);
                                                 },
                                                 x2, h));
  }
  {
    const Tensor logits = random_tensor({4, 6}, rng);
    const std::vector<int> targets{0, 5, 2, 3};
    record("softmax_cross_entropy", finite_difference_gradcheck(
                                        [&](const Variable& v) { return softmax_cross_entropy(v, targets); }, logits, h));
  }
  {
    const Tensor p = positive_rows(3, 4, rng);
    const Tensor g = sample_gumbel({3, 4}, rng);
    const Tensor loss_w = random_tensor({3, 4}, rng);
    record("gumbel_softmax_soft", finite_difference_gradcheck(
                                      [&](const Variable& v) { return weighted_sum(gumbel_softmax_soft(v, g, 0.7), loss_w); },
                                      p, h));
    GumbelConfig cfg;
    cfg.tau = 0.7;
    record("straight_through_select/soft_path",
           finite_difference_gradcheck(
               [&](const Variable& v) { return weighted_sum(straight_through_select(v, g, cfg).hard, loss_w); },
               [&](const Variable& v) { return weighted_sum(gumbel_softmax_soft(v, g, cfg.tau, cfg.eps), loss_w); }, p,
               h));
  }
  {
    const std::vector<double> costs{1200.0, 700.0, 300.0};
    const Tensor sel = positive_rows(4, 3, rng);
    record("expected_flops", finite_difference_gradcheck(
                                 [&](const Variable& v) { return expected_flops(v, costs); }, sel, h));
    const LossConfig cfg = LossConfig::from_costs(costs, 0.2, 450.0);
    record("flops_regularizer", finite_difference_gradcheck(
                                    [&](const Variable& v) { return flops_regularizer(expected_flops(v, costs), cfg); },
                                    sel, h));
  }
  {
    Composite net;
    net.weight = random_tensor({3, 2, 3, 3}, rng, 0.5);
    net.fc_w = random_tensor({4, 3}, rng);
    net.fc_b = random_tensor({4}, rng);
    Tensor x = random_tensor({2, 2, 6, 6}, rng);
    for (int attempt = 0; attempt < 200 && net.kink_distance(x) < 1e-3; ++attempt) x = random_tensor(x.shape(), rng);
    record("composite/conv-bn-relu-pool-fc",
           finite_difference_gradcheck([&](const Variable& v) { return net.run(v).loss; }, x, h));
  }
  return results;
}

}  // namespace drnet
