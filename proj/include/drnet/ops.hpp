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
#ifndef DRNET_OPS_HPP
#define DRNET_OPS_HPP

#include <cstdint>
#include <optional>
#include <span>

#include "drnet/autodiff.hpp"
#include "drnet/rng.hpp"

namespace drnet {

// Differentiable operators. Each records a closure that maps the output
// gradient to input gradients; every one is covered by the finite-difference
// suite in tests/.

/// Direct cross-correlation over NCHW input with [Cout,Cin,kh,kw] weights.
Variable conv2d(const Variable& input, const Variable& weight, const std::optional<Variable>& bias, int stride,
                int padding);

/// out[n,k] = sum_d input[n,d] * weight[k,d] + bias[k].
Variable linear(const Variable& input, const Variable& weight, const Variable& bias);

Variable relu(const Variable& input);

/// Windowed max. Padding cells never win. The gradient goes to the first
/// maximal element of each window in row-major order.
Variable max_pool2d(const Variable& input, int kernel, int stride, int padding = 0);

/// Spatial mean: [N,C,H,W] -> [N,C].
Variable global_avg_pool(const Variable& input);

/// Mean over the batch of -log softmax(logits)[target].
Variable softmax_cross_entropy(const Variable& logits, std::span<const int> targets);

/// Row-wise softmax of a [N,K] tensor.
Variable softmax_rows(const Variable& logits);

Variable add(const Variable& a, const Variable& b);
Variable scale(const Variable& a, double factor);
Variable sum(const Variable& a);
/// sum_i a[i] * weights[i] for a constant weight tensor of the same shape.
Variable weighted_sum(const Variable& a, const Tensor& weights);

/// Batch statistics produced by a training-mode normalization.
struct BatchMoments {
  std::vector<double> mean;
  std::vector<double> biased_var;
  std::size_t count = 0;  // elements reduced per channel
};

/// Normalizes with the batch's own per-channel statistics, then applies the
/// affine transform. Accepts [N,C,H,W] or [N,C].
Variable batch_norm_train(const Variable& input, const Variable& gamma, const Variable& beta, double eps,
                          BatchMoments* moments_out);

/// Normalizes with fixed running statistics, then applies the affine transform.
Variable batch_norm_eval(const Variable& input, const Variable& gamma, const Variable& beta,
                         std::span<const double> running_mean, std::span<const double> running_var, double eps);

/// Inverted dropout; the identity when `rate` is 0 or outside training.
Variable dropout(const Variable& input, double rate, bool training, Rng* rng);

/// Counts multiply-accumulates performed by conv2d and linear forwards on the
/// current thread while alive. Scopes nest; only the innermost one counts.
class MacCounter {
 public:
  MacCounter();
  ~MacCounter();
  MacCounter(const MacCounter&) = delete;
  MacCounter& operator=(const MacCounter&) = delete;

  std::uint64_t total() const { return total_; }

  static void record(std::uint64_t macs);

 private:
  std::uint64_t total_ = 0;
  MacCounter* previous_;
};

}  // namespace drnet

#endif  // DRNET_OPS_HPP
