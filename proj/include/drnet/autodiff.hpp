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
#ifndef DRNET_AUTODIFF_HPP
#define DRNET_AUTODIFF_HPP

#include <functional>
#include <memory>
#include <vector>

#include "drnet/tensor.hpp"

namespace drnet {

struct GraphNode;

/// Receives the gradient of the node's output and accumulates into inputs.
using BackwardFn = std::function<void(const Tensor& out_grad)>;

struct GraphNode {
  Tensor value;
  Tensor grad;  // empty until the first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<GraphNode>> inputs;
  BackwardFn backward;

  /// Returns the gradient buffer, zero-initializing it on first use.
  Tensor& grad_buffer();
};

/// Handle onto a node of the reverse-mode graph. Copies share the node.
class Variable {
 public:
  Variable() = default;
  explicit Variable(Tensor value, bool requires_grad = false);

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  const Tensor& grad() const { return node_->grad; }
  Tensor& grad_buffer() { return node_->grad_buffer(); }
  void zero_grad();
  /// Drops the gradient buffer entirely (has_grad() becomes false).
  void clear_grad() { node_->grad = Tensor(); }

  /// Runs reverse accumulation from this scalar node with seed gradient 1.
  void backward() const;
  /// Runs reverse accumulation with an explicit seed gradient.
  void backward(const Tensor& seed) const;

  /// Scalar value of a one-element tensor.
  double item() const;
  bool defined() const { return static_cast<bool>(node_); }
  const std::shared_ptr<GraphNode>& node() const { return node_; }

 private:
  std::shared_ptr<GraphNode> node_;
};

/// Builds an op output. When no input requires grad the backward closure is
/// dropped so inference graphs stay flat.
Variable make_op_result(Tensor value, std::vector<Variable> inputs, BackwardFn backward);

/// While alive, ops on this thread record no backward closures.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Returns a variable holding the same value with no graph history.
Variable detach(const Variable& v);

}  // namespace drnet

#endif  // DRNET_AUTODIFF_HPP
