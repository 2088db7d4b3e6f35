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
#include "drnet/autodiff.hpp"

#include <cassert>
#include <unordered_set>

#include "drnet/error.hpp"

namespace drnet {
namespace {
thread_local bool grad_disabled = false;
}  // namespace

NoGradGuard::NoGradGuard() : previous_(grad_disabled) { grad_disabled = true; }
NoGradGuard::~NoGradGuard() { grad_disabled = previous_; }

Tensor& GraphNode::grad_buffer() {
  if (grad.empty() && !value.empty()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

Variable::Variable(Tensor value, bool requires_grad) : node_(std::make_shared<GraphNode>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

void Variable::zero_grad() {
  if (has_grad()) node_->grad.fill(0.0);
}

double Variable::item() const {
  if (node_->value.numel() != 1) {
    throw DimensionError("item() on tensor of shape " + shape_string(node_->value.shape()));
  }
  return node_->value[0];
}

void Variable::backward() const {
  if (node_->value.numel() != 1) {
    throw DimensionError("backward() without seed requires a scalar, got " + shape_string(node_->value.shape()));
  }
  backward(Tensor(node_->value.shape(), 1.0));
}

void Variable::backward(const Tensor& seed) const {
  if (seed.shape() != node_->value.shape()) {
    throw DimensionError("backward seed shape " + shape_string(seed.shape()) + " vs value " +
                         shape_string(node_->value.shape()));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order without recursion depth
  // limits on deep graphs.
  std::vector<GraphNode*> order;
  std::unordered_set<GraphNode*> visited;
  std::vector<std::pair<GraphNode*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      GraphNode* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Interior gradients are per-call; only leaves accumulate across calls.
  for (GraphNode* node : order) {
    if (node->backward) node->grad = Tensor();
  }
  accumulate_into(node_->grad_buffer(), seed);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    GraphNode* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(node->grad);
  }
}

Variable make_op_result(Tensor value, std::vector<Variable> inputs, BackwardFn backward) {
#ifndef NDEBUG
  bool finite_inputs = true;
  for (const auto& in : inputs) finite_inputs = finite_inputs && in.value().all_finite();
  assert(!finite_inputs || value.all_finite());
#endif
  bool needs_grad = false;
  if (grad_disabled) return Variable(std::move(value), false);
  for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
  Variable out(std::move(value), needs_grad);
  if (needs_grad) {
    auto& node = *out.node();
    node.inputs.reserve(inputs.size());
    for (const auto& in : inputs) node.inputs.push_back(in.node());
    node.backward = std::move(backward);
  }
  return out;
}

Variable detach(const Variable& v) { return Variable(v.value(), false); }

}  // namespace drnet
