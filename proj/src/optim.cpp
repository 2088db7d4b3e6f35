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
#include "drnet/optim.hpp"

#include "drnet/error.hpp"

namespace drnet {

void sgd_momentum_step(std::span<Parameter* const> params, double lr, double momentum, double weight_decay) {
  for (const Parameter* p : params) {
    if (!p->var.has_grad()) throw StateError("sgd step: parameter '" + p->name + "' has no gradient");
  }
  for (Parameter* p : params) {
    Tensor& w = p->var.mutable_value();
    Tensor& g = p->var.grad_buffer();
    if (p->momentum.empty()) p->momentum = Tensor(w.shape(), 0.0);
    Tensor& v = p->momentum;
    for (std::size_t i = 0; i < w.numel(); ++i) {
      v[i] = momentum * v[i] + g[i] + weight_decay * w[i];
      w[i] -= lr * v[i];
    }
    g.fill(0.0);
  }
}

}  // namespace drnet
