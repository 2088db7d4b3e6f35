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
#ifndef DRNET_OPTIM_HPP
#define DRNET_OPTIM_HPP

#include <span>
#include <string>

#include "drnet/autodiff.hpp"

namespace drnet {

/// A trainable leaf with a model-unique dotted name.
struct Parameter {
  std::string name;
  Variable var;
  Tensor momentum;  // empty until the first optimizer step

  Parameter() = default;
  Parameter(std::string name, Tensor init) : name(std::move(name)), var(std::move(init), true) {}
};

/// v <- momentum*v + grad + weight_decay*w;  w <- w - lr*v;  grad <- 0.
/// Throws StateError when any parameter has no gradient.
void sgd_momentum_step(std::span<Parameter* const> params, double lr, double momentum, double weight_decay);

}  // namespace drnet

#endif  // DRNET_OPTIM_HPP
