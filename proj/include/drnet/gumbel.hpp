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
#ifndef DRNET_GUMBEL_HPP
#define DRNET_GUMBEL_HPP

#include <vector>

#include "drnet/autodiff.hpp"
#include "drnet/rng.hpp"

namespace drnet {

struct GumbelConfig {
  double tau = 1.0;
  double eps = 1e-10;
  /// false: noise-free argmax (validation / inference path).
  bool sample_noise = true;

  void validate() const;
};

/// Paired relaxed and discrete resolution choices for a batch.
struct SelectionVector {
  Variable soft;  // [N,m], rows sum to 1
  /// [N,m] one-hot in value; its gradient is routed to `soft` (straight-through).
  Variable hard;
  std::vector<int> chosen_index;
};

/// -log(-log u) for u in (0,1).
double gumbel_from_uniform(double u);

/// Independent Gumbel(0,1) draws -log(-log u), u uniform on the open (0,1).
Tensor sample_gumbel(const Shape& shape, Rng& rng);

/// softmax((log(p + eps) + g) / tau) row-wise; differentiable in p.
Variable gumbel_softmax_soft(const Variable& p, const Tensor& g, double tau, double eps = 1e-10);

/// Value is `hard`; the incoming gradient is passed to `soft` unchanged.
Variable straight_through(const Tensor& hard, const Variable& soft);

/// Index of the row maximum; exact ties resolve to the largest index.
int argmax_prefer_last(const double* row, std::size_t width);

/// Hard one-hot selection from argmax(log p + g) with the straight-through
/// gradient of the soft relaxation. g = 0 when noise sampling is off.
SelectionVector straight_through_select(const Variable& p, const GumbelConfig& cfg, Rng* rng);

/// Same as above with caller-supplied noise (tests share one draw between paths).
SelectionVector straight_through_select(const Variable& p, const Tensor& noise, const GumbelConfig& cfg);

}  // namespace drnet

#endif  // DRNET_GUMBEL_HPP
