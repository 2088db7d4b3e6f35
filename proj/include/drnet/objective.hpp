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
#ifndef DRNET_OBJECTIVE_HPP
#define DRNET_OBJECTIVE_HPP

#include <span>
#include <vector>

#include "drnet/autodiff.hpp"

namespace drnet {

/// Budget settings. Costs and alpha share one unit (MFLOPs).
struct LossConfig {
  double eta = 0.2;
  double alpha = 0.0;
  std::vector<double> costs;
  double c_max = 0.0;
  double c_min = 0.0;

  /// Fills c_max/c_min from costs.
  static LossConfig from_costs(std::vector<double> costs, double eta, double alpha);
  void validate() const;
};

struct LossReport {
  double l_ce = 0.0;
  double expected_flops = 0.0;
  double l_reg = 0.0;
  double total = 0.0;
  Variable total_var;  // differentiable total
};

/// Batch mean of sum_j C_j h_j. `hard` carries the straight-through gradient.
Variable expected_flops(const Variable& hard, std::span<const double> costs);

/// max(0, (E(F) - alpha) / (C_max - C_min)); zero gradient at or below alpha.
Variable flops_regularizer(const Variable& expected, const LossConfig& cfg);

/// L = L_ce + eta * L_reg, with every component reported.
LossReport total_loss(const Variable& l_ce, const Variable& l_reg, double eta, double expected_flops_value = 0.0);

}  // namespace drnet

#endif  // DRNET_OBJECTIVE_HPP
