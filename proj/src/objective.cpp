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
#include "drnet/objective.hpp"

#include <algorithm>

#include "drnet/error.hpp"
#include "drnet/ops.hpp"

namespace drnet {

LossConfig LossConfig::from_costs(std::vector<double> costs, double eta, double alpha) {
  LossConfig cfg;
  cfg.eta = eta;
  cfg.alpha = alpha;
  if (costs.empty()) throw ConfigError("loss config needs candidate costs");
  cfg.c_max = *std::max_element(costs.begin(), costs.end());
  cfg.c_min = *std::min_element(costs.begin(), costs.end());
  cfg.costs = std::move(costs);
  return cfg;
}

void LossConfig::validate() const {
  if (eta < 0.0) throw ConfigError("eta must be non-negative");
  if (costs.empty()) throw ConfigError("loss config needs candidate costs");
  if (c_max != *std::max_element(costs.begin(), costs.end()) || c_min != *std::min_element(costs.begin(), costs.end())) {
    throw ConfigError("c_max/c_min disagree with the cost table");
  }
  if (!(c_max > c_min)) throw ConfigError("flops regularizer needs c_max > c_min");
}

Variable expected_flops(const Variable& hard, std::span<const double> costs) {
  const Tensor& h = hard.value();
  if (h.rank() != 2 || h.dim(1) != costs.size()) {
    throw DimensionError("expected_flops: selection " + shape_string(h.shape()) + " for " +
                         std::to_string(costs.size()) + " costs");
  }
  Tensor weights(h.shape());
  const double inv_n = 1.0 / static_cast<double>(h.dim(0));
  for (std::size_t r = 0; r < h.dim(0); ++r)
    for (std::size_t j = 0; j < costs.size(); ++j) weights.at(r, j) = costs[j] * inv_n;
  // Per-row sums first so a one-hot batch gives the exact mean of its costs.
  double total = 0.0;
  for (std::size_t r = 0; r < h.dim(0); ++r) {
    double row = 0.0;
    for (std::size_t j = 0; j < costs.size(); ++j) row += costs[j] * h.at(r, j);
    total += row;
  }
  auto hn = hard.node();
  return make_op_result(Tensor({1}, {total * inv_n}), {hard}, [hn, weights = std::move(weights)](const Tensor& dy) {
    if (!hn->requires_grad) return;
    Tensor& dh = hn->grad_buffer();
    for (std::size_t i = 0; i < weights.numel(); ++i) dh[i] += dy[0] * weights[i];
  });
}

Variable flops_regularizer(const Variable& expected, const LossConfig& cfg) {
  cfg.validate();
  if (expected.value().numel() != 1) throw DimensionError("flops_regularizer expects a scalar");
  const double range = cfg.c_max - cfg.c_min;
  const double excess = expected.item() - cfg.alpha;
  const bool active = excess > 0.0;
  auto en = expected.node();
  return make_op_result(Tensor({1}, {active ? excess / range : 0.0}), {expected},
                        [en, active, range](const Tensor& dy) {
                          if (!en->requires_grad) return;
                          Tensor& de = en->grad_buffer();
                          if (active) de[0] += dy[0] / range;
                        });
}

LossReport total_loss(const Variable& l_ce, const Variable& l_reg, double eta, double expected_flops_value) {
  LossReport report;
  report.l_ce = l_ce.item();
  report.l_reg = l_reg.item();
  report.expected_flops = expected_flops_value;
  report.total_var = eta == 0.0 ? l_ce : add(l_ce, scale(l_reg, eta));
  report.total = report.total_var.item();
  return report;
}

}  // namespace drnet
