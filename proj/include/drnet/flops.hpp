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
#ifndef DRNET_FLOPS_HPP
#define DRNET_FLOPS_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "drnet/arch.hpp"

namespace drnet {

// Cost convention: one FLOP is one multiply-accumulate. Only conv and fc
// layers cost anything; batch-norm, ReLU, pooling and residual adds count as 0.

struct LayerCost {
  std::uint64_t macs = 0;
  ActShape output;
};

struct CostRow {
  std::string name;
  std::string kind;
  ActShape output;
  std::uint64_t macs = 0;
};

struct CostReport {
  int resolution = 0;
  std::vector<CostRow> rows;
  std::uint64_t total_macs = 0;

  double mflops() const { return static_cast<double>(total_macs) / 1e6; }
  double gflops() const { return static_cast<double>(total_macs) / 1e9; }
};

LayerCost layer_flops(const LayerDesc& layer, const ActShape& input);

CostReport model_flops(const ArchSpec& spec, int resolution);

/// Classifier cost in MFLOPs at every candidate resolution.
std::vector<double> resolution_cost_table(const ArchSpec& spec, std::span<const int> resolutions);

/// Histogram-weighted mean classifier cost plus the per-sample predictor cost.
double average_inference_flops(std::span<const std::uint64_t> counts, std::span<const double> costs,
                               double predictor_cost);

std::string format_cost_report(const ArchSpec& spec, const CostReport& report);
std::string cost_report_json(const ArchSpec& spec, const CostReport& report);

}  // namespace drnet

#endif  // DRNET_FLOPS_HPP
