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
#include "drnet/flops.hpp"

#include <cstdio>
#include <json.hpp>

#include "drnet/error.hpp"

namespace drnet {
namespace {

std::uint64_t conv_macs(int k, int cin, int cout, int out_side) {
  return static_cast<std::uint64_t>(k) * k * cin * cout * static_cast<std::uint64_t>(out_side) * out_side;
}

int extent(int side, int k, int stride, int pad, const LayerDesc& layer) {
  const int span = side + 2 * pad - k;
  if (span < 0) {
    throw ConfigError("layer '" + layer.name + "': input side " + std::to_string(side) + " too small for window " +
                      std::to_string(k));
  }
  return span / stride + 1;
}

}  // namespace

LayerCost layer_flops(const LayerDesc& layer, const ActShape& in) {
  auto need_spatial = [&] {
    if (in.flat) throw DimensionError("layer '" + layer.name + "' needs a spatial input, got " + to_string(in));
  };
  auto need_channels = [&](int c) {
    if (in.channels != c) {
      throw DimensionError("layer '" + layer.name + "' expects " + std::to_string(c) + " channels, got " +
                           to_string(in));
    }
  };
  switch (layer.kind) {
    case LayerKind::Conv: {
      need_spatial();
      need_channels(layer.cin);
      const int side = extent(in.side, layer.kernel, layer.stride, layer.pad, layer);
      return {conv_macs(layer.kernel, layer.cin, layer.cout, side), {layer.cout, side, false}};
    }
    case LayerKind::BasicBlock: {
      need_spatial();
      need_channels(layer.cin);
      const int side = extent(in.side, 3, layer.stride, 1, layer);
      std::uint64_t macs = conv_macs(3, layer.cin, layer.cout, side) + conv_macs(3, layer.cout, layer.cout, side);
      if (layer.stride != 1 || layer.cin != layer.cout) macs += conv_macs(1, layer.cin, layer.cout, side);
      return {macs, {layer.cout, side, false}};
    }
    case LayerKind::Bottleneck: {
      need_spatial();
      need_channels(layer.cin);
      const int side = extent(in.side, 3, layer.stride, 1, layer);
      std::uint64_t macs = conv_macs(1, layer.cin, layer.mid, in.side) + conv_macs(3, layer.mid, layer.mid, side) +
                           conv_macs(1, layer.mid, layer.cout, side);
      if (layer.stride != 1 || layer.cin != layer.cout) macs += conv_macs(1, layer.cin, layer.cout, side);
      return {macs, {layer.cout, side, false}};
    }
    case LayerKind::MaxPool: {
      need_spatial();
      return {0, {in.channels, extent(in.side, layer.kernel, layer.stride, layer.pad, layer), false}};
    }
    case LayerKind::GlobalAvgPool:
      need_spatial();
      return {0, {in.channels, 1, true}};
    case LayerKind::Fc:
      if (!in.flat) throw DimensionError("layer '" + layer.name + "' needs a flat input, got " + to_string(in));
      need_channels(layer.cin);
      return {static_cast<std::uint64_t>(layer.cin) * layer.cout, {layer.cout, 1, true}};
    case LayerKind::BatchNorm:
    case LayerKind::Relu:
    case LayerKind::Dropout:
      return {0, in};
  }
  return {0, in};
}

CostReport model_flops(const ArchSpec& spec, int resolution) {
  spec.trace_shapes(resolution);  // surfaces composition errors with layer names
  CostReport report;
  report.resolution = resolution;
  ActShape cur{spec.input_channels, resolution, false};
  for (const auto& layer : spec.layers) {
    const LayerCost cost = layer_flops(layer, cur);
    report.rows.push_back({layer.name, layer_kind_name(layer.kind), cost.output, cost.macs});
    report.total_macs += cost.macs;
    cur = cost.output;
  }
  return report;
}

std::vector<double> resolution_cost_table(const ArchSpec& spec, std::span<const int> resolutions) {
  std::vector<double> costs;
  costs.reserve(resolutions.size());
  for (int r : resolutions) {
    try {
      costs.push_back(model_flops(spec, r).mflops());
    } catch (const ConfigError& e) {
      throw ConfigError("candidate resolution " + std::to_string(r) + " is too small for '" + spec.name + "': " +
                        e.what());
    }
  }
  return costs;
}

double average_inference_flops(std::span<const std::uint64_t> counts, std::span<const double> costs,
                               double predictor_cost) {
  if (counts.size() != costs.size()) {
    throw DimensionError("histogram has " + std::to_string(counts.size()) + " bins for " +
                         std::to_string(costs.size()) + " costs");
  }
  std::uint64_t total = 0;
  double weighted = 0.0;
  for (std::size_t j = 0; j < counts.size(); ++j) {
    total += counts[j];
    weighted += static_cast<double>(counts[j]) * costs[j];
  }
  if (total == 0) throw ArgumentError("average_inference_flops: empty selection histogram");
  return weighted / static_cast<double>(total) + predictor_cost;
}

std::string format_cost_report(const ArchSpec& spec, const CostReport& report) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%s @ %dx%d (1 FLOP = 1 multiply-accumulate)\n", spec.name.c_str(),
                report.resolution, report.resolution);
  out += line;
  std::snprintf(line, sizeof line, "%-20s %-16s %-16s %16s\n", "layer", "kind", "output", "MACs");
  out += line;
  for (const auto& row : report.rows) {
    std::snprintf(line, sizeof line, "%-20s %-16s %-16s %16llu\n", row.name.c_str(), row.kind.c_str(),
                  to_string(row.output).c_str(), static_cast<unsigned long long>(row.macs));
    out += line;
  }
  std::snprintf(line, sizeof line, "total: %llu MACs = %.2f MFLOPs = %.3f G\n",
                static_cast<unsigned long long>(report.total_macs), report.mflops(), report.gflops());
  out += line;
  return out;
}

std::string cost_report_json(const ArchSpec& spec, const CostReport& report) {
  nlohmann::json j;
  j["arch"] = spec.name;
  j["resolution"] = report.resolution;
  j["total_macs"] = report.total_macs;
  j["mflops"] = report.mflops();
  j["gflops"] = report.gflops();
  j["layers"] = nlohmann::json::array();
  for (const auto& row : report.rows) {
    j["layers"].push_back({{"name", row.name},
                           {"kind", row.kind},
                           {"output", to_string(row.output)},
                           {"macs", row.macs}});
  }
  return j.dump(2);
}

}  // namespace drnet
