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
#ifndef DRNET_ARCH_HPP
#define DRNET_ARCH_HPP

#include <filesystem>
#include <string>
#include <vector>

namespace drnet {

enum class LayerKind { Conv, BatchNorm, Relu, MaxPool, BasicBlock, Bottleneck, GlobalAvgPool, Dropout, Fc };

const char* layer_kind_name(LayerKind kind);

/// One entry of a declarative layer list. Only the fields relevant to `kind`
/// are meaningful.
///
/// - conv: kernel (kh=kw), in/out channels, stride, pad; bias-free
/// - maxpool: kernel, stride, pad
/// - basic_block: two 3x3 convs cin->cout (first strided) with a 1x1
///   projection shortcut when the stride or width changes
/// - bottleneck: 1x1 cin->mid, 3x3 mid->mid (strided), 1x1 mid->cout, with a
///   projection shortcut when the stride or width changes
/// - fc: din -> dout with bias
struct LayerDesc {
  LayerKind kind = LayerKind::Relu;
  std::string name;
  int kernel = 0;
  int cin = 0;
  int cout = 0;
  int mid = 0;
  int stride = 1;
  int pad = 0;
  double rate = 0.0;

  friend bool operator==(const LayerDesc&, const LayerDesc&) = default;
};

/// Symbolic activation shape: channels x side x side, or a flat vector when
/// `flat` is set (after global pooling).
struct ActShape {
  int channels = 0;
  int side = 0;
  bool flat = false;

  friend bool operator==(const ActShape&, const ActShape&) = default;
};

std::string to_string(const ActShape& shape);

/// Declarative description of a network, shared by the builder and the
/// FLOPs analyzer.
struct ArchSpec {
  std::string name;
  int input_channels = 3;
  int outputs = 0;  // class count for classifiers, candidate count for predictors
  std::vector<LayerDesc> layers;

  /// Shape after every layer for an input of `resolution`; throws BuildError
  /// naming both layers when consecutive layers do not compose.
  std::vector<ActShape> trace_shapes(int resolution) const;
  /// Structural checks that do not depend on resolution.
  void validate() const;

  friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

/// Text form: `key = value` header lines, then one `layer <kind> k=v ...` per
/// layer. `#` starts a comment.
std::string serialize_arch(const ArchSpec& spec);
ArchSpec parse_arch(const std::string& text);
ArchSpec load_arch_file(const std::filesystem::path& path);

/// ResNet-50 (bottleneck, stride on the 3x3 conv) for cost analysis.
ArchSpec resnet50_arch(int classes = 1000);

/// Resolution predictor listings 1-4: single-block ResNet stages with widths
/// 64/128/256/512, four stages (1), two stages (2), two stages with a
/// stride-4 stem (3), or stem plus one 3x3 conv (4).
ArchSpec predictor_arch(int variant, int candidates, double dropout_rate = 0.0);

/// Compact residual classifier: 3x3 stem, `blocks_per_stage` basic blocks per
/// stage with the given widths (stage strides 1,2,2,...), global pooling, fc.
/// The defaults give the 20-layer CIFAR ResNet.
ArchSpec compact_resnet_arch(int classes, std::vector<int> widths = {16, 32, 64}, int blocks_per_stage = 3,
                             int input_channels = 3);

/// Lightweight predictor for small inputs: 3x3 stem, two strided basic blocks.
ArchSpec compact_predictor_arch(int candidates, std::vector<int> widths = {8, 16}, int input_channels = 3);

/// Resolves `preset:<name>` strings or reads an arch file.
ArchSpec resolve_arch(const std::string& ref, int outputs = 0);

}  // namespace drnet

#endif  // DRNET_ARCH_HPP
