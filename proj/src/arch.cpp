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
#include "drnet/arch.hpp"

#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "drnet/error.hpp"

namespace drnet {
namespace {

const std::map<std::string, LayerKind>& kind_table() {
  static const std::map<std::string, LayerKind> table{
      {"conv", LayerKind::Conv},
      {"bn", LayerKind::BatchNorm},
      {"relu", LayerKind::Relu},
      {"maxpool", LayerKind::MaxPool},
      {"basic_block", LayerKind::BasicBlock},
      {"bottleneck", LayerKind::Bottleneck},
      {"global_avg_pool", LayerKind::GlobalAvgPool},
      {"dropout", LayerKind::Dropout},
      {"fc", LayerKind::Fc},
  };
  return table;
}

std::string describe(const LayerDesc& layer) {
  return "'" + layer.name + "' (" + layer_kind_name(layer.kind) + ")";
}

int strided_extent(int side, int kernel, int stride, int pad, const LayerDesc& layer) {
  const int span = side + 2 * pad - kernel;
  if (span < 0) {
    throw ConfigError("layer " + describe(layer) + ": input side " + std::to_string(side) +
                      " is too small for a " + std::to_string(kernel) + "-wide window");
  }
  return span / stride + 1;
}

void expect_spatial(const ActShape& in, const LayerDesc& layer, const std::string& prev) {
  if (in.flat) {
    throw BuildError("layer " + describe(layer) + " needs a spatial input but follows " + prev +
                     " which produces a flat vector");
  }
}

void expect_channels(const ActShape& in, int want, const LayerDesc& layer, const std::string& prev) {
  if (in.channels != want) {
    throw BuildError("layer " + describe(layer) + " expects " + std::to_string(want) + " input channels but " +
                     prev + " produces " + std::to_string(in.channels));
  }
}

LayerDesc conv(std::string name, int k, int cin, int cout, int stride, int pad) {
  LayerDesc d;
  d.kind = LayerKind::Conv;
  d.name = std::move(name);
  d.kernel = k;
  d.cin = cin;
  d.cout = cout;
  d.stride = stride;
  d.pad = pad;
  return d;
}

LayerDesc simple(LayerKind kind, std::string name) {
  LayerDesc d;
  d.kind = kind;
  d.name = std::move(name);
  return d;
}

LayerDesc maxpool(std::string name, int k, int stride, int pad) {
  LayerDesc d = simple(LayerKind::MaxPool, std::move(name));
  d.kernel = k;
  d.stride = stride;
  d.pad = pad;
  return d;
}

LayerDesc block(LayerKind kind, std::string name, int cin, int mid, int cout, int stride) {
  LayerDesc d = simple(kind, std::move(name));
  d.cin = cin;
  d.mid = mid;
  d.cout = cout;
  d.stride = stride;
  return d;
}

LayerDesc fc(std::string name, int din, int dout) {
  LayerDesc d = simple(LayerKind::Fc, std::move(name));
  d.cin = din;
  d.cout = dout;
  return d;
}

LayerDesc dropout_layer(std::string name, double rate) {
  LayerDesc d = simple(LayerKind::Dropout, std::move(name));
  d.rate = rate;
  return d;
}

int parse_int(const std::string& key, const std::string& value, int line) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("arch line " + std::to_string(line) + ": '" + key + "' expects an integer, got '" + value + "'");
  }
}

}  // namespace

const char* layer_kind_name(LayerKind kind) {
  for (const auto& [name, k] : kind_table()) {
    if (k == kind) return name.c_str();
  }
  return "?";
}

std::string to_string(const ActShape& shape) {
  if (shape.flat) return "[" + std::to_string(shape.channels) + "]";
  return "[" + std::to_string(shape.channels) + "," + std::to_string(shape.side) + "," + std::to_string(shape.side) +
         "]";
}

void ArchSpec::validate() const {
  if (layers.empty()) throw BuildError("arch '" + name + "' has no layers");
  if (input_channels <= 0) throw BuildError("arch '" + name + "': input_channels must be positive");
  std::set<std::string> names;
  int pools_before_fc = 0;
  bool seen_fc = false;
  for (const auto& layer : layers) {
    if (layer.name.empty()) throw BuildError("arch '" + name + "': unnamed layer");
    if (!names.insert(layer.name).second) throw BuildError("arch '" + name + "': duplicate layer name '" + layer.name + "'");
    if (layer.kind == LayerKind::GlobalAvgPool && !seen_fc) ++pools_before_fc;
    if (layer.kind == LayerKind::Fc) seen_fc = true;
    if ((layer.kind == LayerKind::Conv || layer.kind == LayerKind::MaxPool) && (layer.kernel <= 0 || layer.stride <= 0)) {
      throw BuildError("layer " + describe(layer) + ": kernel and stride must be positive");
    }
    if (layer.kind == LayerKind::Dropout && (layer.rate < 0.0 || layer.rate >= 1.0)) {
      throw BuildError("layer " + describe(layer) + ": dropout rate must lie in [0,1)");
    }
  }
  if (seen_fc && pools_before_fc != 1) {
    throw BuildError("arch '" + name + "': exactly one global_avg_pool must precede the first fc, found " +
                     std::to_string(pools_before_fc));
  }
  const LayerDesc& last = layers.back();
  if (outputs > 0 && last.kind == LayerKind::Fc && last.cout != outputs) {
    throw BuildError("arch '" + name + "': head " + describe(last) + " has width " + std::to_string(last.cout) +
                     " but outputs = " + std::to_string(outputs));
  }
}

std::vector<ActShape> ArchSpec::trace_shapes(int resolution) const {
  validate();
  if (resolution < 1) throw ConfigError("arch '" + name + "': resolution must be positive");
  std::vector<ActShape> shapes;
  shapes.reserve(layers.size());
  ActShape cur{input_channels, resolution, false};
  std::string prev = "the input";
  for (const auto& layer : layers) {
    switch (layer.kind) {
      case LayerKind::Conv:
        expect_spatial(cur, layer, prev);
        expect_channels(cur, layer.cin, layer, prev);
        cur = {layer.cout, strided_extent(cur.side, layer.kernel, layer.stride, layer.pad, layer), false};
        break;
      case LayerKind::MaxPool:
        expect_spatial(cur, layer, prev);
        cur.side = strided_extent(cur.side, layer.kernel, layer.stride, layer.pad, layer);
        break;
      case LayerKind::BasicBlock:
      case LayerKind::Bottleneck:
        expect_spatial(cur, layer, prev);
        expect_channels(cur, layer.cin, layer, prev);
        cur = {layer.cout, strided_extent(cur.side, 3, layer.stride, 1, layer), false};
        break;
      case LayerKind::GlobalAvgPool:
        expect_spatial(cur, layer, prev);
        cur.flat = true;
        cur.side = 1;
        break;
      case LayerKind::Fc:
        if (!cur.flat) {
          throw BuildError("layer " + describe(layer) + " needs a flat input but follows " + prev +
                           " which produces " + to_string(cur));
        }
        expect_channels(cur, layer.cin, layer, prev);
        cur.channels = layer.cout;
        break;
      case LayerKind::BatchNorm:
      case LayerKind::Relu:
      case LayerKind::Dropout:
        break;
    }
    shapes.push_back(cur);
    prev = describe(layer);
  }
  return shapes;
}

std::string serialize_arch(const ArchSpec& spec) {
  std::ostringstream os;
  os << "name = " << spec.name << "\n";
  os << "input_channels = " << spec.input_channels << "\n";
  os << "outputs = " << spec.outputs << "\n";
  for (const auto& l : spec.layers) {
    os << "layer " << layer_kind_name(l.kind) << " name=" << l.name;
    switch (l.kind) {
      case LayerKind::Conv:
        os << " k=" << l.kernel << " in=" << l.cin << " out=" << l.cout << " stride=" << l.stride << " pad=" << l.pad;
        break;
      case LayerKind::MaxPool:
        os << " k=" << l.kernel << " stride=" << l.stride << " pad=" << l.pad;
        break;
      case LayerKind::BasicBlock:
        os << " in=" << l.cin << " out=" << l.cout << " stride=" << l.stride;
        break;
      case LayerKind::Bottleneck:
        os << " in=" << l.cin << " mid=" << l.mid << " out=" << l.cout << " stride=" << l.stride;
        break;
      case LayerKind::Fc:
        os << " in=" << l.cin << " out=" << l.cout;
        break;
      case LayerKind::Dropout: {
        std::ostringstream rate;
        rate.precision(17);
        rate << l.rate;
        os << " rate=" << rate.str();
        break;
      }
      default:
        break;
    }
    os << "\n";
  }
  return os.str();
}

ArchSpec parse_arch(const std::string& text) {
  ArchSpec spec;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (const auto hash = raw.find('#'); hash != std::string::npos) raw.resize(hash);
    std::istringstream line(raw);
    std::string head;
    if (!(line >> head)) continue;
    if (head == "layer") {
      std::string kind;
      if (!(line >> kind)) throw ConfigError("arch line " + std::to_string(line_no) + ": missing layer kind");
      const auto it = kind_table().find(kind == "gap" ? "global_avg_pool" : kind);
      if (it == kind_table().end()) {
        throw ConfigError("arch line " + std::to_string(line_no) + ": unknown layer kind '" + kind + "'");
      }
      LayerDesc d;
      d.kind = it->second;
      std::string kv;
      while (line >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
          throw ConfigError("arch line " + std::to_string(line_no) + ": expected key=value, got '" + kv + "'");
        }
        const std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
        if (key == "name") d.name = value;
        else if (key == "k") d.kernel = parse_int(key, value, line_no);
        else if (key == "in") d.cin = parse_int(key, value, line_no);
        else if (key == "out") d.cout = parse_int(key, value, line_no);
        else if (key == "mid") d.mid = parse_int(key, value, line_no);
        else if (key == "stride") d.stride = parse_int(key, value, line_no);
        else if (key == "pad") d.pad = parse_int(key, value, line_no);
        else if (key == "rate") d.rate = std::stod(value);
        else throw ConfigError("arch line " + std::to_string(line_no) + ": unknown key '" + key + "'");
      }
      if (d.name.empty()) d.name = std::string(layer_kind_name(d.kind)) + std::to_string(spec.layers.size());
      spec.layers.push_back(std::move(d));
      continue;
    }
    std::string eq, value;
    if (!(line >> eq >> value) || eq != "=") {
      throw ConfigError("arch line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    if (head == "name") spec.name = value;
    else if (head == "input_channels") spec.input_channels = parse_int(head, value, line_no);
    else if (head == "outputs") spec.outputs = parse_int(head, value, line_no);
    else throw ConfigError("arch line " + std::to_string(line_no) + ": unknown header key '" + head + "'");
  }
  spec.validate();
  return spec;
}

ArchSpec load_arch_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open arch file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_arch(buf.str());
}

ArchSpec resnet50_arch(int classes) {
  ArchSpec spec{"resnet50", 3, classes, {}};
  auto& L = spec.layers;
  L.push_back(conv("conv1", 7, 3, 64, 2, 3));
  L.push_back(simple(LayerKind::BatchNorm, "bn1"));
  L.push_back(simple(LayerKind::Relu, "relu"));
  L.push_back(maxpool("maxpool", 3, 2, 1));
  const int blocks[4] = {3, 4, 6, 3};
  const int mids[4] = {64, 128, 256, 512};
  int cin = 64;
  for (int s = 0; s < 4; ++s) {
    for (int b = 0; b < blocks[s]; ++b) {
      const int stride = (s > 0 && b == 0) ? 2 : 1;
      const std::string name = "layer" + std::to_string(s + 1) + "." + std::to_string(b);
      L.push_back(block(LayerKind::Bottleneck, name, cin, mids[s], mids[s] * 4, stride));
      cin = mids[s] * 4;
    }
  }
  L.push_back(simple(LayerKind::GlobalAvgPool, "avgpool"));
  L.push_back(fc("fc", cin, classes));
  return spec;
}

ArchSpec predictor_arch(int variant, int candidates, double dropout_rate) {
  if (variant < 1 || variant > 4) throw ConfigError("predictor variant must be 1..4");
  ArchSpec spec{"predictor" + std::to_string(variant), 3, candidates, {}};
  auto& L = spec.layers;
  L.push_back(conv("conv1", 7, 3, 64, variant == 3 ? 4 : 2, 3));
  L.push_back(simple(LayerKind::BatchNorm, "bn1"));
  L.push_back(simple(LayerKind::Relu, "relu"));
  L.push_back(maxpool("maxpool", 3, 2, 1));
  int width = 64;
  if (variant == 4) {
    L.push_back(conv("conv2", 3, 64, 64, 1, 1));
    L.push_back(simple(LayerKind::BatchNorm, "bn2"));
    L.push_back(simple(LayerKind::Relu, "relu2"));
  } else {
    const int stages = variant == 1 ? 4 : 2;
    int cin = 64;
    for (int s = 0; s < stages; ++s) {
      width = 64 << s;
      L.push_back(block(LayerKind::BasicBlock, "layer" + std::to_string(s + 1) + ".0", cin, 0, width, s == 0 ? 1 : 2));
      cin = width;
    }
  }
  L.push_back(simple(LayerKind::GlobalAvgPool, "avgpool"));
  L.push_back(dropout_layer("dropout", dropout_rate));
  L.push_back(fc("fc", width, candidates));
  return spec;
}

ArchSpec compact_resnet_arch(int classes, std::vector<int> widths, int blocks_per_stage, int input_channels) {
  if (widths.empty() || blocks_per_stage < 1) throw ConfigError("compact resnet needs widths and >= 1 block per stage");
  ArchSpec spec{"compact_resnet", input_channels, classes, {}};
  auto& L = spec.layers;
  L.push_back(conv("stem.conv", 3, input_channels, widths[0], 1, 1));
  L.push_back(simple(LayerKind::BatchNorm, "stem.bn"));
  L.push_back(simple(LayerKind::Relu, "stem.relu"));
  int cin = widths[0];
  for (std::size_t s = 0; s < widths.size(); ++s) {
    for (int b = 0; b < blocks_per_stage; ++b) {
      const int stride = (s > 0 && b == 0) ? 2 : 1;
      L.push_back(block(LayerKind::BasicBlock, "stage" + std::to_string(s + 1) + "." + std::to_string(b), cin, 0,
                        widths[s], stride));
      cin = widths[s];
    }
  }
  L.push_back(simple(LayerKind::GlobalAvgPool, "avgpool"));
  L.push_back(fc("fc", cin, classes));
  return spec;
}

ArchSpec compact_predictor_arch(int candidates, std::vector<int> widths, int input_channels) {
  if (widths.empty()) throw ConfigError("compact predictor needs widths");
  ArchSpec spec{"compact_predictor", input_channels, candidates, {}};
  auto& L = spec.layers;
  L.push_back(conv("stem.conv", 3, input_channels, widths[0], 1, 1));
  L.push_back(simple(LayerKind::BatchNorm, "stem.bn"));
  L.push_back(simple(LayerKind::Relu, "stem.relu"));
  int cin = widths[0];
  for (std::size_t s = 0; s < widths.size(); ++s) {
    L.push_back(block(LayerKind::BasicBlock, "block" + std::to_string(s + 1), cin, 0, widths[s], 2));
    cin = widths[s];
  }
  L.push_back(simple(LayerKind::GlobalAvgPool, "avgpool"));
  L.push_back(dropout_layer("dropout", 0.0));
  L.push_back(fc("fc", cin, candidates));
  return spec;
}

ArchSpec resolve_arch(const std::string& ref, int outputs) {
  const std::string prefix = "preset:";
  if (ref.rfind(prefix, 0) != 0) {
    ArchSpec spec = load_arch_file(ref);
    return spec;
  }
  const std::string name = ref.substr(prefix.size());
  if (name == "resnet50") return resnet50_arch(outputs > 0 ? outputs : 1000);
  if (name.size() == 10 && name.rfind("predictor", 0) == 0) {
    return predictor_arch(name.back() - '0', outputs > 0 ? outputs : 3);
  }
  if (name == "compact_resnet") return compact_resnet_arch(outputs > 0 ? outputs : 10);
  if (name == "compact_predictor") return compact_predictor_arch(outputs > 0 ? outputs : 3);
  throw ConfigError("unknown arch preset '" + name + "'");
}

}  // namespace drnet
