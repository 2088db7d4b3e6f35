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
#include "drnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

#include "drnet/error.hpp"

namespace drnet {
namespace {

constexpr std::uint8_t kDtypeF32 = 1;
constexpr std::size_t kHeaderBytes = 8 + 4 + 8;
constexpr std::uint32_t kMaxRank = 8;

class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
  void bytes(std::string_view s) { out_.append(s); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }
  bool done() const { return pos_ == data_.size(); }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) {
      throw LoadError("checkpoint truncated at byte " + std::to_string(pos_) + " while reading " + what + " (" +
                      std::to_string(n) + " bytes needed, " + std::to_string(remaining()) + " left)");
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(data_[pos_++])) << (8 * i);
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(data_[pos_++])) << (8 * i);
    return v;
  }
  double f32() { return static_cast<double>(std::bit_cast<float>(u32("payload"))); }
  std::string_view bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string_view s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

void check_header(ByteReader& in) {
  const std::string_view magic = in.bytes(8, "magic");
  if (magic != std::string_view(kCheckpointMagic, 8)) throw LoadError("not a DRNet checkpoint (bad magic)");
  const std::uint32_t version = in.u32("version");
  if (version != kCheckpointVersion) {
    throw LoadError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  }
}

struct Slot {
  Tensor* tensor = nullptr;
  Parameter* momentum_of = nullptr;
};

/// Named state of both networks followed by momentum buffers that exist.
std::vector<std::pair<std::string, Slot>> model_slots(DRModel& model, bool with_momentum) {
  std::vector<std::pair<std::string, Slot>> slots;
  std::pair<const char*, Network*> nets[] = {{"classifier.", &model.classifier}, {"predictor.", &model.predictor}};
  for (auto& [prefix, net] : nets) {
    for (const StateEntry& e : net->state()) slots.push_back({prefix + e.name, Slot{e.tensor, nullptr}});
  }
  if (with_momentum) {
    for (auto& [prefix, net] : nets) {
      for (Parameter* p : net->parameters()) {
        slots.push_back({std::string("optim.") + prefix + p->name, Slot{&p->momentum, p}});
      }
    }
  }
  return slots;
}

nlohmann::json make_doc(const DRModel& model, const CheckpointInfo& info) {
  nlohmann::json doc;
  doc["format"] = "drnet-checkpoint";
  doc["classifier_arch"] = serialize_arch(model.classifier.spec());
  doc["predictor_arch"] = serialize_arch(model.predictor.spec());
  doc["resolutions"] = model.resolution_set.resolutions;
  doc["costs_mflops"] = model.resolution_set.costs;
  doc["predictor_input"] = model.resolution_set.predictor_input;
  doc["normalization"] = {{"means", model.norm.means}, {"stds", model.norm.stds}};
  doc["gumbel"] = {{"tau", model.gumbel.tau}, {"eps", model.gumbel.eps}};
  doc["shared_bn"] = model.classifier.shared_bn();
  doc["training_started"] = model.training_started;
  doc["stage"] = info.stage;
  doc["epoch"] = info.epoch;
  doc["global_step"] = info.global_step;
  doc["rng_state"] = info.rng_state;
  doc["config"] = info.config;
  doc["history"] = info.history;
  return doc;
}

struct RecordHeader {
  std::string name;
  Shape shape;
  std::size_t offset = 0;
};

RecordHeader read_record_header(ByteReader& in) {
  RecordHeader h;
  h.offset = in.offset();
  const std::uint32_t name_len = in.u32("record name length");
  h.name = std::string(in.bytes(name_len, "record name"));
  const std::uint8_t dtype = in.u8("dtype tag");
  if (dtype != kDtypeF32) {
    throw LoadError("record '" + h.name + "' at byte " + std::to_string(h.offset) + " has unknown dtype tag " +
                    std::to_string(dtype));
  }
  const std::uint32_t rank = in.u32("rank");
  if (rank > kMaxRank) throw LoadError("record '" + h.name + "' declares rank " + std::to_string(rank));
  std::uint64_t count = 1;
  for (std::uint32_t d = 0; d < rank; ++d) {
    const std::uint64_t dim = in.u64("dims");
    h.shape.push_back(static_cast<std::size_t>(dim));
    if (dim != 0 && count > in.remaining() / dim) {
      throw LoadError("record '" + h.name + "' at byte " + std::to_string(h.offset) + " declares more data than the file holds");
    }
    count *= dim;
  }
  in.need(static_cast<std::size_t>(count) * 4, ("payload of '" + h.name + "'").c_str());
  return h;
}

void read_payload(ByteReader& in, Tensor& dst) {
  for (double& v : dst.data()) v = in.f32();
}

void skip_payload(ByteReader& in, const Shape& shape) { in.bytes(shape_numel(shape) * 4, "payload"); }

/// Fills `model` from the record stream; every non-optional slot must appear exactly once.
void read_records(ByteReader& in, DRModel& model, const std::string& prefix, bool with_momentum) {
  auto slots = model_slots(model, with_momentum);
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i].first.starts_with(prefix)) index[slots[i].first] = i;
  }
  std::set<std::string> seen;
  while (!in.done()) {
    const RecordHeader h = read_record_header(in);
    const bool is_optim = h.name.starts_with("optim.");
    if (!h.name.starts_with(prefix) || (is_optim && !with_momentum)) {
      skip_payload(in, h.shape);
      continue;
    }
    auto it = index.find(h.name);
    if (it == index.end()) {
      throw LoadError("checkpoint record '" + h.name + "' at byte " + std::to_string(h.offset) +
                      " does not match any parameter of the model");
    }
    if (!seen.insert(h.name).second) throw LoadError("checkpoint record '" + h.name + "' appears twice");
    Slot& slot = slots[it->second].second;
    if (slot.momentum_of) {
      const Shape& expected = slot.momentum_of->var.shape();
      if (h.shape != expected) {
        throw LoadError("momentum '" + h.name + "' has shape " + shape_string(h.shape) + ", expected " +
                        shape_string(expected));
      }
      *slot.tensor = Tensor(h.shape, 0.0);
    } else if (h.shape != slot.tensor->shape()) {
      throw LoadError("parameter '" + h.name + "' has shape " + shape_string(h.shape) + " in the checkpoint but " +
                      shape_string(slot.tensor->shape()) + " in the model");
    }
    read_payload(in, *slot.tensor);
  }
  for (const auto& [name, slot] : slots) {
    if (!slot.momentum_of && name.starts_with(prefix) && !seen.contains(name)) {
      throw LoadError("checkpoint is missing parameter '" + name + "'");
    }
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path.string());
  char header[12];
  in.read(header, sizeof header);
  ByteReader head(std::string_view(header, static_cast<std::size_t>(in.gcount())));
  check_header(head);
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  std::string bytes(size, '\0');
  in.seekg(0);
  in.read(bytes.data(), static_cast<std::streamsize>(size));
  if (static_cast<std::size_t>(in.gcount()) != size) throw LoadError("short read on " + path.string());
  return bytes;
}

nlohmann::json read_doc(ByteReader& in) {
  check_header(in);
  const std::uint64_t len = in.u64("document length");
  const std::string_view text = in.bytes(static_cast<std::size_t>(len), "document");
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("checkpoint document is not valid JSON: ") + e.what());
  }
}

}  // namespace

std::string encode_checkpoint(DRModel& model, const CheckpointInfo& info) {
  ByteWriter out;
  out.bytes(std::string_view(kCheckpointMagic, 8));
  out.u32(kCheckpointVersion);
  const std::string doc = make_doc(model, info).dump();
  out.u64(doc.size());
  out.bytes(doc);
  for (const auto& [name, slot] : model_slots(model, true)) {
    if (slot.tensor->empty() && slot.momentum_of) continue;
    out.u32(static_cast<std::uint32_t>(name.size()));
    out.bytes(name);
    out.u8(kDtypeF32);
    out.u32(static_cast<std::uint32_t>(slot.tensor->rank()));
    for (std::size_t d : slot.tensor->shape()) out.u64(d);
    for (double v : slot.tensor->data()) out.f32(v);
  }
  return out.take();
}

LoadedCheckpoint decode_checkpoint(std::string_view bytes) {
  ByteReader in(bytes);
  const nlohmann::json doc = read_doc(in);
  LoadedCheckpoint out;
  try {
    const ArchSpec cls = parse_arch(doc.at("classifier_arch").get<std::string>());
    const ArchSpec pred = parse_arch(doc.at("predictor_arch").get<std::string>());
    Normalization norm{doc.at("normalization").at("means").get<std::vector<double>>(),
                       doc.at("normalization").at("stds").get<std::vector<double>>()};
    out.model = make_model(cls, pred, doc.at("resolutions").get<std::vector<int>>(), doc.at("predictor_input").get<int>(),
                           std::move(norm), 0);
    if (doc.at("costs_mflops").get<std::vector<double>>() != out.model.resolution_set.costs) {
      throw LoadError("checkpoint cost table disagrees with its classifier spec");
    }
    out.model.gumbel.tau = doc.at("gumbel").at("tau").get<double>();
    out.model.gumbel.eps = doc.at("gumbel").at("eps").get<double>();
    shared_bn_mode(out.model, doc.at("shared_bn").get<bool>());
    out.model.training_started = doc.at("training_started").get<bool>();
    out.info.stage = doc.at("stage").get<std::string>();
    out.info.epoch = doc.at("epoch").get<int>();
    out.info.global_step = doc.at("global_step").get<std::uint64_t>();
    out.info.rng_state = doc.at("rng_state").get<std::string>();
    out.info.config = doc.at("config");
    out.info.history = doc.at("history");
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("checkpoint document is incomplete: ") + e.what());
  } catch (const LoadError&) {
    throw;
  } catch (const Error& e) {
    throw LoadError(std::string("checkpoint model cannot be rebuilt: ") + e.what());
  }
  read_records(in, out.model, "", true);
  return out;
}

void save_checkpoint(const std::filesystem::path& path, DRModel& model, const CheckpointInfo& info) {
  const std::string bytes = encode_checkpoint(model, info);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  try {
    return decode_checkpoint(bytes);
  } catch (const LoadError& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

void load_checkpoint_into(DRModel& model, const std::filesystem::path& path, const std::string& prefix) {
  const std::string bytes = read_file(path);
  ByteReader in(bytes);
  read_doc(in);
  try {
    read_records(in, model, prefix, false);
  } catch (const LoadError& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

void quantize_to_f32(DRModel& model) {
  for (auto& [name, slot] : model_slots(model, true)) {
    for (double& v : slot.tensor->data()) v = static_cast<double>(static_cast<float>(v));
  }
}

}  // namespace drnet
