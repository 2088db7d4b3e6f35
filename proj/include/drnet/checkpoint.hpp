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
#ifndef DRNET_CHECKPOINT_HPP
#define DRNET_CHECKPOINT_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

#include "drnet/model.hpp"

namespace drnet {

inline constexpr char kCheckpointMagic[9] = "DRNCKPT1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Training bookkeeping stored next to the weights.
struct CheckpointInfo {
  std::string stage;
  int epoch = 0;
  std::uint64_t global_step = 0;
  std::string rng_state;  // empty when no training stream is attached
  nlohmann::json config;
  nlohmann::json history = nlohmann::json::array();
};

struct LoadedCheckpoint {
  DRModel model;
  CheckpointInfo info;
};

/// Binary layout (little-endian): magic "DRNCKPT1", u32 version, u64 document
/// length, JSON document, then records of
/// {u32 name length, name, u8 dtype (1 = f32), u32 rank, u64 dims[rank], payload}.
/// Parameters, BN buffers and optimizer momentum are stored as f32.
std::string encode_checkpoint(DRModel& model, const CheckpointInfo& info);
LoadedCheckpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, DRModel& model, const CheckpointInfo& info);
/// Checks magic and version from the file header before reading the body.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Copies every record named `prefix`* into the matching tensor of `model`.
/// The record names under `prefix` must equal the model's state names
/// exactly; optimizer records are ignored.
void load_checkpoint_into(DRModel& model, const std::filesystem::path& path, const std::string& prefix = "classifier.");

/// Rounds every parameter, buffer and momentum value to the nearest f32 so
/// that an in-memory model equals its saved form.
void quantize_to_f32(DRModel& model);

}  // namespace drnet

#endif  // DRNET_CHECKPOINT_HPP
