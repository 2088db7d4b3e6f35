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
#ifndef DRNET_IMAGE_HPP
#define DRNET_IMAGE_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "drnet/rng.hpp"
#include "drnet/tensor.hpp"

namespace drnet {

/// Square images [N,C,S,S] and their labels.
struct ImageBatch {
  Tensor pixels;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t channels() const { return pixels.dim(1); }
  std::size_t side() const { return pixels.dim(2); }
};

enum class DatasetFormat { Cifar10Binary, Idx };
enum class Split { Train, Val };

DatasetFormat parse_dataset_format(const std::string& text);
std::string to_string(DatasetFormat format);

struct DatasetSource {
  DatasetFormat format = DatasetFormat::Cifar10Binary;
  std::filesystem::path root;
  Split split = Split::Train;
  /// Keep only the first `limit` records when nonzero.
  std::size_t limit = 0;
};

/// Decoded dataset held as bytes; batches are materialized on demand.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::size_t channels, std::size_t side, std::vector<std::uint8_t> pixels, std::vector<int> labels);

  std::size_t size() const { return labels_.size(); }
  std::size_t channels() const { return channels_; }
  std::size_t side() const { return side_; }
  const std::vector<int>& labels() const { return labels_; }
  int num_classes() const;

  /// Pixels scaled to [0,1] for the given record indices, in order.
  ImageBatch gather(std::span<const std::size_t> indices) const;
  /// Records [begin, end).
  ImageBatch slice(std::size_t begin, std::size_t end) const;

 private:
  std::size_t channels_ = 0;
  std::size_t side_ = 0;
  std::vector<std::uint8_t> pixels_;
  std::vector<int> labels_;
};

/// Reads and validates a CIFAR-10 binary or IDX split. Truncated or garbled
/// files raise FormatError with the offending byte offset; no partial data is
/// returned.
Dataset load_dataset(const DatasetSource& source);

/// Iterates a dataset in batches. With an RNG the order is a fresh
/// permutation drawn from it; otherwise records come in file order.
class BatchStream {
 public:
  BatchStream(const Dataset& data, std::size_t batch_size, Rng* shuffle_rng);
  std::optional<ImageBatch> next();
  std::size_t batch_count() const;

 private:
  const Dataset* data_;
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

/// Corner-aligned bilinear resize to a `target` x `target` grid: output
/// corners sample input corners exactly and equal sizes are the identity.
ImageBatch bilinear_resize(const ImageBatch& batch, int target);

/// Zero-pads by `pad`, crops back to the original side at the given offsets
/// and mirrors horizontally where `flips[n]` is set.
ImageBatch crop_and_flip(const ImageBatch& batch, int pad, std::span<const std::pair<int, int>> offsets,
                         std::span<const bool> flips);

/// Random pad-crop plus horizontal flip with probability 0.5 per image.
ImageBatch augment_train(const ImageBatch& batch, int pad, Rng& rng);

/// (x - mean_c) / std_c per channel.
ImageBatch normalize(const ImageBatch& batch, std::span<const double> means, std::span<const double> stds);

}  // namespace drnet

#endif  // DRNET_IMAGE_HPP
