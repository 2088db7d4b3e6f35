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
#include "drnet/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <numeric>

#include "drnet/error.hpp"

namespace drnet {
namespace fs = std::filesystem;

namespace {

constexpr std::size_t kCifarSide = 32;
constexpr std::size_t kCifarChannels = 3;
constexpr std::size_t kCifarRecord = 1 + kCifarChannels * kCifarSide * kCifarSide;
constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset, const fs::path& path) {
  if (offset + 4 > bytes.size()) {
    throw FormatError(path.string() + ": truncated header at byte offset " + std::to_string(offset));
  }
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

fs::path cifar_dir(const fs::path& root) {
  if (fs::exists(root / "cifar-10-batches-bin")) return root / "cifar-10-batches-bin";
  return root;
}

Dataset load_cifar(const DatasetSource& src) {
  const fs::path dir = cifar_dir(src.root);
  std::vector<fs::path> files;
  if (src.split == Split::Train) {
    for (int i = 1; i <= 5; ++i) files.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
  } else {
    files.push_back(dir / "test_batch.bin");
  }
  std::vector<std::uint8_t> pixels;
  std::vector<int> labels;
  for (const auto& path : files) {
    const auto bytes = read_file(path);
    if (bytes.empty() || bytes.size() % kCifarRecord != 0) {
      const std::size_t whole = bytes.size() / kCifarRecord;
      throw FormatError(path.string() + ": " + std::to_string(bytes.size()) +
                        " bytes is not a whole number of records; partial record at byte offset " +
                        std::to_string(whole * kCifarRecord));
    }
    const std::size_t records = bytes.size() / kCifarRecord;
    for (std::size_t r = 0; r < records; ++r) {
      const std::size_t offset = r * kCifarRecord;
      if (bytes[offset] > 9) {
        throw FormatError(path.string() + ": label byte " + std::to_string(bytes[offset]) + " at byte offset " +
                          std::to_string(offset) + " is not a CIFAR-10 class");
      }
    }
    for (std::size_t r = 0; r < records; ++r) {
      const std::size_t offset = r * kCifarRecord;
      labels.push_back(bytes[offset]);
      pixels.insert(pixels.end(), bytes.begin() + static_cast<long>(offset + 1),
                    bytes.begin() + static_cast<long>(offset + kCifarRecord));
    }
  }
  return Dataset(kCifarChannels, kCifarSide, std::move(pixels), std::move(labels));
}

Dataset load_idx(const DatasetSource& src) {
  const std::string prefix = src.split == Split::Train ? "train" : "t10k";
  const fs::path image_path = src.root / (prefix + "-images-idx3-ubyte");
  const fs::path label_path = src.root / (prefix + "-labels-idx1-ubyte");
  const auto images = read_file(image_path);
  const auto labels_raw = read_file(label_path);

  const std::uint32_t magic = read_be32(images, 0, image_path);
  if (magic != kIdxImageMagic) {
    throw FormatError(image_path.string() + ": unknown magic at byte offset 0");
  }
  const std::size_t count = read_be32(images, 4, image_path);
  const std::size_t rows = read_be32(images, 8, image_path);
  const std::size_t cols = read_be32(images, 12, image_path);
  if (rows != cols || rows == 0) {
    throw FormatError(image_path.string() + ": non-square image dims at byte offset 8");
  }
  const std::size_t expected = 16 + count * rows * cols;
  if (images.size() != expected) {
    throw FormatError(image_path.string() + ": declared " + std::to_string(count) + " records need " +
                      std::to_string(expected) + " bytes, file ends at byte offset " + std::to_string(images.size()));
  }
  if (read_be32(labels_raw, 0, label_path) != kIdxLabelMagic) {
    throw FormatError(label_path.string() + ": unknown magic at byte offset 0");
  }
  const std::size_t label_count = read_be32(labels_raw, 4, label_path);
  if (label_count != count) {
    throw FormatError(label_path.string() + ": label count at byte offset 4 disagrees with image count");
  }
  if (labels_raw.size() != 8 + count) {
    throw FormatError(label_path.string() + ": declared " + std::to_string(count) +
                      " labels, file ends at byte offset " + std::to_string(labels_raw.size()));
  }
  std::vector<std::uint8_t> pixels(images.begin() + 16, images.end());
  std::vector<int> labels(labels_raw.begin() + 8, labels_raw.end());
  return Dataset(1, rows, std::move(pixels), std::move(labels));
}

// Linear interpolation that never leaves [min(a,b), max(a,b)] under rounding.
double lerp_within(double a, double b, double f) {
  if (f == 0.0) return a;
  const double v = a + f * (b - a);
  return std::clamp(v, std::min(a, b), std::max(a, b));
}

}  // namespace

DatasetFormat parse_dataset_format(const std::string& text) {
  if (text == "cifar10-binary" || text == "cifar10") return DatasetFormat::Cifar10Binary;
  if (text == "idx") return DatasetFormat::Idx;
  throw ConfigError("unknown dataset format '" + text + "'");
}

std::string to_string(DatasetFormat format) {
  return format == DatasetFormat::Cifar10Binary ? "cifar10-binary" : "idx";
}

Dataset::Dataset(std::size_t channels, std::size_t side, std::vector<std::uint8_t> pixels, std::vector<int> labels)
    : channels_(channels), side_(side), pixels_(std::move(pixels)), labels_(std::move(labels)) {
  if (pixels_.size() != labels_.size() * channels_ * side_ * side_) {
    throw FormatError("dataset pixel count does not match " + std::to_string(labels_.size()) + " records");
  }
}

int Dataset::num_classes() const {
  return labels_.empty() ? 0 : *std::max_element(labels_.begin(), labels_.end()) + 1;
}

ImageBatch Dataset::gather(std::span<const std::size_t> indices) const {
  const std::size_t per = channels_ * side_ * side_;
  ImageBatch batch{Tensor({indices.size(), channels_, side_, side_}), {}};
  batch.labels.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t r = indices[i];
    if (r >= labels_.size()) throw IndexError("dataset record " + std::to_string(r) + " out of range");
    const std::uint8_t* src = pixels_.data() + r * per;
    double* dst = batch.pixels.raw() + i * per;
    for (std::size_t k = 0; k < per; ++k) dst[k] = src[k] / 255.0;
    batch.labels.push_back(labels_[r]);
  }
  return batch;
}

ImageBatch Dataset::slice(std::size_t begin, std::size_t end) const {
  end = std::min(end, size());
  std::vector<std::size_t> idx(end > begin ? end - begin : 0);
  std::iota(idx.begin(), idx.end(), begin);
  return gather(idx);
}

Dataset load_dataset(const DatasetSource& source) {
  Dataset full = source.format == DatasetFormat::Cifar10Binary ? load_cifar(source) : load_idx(source);
  if (source.limit == 0 || source.limit >= full.size()) return full;
  ImageBatch head = full.slice(0, source.limit);
  std::vector<std::uint8_t> bytes(head.pixels.numel());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    bytes[i] = static_cast<std::uint8_t>(std::lround(head.pixels[i] * 255.0));
  }
  return Dataset(full.channels(), full.side(), std::move(bytes), std::move(head.labels));
}

BatchStream::BatchStream(const Dataset& data, std::size_t batch_size, Rng* shuffle_rng)
    : data_(&data), batch_size_(batch_size), order_(data.size()) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  if (shuffle_rng) {
    for (std::size_t i = order_.size(); i > 1; --i) {
      std::swap(order_[i - 1], order_[uniform_index(*shuffle_rng, i)]);
    }
  }
}

std::optional<ImageBatch> BatchStream::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  const std::size_t end = std::min(cursor_ + batch_size_, order_.size());
  ImageBatch batch = data_->gather(std::span(order_).subspan(cursor_, end - cursor_));
  cursor_ = end;
  return batch;
}

std::size_t BatchStream::batch_count() const { return (order_.size() + batch_size_ - 1) / batch_size_; }

ImageBatch bilinear_resize(const ImageBatch& batch, int target) {
  if (target < 1) throw ConfigError("bilinear_resize: target must be >= 1");
  const std::size_t n = batch.pixels.dim(0), c = batch.pixels.dim(1), side = batch.pixels.dim(2);
  const auto t = static_cast<std::size_t>(target);
  if (t == side) return batch;

  // Source coordinate of output index i under corner alignment; a 1-pixel
  // output samples the centre.
  std::vector<std::size_t> lo(t), hi(t);
  std::vector<double> frac(t);
  for (std::size_t i = 0; i < t; ++i) {
    const double pos = t == 1 ? (static_cast<double>(side) - 1.0) / 2.0
                              : static_cast<double>(i) * static_cast<double>(side - 1) / static_cast<double>(t - 1);
    lo[i] = std::min(static_cast<std::size_t>(std::floor(pos)), side - 1);
    hi[i] = std::min(lo[i] + 1, side - 1);
    frac[i] = pos - static_cast<double>(lo[i]);
  }
  ImageBatch out{Tensor({n, c, t, t}), batch.labels};
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const double* src = batch.pixels.raw() + plane * side * side;
    double* dst = out.pixels.raw() + plane * t * t;
    for (std::size_t y = 0; y < t; ++y) {
      const double fy = frac[y];
      const double* r0 = src + lo[y] * side;
      const double* r1 = src + hi[y] * side;
      for (std::size_t x = 0; x < t; ++x) {
        const double fx = frac[x];
        const double top = lerp_within(r0[lo[x]], r0[hi[x]], fx);
        const double bottom = lerp_within(r1[lo[x]], r1[hi[x]], fx);
        dst[y * t + x] = lerp_within(top, bottom, fy);
      }
    }
  }
  return out;
}

ImageBatch crop_and_flip(const ImageBatch& batch, int pad, std::span<const std::pair<int, int>> offsets,
                         std::span<const bool> flips) {
  if (pad < 0) throw ConfigError("augment: pad must be >= 0");
  const std::size_t n = batch.pixels.dim(0), c = batch.pixels.dim(1), side = batch.pixels.dim(2);
  if (offsets.size() != n || flips.size() != n) throw DimensionError("augment: per-image draws must match batch");
  ImageBatch out{Tensor(batch.pixels.shape()), batch.labels};
  const long s = static_cast<long>(side);
  for (std::size_t b = 0; b < n; ++b) {
    const auto [oy, ox] = offsets[b];
    if (oy < 0 || ox < 0 || oy > 2 * pad || ox > 2 * pad) throw ConfigError("augment: crop offset out of range");
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (long y = 0; y < s; ++y) {
        const long sy = y + oy - pad;
        for (long x = 0; x < s; ++x) {
          const long xx = flips[b] ? s - 1 - x : x;
          const long sx = xx + ox - pad;
          const bool inside = sy >= 0 && sy < s && sx >= 0 && sx < s;
          out.pixels.at(b, ch, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) =
              inside ? batch.pixels.at(b, ch, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx)) : 0.0;
        }
      }
    }
  }
  return out;
}

ImageBatch augment_train(const ImageBatch& batch, int pad, Rng& rng) {
  if (pad < 0) throw ConfigError("augment: pad must be >= 0");
  const std::size_t n = batch.size();
  std::vector<std::pair<int, int>> offsets(n);
  std::unique_ptr<bool[]> flips(new bool[n]);
  for (std::size_t b = 0; b < n; ++b) {
    const auto span = static_cast<std::uint64_t>(2 * pad + 1);
    offsets[b] = {static_cast<int>(uniform_index(rng, span)), static_cast<int>(uniform_index(rng, span))};
    flips[b] = coin_flip(rng);
  }
  return crop_and_flip(batch, pad, offsets, std::span<const bool>(flips.get(), n));
}

ImageBatch normalize(const ImageBatch& batch, std::span<const double> means, std::span<const double> stds) {
  const std::size_t c = batch.pixels.dim(1);
  if (means.size() != c || stds.size() != c) {
    throw ConfigError("normalize: expected " + std::to_string(c) + " channel constants, got " +
                      std::to_string(means.size()) + "/" + std::to_string(stds.size()));
  }
  for (double s : stds) {
    if (!(s > 0.0)) throw ConfigError("normalize: channel std must be positive");
  }
  ImageBatch out = batch;
  const std::size_t n = batch.pixels.dim(0), hw = batch.pixels.dim(2) * batch.pixels.dim(3);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      double* p = out.pixels.raw() + (b * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) p[i] = (p[i] - means[ch]) / stds[ch];
    }
  return out;
}

}  // namespace drnet
