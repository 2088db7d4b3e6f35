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
#include <algorithm>
#include <cmath>
#include <fstream>

#include <gtest/gtest.h>

#include "drnet/error.hpp"
#include "drnet/image.hpp"
#include "test_support.hpp"

namespace drnet {
namespace {

using testing::random_tensor;
using testing::scratch_dir;

ImageBatch single_channel(std::size_t side, const std::vector<double>& values) {
  return ImageBatch{Tensor({1, 1, side, side}, values), {0}};
}

TEST(BilinearResize, HandComputedTwoToThree) {
  const ImageBatch out = bilinear_resize(single_channel(2, {0, 2, 4, 6}), 3);
  EXPECT_EQ(out.pixels, Tensor({1, 1, 3, 3}, {0, 1, 2, 2, 3, 4, 4, 5, 6}));
  EXPECT_EQ(out.labels, std::vector<int>{0});
}

TEST(BilinearResize, SameSizeIsIdentity) {
  Rng rng = make_rng(1);
  const ImageBatch in{random_tensor({2, 3, 7, 7}, rng), {1, 2}};
  EXPECT_EQ(bilinear_resize(in, 7).pixels, in.pixels);
}

TEST(BilinearResize, ConstantStaysConstantAtEveryTarget) {
  const ImageBatch in{Tensor({1, 2, 6, 6}, 0.3), {0}};
  for (int t = 1; t <= 12; ++t) {
    const ImageBatch out = bilinear_resize(in, t);
    ASSERT_EQ(out.side(), static_cast<std::size_t>(t));
    for (double v : out.pixels.data()) EXPECT_EQ(v, 0.3) << "target " << t;
  }
}

TEST(BilinearResize, CornersAndBoundsArePreserved) {
  Rng rng = make_rng(2);
  const ImageBatch in{random_tensor({1, 1, 9, 9}, rng), {0}};
  const auto [lo, hi] = std::minmax_element(in.pixels.data().begin(), in.pixels.data().end());
  for (int t : {2, 5, 13, 17}) {
    const ImageBatch out = bilinear_resize(in, t);
    const std::size_t e = static_cast<std::size_t>(t) - 1;
    EXPECT_EQ(out.pixels.at(0, 0, 0, 0), in.pixels.at(0, 0, 0, 0));
    EXPECT_EQ(out.pixels.at(0, 0, e, e), in.pixels.at(0, 0, 8, 8));
    EXPECT_EQ(out.pixels.at(0, 0, 0, e), in.pixels.at(0, 0, 0, 8));
    for (double v : out.pixels.data()) {
      EXPECT_GE(v, *lo);
      EXPECT_LE(v, *hi);
    }
  }
}

TEST(BilinearResize, ReproducesBilinearRamp) {
  const auto ramp = [](double u, double v) { return 0.25 + 1.5 * u - 0.75 * v + 2.0 * u * v; };
  const std::size_t s = 8;
  Tensor img({1, 1, s, s});
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = 0; j < s; ++j) img.at(0, 0, i, j) = ramp(i / double(s - 1), j / double(s - 1));
  for (int t : {3, 5, 11, 16}) {
    const ImageBatch out = bilinear_resize(ImageBatch{img, {0}}, t);
    for (int i = 0; i < t; ++i)
      for (int j = 0; j < t; ++j) {
        EXPECT_NEAR(out.pixels.at(0, 0, i, j), ramp(i / double(t - 1), j / double(t - 1)), 1e-12);
      }
  }
}

TEST(Augment, ZeroPadNoFlipIsIdentity) {
  Rng rng = make_rng(3);
  const ImageBatch in{random_tensor({2, 3, 5, 5}, rng), {0, 1}};
  const std::vector<std::pair<int, int>> offsets{{0, 0}, {0, 0}};
  const bool no_flip[] = {false, false};
  EXPECT_EQ(crop_and_flip(in, 0, offsets, no_flip).pixels, in.pixels);
}

TEST(Augment, DoubleFlipIsIdentity) {
  Rng rng = make_rng(4);
  const ImageBatch in{random_tensor({2, 3, 6, 6}, rng), {0, 1}};
  const std::vector<std::pair<int, int>> offsets{{0, 0}, {0, 0}};
  const bool flip[] = {true, true};
  const ImageBatch once = crop_and_flip(in, 0, offsets, flip);
  EXPECT_NE(once.pixels, in.pixels);
  EXPECT_EQ(crop_and_flip(once, 0, offsets, flip).pixels, in.pixels);
}

TEST(Augment, CropShiftsAndZeroFills) {
  const ImageBatch in = single_channel(3, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  const std::vector<std::pair<int, int>> offsets{{2, 2}};
  const bool no_flip[] = {false};
  EXPECT_EQ(crop_and_flip(in, 1, offsets, no_flip).pixels, Tensor({1, 1, 3, 3}, {5, 6, 0, 8, 9, 0, 0, 0, 0}));
}

TEST(Augment, SeededDrawsAreReproducible) {
  Rng data_rng = make_rng(5);
  const ImageBatch in{random_tensor({4, 3, 8, 8}, data_rng), {0, 1, 2, 3}};
  Rng a = make_rng(42), b = make_rng(42);
  EXPECT_EQ(augment_train(in, 4, a).pixels, augment_train(in, 4, b).pixels);
}

TEST(Normalize, IdentityAndMeanSubtraction) {
  Rng rng = make_rng(6);
  const ImageBatch in{random_tensor({3, 2, 4, 4}, rng), {0, 0, 0}};
  const std::vector<double> zeros{0, 0}, ones{1, 1};
  EXPECT_EQ(normalize(in, zeros, ones).pixels, in.pixels);

  const ImageBatch constant{Tensor({1, 2, 3, 3}, 0.4), {0}};
  const std::vector<double> means{0.4, 0.4};
  const ImageBatch centred = normalize(constant, means, ones);
  for (double v : centred.pixels.data()) EXPECT_EQ(v, 0.0);

  std::vector<double> mu(2, 0.0), sd(2, 0.0);
  const std::size_t per = 3 * 16;
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t i = 0; i < 16; ++i) mu[c] += in.pixels.raw()[(n * 2 + c) * 16 + i] / per;
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t i = 0; i < 16; ++i) {
        const double d = in.pixels.raw()[(n * 2 + c) * 16 + i] - mu[c];
        sd[c] += d * d / per;
      }
    sd[c] = std::sqrt(sd[c]);
  }
  const ImageBatch out = normalize(in, mu, sd);
  for (std::size_t c = 0; c < 2; ++c) {
    double m = 0.0;
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t i = 0; i < 16; ++i) m += out.pixels.raw()[(n * 2 + c) * 16 + i] / per;
    EXPECT_LT(std::abs(m), 1e-10);
  }
}

TEST(Normalize, ZeroStdIsConfigError) {
  const ImageBatch in{Tensor({1, 1, 2, 2}, 0.5), {0}};
  const std::vector<double> means{0.0}, stds{0.0};
  EXPECT_THROW(normalize(in, means, stds), ConfigError);
}

TEST(CifarLoader, ReadsSplitsAndScalesPixels) {
  const auto dir = testing::make_synthetic_cifar_dir(scratch_dir("cifar_ok"), 7, 11);
  const Dataset train = load_dataset({DatasetFormat::Cifar10Binary, dir, Split::Train, 0});
  const Dataset val = load_dataset({DatasetFormat::Cifar10Binary, dir, Split::Val, 0});
  EXPECT_EQ(train.size(), 35u);
  EXPECT_EQ(val.size(), 11u);
  const ImageBatch b = train.slice(0, 5);
  EXPECT_EQ(b.pixels.shape(), (Shape{5, 3, 32, 32}));
  for (double v : b.pixels.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  const Dataset limited = load_dataset({DatasetFormat::Cifar10Binary, dir, Split::Train, 4});
  EXPECT_EQ(limited.size(), 4u);
  EXPECT_EQ(limited.slice(0, 4).pixels, train.slice(0, 4).pixels);
}

TEST(CifarLoader, TruncatedFileIsFormatError) {
  const auto dir = scratch_dir("cifar_trunc");
  testing::write_synthetic_cifar(dir / "test_batch.bin", 3, 1);
  std::filesystem::resize_file(dir / "test_batch.bin", 3 * 3073 - 1);
  try {
    load_dataset({DatasetFormat::Cifar10Binary, dir, Split::Val, 0});
    FAIL() << "expected a format error";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("byte offset 6146"), std::string::npos) << e.what();
  }
}

TEST(CifarLoader, BadLabelIsFormatError) {
  const auto dir = scratch_dir("cifar_label");
  testing::write_synthetic_cifar(dir / "test_batch.bin", 2, 1);
  {
    std::fstream f(dir / "test_batch.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(3073);
    f.put(static_cast<char>(42));
  }
  EXPECT_THROW(load_dataset({DatasetFormat::Cifar10Binary, dir, Split::Val, 0}), FormatError);
}

void write_be32(std::ofstream& out, std::uint32_t v) {
  const char b[4] = {char(v >> 24), char(v >> 16), char(v >> 8), char(v)};
  out.write(b, 4);
}

TEST(IdxLoader, ReadsImagesAndLabels) {
  const auto dir = scratch_dir("idx_ok");
  {
    std::ofstream img(dir / "train-images-idx3-ubyte", std::ios::binary);
    write_be32(img, 0x803);
    write_be32(img, 2);
    write_be32(img, 4);
    write_be32(img, 4);
    for (int i = 0; i < 32; ++i) img.put(static_cast<char>(i * 8));
    std::ofstream lab(dir / "train-labels-idx1-ubyte", std::ios::binary);
    write_be32(lab, 0x801);
    write_be32(lab, 2);
    lab.put(3);
    lab.put(7);
  }
  const Dataset d = load_dataset({DatasetFormat::Idx, dir, Split::Train, 0});
  EXPECT_EQ(d.size(), 2u);
  EXPECT_EQ(d.channels(), 1u);
  EXPECT_EQ(d.side(), 4u);
  EXPECT_EQ(d.labels(), (std::vector<int>{3, 7}));
  EXPECT_DOUBLE_EQ(d.slice(1, 2).pixels[0], 128.0 / 255.0);
}

TEST(IdxLoader, UnknownMagicIsFormatError) {
  const auto dir = scratch_dir("idx_magic");
  {
    std::ofstream img(dir / "t10k-images-idx3-ubyte", std::ios::binary);
    write_be32(img, 0x1234);
    std::ofstream lab(dir / "t10k-labels-idx1-ubyte", std::ios::binary);
    write_be32(lab, 0x801);
  }
  EXPECT_THROW(load_dataset({DatasetFormat::Idx, dir, Split::Val, 0}), FormatError);
}

TEST(BatchStream, SeededOrderIsReproducibleAndCoversEveryRecord) {
  const auto dir = testing::make_synthetic_cifar_dir(scratch_dir("stream"), 1, 13);
  const Dataset val = load_dataset({DatasetFormat::Cifar10Binary, dir, Split::Val, 0});
  Rng a = make_rng(9), b = make_rng(9);
  BatchStream s1(val, 4, &a), s2(val, 4, &b);
  EXPECT_EQ(s1.batch_count(), 4u);
  std::size_t total = 0;
  while (auto x = s1.next()) {
    auto y = s2.next();
    ASSERT_TRUE(y);
    EXPECT_EQ(x->pixels, y->pixels);
    EXPECT_EQ(x->labels, y->labels);
    total += x->size();
  }
  EXPECT_EQ(total, 13u);
}

}  // namespace
}  // namespace drnet
