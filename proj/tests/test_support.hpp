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
#ifndef DRNET_TESTS_TEST_SUPPORT_HPP
#define DRNET_TESTS_TEST_SUPPORT_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iterator>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "drnet/image.hpp"
#include "drnet/rng.hpp"
#include "drnet/tensor.hpp"

namespace drnet::testing {

inline Tensor random_tensor(const Shape& shape, Rng& rng, double scale = 1.0) {
  Tensor t(shape);
  for (double& v : t.data()) v = scale * standard_normal(rng);
  return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

/// Quadruple-loop cross-correlation oracle.
inline Tensor naive_conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, int stride, int pad) {
  const long n = static_cast<long>(x.dim(0)), cin = static_cast<long>(x.dim(1));
  const long h = static_cast<long>(x.dim(2)), wd = static_cast<long>(x.dim(3));
  const long cout = static_cast<long>(w.dim(0)), kh = static_cast<long>(w.dim(2)), kw = static_cast<long>(w.dim(3));
  const long ho = (h + 2 * pad - kh) / stride + 1, wo = (wd + 2 * pad - kw) / stride + 1;
  Tensor out({static_cast<std::size_t>(n), static_cast<std::size_t>(cout), static_cast<std::size_t>(ho),
              static_cast<std::size_t>(wo)});
  for (long b = 0; b < n; ++b)
    for (long co = 0; co < cout; ++co)
      for (long oy = 0; oy < ho; ++oy)
        for (long ox = 0; ox < wo; ++ox) {
          double acc = bias ? (*bias)[static_cast<std::size_t>(co)] : 0.0;
          for (long ci = 0; ci < cin; ++ci)
            for (long ky = 0; ky < kh; ++ky)
              for (long kx = 0; kx < kw; ++kx) {
                const long iy = oy * stride - pad + ky, ix = ox * stride - pad + kx;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                acc += x.at(b, ci, iy, ix) * w.at(co, ci, ky, kx);
              }
          out.at(b, co, oy, ox) = acc;
        }
  return out;
}

/// Writes a CIFAR-10 style binary file with class-dependent structure so
/// small models can learn it.
inline void write_synthetic_cifar(const std::filesystem::path& file, std::size_t records, std::uint64_t seed) {
  Rng rng = make_rng(seed, 99);
  std::ofstream out(file, std::ios::binary);
  std::vector<unsigned char> rec(3073);
  for (std::size_t r = 0; r < records; ++r) {
    const int label = static_cast<int>(uniform_index(rng, 10));
    rec[0] = static_cast<unsigned char>(label);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
          double v = 60.0 * uniform_open01(rng);
          if (c == label % 3) v += 120.0;
          if (label >= 3 && y >= (label * 3) % 26 && y < (label * 3) % 26 + 6) v += 70.0;
          rec[1 + static_cast<std::size_t>(c * 1024 + y * 32 + x)] = static_cast<unsigned char>(std::min(255.0, v));
        }
    out.write(reinterpret_cast<const char*>(rec.data()), static_cast<std::streamsize>(rec.size()));
  }
}

/// A CIFAR directory with five train files and a test file.
inline std::filesystem::path make_synthetic_cifar_dir(const std::filesystem::path& dir, std::size_t per_train_file,
                                                      std::size_t test_records, std::uint64_t seed = 5) {
  std::filesystem::create_directories(dir);
  for (int k = 1; k <= 5; ++k) {
    write_synthetic_cifar(dir / ("data_batch_" + std::to_string(k) + ".bin"), per_train_file, seed + static_cast<std::uint64_t>(k));
  }
  write_synthetic_cifar(dir / "test_batch.bin", test_records, seed + 100);
  return dir;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("drnet_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string read_bytes(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace drnet::testing

#endif  // DRNET_TESTS_TEST_SUPPORT_HPP
