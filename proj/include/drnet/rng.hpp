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
#ifndef DRNET_RNG_HPP
#define DRNET_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

namespace drnet {

// The standard distributions are implementation-defined, so every draw goes
// through the helpers below to keep streams identical across standard
// libraries.
using Rng = std::mt19937_64;

/// Seeds an engine from a (seed, stream) pair so workers get disjoint streams.
Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0);

/// Uniform draw on the open interval (0, 1).
inline double uniform_open01(Rng& rng) {
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

/// Uniform integer in [0, n).
std::uint64_t uniform_index(Rng& rng, std::uint64_t n);

/// Standard normal via Box-Muller (one value per call).
inline double standard_normal(Rng& rng) {
  const double u1 = uniform_open01(rng);
  const double u2 = uniform_open01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

inline bool coin_flip(Rng& rng) { return (rng() >> 63) != 0; }

std::string serialize_rng(const Rng& rng);
Rng deserialize_rng(const std::string& text);

}  // namespace drnet

#endif  // DRNET_RNG_HPP
