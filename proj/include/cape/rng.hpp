// Copyright 2026 The CAPE Embeddings Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#ifndef CAPE_RNG_HPP_
#define CAPE_RNG_HPP_

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <string_view>
#include <utility>

namespace cape {

// SplitMix64 finalizer (Steele, Lea & Flood 2014). Used both as the
// generator's output function and as a standalone 64-bit mixer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// 64-bit FNV-1a over raw bytes. Platform independent, unlike std::hash.
constexpr std::uint64_t fnv1a64(std::string_view bytes) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Derives an independent seed for a named stream of a parent seed. The
// stream id is mixed in before the parent so that (s, i) and (s + 1, i - 1)
// do not collide.
constexpr std::uint64_t derive_seed(std::uint64_t seed,
                                    std::uint64_t stream) noexcept {
  return mix64(seed ^ mix64(stream + 0x9e3779b97f4a7c15ULL));
}

// Stream ids used throughout the pipeline.
namespace stream {
inline constexpr std::uint64_t kSplit = 1;
inline constexpr std::uint64_t kInit = 2;
inline constexpr std::uint64_t kShuffle = 3;
inline constexpr std::uint64_t kTrainNoise = 4;
inline constexpr std::uint64_t kEvalNoise = 5;
inline constexpr std::uint64_t kProbeInit = 6;
inline constexpr std::uint64_t kProbeShuffle = 7;
inline constexpr std::uint64_t kProbeNoise = 8;
inline constexpr std::uint64_t kSynthetic = 9;
}  // namespace stream

// SplitMix64: state advances by the golden-ratio increment, output is
// mix64(state). Every draw is a fixed sequence of 64-bit integer operations,
// so a seed reproduces the same stream on every platform.
class NoiseRng {
 public:
  explicit constexpr NoiseRng(std::uint64_t seed) noexcept : state_(seed) {}

  constexpr std::uint64_t next_u64() noexcept {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix64(state_);
  }

  // Uniform on [0, 1) with 53 bits of resolution.
  constexpr double uniform01() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform on the open interval (-0.5, 0.5). The single value that would
  // land on -0.5 is redrawn.
  constexpr double uniform_symmetric() noexcept {
    for (;;) {
      const double u = uniform01() - 0.5;
      if (u > -0.5) return u;
    }
  }

  // Uniform integer on [0, n) by rejection; n must be positive.
  constexpr std::uint64_t uniform_index(std::uint64_t n) noexcept {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    for (;;) {
      const std::uint64_t v = next_u64();
      if (v < limit) return v % n;
    }
  }

  // Standard normal via Box-Muller (one of the pair is discarded).
  double gaussian() noexcept {
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  constexpr std::uint64_t state() const noexcept { return state_; }

 private:
  std::uint64_t state_;
};

// Fisher-Yates with NoiseRng. std::shuffle is not used because its
// algorithm is implementation defined.
template <typename T>
void shuffle(std::span<T> items, NoiseRng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = rng.uniform_index(i);
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace cape

#endif  // CAPE_RNG_HPP_
