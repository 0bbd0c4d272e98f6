// Copyright 2026 The qlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef QLAB_RNG_H_
#define QLAB_RNG_H_

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <string_view>

namespace qlab {

// SplitMix64 finalizer.
constexpr std::uint64_t Mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t HashCombine(std::uint64_t seed, std::uint64_t v) {
  return Mix64(seed ^ Mix64(v));
}

// FNV-1a, for turning labels into stream keys.
constexpr std::uint64_t HashString(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Counter-based generator: value i of a stream is Mix64(key + i * gamma).
// Streams with different keys are independent for practical purposes and
// any stream can be re-created from its key alone.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key = 0) : key_(key) {}

  static CounterRng Derive(std::initializer_list<std::uint64_t> parts) {
    std::uint64_t k = 0x51ed270b2a8e7c3dULL;
    for (auto p : parts) k = HashCombine(k, p);
    return CounterRng(k);
  }

  CounterRng Substream(std::uint64_t slot) const {
    return CounterRng(HashCombine(key_, slot + 1));
  }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t NextU64() { return Mix64(key_ + (counter_++) * 0x9e3779b97f4a7c15ULL); }

  // [0, 1) with 53 random bits.
  double Uniform() { return static_cast<double>(NextU64() >> 11) * 0x1.0p-53; }

  // (0, 1), never exactly zero.
  double UniformOpen() { return (static_cast<double>(NextU64() >> 11) + 0.5) * 0x1.0p-53; }

  // U[-1/2, 1/2)
  double UniformCentered() { return Uniform() - 0.5; }

  double Gumbel() { return -std::log(-std::log(UniformOpen())); }

  // Uniform integer in [0, n); n > 0.
  std::uint64_t Below(std::uint64_t n) {
    return static_cast<std::uint64_t>(Uniform() * static_cast<double>(n)) % n;
  }

  double Normal() {
    const double u1 = UniformOpen(), u2 = Uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace qlab

#endif  // QLAB_RNG_H_
