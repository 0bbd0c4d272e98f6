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

#ifndef QLAB_ENTROPY_MODEL_H_
#define QLAB_ENTROPY_MODEL_H_

#include <cmath>
#include <cstdint>
#include <vector>

#include "qlab/checkpoint.h"
#include "qlab/tensor.h"

namespace qlab {

inline constexpr double kLikelihoodFloor = 1e-9;
inline constexpr int kCdfPrecisionBits = 16;
inline constexpr std::uint32_t kCdfTotal = 1u << kCdfPrecisionBits;
inline constexpr int kDefaultSupport = 64;
inline constexpr double kTailMass = 1e-6;

// Per-channel logistic location-scale prior over integer latents.
template <typename T>
struct FactorizedPrior {
  Tensor<T> loc;        // [C]
  Tensor<T> log_scale;  // [C], scale = exp(log_scale)

  static FactorizedPrior Init(std::size_t channels);
  std::size_t channels() const { return loc.numel(); }
  double Loc(std::size_t c) const { return static_cast<double>(loc[c]); }
  double Scale(std::size_t c) const { return std::exp(static_cast<double>(log_scale[c])); }
};

// Mass of the unit interval centred on v under Logistic(mu, scale).
double LogisticIntervalMass(double v, double mu, double scale);

// Probability of each element of v [N,C,H,W] under its channel's prior,
// floored at kLikelihoodFloor. Differentiable in v, loc and log_scale.
template <typename T>
Tensor<T> Likelihood(const Tensor<T>& v, const FactorizedPrior<T>& prior);

// -sum(log2 p), a scalar in bits.
template <typename T>
Tensor<T> RateBits(const Tensor<T>& v, const FactorizedPrior<T>& prior);

// Quantized CDF over symbols -L..L plus a trailing escape symbol.
// cdf has 2L+3 entries, cdf.front() == 0, cdf.back() == kCdfTotal.
struct CdfTable {
  int support = 0;
  std::vector<std::uint32_t> cdf;

  std::size_t symbol_count() const { return cdf.size() - 1; }
  std::size_t escape_index() const { return static_cast<std::size_t>(2 * support + 1); }
  std::uint32_t Frequency(std::size_t index) const { return cdf[index + 1] - cdf[index]; }
  // Index whose cumulative interval contains `target` (< kCdfTotal).
  std::size_t Lookup(std::uint32_t target) const;
  // Symbol index for an in-range value, or escape_index().
  std::size_t IndexOf(int value) const;
  void Validate() const;
};

// Smallest L with tail mass beyond [-L-1/2, L+1/2] below `tail`.
int RequiredSupport(double mu, double scale, double tail = kTailMass);

// Throws with a suggested L when `support` leaves too much tail mass.
CdfTable BuildCdfTable(double mu, double scale, int support);

// One table per channel with L = max(min_support, RequiredSupport).
std::vector<CdfTable> BuildCdfTables(const FactorizedPrior<float>& prior,
                                     int min_support = kDefaultSupport);

// L u16, then cdf[0 .. 2L+1] as u16; the final kCdfTotal is implicit.
void SerializeCdfTable(const CdfTable& table, std::vector<std::uint8_t>& out);
CdfTable ParseCdfTable(le::Reader& reader);

}  // namespace qlab

#endif  // QLAB_ENTROPY_MODEL_H_
