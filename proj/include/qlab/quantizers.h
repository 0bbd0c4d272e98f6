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

#ifndef QLAB_QUANTIZERS_H_
#define QLAB_QUANTIZERS_H_

#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qlab/rng.h"
#include "qlab/tensor.h"

namespace qlab {

// Training-time surrogates for rounding to the integer grid. Every kind
// reverts to HardRound in Eval mode.
enum class QuantizerKind { kAun, kSte, kUq, kSga, kSth, kDsq, kSra, kHardRound };

// The seven trainable approximations, in the order used by the matrix.
inline constexpr QuantizerKind kApproximationKinds[] = {
    QuantizerKind::kAun, QuantizerKind::kSte, QuantizerKind::kUq, QuantizerKind::kSga,
    QuantizerKind::kDsq, QuantizerKind::kSra, QuantizerKind::kSth};

std::string_view KindName(QuantizerKind kind);
QuantizerKind ParseKind(std::string_view name);

struct QuantizerSpec {
  QuantizerKind kind = QuantizerKind::kAun;
  double c = 0.0003;     // annealing rate (SGA, SRA)
  long t0 = 960000;      // schedule anchor in iterations (SGA, SRA, STH)
  double k = 0.1;        // DS-Q sharpness
  double epsilon = 1e-6; // clamp on the fractional part before arctanh

  // Hyper-parameters as tuned at 10^6 iterations.
  static QuantizerSpec ReferenceDefaults(QuantizerKind kind);

  // Re-expresses t0 as the same fraction of `total_iterations` and scales c
  // so the annealing covers the same fraction of the run.
  QuantizerSpec ScaledTo(long total_iterations, long reference_iterations = 1000000) const;

  void Validate() const;

  // Equality over the fields the kind actually reads.
  bool operator==(const QuantizerSpec& other) const;
};

enum class QuantMode { kTrain, kEval };

struct QuantContext {
  long iteration = 0;
  QuantMode mode = QuantMode::kTrain;
  CounterRng rng;

  CounterRng Stream(std::uint64_t slot) const { return rng.Substream(slot); }
};

template <typename T>
struct LatentPair {
  Tensor<T> y_ent;
  Tensor<T> y_dec;
};

// min(0.5, 0.5 * exp(-c (t - t0)))
double TauSchedule(const QuantizerSpec& spec, long t);

// Probability of rounding up given fractional part r (clamped to
// [eps, 1 - eps]) at temperature tau.
double SgaProbability(double r, double tau, double eps = 1e-6);

// Round half away from zero.
inline double RoundHalfAway(double v) { return std::round(v); }

// Frozen-noise forms. Noise layouts follow the element order of `y`.
template <typename T>
Tensor<T> AunWithNoise(const Tensor<T>& y, std::span<const double> noise);
// One offset per sample along dim 0 for rank-4 tensors, otherwise one total.
template <typename T>
Tensor<T> UqWithOffsets(const Tensor<T>& y, std::span<const double> offsets);
template <typename T>
Tensor<T> SgaWithGumbel(const Tensor<T>& y, double tau, double eps,
                        std::span<const double> g0, std::span<const double> g1);
template <typename T>
Tensor<T> SraWithUniform(const Tensor<T>& y, double tau, double eps,
                         std::span<const double> uniforms);

// Deterministic forms.
template <typename T> Tensor<T> SteQ(const Tensor<T>& y);
template <typename T> Tensor<T> DsQ(const Tensor<T>& y, double k);
template <typename T> Tensor<T> RoundNoGrad(const Tensor<T>& y);  // on graph, gradient 0
template <typename T> Tensor<T> HardRound(const Tensor<T>& y);    // off graph

// Sampling forms; `slot` selects the substream of ctx.
template <typename T> Tensor<T> AunQ(const Tensor<T>& y, const QuantContext& ctx, int slot = 0);
template <typename T> Tensor<T> UQ(const Tensor<T>& y, const QuantContext& ctx, int slot = 0);
template <typename T>
Tensor<T> SgaQ(const Tensor<T>& y, const QuantizerSpec& spec, const QuantContext& ctx, int slot = 0);
template <typename T>
Tensor<T> SraQ(const Tensor<T>& y, const QuantizerSpec& spec, const QuantContext& ctx, int slot = 0);
template <typename T>
Tensor<T> SthQ(const Tensor<T>& y, const QuantizerSpec& spec, const QuantContext& ctx, int slot = 0);

// Dispatch on spec.kind; Eval mode always yields HardRound.
template <typename T>
Tensor<T> Quantize(const Tensor<T>& y, const QuantizerSpec& spec, const QuantContext& ctx,
                   int slot = 0);

// One quantizer feeding both the entropy model and the decoder.
template <typename T>
LatentPair<T> QuantizeSingle(const Tensor<T>& y, const QuantizerSpec& spec,
                             const QuantContext& ctx);

// Separate quantizers for the entropy model (slot 0) and decoder (slot 1).
// Equal specs collapse to QuantizeSingle. STH cannot be paired with a
// different kind.
template <typename T>
LatentPair<T> QuantizePair(const Tensor<T>& y, const QuantizerSpec& ent,
                           const QuantizerSpec& dec, const QuantContext& ctx);

}  // namespace qlab

#endif  // QLAB_QUANTIZERS_H_
