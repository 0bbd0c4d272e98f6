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

#ifndef QLAB_CODEC_H_
#define QLAB_CODEC_H_

#include <array>
#include <cstddef>
#include <vector>

#include "qlab/checkpoint.h"
#include "qlab/entropy_model.h"
#include "qlab/quantizers.h"
#include "qlab/range_coder.h"
#include "qlab/rng.h"
#include "qlab/tensor.h"

namespace qlab {

inline constexpr std::size_t kDefaultLatentChannels = 32;
inline constexpr float kLeakySlope = 0.2f;
inline constexpr std::size_t kKernel = 5;
inline constexpr std::size_t kDownsample = 8;

// Three stride-2 5x5 convolutions (3 -> 32 -> 64 -> M) with leaky ReLU in
// between, a mirrored transposed stack, and a factorized prior over M
// latent channels.
template <typename T>
struct CodecParams {
  std::array<Tensor<T>, 3> enc_weight, enc_bias;
  std::array<Tensor<T>, 3> dec_weight, dec_bias;
  FactorizedPrior<T> prior;

  static CodecParams Init(CounterRng& rng, std::size_t latent_channels = kDefaultLatentChannels,
                          std::size_t hidden1 = 32, std::size_t hidden2 = 64);

  std::size_t latent_channels() const { return prior.channels(); }
  std::vector<Tensor<T>> Parameters() const;
};

NamedTensors CodecToNamed(const CodecParams<float>& params);
CodecParams<float> CodecFromNamed(const NamedTensors& tensors);

template <typename T>
struct RDLossParts {
  Tensor<T> rate;        // bits per pixel, scalar
  Tensor<T> distortion;  // MSE on the 0..255 scale, scalar
  Tensor<T> total;       // rate + lambda * distortion
  double lambda = 0;
  LatentPair<T> latents;
};

// y = f(x); x is [N,3,H,W] with H and W multiples of 8.
template <typename T> Tensor<T> AnalysisTransform(const Tensor<T>& x, const CodecParams<T>& p);
// x_hat = g(y)
template <typename T> Tensor<T> SynthesisTransform(const Tensor<T>& y, const CodecParams<T>& p);

// Mean squared error with both inputs scaled by 255; differentiable.
template <typename T> Tensor<T> Mse(const Tensor<T>& x, const Tensor<T>& x_hat);

// Separate quantizers for the entropy model and the decoder.
template <typename T>
RDLossParts<T> ForwardTrain(const Tensor<T>& x, const CodecParams<T>& params,
                            const QuantizerSpec& spec_ent, const QuantizerSpec& spec_dec,
                            const QuantContext& ctx, double lambda);

// One quantizer feeding both.
template <typename T>
RDLossParts<T> ForwardTrainSingle(const Tensor<T>& x, const CodecParams<T>& params,
                                  const QuantizerSpec& spec, const QuantContext& ctx,
                                  double lambda);

struct EvalOutput {
  Tensor<float> reconstruction;  // clipped to [0,1]
  Tensor<float> latents;         // hard-rounded y
  double estimated_bits = 0;
  double bpp_estimated = 0;
};

// Test-time path: hard rounding, deterministic.
EvalOutput ForwardEval(const Tensor<float>& x, const CodecParams<float>& params);

// Estimated bits of integer latents under the prior (with the likelihood floor).
double EstimatedBits(const Tensor<float>& latents, const FactorizedPrior<float>& prior);

// Sample `index` of [N,C,H,W] rounded latents as coder symbols.
SymbolTensor LatentsToSymbols(const Tensor<float>& latents, std::size_t index = 0);
Tensor<float> SymbolsToLatents(const SymbolTensor& symbols);

// Image <-> bitstream through a trained model.
Bitstream CompressImage(const Tensor<float>& x, const CodecParams<float>& params,
                        const std::vector<CdfTable>& tables);
Tensor<float> DecompressImage(const Bitstream& stream, const CodecParams<float>& params);

}  // namespace qlab

#endif  // QLAB_CODEC_H_
