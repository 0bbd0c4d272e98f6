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

#include "qlab/codec.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace qlab {

namespace {

template <typename T>
Tensor<T> UniformInit(Shape shape, double bound, CounterRng& rng) {
  std::vector<T> data(NumElements(shape));
  for (auto& v : data) v = static_cast<T>((2.0 * rng.Uniform() - 1.0) * bound);
  return Tensor<T>(std::move(shape), std::move(data), true);
}

// He-uniform bound for a leaky rectifier with the given fan-in.
double HeBound(double fan_in) {
  return std::sqrt(6.0 / ((1.0 + kLeakySlope * kLeakySlope) * fan_in));
}

constexpr ConvOptions kDown{.stride = 2, .padding = 2, .output_padding = 0};
constexpr ConvOptions kUp{.stride = 2, .padding = 2, .output_padding = 1};

void RequireImageBatch(const Shape& s) {
  if (s.size() != 4 || s[1] != 3) {
    throw std::invalid_argument("codec: expected [N,3,H,W] input, got " + ShapeString(s));
  }
  if (s[2] == 0 || s[3] == 0 || s[2] % kDownsample != 0 || s[3] % kDownsample != 0) {
    throw std::invalid_argument("codec: image sides must be multiples of 8, got " +
                                ShapeString(s));
  }
}

const char* const kNames[] = {"enc0", "enc1", "enc2", "dec0", "dec1", "dec2"};

}  // namespace

template <typename T>
CodecParams<T> CodecParams<T>::Init(CounterRng& rng, std::size_t latent_channels,
                                    std::size_t hidden1, std::size_t hidden2) {
  CodecParams p;
  const std::size_t k2 = kKernel * kKernel;
  const std::size_t enc_io[3][2] = {{3, hidden1}, {hidden1, hidden2}, {hidden2, latent_channels}};
  for (int i = 0; i < 3; ++i) {
    const std::size_t ci = enc_io[i][0], co = enc_io[i][1];
    p.enc_weight[i] = UniformInit<T>({co, ci, kKernel, kKernel}, HeBound(double(ci * k2)), rng);
    p.enc_bias[i] = Tensor<T>::Zeros({co}, true);
  }
  const std::size_t dec_io[3][2] = {{latent_channels, hidden2}, {hidden2, hidden1}, {hidden1, 3}};
  for (int i = 0; i < 3; ++i) {
    const std::size_t ci = dec_io[i][0], co = dec_io[i][1];
    // Each output of a stride-2 transposed conv sees about K*K/4 inputs per channel.
    p.dec_weight[i] =
        UniformInit<T>({ci, co, kKernel, kKernel}, HeBound(double(ci * k2) / 4.0), rng);
    p.dec_bias[i] = Tensor<T>::Zeros({co}, true);
  }
  p.prior = FactorizedPrior<T>::Init(latent_channels);
  return p;
}

template <typename T>
std::vector<Tensor<T>> CodecParams<T>::Parameters() const {
  std::vector<Tensor<T>> out;
  for (int i = 0; i < 3; ++i) {
    out.push_back(enc_weight[i]);
    out.push_back(enc_bias[i]);
  }
  for (int i = 0; i < 3; ++i) {
    out.push_back(dec_weight[i]);
    out.push_back(dec_bias[i]);
  }
  out.push_back(prior.loc);
  out.push_back(prior.log_scale);
  return out;
}

NamedTensors CodecToNamed(const CodecParams<float>& p) {
  NamedTensors out;
  for (int i = 0; i < 3; ++i) {
    out.emplace_back(std::string(kNames[i]) + ".weight", p.enc_weight[i].Detach());
    out.emplace_back(std::string(kNames[i]) + ".bias", p.enc_bias[i].Detach());
  }
  for (int i = 0; i < 3; ++i) {
    out.emplace_back(std::string(kNames[3 + i]) + ".weight", p.dec_weight[i].Detach());
    out.emplace_back(std::string(kNames[3 + i]) + ".bias", p.dec_bias[i].Detach());
  }
  out.emplace_back("prior.loc", p.prior.loc.Detach());
  out.emplace_back("prior.log_scale", p.prior.log_scale.Detach());
  return out;
}

CodecParams<float> CodecFromNamed(const NamedTensors& tensors) {
  auto find = [&](const std::string& name) {
    for (const auto& [n, t] : tensors) {
      if (n == name) {
        Tensor<float> c = t.Clone();
        c.set_requires_grad(true);
        return c;
      }
    }
    throw std::runtime_error("checkpoint: missing tensor " + name);
  };
  CodecParams<float> p;
  for (int i = 0; i < 3; ++i) {
    p.enc_weight[i] = find(std::string(kNames[i]) + ".weight");
    p.enc_bias[i] = find(std::string(kNames[i]) + ".bias");
    p.dec_weight[i] = find(std::string(kNames[3 + i]) + ".weight");
    p.dec_bias[i] = find(std::string(kNames[3 + i]) + ".bias");
  }
  p.prior.loc = find("prior.loc");
  p.prior.log_scale = find("prior.log_scale");
  if (p.prior.loc.rank() != 1 || p.prior.log_scale.shape() != p.prior.loc.shape() ||
      p.enc_weight[2].dim(0) != p.prior.channels() ||
      p.dec_weight[0].dim(0) != p.prior.channels()) {
    throw std::runtime_error("checkpoint: inconsistent latent channel counts");
  }
  return p;
}

template <typename T>
Tensor<T> AnalysisTransform(const Tensor<T>& x, const CodecParams<T>& p) {
  RequireImageBatch(x.shape());
  Tensor<T> h = LeakyRelu(Conv2d(x, p.enc_weight[0], p.enc_bias[0], kDown), T(kLeakySlope));
  h = LeakyRelu(Conv2d(h, p.enc_weight[1], p.enc_bias[1], kDown), T(kLeakySlope));
  return Conv2d(h, p.enc_weight[2], p.enc_bias[2], kDown);
}

template <typename T>
Tensor<T> SynthesisTransform(const Tensor<T>& y, const CodecParams<T>& p) {
  Tensor<T> h = LeakyRelu(ConvTranspose2d(y, p.dec_weight[0], p.dec_bias[0], kUp), T(kLeakySlope));
  h = LeakyRelu(ConvTranspose2d(h, p.dec_weight[1], p.dec_bias[1], kUp), T(kLeakySlope));
  return ConvTranspose2d(h, p.dec_weight[2], p.dec_bias[2], kUp);
}

template <typename T>
Tensor<T> Mse(const Tensor<T>& x, const Tensor<T>& x_hat) {
  if (x.shape() != x_hat.shape()) {
    throw std::invalid_argument("mse: shape mismatch " + ShapeString(x.shape()) + " vs " +
                                ShapeString(x_hat.shape()));
  }
  return Scale(Mean(Square(Sub(x, x_hat))), T(255.0 * 255.0));
}

namespace {

template <typename T>
RDLossParts<T> Assemble(const Tensor<T>& x, const CodecParams<T>& params,
                        LatentPair<T> latents, double lambda) {
  if (!(lambda >= 0)) throw std::invalid_argument("forward_train: lambda must be >= 0");
  RDLossParts<T> parts;
  const double pixels = static_cast<double>(x.dim(0) * x.dim(2) * x.dim(3));
  parts.rate = Scale(RateBits(latents.y_ent, params.prior), static_cast<T>(1.0 / pixels));
  parts.distortion = Mse(x, SynthesisTransform(latents.y_dec, params));
  parts.total = Add(parts.rate, Scale(parts.distortion, static_cast<T>(lambda)));
  parts.lambda = lambda;
  parts.latents = std::move(latents);
  return parts;
}

}  // namespace

template <typename T>
RDLossParts<T> ForwardTrain(const Tensor<T>& x, const CodecParams<T>& params,
                            const QuantizerSpec& spec_ent, const QuantizerSpec& spec_dec,
                            const QuantContext& ctx, double lambda) {
  Tensor<T> y = AnalysisTransform(x, params);
  return Assemble(x, params, QuantizePair(y, spec_ent, spec_dec, ctx), lambda);
}

template <typename T>
RDLossParts<T> ForwardTrainSingle(const Tensor<T>& x, const CodecParams<T>& params,
                                  const QuantizerSpec& spec, const QuantContext& ctx,
                                  double lambda) {
  Tensor<T> y = AnalysisTransform(x, params);
  return Assemble(x, params, QuantizeSingle(y, spec, ctx), lambda);
}

double EstimatedBits(const Tensor<float>& latents, const FactorizedPrior<float>& prior) {
  const std::size_t channels = prior.channels();
  if (latents.rank() != 4 || latents.dim(1) != channels) {
    throw std::invalid_argument("estimated_bits: latents " + ShapeString(latents.shape()) +
                                " do not match prior with " + std::to_string(channels) +
                                " channels");
  }
  const std::size_t plane = latents.dim(2) * latents.dim(3);
  double bits = 0;
  for (std::size_t i = 0; i < latents.numel(); ++i) {
    const std::size_t c = (i / plane) % channels;
    const double p = LogisticIntervalMass(latents[i], prior.Loc(c), prior.Scale(c));
    bits -= std::log2(std::max(p, kLikelihoodFloor));
  }
  return bits;
}

EvalOutput ForwardEval(const Tensor<float>& x, const CodecParams<float>& params) {
  Tensor<float> y = AnalysisTransform(x.Detach(), params).Detach();
  EvalOutput out;
  out.latents = HardRound(y);
  Tensor<float> xr = SynthesisTransform(out.latents, params).Detach();
  for (float& v : xr.mutable_data()) v = std::clamp(v, 0.0f, 1.0f);
  out.reconstruction = xr;
  out.estimated_bits = EstimatedBits(out.latents, params.prior);
  out.bpp_estimated = out.estimated_bits / static_cast<double>(x.dim(0) * x.dim(2) * x.dim(3));
  return out;
}

SymbolTensor LatentsToSymbols(const Tensor<float>& latents, std::size_t index) {
  if (latents.rank() != 4 || index >= latents.dim(0)) {
    throw std::invalid_argument("latents_to_symbols: bad latent shape " +
                                ShapeString(latents.shape()));
  }
  SymbolTensor s;
  s.channels = static_cast<std::uint32_t>(latents.dim(1));
  s.height = static_cast<std::uint32_t>(latents.dim(2));
  s.width = static_cast<std::uint32_t>(latents.dim(3));
  const std::size_t n = static_cast<std::size_t>(s.channels) * s.height * s.width;
  s.values.resize(n);
  const float* base = latents.data().data() + index * n;
  for (std::size_t i = 0; i < n; ++i) {
    s.values[i] = static_cast<std::int32_t>(std::lround(base[i]));
  }
  return s;
}

Tensor<float> SymbolsToLatents(const SymbolTensor& s) {
  std::vector<float> data(s.values.begin(), s.values.end());
  return Tensor<float>({1, s.channels, s.height, s.width}, std::move(data));
}

Bitstream CompressImage(const Tensor<float>& x, const CodecParams<float>& params,
                        const std::vector<CdfTable>& tables) {
  if (x.rank() != 4 || x.dim(0) != 1) {
    throw std::invalid_argument("compress: expected a single image [1,3,H,W]");
  }
  Tensor<float> y = HardRound(AnalysisTransform(x.Detach(), params).Detach());
  return EncodeSymbols(LatentsToSymbols(y), tables, static_cast<std::uint32_t>(x.dim(2)),
                       static_cast<std::uint32_t>(x.dim(3)));
}

Tensor<float> DecompressImage(const Bitstream& stream, const CodecParams<float>& params) {
  if (stream.channels != params.latent_channels()) {
    throw std::runtime_error("decompress: stream has " + std::to_string(stream.channels) +
                             " channels, model expects " +
                             std::to_string(params.latent_channels()));
  }
  if (stream.latent_height * kDownsample != stream.image_height ||
      stream.latent_width * kDownsample != stream.image_width) {
    throw std::runtime_error("decompress: latent and image dimensions disagree");
  }
  Tensor<float> xr = SynthesisTransform(SymbolsToLatents(DecodeSymbols(stream)), params).Detach();
  for (float& v : xr.mutable_data()) v = std::clamp(v, 0.0f, 1.0f);
  return xr;
}

#define QLAB_INSTANTIATE(T)                                                                  \
  template struct CodecParams<T>;                                                            \
  template Tensor<T> AnalysisTransform(const Tensor<T>&, const CodecParams<T>&);             \
  template Tensor<T> SynthesisTransform(const Tensor<T>&, const CodecParams<T>&);            \
  template Tensor<T> Mse(const Tensor<T>&, const Tensor<T>&);                                \
  template RDLossParts<T> ForwardTrain(const Tensor<T>&, const CodecParams<T>&,              \
                                       const QuantizerSpec&, const QuantizerSpec&,           \
                                       const QuantContext&, double);                         \
  template RDLossParts<T> ForwardTrainSingle(const Tensor<T>&, const CodecParams<T>&,        \
                                             const QuantizerSpec&, const QuantContext&, double);

QLAB_INSTANTIATE(float)
QLAB_INSTANTIATE(double)

#undef QLAB_INSTANTIATE

}  // namespace qlab
