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

#include "qlab/quantizers.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace qlab {

std::string_view KindName(QuantizerKind kind) {
  switch (kind) {
    case QuantizerKind::kAun: return "aun";
    case QuantizerKind::kSte: return "ste";
    case QuantizerKind::kUq: return "uq";
    case QuantizerKind::kSga: return "sga";
    case QuantizerKind::kSth: return "sth";
    case QuantizerKind::kDsq: return "dsq";
    case QuantizerKind::kSra: return "sra";
    case QuantizerKind::kHardRound: return "round";
  }
  return "?";
}

QuantizerKind ParseKind(std::string_view name) {
  for (auto k : {QuantizerKind::kAun, QuantizerKind::kSte, QuantizerKind::kUq,
                 QuantizerKind::kSga, QuantizerKind::kSth, QuantizerKind::kDsq,
                 QuantizerKind::kSra, QuantizerKind::kHardRound}) {
    if (KindName(k) == name) return k;
  }
  throw std::invalid_argument("unknown quantizer kind '" + std::string(name) +
                              "' (expected aun, ste, uq, sga, sth, dsq, sra)");
}

QuantizerSpec QuantizerSpec::ReferenceDefaults(QuantizerKind kind) {
  QuantizerSpec s;
  s.kind = kind;
  s.c = 0.0003;
  s.k = 0.1;
  s.t0 = kind == QuantizerKind::kSra ? 990000 : 960000;
  return s;
}

QuantizerSpec QuantizerSpec::ScaledTo(long total_iterations, long reference_iterations) const {
  if (total_iterations <= 0 || reference_iterations <= 0) {
    throw std::invalid_argument("ScaledTo: iteration counts must be positive");
  }
  QuantizerSpec s = *this;
  const double ratio = static_cast<double>(total_iterations) / reference_iterations;
  s.t0 = std::lround(static_cast<double>(t0) * ratio);
  s.c = c / ratio;
  return s;
}

void QuantizerSpec::Validate() const {
  if (!(c > 0)) throw std::invalid_argument("quantizer spec: c must be > 0");
  if (!(k > 0)) throw std::invalid_argument("quantizer spec: k must be > 0");
  if (t0 < 0) throw std::invalid_argument("quantizer spec: t0 must be >= 0");
  if (!(epsilon > 0 && epsilon < 0.1)) {
    throw std::invalid_argument("quantizer spec: epsilon must lie in (0, 0.1)");
  }
}

bool QuantizerSpec::operator==(const QuantizerSpec& o) const {
  if (kind != o.kind) return false;
  switch (kind) {
    case QuantizerKind::kSga:
    case QuantizerKind::kSra:
      return c == o.c && t0 == o.t0 && epsilon == o.epsilon;
    case QuantizerKind::kSth:
      return t0 == o.t0;
    case QuantizerKind::kDsq:
      return k == o.k;
    default:
      return true;
  }
}

double TauSchedule(const QuantizerSpec& spec, long t) {
  if (t < 0) throw std::invalid_argument("tau_schedule: negative iteration");
  return std::min(0.5, 0.5 * std::exp(-spec.c * static_cast<double>(t - spec.t0)));
}

namespace {

double ClampFraction(double r, double eps) { return std::clamp(r, eps, 1.0 - eps); }

// log(p / (1 - p)) where p is the up-probability; weights are
// exp(-atanh(r)/tau) for staying and exp(-atanh(1-r)/tau) for going up.
double SgaLogit(double r, double tau) {
  return (std::atanh(r) - std::atanh(1.0 - r)) / tau;
}

double StableSigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

template <typename T>
void RequireTrain(const QuantContext& ctx, const char* name) {
  if (ctx.mode != QuantMode::kTrain) {
    throw std::logic_error(std::string(name) + " requires Train mode; use Quantize()");
  }
}

template <typename T>
void RequireNoise(const char* op, const Tensor<T>& y, std::size_t n) {
  if (n != y.numel()) {
    throw std::invalid_argument(std::string(op) + ": expected " + std::to_string(y.numel()) +
                                " noise values, got " + std::to_string(n));
  }
}

std::size_t SampleCount(const Shape& shape) {
  return shape.size() == 4 ? shape[0] : 1;
}

}  // namespace

double SgaProbability(double r, double tau, double eps) {
  return StableSigmoid(SgaLogit(ClampFraction(r, eps), tau));
}

template <typename T>
Tensor<T> AunWithNoise(const Tensor<T>& y, std::span<const double> noise) {
  RequireNoise("aun_q", y, noise.size());
  std::vector<T> values(y.numel());
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = static_cast<T>(static_cast<double>(y[i]) + noise[i]);
  }
  return CustomElementwise(y, std::move(values), std::vector<T>(y.numel(), T(1)));
}

template <typename T>
Tensor<T> UqWithOffsets(const Tensor<T>& y, std::span<const double> offsets) {
  const std::size_t samples = SampleCount(y.shape());
  if (offsets.size() != samples) {
    throw std::invalid_argument("u_q: expected " + std::to_string(samples) + " offsets");
  }
  const std::size_t per = samples ? y.numel() / samples : 0;
  std::vector<T> values(y.numel());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double u = offsets[per ? i / per : 0];
    values[i] = static_cast<T>(RoundHalfAway(static_cast<double>(y[i]) + u) - u);
  }
  return CustomElementwise(y, std::move(values), std::vector<T>(y.numel(), T(1)));
}

template <typename T>
Tensor<T> SgaWithGumbel(const Tensor<T>& y, double tau, double eps,
                        std::span<const double> g0, std::span<const double> g1) {
  RequireNoise("sga_q", y, g0.size());
  RequireNoise("sga_q", y, g1.size());
  if (!(tau > 0)) throw std::invalid_argument("sga_q: tau must be > 0");
  std::vector<T> values(y.numel()), grad(y.numel());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = static_cast<double>(y[i]);
    if (!std::isfinite(v)) throw std::invalid_argument("sga_q: non-finite input");
    const double fl = std::floor(v);
    const double raw = v - fl;
    const double r = ClampFraction(raw, eps);
    // Relaxed one-hot weight of the upper grid point:
    // h(log p + g1) / (h(log p + g1) + h(log(1-p) + g0)) = sigmoid((logit p + g1 - g0) / tau)
    const double z = (SgaLogit(r, tau) + g1[i] - g0[i]) / tau;
    const double s = StableSigmoid(z);
    values[i] = static_cast<T>(fl + s);
    const bool clamped = raw < eps || raw > 1.0 - eps;
    const double dz_dr =
        (1.0 / (1.0 - r * r) + 1.0 / (1.0 - (1.0 - r) * (1.0 - r))) / (tau * tau);
    grad[i] = clamped ? T(0) : static_cast<T>(s * (1.0 - s) * dz_dr);
  }
  return CustomElementwise(y, std::move(values), std::move(grad));
}

template <typename T>
Tensor<T> SraWithUniform(const Tensor<T>& y, double tau, double eps,
                         std::span<const double> uniforms) {
  RequireNoise("sra_q", y, uniforms.size());
  std::vector<T> values(y.numel());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = static_cast<double>(y[i]);
    const double fl = std::floor(v);
    const double p = SgaProbability(v - fl, tau, eps);
    values[i] = static_cast<T>(fl + (uniforms[i] < p ? 1.0 : 0.0));
  }
  return CustomElementwise(y, std::move(values), std::vector<T>(y.numel(), T(1)));
}

template <typename T>
Tensor<T> SteQ(const Tensor<T>& y) {
  std::vector<T> values(y.numel());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = std::round(y[i]);
  return CustomElementwise(y, std::move(values), std::vector<T>(y.numel(), T(1)));
}

template <typename T>
Tensor<T> DsQ(const Tensor<T>& y, double k) {
  if (!(k > 0)) throw std::invalid_argument("ds_q: k must be > 0");
  const double norm = std::tanh(0.5 * k);
  std::vector<T> values(y.numel()), grad(y.numel());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = static_cast<double>(y[i]);
    values[i] = static_cast<T>(RoundHalfAway(v));
    const double d = v - std::floor(v) - 0.5;
    const double th = std::tanh(k * d);
    grad[i] = static_cast<T>(0.5 * k * (1.0 - th * th) / norm);
  }
  return CustomElementwise(y, std::move(values), std::move(grad));
}

template <typename T>
Tensor<T> RoundNoGrad(const Tensor<T>& y) {
  std::vector<T> values(y.numel());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = std::round(y[i]);
  return CustomElementwise(y, std::move(values), std::vector<T>(y.numel(), T(0)));
}

template <typename T>
Tensor<T> HardRound(const Tensor<T>& y) {
  std::vector<T> values(y.numel());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = std::round(y[i]);
  return Tensor<T>(y.shape(), std::move(values), false);
}

template <typename T>
Tensor<T> AunQ(const Tensor<T>& y, const QuantContext& ctx, int slot) {
  RequireTrain<T>(ctx, "aun_q");
  auto rng = ctx.Stream(static_cast<std::uint64_t>(slot));
  std::vector<double> noise(y.numel());
  for (auto& u : noise) u = rng.UniformCentered();
  return AunWithNoise(y, std::span<const double>(noise));
}

template <typename T>
Tensor<T> UQ(const Tensor<T>& y, const QuantContext& ctx, int slot) {
  RequireTrain<T>(ctx, "u_q");
  auto rng = ctx.Stream(static_cast<std::uint64_t>(slot));
  std::vector<double> offsets(SampleCount(y.shape()));
  for (auto& u : offsets) u = rng.UniformCentered();
  return UqWithOffsets(y, std::span<const double>(offsets));
}

template <typename T>
Tensor<T> SgaQ(const Tensor<T>& y, const QuantizerSpec& spec, const QuantContext& ctx, int slot) {
  RequireTrain<T>(ctx, "sga_q");
  auto rng = ctx.Stream(static_cast<std::uint64_t>(slot));
  std::vector<double> g0(y.numel()), g1(y.numel());
  for (std::size_t i = 0; i < g0.size(); ++i) {
    g0[i] = rng.Gumbel();
    g1[i] = rng.Gumbel();
  }
  return SgaWithGumbel(y, TauSchedule(spec, ctx.iteration), spec.epsilon,
                       std::span<const double>(g0), std::span<const double>(g1));
}

template <typename T>
Tensor<T> SraQ(const Tensor<T>& y, const QuantizerSpec& spec, const QuantContext& ctx, int slot) {
  RequireTrain<T>(ctx, "sra_q");
  auto rng = ctx.Stream(static_cast<std::uint64_t>(slot));
  std::vector<double> u(y.numel());
  for (auto& v : u) v = rng.Uniform();
  return SraWithUniform(y, TauSchedule(spec, ctx.iteration), spec.epsilon,
                        std::span<const double>(u));
}

template <typename T>
Tensor<T> SthQ(const Tensor<T>& y, const QuantizerSpec& spec, const QuantContext& ctx, int slot) {
  RequireTrain<T>(ctx, "sth_q");
  if (ctx.iteration < spec.t0) return AunQ(y, ctx, slot);
  return RoundNoGrad(y);
}

template <typename T>
Tensor<T> Quantize(const Tensor<T>& y, const QuantizerSpec& spec, const QuantContext& ctx,
                   int slot) {
  if (ctx.mode == QuantMode::kEval) return HardRound(y);
  switch (spec.kind) {
    case QuantizerKind::kAun: return AunQ(y, ctx, slot);
    case QuantizerKind::kSte: return SteQ(y);
    case QuantizerKind::kUq: return UQ(y, ctx, slot);
    case QuantizerKind::kSga: return SgaQ(y, spec, ctx, slot);
    case QuantizerKind::kSth: return SthQ(y, spec, ctx, slot);
    case QuantizerKind::kDsq: return DsQ(y, spec.k);
    case QuantizerKind::kSra: return SraQ(y, spec, ctx, slot);
    case QuantizerKind::kHardRound: return HardRound(y);
  }
  throw std::logic_error("quantize: unhandled kind");
}

template <typename T>
LatentPair<T> QuantizeSingle(const Tensor<T>& y, const QuantizerSpec& spec,
                             const QuantContext& ctx) {
  spec.Validate();
  Tensor<T> q = Quantize(y, spec, ctx, 0);
  return {q, q};
}

template <typename T>
LatentPair<T> QuantizePair(const Tensor<T>& y, const QuantizerSpec& ent,
                           const QuantizerSpec& dec, const QuantContext& ctx) {
  ent.Validate();
  dec.Validate();
  if (ent == dec) return QuantizeSingle(y, ent, ctx);
  if (ent.kind == QuantizerKind::kSth || dec.kind == QuantizerKind::kSth) {
    throw std::invalid_argument(
        "quantize_pair: sth cannot be paired with a different quantizer (got " +
        std::string(KindName(ent.kind)) + "+" + std::string(KindName(dec.kind)) + ")");
  }
  if (ctx.mode == QuantMode::kEval) {
    Tensor<T> q = HardRound(y);
    return {q, q};
  }
  return {Quantize(y, ent, ctx, 0), Quantize(y, dec, ctx, 1)};
}

#define QLAB_INSTANTIATE(T)                                                                  \
  template Tensor<T> AunWithNoise(const Tensor<T>&, std::span<const double>);                \
  template Tensor<T> UqWithOffsets(const Tensor<T>&, std::span<const double>);               \
  template Tensor<T> SgaWithGumbel(const Tensor<T>&, double, double, std::span<const double>, \
                                   std::span<const double>);                                 \
  template Tensor<T> SraWithUniform(const Tensor<T>&, double, double, std::span<const double>); \
  template Tensor<T> SteQ(const Tensor<T>&);                                                 \
  template Tensor<T> DsQ(const Tensor<T>&, double);                                          \
  template Tensor<T> RoundNoGrad(const Tensor<T>&);                                          \
  template Tensor<T> HardRound(const Tensor<T>&);                                            \
  template Tensor<T> AunQ(const Tensor<T>&, const QuantContext&, int);                       \
  template Tensor<T> UQ(const Tensor<T>&, const QuantContext&, int);                         \
  template Tensor<T> SgaQ(const Tensor<T>&, const QuantizerSpec&, const QuantContext&, int); \
  template Tensor<T> SraQ(const Tensor<T>&, const QuantizerSpec&, const QuantContext&, int); \
  template Tensor<T> SthQ(const Tensor<T>&, const QuantizerSpec&, const QuantContext&, int); \
  template Tensor<T> Quantize(const Tensor<T>&, const QuantizerSpec&, const QuantContext&, int); \
  template LatentPair<T> QuantizeSingle(const Tensor<T>&, const QuantizerSpec&,              \
                                        const QuantContext&);                                \
  template LatentPair<T> QuantizePair(const Tensor<T>&, const QuantizerSpec&,                \
                                      const QuantizerSpec&, const QuantContext&);

QLAB_INSTANTIATE(float)
QLAB_INSTANTIATE(double)

#undef QLAB_INSTANTIATE

}  // namespace qlab
