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

#include "qlab/entropy_model.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace qlab {

namespace {

double LogisticCdf(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double LogisticDensity(double z) {
  const double e = std::exp(-std::abs(z));
  return e / ((1.0 + e) * (1.0 + e));
}

std::size_t ChannelDim(const Shape& shape) {
  if (shape.size() != 4) {
    throw std::invalid_argument("likelihood: expected [N,C,H,W] latents, got " +
                                ShapeString(shape));
  }
  return shape[1];
}

}  // namespace

double LogisticIntervalMass(double v, double mu, double scale) {
  // The interval mass is even in (v - mu); evaluating on the lower tail keeps
  // the difference of CDFs accurate far from the mode.
  const double m = -std::abs(v - mu);
  return LogisticCdf((m + 0.5) / scale) - LogisticCdf((m - 0.5) / scale);
}

template <typename T>
FactorizedPrior<T> FactorizedPrior<T>::Init(std::size_t channels) {
  return {Tensor<T>::Zeros({channels}, true), Tensor<T>::Full({channels}, T(1), true)};
}

template <typename T>
Tensor<T> Likelihood(const Tensor<T>& v, const FactorizedPrior<T>& prior) {
  const std::size_t channels = ChannelDim(v.shape());
  if (prior.channels() != channels || prior.log_scale.numel() != channels) {
    throw std::invalid_argument("likelihood: prior has " + std::to_string(prior.channels()) +
                                " channels, latents have " + std::to_string(channels));
  }
  const std::size_t plane = v.dim(2) * v.dim(3);
  const std::size_t n = v.numel();
  std::vector<T> out(n);
  // d p / d x with x = v - mu, and d p / d log_scale.
  auto dx = std::make_shared<std::vector<double>>(n);
  auto ds = std::make_shared<std::vector<double>>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = (i / plane) % channels;
    const double mu = prior.Loc(c), scale = prior.Scale(c);
    const double x = static_cast<double>(v[i]) - mu;
    const double p = LogisticIntervalMass(static_cast<double>(v[i]), mu, scale);
    if (p < kLikelihoodFloor) {
      out[i] = static_cast<T>(kLikelihoodFloor);
      (*dx)[i] = 0;
      (*ds)[i] = 0;
      continue;
    }
    out[i] = static_cast<T>(p);
    const double a = (x + 0.5) / scale, b = (x - 0.5) / scale;
    const double da = LogisticDensity(a), db = LogisticDensity(b);
    (*dx)[i] = (da - db) / scale;
    (*ds)[i] = -(da * a - db * b);
  }
  auto vi = v.impl(), li = prior.loc.impl(), si = prior.log_scale.impl();
  return MakeResult<T>(
      v.shape(), std::move(out), {v, prior.loc, prior.log_scale},
      [vi, li, si, dx, ds, plane, channels](const detail::TensorImpl<T>& o) {
        const std::size_t count = o.grad.size();
        if (vi->requires_grad) {
          auto& g = vi->EnsureGrad();
          for (std::size_t i = 0; i < count; ++i) g[i] += static_cast<T>(o.grad[i] * (*dx)[i]);
        }
        if (li->requires_grad || si->requires_grad) {
          std::vector<double> gl(channels, 0.0), gs(channels, 0.0);
          for (std::size_t i = 0; i < count; ++i) {
            const std::size_t c = (i / plane) % channels;
            gl[c] -= o.grad[i] * (*dx)[i];
            gs[c] += o.grad[i] * (*ds)[i];
          }
          if (li->requires_grad) {
            auto& g = li->EnsureGrad();
            for (std::size_t c = 0; c < channels; ++c) g[c] += static_cast<T>(gl[c]);
          }
          if (si->requires_grad) {
            auto& g = si->EnsureGrad();
            for (std::size_t c = 0; c < channels; ++c) g[c] += static_cast<T>(gs[c]);
          }
        }
      });
}

template <typename T>
Tensor<T> RateBits(const Tensor<T>& v, const FactorizedPrior<T>& prior) {
  return Scale(Sum(Log(Likelihood(v, prior))), static_cast<T>(-1.0 / std::numbers::ln2));
}

// ---------------------------------------------------------------------------
// CdfTable

std::size_t CdfTable::Lookup(std::uint32_t target) const {
  // Last index with cdf[index] <= target.
  auto it = std::upper_bound(cdf.begin(), cdf.end(), target);
  return static_cast<std::size_t>(it - cdf.begin()) - 1;
}

std::size_t CdfTable::IndexOf(int value) const {
  if (value < -support || value > support) return escape_index();
  return static_cast<std::size_t>(value + support);
}

void CdfTable::Validate() const {
  if (support < 0) throw std::invalid_argument("cdf table: negative support");
  if (cdf.size() != static_cast<std::size_t>(2 * support + 3)) {
    throw std::invalid_argument("cdf table: expected " + std::to_string(2 * support + 3) +
                                " cumulative values");
  }
  if (cdf.front() != 0 || cdf.back() != kCdfTotal) {
    throw std::invalid_argument("cdf table: must span [0, 2^16]");
  }
  for (std::size_t i = 1; i < cdf.size(); ++i) {
    if (cdf[i] <= cdf[i - 1]) {
      throw std::invalid_argument("cdf table: not strictly increasing at " + std::to_string(i));
    }
  }
}

int RequiredSupport(double mu, double scale, double tail) {
  if (!(scale > 0) || !std::isfinite(mu)) {
    throw std::invalid_argument("required_support: invalid prior parameters");
  }
  // Tail mass outside [-L-1/2, L+1/2] decreases monotonically in L.
  auto outside = [&](int l) {
    const double edge = l + 0.5;
    return LogisticCdf((-edge - mu) / scale) + LogisticCdf((mu - edge) / scale);
  };
  int lo = 0, hi = 1;
  constexpr int kMax = 32766;
  while (outside(hi) >= tail) {
    if (hi >= kMax) {
      throw std::invalid_argument("required_support: prior too wide for 16-bit tables");
    }
    lo = hi;
    hi = std::min(kMax, hi * 2);
  }
  if (outside(lo) < tail) return lo;
  while (hi - lo > 1) {
    const int mid = lo + (hi - lo) / 2;
    (outside(mid) < tail ? hi : lo) = mid;
  }
  return hi;
}

CdfTable BuildCdfTable(double mu, double scale, int support) {
  if (support < 0 || 2 * static_cast<long>(support) + 2 > static_cast<long>(kCdfTotal)) {
    throw std::invalid_argument("build_cdf_table: support out of range");
  }
  const int needed = RequiredSupport(mu, scale);
  if (support < needed) {
    throw std::invalid_argument("build_cdf_table: support L=" + std::to_string(support) +
                                " leaves tail mass >= 1e-6 for loc=" + std::to_string(mu) +
                                " scale=" + std::to_string(scale) + "; use L >= " +
                                std::to_string(needed));
  }
  const std::size_t n = static_cast<std::size_t>(2 * support + 2);
  std::vector<double> pmf(n);
  double total = 0;
  for (int v = -support; v <= support; ++v) {
    pmf[static_cast<std::size_t>(v + support)] = LogisticIntervalMass(v, mu, scale);
    total += pmf[static_cast<std::size_t>(v + support)];
  }
  pmf[n - 1] = std::max(0.0, 1.0 - total);

  std::vector<std::int64_t> freq(n);
  std::int64_t sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    freq[i] = std::max<std::int64_t>(1, std::llround(pmf[i] * kCdfTotal));
    sum += freq[i];
  }
  // Move the rounding residue one count at a time to whichever symbol
  // changes the expected code length least.
  while (sum != kCdfTotal) {
    const bool add = sum < kCdfTotal;
    std::size_t best = n;
    double best_cost = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double f = static_cast<double>(freq[i]);
      if (!add && freq[i] <= 1) continue;
      const double cost = add ? -pmf[i] * std::log(f + 1.0) + pmf[i] * std::log(f)
                              : pmf[i] * std::log(f) - pmf[i] * std::log(f - 1.0);
      if (best == n || cost < best_cost) {
        best = i;
        best_cost = cost;
      }
    }
    freq[best] += add ? 1 : -1;
    sum += add ? 1 : -1;
  }

  CdfTable table;
  table.support = support;
  table.cdf.resize(n + 1);
  table.cdf[0] = 0;
  for (std::size_t i = 0; i < n; ++i) {
    table.cdf[i + 1] = table.cdf[i] + static_cast<std::uint32_t>(freq[i]);
  }
  table.Validate();
  return table;
}

std::vector<CdfTable> BuildCdfTables(const FactorizedPrior<float>& prior, int min_support) {
  std::vector<CdfTable> tables;
  tables.reserve(prior.channels());
  for (std::size_t c = 0; c < prior.channels(); ++c) {
    const double mu = prior.Loc(c), scale = prior.Scale(c);
    const int support = std::max(min_support, RequiredSupport(mu, scale));
    tables.push_back(BuildCdfTable(mu, scale, support));
  }
  return tables;
}

void SerializeCdfTable(const CdfTable& table, std::vector<std::uint8_t>& out) {
  le::PutU16(out, static_cast<std::uint16_t>(table.support));
  for (std::size_t i = 0; i + 1 < table.cdf.size(); ++i) {
    le::PutU16(out, static_cast<std::uint16_t>(table.cdf[i]));
  }
}

CdfTable ParseCdfTable(le::Reader& reader) {
  CdfTable table;
  table.support = reader.U16();
  if (2 * static_cast<long>(table.support) + 2 > static_cast<long>(kCdfTotal)) {
    throw std::runtime_error("cdf table: support too large");
  }
  const std::size_t n = static_cast<std::size_t>(2 * table.support + 2);
  table.cdf.resize(n + 1);
  for (std::size_t i = 0; i < n; ++i) table.cdf[i] = reader.U16();
  table.cdf[n] = kCdfTotal;
  try {
    table.Validate();
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(e.what());
  }
  return table;
}

template struct FactorizedPrior<float>;
template struct FactorizedPrior<double>;
template Tensor<float> Likelihood(const Tensor<float>&, const FactorizedPrior<float>&);
template Tensor<double> Likelihood(const Tensor<double>&, const FactorizedPrior<double>&);
template Tensor<float> RateBits(const Tensor<float>&, const FactorizedPrior<float>&);
template Tensor<double> RateBits(const Tensor<double>&, const FactorizedPrior<double>&);

}  // namespace qlab
