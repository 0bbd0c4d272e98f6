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

#ifndef QLAB_METRICS_H_
#define QLAB_METRICS_H_

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "qlab/image_io.h"
#include "qlab/range_coder.h"
#include "qlab/tensor.h"

namespace qlab {

inline constexpr double kPsnrCap = 99.0;

struct RDPoint {
  double bpp = 0;
  double psnr = 0;
};

struct RDCurve {
  std::string label;
  std::vector<RDPoint> points;

  // Points sorted by bpp; throws unless bpp > 0 and strictly increasing.
  RDCurve Sorted() const;
  // True when psnr does not decrease with bpp (informational only).
  bool PsnrMonotone() const;
};

// Mean squared error on the 0..255 scale.
double Mse255(const Image& a, const Image& b);
// Inputs in [0,1]; the error is measured after scaling by 255.
double Mse255(const Tensor<float>& a, const Tensor<float>& b);

// 10 log10(255^2 / mse), capped at kPsnrCap for mse < 1e-10.
double PsnrFromMse(double mse);
double Psnr(const Image& a, const Image& b);
double Psnr(const Tensor<float>& a, const Tensor<float>& b);

// Least-squares polynomial coefficients c[0] + c[1] x + ... in powers of
// (x - shift).
struct Polynomial {
  std::vector<double> coeffs;
  double shift = 0;
  double Eval(double x) const;
  double Integral(double a, double b) const;
};
Polynomial FitPolynomial(std::span<const double> x, std::span<const double> y, int degree);

// Bjontegaard delta rate of `test` against `anchor` in percent; negative
// means `test` needs fewer bits at equal PSNR. Cubic fit of log2(bpp)
// over PSNR, integrated across the shared PSNR range.
double BdRate(const RDCurve& anchor, const RDCurve& test);

inline constexpr std::size_t kMinBdPoints = 4;
inline constexpr double kMinBdOverlapDb = 1.0;

struct ImageDims {
  std::size_t height = 0;
  std::size_t width = 0;
};

struct BppReport {
  double estimated = 0;  // from model likelihoods
  double actual = 0;     // serialized stream size (header + payload)
  double payload = 0;    // payload only
};

// Totals bits over all streams and divides by total pixels.
BppReport AggregateBpp(std::span<const Bitstream> streams, std::span<const ImageDims> images,
                       std::span<const double> estimated_bits = {});

// CSV rows "label,bpp,psnr" with a header line.
void WriteCurvesCsv(const std::filesystem::path& path, std::span<const RDCurve> curves);
std::vector<RDCurve> ReadCurvesCsv(const std::filesystem::path& path);
std::string CurvesToCsv(std::span<const RDCurve> curves);
std::vector<RDCurve> CurvesFromCsv(const std::string& text);

}  // namespace qlab

#endif  // QLAB_METRICS_H_
