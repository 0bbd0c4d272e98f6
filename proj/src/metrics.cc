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

#include "qlab/metrics.h"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "qlab/checkpoint.h"

namespace qlab {

RDCurve RDCurve::Sorted() const {
  RDCurve out = *this;
  std::sort(out.points.begin(), out.points.end(), [](const RDPoint& a, const RDPoint& b) {
    return a.bpp < b.bpp || (a.bpp == b.bpp && a.psnr < b.psnr);
  });
  for (std::size_t i = 0; i < out.points.size(); ++i) {
    if (!(out.points[i].bpp > 0) || !std::isfinite(out.points[i].psnr)) {
      throw std::invalid_argument("rd curve '" + label + "': bpp must be > 0 and psnr finite");
    }
    if (i > 0 && out.points[i].bpp <= out.points[i - 1].bpp) {
      throw std::invalid_argument("rd curve '" + label + "': bpp values must be distinct");
    }
  }
  return out;
}

bool RDCurve::PsnrMonotone() const {
  RDCurve s = Sorted();
  for (std::size_t i = 1; i < s.points.size(); ++i) {
    if (s.points[i].psnr < s.points[i - 1].psnr) return false;
  }
  return true;
}

double Mse255(const Image& a, const Image& b) {
  if (a.height != b.height || a.width != b.width || a.pixels.size() != b.pixels.size()) {
    throw std::invalid_argument("mse: image shapes differ (" + std::to_string(a.height) + "x" +
                                std::to_string(a.width) + " vs " + std::to_string(b.height) +
                                "x" + std::to_string(b.width) + ")");
  }
  if (a.pixels.empty()) throw std::invalid_argument("mse: empty image");
  double acc = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = static_cast<double>(a.pixels[i]) - b.pixels[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.pixels.size());
}

double Mse255(const Tensor<float>& a, const Tensor<float>& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("mse: shape mismatch " + ShapeString(a.shape()) + " vs " +
                                ShapeString(b.shape()));
  }
  if (a.numel() == 0) throw std::invalid_argument("mse: empty tensor");
  double acc = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = 255.0 * (static_cast<double>(a[i]) - b[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.numel());
}

double PsnrFromMse(double mse) {
  if (mse < 1e-10) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(255.0 * 255.0 / mse));
}

double Psnr(const Image& a, const Image& b) { return PsnrFromMse(Mse255(a, b)); }
double Psnr(const Tensor<float>& a, const Tensor<float>& b) { return PsnrFromMse(Mse255(a, b)); }

double Polynomial::Eval(double x) const {
  double acc = 0;
  for (auto it = coeffs.rbegin(); it != coeffs.rend(); ++it) acc = acc * (x - shift) + *it;
  return acc;
}

double Polynomial::Integral(double a, double b) const {
  auto anti = [&](double x) {
    const double u = x - shift;
    double acc = 0;
    for (std::size_t i = coeffs.size(); i-- > 0;) acc = acc * u + coeffs[i] / (i + 1.0);
    return acc * u;
  };
  return anti(b) - anti(a);
}

Polynomial FitPolynomial(std::span<const double> x, std::span<const double> y, int degree) {
  if (x.size() != y.size() || x.size() < static_cast<std::size_t>(degree + 1)) {
    throw std::invalid_argument("fit_polynomial: need at least degree+1 points");
  }
  Polynomial p;
  p.shift = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  Eigen::MatrixXd a(x.size(), degree + 1);
  Eigen::VectorXd b(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double v = 1.0;
    for (int j = 0; j <= degree; ++j) {
      a(static_cast<Eigen::Index>(i), j) = v;
      v *= x[i] - p.shift;
    }
    b(static_cast<Eigen::Index>(i)) = y[i];
  }
  Eigen::VectorXd c = a.colPivHouseholderQr().solve(b);
  p.coeffs.assign(c.data(), c.data() + c.size());
  return p;
}

namespace {

struct FittedCurve {
  Polynomial poly;
  double lo = 0, hi = 0;
};

FittedCurve FitLogRate(const RDCurve& curve) {
  if (curve.points.size() < kMinBdPoints) {
    throw std::invalid_argument("bd_rate: curve '" + curve.label + "' has " +
                                std::to_string(curve.points.size()) + " points, need " +
                                std::to_string(kMinBdPoints));
  }
  // Sorting fixes the summation order, so point order never changes the result.
  RDCurve s = curve.Sorted();
  std::sort(s.points.begin(), s.points.end(),
            [](const RDPoint& a, const RDPoint& b) { return a.psnr < b.psnr; });
  std::vector<double> psnr, rate;
  for (const auto& pt : s.points) {
    psnr.push_back(pt.psnr);
    rate.push_back(std::log2(pt.bpp));
  }
  FittedCurve f;
  f.poly = FitPolynomial(psnr, rate, 3);
  f.lo = psnr.front();
  f.hi = psnr.back();
  return f;
}

}  // namespace

double BdRate(const RDCurve& anchor, const RDCurve& test) {
  const FittedCurve a = FitLogRate(anchor);
  const FittedCurve t = FitLogRate(test);
  const double lo = std::max(a.lo, t.lo), hi = std::min(a.hi, t.hi);
  if (!(hi - lo >= kMinBdOverlapDb)) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(3) << "bd_rate: PSNR ranges overlap by less than "
       << kMinBdOverlapDb << " dB (" << anchor.label << ": [" << a.lo << ", " << a.hi << "], "
       << test.label << ": [" << t.lo << ", " << t.hi << "])";
    throw std::invalid_argument(os.str());
  }
  const double avg = (t.poly.Integral(lo, hi) - a.poly.Integral(lo, hi)) / (hi - lo);
  return (std::exp2(avg) - 1.0) * 100.0;
}

BppReport AggregateBpp(std::span<const Bitstream> streams, std::span<const ImageDims> images,
                       std::span<const double> estimated_bits) {
  if (streams.size() != images.size() ||
      (!estimated_bits.empty() && estimated_bits.size() != images.size())) {
    throw std::invalid_argument("aggregate_bpp: stream, image and estimate counts differ");
  }
  double pixels = 0, total = 0, payload = 0, est = 0;
  for (std::size_t i = 0; i < streams.size(); ++i) {
    pixels += static_cast<double>(images[i].height * images[i].width);
    total += static_cast<double>(streams[i].TotalBits());
    payload += static_cast<double>(streams[i].PayloadBits());
    if (!estimated_bits.empty()) est += estimated_bits[i];
  }
  BppReport r;
  if (pixels > 0) {
    r.actual = total / pixels;
    r.payload = payload / pixels;
    r.estimated = est / pixels;
  }
  return r;
}

std::string CurvesToCsv(std::span<const RDCurve> curves) {
  std::ostringstream os;
  os << "label,bpp,psnr\n" << std::setprecision(17);
  for (const auto& c : curves) {
    for (const auto& p : c.points) os << c.label << ',' << p.bpp << ',' << p.psnr << '\n';
  }
  return os.str();
}

std::vector<RDCurve> CurvesFromCsv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<RDCurve> curves;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (lineno == 1 && line.rfind("label", 0) == 0) continue;
    std::istringstream ls(line);
    std::string label, bpp, psnr;
    if (!std::getline(ls, label, ',') || !std::getline(ls, bpp, ',') ||
        !std::getline(ls, psnr)) {
      throw std::runtime_error("curves csv: malformed line " + std::to_string(lineno));
    }
    RDPoint p;
    try {
      p.bpp = std::stod(bpp);
      p.psnr = std::stod(psnr);
    } catch (const std::exception&) {
      throw std::runtime_error("curves csv: bad number on line " + std::to_string(lineno));
    }
    auto it = std::find_if(curves.begin(), curves.end(),
                           [&](const RDCurve& c) { return c.label == label; });
    if (it == curves.end()) {
      curves.push_back({label, {}});
      it = curves.end() - 1;
    }
    it->points.push_back(p);
  }
  return curves;
}

void WriteCurvesCsv(const std::filesystem::path& path, std::span<const RDCurve> curves) {
  const std::string s = CurvesToCsv(curves);
  WriteFileBytes(path, std::vector<std::uint8_t>(s.begin(), s.end()));
}

std::vector<RDCurve> ReadCurvesCsv(const std::filesystem::path& path) {
  const auto bytes = ReadFileBytes(path);
  return CurvesFromCsv(std::string(bytes.begin(), bytes.end()));
}

}  // namespace qlab
