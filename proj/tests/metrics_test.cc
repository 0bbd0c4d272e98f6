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

#include <cmath>
#include <stdexcept>

#include "bd_oracle.h"
#include "gtest/gtest.h"

namespace qlab {
namespace {

RDCurve Curve(std::string label, std::vector<RDPoint> pts) { return {std::move(label), std::move(pts)}; }

const RDCurve kAnchor = Curve("a", {{0.25, 28.1}, {0.45, 30.6}, {0.8, 33.0}, {1.3, 35.2}});

TEST(Metrics, PsnrFromMse) {
  EXPECT_NEAR(PsnrFromMse(255.0 * 255.0), 0.0, 1e-12);
  EXPECT_NEAR(PsnrFromMse(1.0), 20 * std::log10(255.0), 1e-12);
  EXPECT_EQ(PsnrFromMse(0.0), kPsnrCap);
  EXPECT_EQ(PsnrFromMse(1e-11), kPsnrCap);
}

TEST(Metrics, ImageAndTensorMseAgree) {
  Image a{1, 2, {0, 0, 0, 10, 20, 30}};
  Image b{1, 2, {255, 0, 0, 10, 20, 30}};
  EXPECT_DOUBLE_EQ(Mse255(a, b), 255.0 * 255.0 / 6);
  Image c{2, 1, {}};
  c.pixels.resize(6);
  EXPECT_THROW(Mse255(a, c), std::invalid_argument);
  Tensor<float> z = Tensor<float>::Zeros({1, 3, 2, 2}), o = Tensor<float>::Full({1, 3, 2, 2}, 1.f);
  EXPECT_DOUBLE_EQ(Mse255(z, o), 255.0 * 255.0);
  EXPECT_NEAR(Psnr(z, o), 0.0, 1e-12);
}

TEST(Metrics, PolynomialFitRecoversCubic) {
  std::vector<double> x{1, 2, 3, 4, 5, 6}, y;
  for (double v : x) y.push_back(0.5 - v + 0.25 * v * v - 0.03 * v * v * v);
  Polynomial p = FitPolynomial(x, y, 3);
  EXPECT_NEAR(p.Eval(2.5), 0.5 - 2.5 + 0.25 * 6.25 - 0.03 * 15.625, 1e-9);
  auto prim = [](double v) { return 0.5 * v - v * v / 2 + 0.25 * v * v * v / 3 - 0.03 * v * v * v * v / 4; };
  EXPECT_NEAR(p.Integral(1.5, 5.5), prim(5.5) - prim(1.5), 1e-9);
}

TEST(Metrics, BdRateOfIdenticalCurvesIsZero) {
  EXPECT_EQ(BdRate(kAnchor, kAnchor), 0.0);
}

TEST(Metrics, BdRateOfScaledRateMatchesOracle) {
  RDCurve scaled = kAnchor;
  for (auto& p : scaled.points) p.bpp *= 0.9;
  const double bd = BdRate(kAnchor, scaled);
  EXPECT_NEAR(bd, -10.0, 1e-9);
  EXPECT_NEAR(bd, testing::LagrangeBd(kAnchor, scaled), 1e-6);
}

TEST(Metrics, BdRateOfReshapedCurveMatchesOracle) {
  RDCurve test = Curve("t", {{0.2, 27.5}, {0.42, 30.9}, {0.7, 33.4}, {1.2, 36.0}});
  EXPECT_NEAR(BdRate(kAnchor, test), testing::LagrangeBd(kAnchor, test), 1e-4);
}

TEST(Metrics, BdRateIgnoresPointOrder) {
  RDCurve shuffled = Curve("s", {{1.3 * 0.8, 35.2}, {0.25 * 0.8, 28.1}, {0.8 * 0.8, 33.0}, {0.45 * 0.8, 30.6}});
  EXPECT_NEAR(BdRate(kAnchor, shuffled), -20.0, 1e-9);
}

TEST(Metrics, BdRateErrors) {
  RDCurve three = Curve("t", {{0.25, 28}, {0.5, 30}, {1.0, 33}});
  EXPECT_THROW(BdRate(kAnchor, three), std::invalid_argument);
  RDCurve far = Curve("far", {{0.25, 40}, {0.5, 41}, {0.8, 42}, {1.0, 43}});
  try {
    BdRate(kAnchor, far);
    FAIL();
  } catch (const std::invalid_argument& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("28.100"), std::string::npos) << what;
    EXPECT_NE(what.find("43.000"), std::string::npos) << what;
  }
  RDCurve zero = Curve("z", {{0.0, 28}, {0.5, 30}, {0.8, 33}, {1.0, 35}});
  EXPECT_THROW(BdRate(kAnchor, zero), std::invalid_argument);
}

TEST(Metrics, MonotonicityCheck) {
  EXPECT_TRUE(kAnchor.PsnrMonotone());
  RDCurve dip = Curve("d", {{0.2, 30}, {0.4, 29}, {0.6, 31}});
  EXPECT_FALSE(dip.PsnrMonotone());
}

TEST(Metrics, AggregateBppCountsHeaderAndPayload) {
  Bitstream s;
  s.payload.resize(100);
  std::vector<Bitstream> streams{s, s};
  std::vector<ImageDims> dims{{8, 8}, {8, 8}};
  std::vector<double> est{500, 300};
  BppReport r = AggregateBpp(streams, dims, est);
  EXPECT_DOUBLE_EQ(r.payload, 1600.0 / 128);
  EXPECT_DOUBLE_EQ(r.actual, 2.0 * 8 * (s.HeaderBytes() + 100) / 128);
  EXPECT_DOUBLE_EQ(r.estimated, 800.0 / 128);
  EXPECT_THROW(AggregateBpp(streams, std::span<const ImageDims>(dims.data(), 1)), std::invalid_argument);
}

TEST(Metrics, CurvesCsvRoundTrip) {
  std::vector<RDCurve> curves{kAnchor, Curve("b/x/1", {{0.1, 25.123456789}})};
  const auto back = CurvesFromCsv(CurvesToCsv(curves));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].label, "b/x/1");
  EXPECT_EQ(back[0].points[2].bpp, 0.8);
  EXPECT_EQ(back[1].points[0].psnr, 25.123456789);
  EXPECT_THROW(CurvesFromCsv("label,bpp,psnr\na,1\n"), std::runtime_error);
}

}  // namespace
}  // namespace qlab
