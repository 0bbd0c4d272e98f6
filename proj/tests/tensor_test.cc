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

#include "qlab/tensor.h"

#include <cmath>
#include <functional>
#include <stdexcept>

#include "gtest/gtest.h"
#include "test_util.h"

namespace qlab {
namespace {

using testing::MaxRelError;
using testing::NumericGrad;
using testing::RandomTensor;

// Direct seven-loop convolution used as the reference for the GEMM path.
std::vector<double> NaiveConv(const Tensor<double>& x, const Tensor<double>& w,
                              const Tensor<double>& b, std::size_t stride, std::size_t pad) {
  const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t co = w.dim(0), k = w.dim(2);
  const std::size_t oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
  std::vector<double> out(n * co * oh * ow, 0.0);
  for (std::size_t b0 = 0; b0 < n; ++b0)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          double acc = b.numel() ? b[o] : 0.0;
          for (std::size_t c = 0; c < ci; ++c)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const long iy = long(oy * stride + ky) - long(pad);
                const long ix = long(ox * stride + kx) - long(pad);
                if (iy < 0 || ix < 0 || iy >= long(h) || ix >= long(wd)) continue;
                acc += x[((b0 * ci + c) * h + iy) * wd + ix] * w[((o * ci + c) * k + ky) * k + kx];
              }
          out[((b0 * co + o) * oh + oy) * ow + ox] = acc;
        }
  return out;
}

double Dot(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void ExpectGradMatches(const std::function<Tensor<double>()>& loss, Tensor<double>& input,
                       double tol = 1e-6) {
  input.zero_grad();
  loss().Backward();
  ASSERT_TRUE(input.has_grad());
  std::vector<double> analytic(input.grad().begin(), input.grad().end());
  input.zero_grad();
  const auto numeric = NumericGrad(loss, input);
  EXPECT_LT(MaxRelError(analytic, numeric), tol);
}

TEST(Tensor, ElementwiseGradientsMatchFiniteDifferences) {
  CounterRng rng(11);
  Tensor<double> a = RandomTensor({3, 4}, rng, 0.2, 2.0);
  Tensor<double> b = RandomTensor({3, 4}, rng, -1.5, 1.5);
  ExpectGradMatches([&] { return Sum(Mul(Log(a), Tanh(b))); }, a);
  ExpectGradMatches([&] { return Sum(Mul(Log(a), Tanh(b))); }, b);
  ExpectGradMatches([&] { return Mean(Square(Sub(Exp(b), Sigmoid(a)))); }, b);
  ExpectGradMatches([&] { return Sum(LeakyRelu(Add(b, Scale(a, 0.5)), 0.2)); }, b);
  ExpectGradMatches([&] { return Sum(Square(AddScalar(ClampMin(b, -0.3), 1.0))); }, b);
}

TEST(Tensor, MatMulGradient) {
  CounterRng rng(12);
  Tensor<double> a = RandomTensor({3, 5}, rng);
  Tensor<double> b = RandomTensor({5, 2}, rng);
  auto loss = [&] { return Sum(Square(MatMul(a, b))); };
  ExpectGradMatches(loss, a);
  ExpectGradMatches(loss, b);
}

TEST(Tensor, ReusedInputAccumulatesGradient) {
  Tensor<double> a({2}, {1.5, -2.0}, true);
  // d/da (a*a + a) = 2a + 1
  Sum(Add(Mul(a, a), a)).Backward();
  EXPECT_DOUBLE_EQ(a.grad()[0], 4.0);
  EXPECT_DOUBLE_EQ(a.grad()[1], -3.0);
}

TEST(Tensor, Conv2dMatchesDirectLoops) {
  CounterRng rng(13);
  Tensor<double> x = RandomTensor({2, 3, 9, 8}, rng, -1, 1, false);
  Tensor<double> w = RandomTensor({4, 3, 5, 5}, rng, -1, 1, false);
  Tensor<double> b = RandomTensor({4}, rng, -1, 1, false);
  for (std::size_t stride : {1, 2}) {
    Tensor<double> y = Conv2d(x, w, b, {.stride = stride, .padding = 2, .output_padding = 0});
    const auto ref = NaiveConv(x, w, b, stride, 2);
    ASSERT_EQ(y.numel(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
  }
}

TEST(Tensor, ConvTransposeIsAdjointOfConv) {
  CounterRng rng(14);
  const ConvOptions down{.stride = 2, .padding = 2, .output_padding = 0};
  const ConvOptions up{.stride = 2, .padding = 2, .output_padding = 1};
  Tensor<double> x = RandomTensor({1, 3, 8, 8}, rng, -1, 1, false);
  Tensor<double> w = RandomTensor({4, 3, 5, 5}, rng, -1, 1, false);
  Tensor<double> none;
  Tensor<double> y = Conv2d(x, w, none, down);
  ASSERT_EQ(y.shape(), (Shape{1, 4, 4, 4}));
  Tensor<double> z = RandomTensor({1, 4, 4, 4}, rng, -1, 1, false);
  // Conv weights [Co,Ci,K,K] read as transposed weights [Ci',Co',K,K] with Ci'=4.
  Tensor<double> xt = ConvTranspose2d(z, w, none, up);
  ASSERT_EQ(xt.shape(), x.shape());
  EXPECT_NEAR(Dot(y.data(), z.data()), Dot(x.data(), xt.data()), 1e-10);
}

TEST(Tensor, ConvolutionGradients) {
  CounterRng rng(15);
  Tensor<double> x = RandomTensor({2, 2, 6, 6}, rng);
  Tensor<double> w = RandomTensor({3, 2, 3, 3}, rng);
  Tensor<double> b = RandomTensor({3}, rng);
  Tensor<double> wt = RandomTensor({3, 2, 5, 5}, rng);
  Tensor<double> bt = RandomTensor({2}, rng);
  auto loss = [&] {
    Tensor<double> h = Conv2d(x, w, b, {.stride = 2, .padding = 1, .output_padding = 0});
    Tensor<double> r = ConvTranspose2d(h, wt, bt, {.stride = 2, .padding = 2, .output_padding = 1});
    return Mean(Square(r));
  };
  for (Tensor<double>* p : {&x, &w, &b, &wt, &bt}) ExpectGradMatches(loss, *p);
}

TEST(Tensor, ShapeErrors) {
  Tensor<double> a = Tensor<double>::Zeros({2, 3});
  Tensor<double> b = Tensor<double>::Zeros({3, 2});
  EXPECT_THROW(Add(a, b), std::invalid_argument);
  EXPECT_THROW(MatMul(a, a), std::invalid_argument);
  Tensor<double> v = Tensor<double>::Zeros({2}, true);
  EXPECT_THROW(Scale(v, 2.0).Backward(), std::invalid_argument);
}

TEST(Tensor, BackwardThroughDeepChainDoesNotRecurse) {
  Tensor<double> a = Tensor<double>::Scalar(1.0, true);
  Tensor<double> h = a;
  for (int i = 0; i < 200000; ++i) h = AddScalar(h, 0.0);
  h.Backward();
  EXPECT_DOUBLE_EQ(a.grad()[0], 1.0);
}

TEST(Tensor, AdamMatchesHandComputedSteps) {
  Tensor<double> p({1}, {1.0}, true);
  AdamState<double> state;
  state.learning_rate = 0.1;
  double m = 0, v = 0, expected = 1.0;
  for (int t = 1; t <= 3; ++t) {
    Scale(Square(p), 0.5).Backward();  // gradient = p
    const double g = expected;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
    expected -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    std::vector<Tensor<double>> params{p};
    AdamStep(std::span<Tensor<double>>(params), state);
    EXPECT_NEAR(p[0], expected, 1e-12);
    EXPECT_FALSE(p.has_grad());
  }
}

TEST(Tensor, AdamRejectsMissingGradient) {
  std::vector<Tensor<double>> params{Tensor<double>({1}, {1.0}, true)};
  AdamState<double> state;
  EXPECT_THROW(AdamStep(std::span<Tensor<double>>(params), state), std::invalid_argument);
}

TEST(Tensor, DetachAndCloneShareNothingWithTheGraph) {
  Tensor<double> a({2}, {1, 2}, true);
  Tensor<double> d = Scale(a, 3.0).Detach();
  EXPECT_FALSE(d.requires_grad());
  Tensor<double> c = a.Clone();
  c.mutable_data()[0] = 9;
  EXPECT_EQ(a[0], 1);
  EXPECT_FALSE(c.SameStorage(a));
}

}  // namespace
}  // namespace qlab
