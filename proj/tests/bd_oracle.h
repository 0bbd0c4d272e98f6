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

#ifndef QLAB_TESTS_BD_ORACLE_H_
#define QLAB_TESTS_BD_ORACLE_H_

#include <algorithm>
#include <cmath>
#include <utility>

#include "qlab/metrics.h"

namespace qlab::testing {

// Cubic through four points by Lagrange interpolation, integrated with a
// dense trapezoid rule. Independent of the least-squares path.
inline double LagrangeBd(const RDCurve& anchor, const RDCurve& test) {
  auto interp = [](const RDCurve& c) {
    return [c](double q) {
      double sum = 0;
      for (std::size_t i = 0; i < c.points.size(); ++i) {
        double term = std::log2(c.points[i].bpp);
        for (std::size_t j = 0; j < c.points.size(); ++j) {
          if (i != j) term *= (q - c.points[j].psnr) / (c.points[i].psnr - c.points[j].psnr);
        }
        sum += term;
      }
      return sum;
    };
  };
  auto range = [](const RDCurve& c) {
    double lo = 1e9, hi = -1e9;
    for (auto& p : c.points) {
      lo = std::min(lo, p.psnr);
      hi = std::max(hi, p.psnr);
    }
    return std::pair{lo, hi};
  };
  auto fa = interp(anchor), ft = interp(test);
  const auto [alo, ahi] = range(anchor);
  const auto [tlo, thi] = range(test);
  const double lo = std::max(alo, tlo), hi = std::min(ahi, thi);
  const int n = 200000;
  const double h = (hi - lo) / n;
  double acc = 0;
  for (int i = 0; i <= n; ++i) {
    const double q = lo + i * h;
    acc += (i == 0 || i == n ? 0.5 : 1.0) * (ft(q) - fa(q));
  }
  return (std::exp2(acc * h / (hi - lo)) - 1) * 100;
}

}  // namespace qlab::testing

#endif  // QLAB_TESTS_BD_ORACLE_H_
