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

#include "qlab/range_coder.h"

#include <cmath>
#include <stdexcept>

#include "gtest/gtest.h"
#include "qlab/rng.h"

namespace qlab {
namespace {

struct Case {
  SymbolTensor symbols;
  std::vector<CdfTable> tables;
};

// Symbols drawn near each channel's location, with occasional far outliers
// that must go through the escape path.
Case RandomCase(CounterRng& rng) {
  Case c;
  c.symbols.channels = 1 + static_cast<std::uint32_t>(rng.Below(4));
  c.symbols.height = static_cast<std::uint32_t>(rng.Below(6));
  c.symbols.width = 1 + static_cast<std::uint32_t>(rng.Below(6));
  std::vector<double> loc, scale;
  for (std::uint32_t ch = 0; ch < c.symbols.channels; ++ch) {
    loc.push_back(rng.Uniform() * 6 - 3);
    scale.push_back(0.05 + rng.Uniform() * 4);
    const int support = std::max(kDefaultSupport, RequiredSupport(loc.back(), scale.back()));
    c.tables.push_back(BuildCdfTable(loc.back(), scale.back(), support));
  }
  const std::size_t plane = std::size_t(c.symbols.height) * c.symbols.width;
  for (std::size_t i = 0; i < plane * c.symbols.channels; ++i) {
    const std::size_t ch = i / plane;
    const double pick = rng.Uniform();
    int v;
    if (pick < 0.03) {
      v = static_cast<int>(rng.Below(65536)) - 32768;
    } else {
      v = static_cast<int>(std::lround(loc[ch] + scale[ch] * rng.Normal()));
    }
    c.symbols.values.push_back(v);
  }
  return c;
}

TEST(RangeCoder, ThousandRandomRoundTrips) {
  CounterRng rng(31);
  for (int trial = 0; trial < 1000; ++trial) {
    Case c = RandomCase(rng);
    Bitstream s = EncodeSymbols(c.symbols, c.tables, 8 * c.symbols.height, 8 * c.symbols.width);
    const auto bytes = s.Serialize();
    Bitstream parsed = Bitstream::Parse(bytes);
    SymbolTensor back = DecodeSymbols(parsed);
    ASSERT_EQ(back.values, c.symbols.values) << "trial " << trial;
    ASSERT_EQ(back.channels, c.symbols.channels);
    ASSERT_EQ(back.height, c.symbols.height);
    ASSERT_EQ(back.width, c.symbols.width);
  }
}

TEST(RangeCoder, PayloadIsCloseToTheTableCodeLength) {
  CounterRng rng(32);
  CdfTable t = BuildCdfTable(0.0, 1.5, 64);
  SymbolTensor s{1, 64, 64, {}};
  for (int i = 0; i < 64 * 64; ++i) s.values.push_back(int(std::lround(1.5 * rng.Normal())));
  Bitstream b = EncodeSymbols(s, {t});
  const double ideal = TableCodeLength(s, {t});
  EXPECT_GE(double(b.PayloadBits()), ideal - 1);
  // 32 bits of final state plus the carry-less coder's range truncation.
  EXPECT_LE(double(b.PayloadBits()), ideal + 64);
}

TEST(RangeCoder, EmptyTensorHasNoPayload) {
  SymbolTensor s{2, 0, 3, {}};
  std::vector<CdfTable> tables{BuildCdfTable(0, 1, 64), BuildCdfTable(0, 1, 64)};
  Bitstream b = EncodeSymbols(s, tables);
  EXPECT_TRUE(b.payload.empty());
  EXPECT_TRUE(DecodeSymbols(Bitstream::Parse(b.Serialize())).values.empty());
}

TEST(RangeCoder, HeaderLayout) {
  SymbolTensor s{1, 1, 1, {3}};
  Bitstream b = EncodeSymbols(s, {BuildCdfTable(0, 1, 64)}, 8, 8);
  const auto bytes = b.Serialize();
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "QLB1");
  EXPECT_EQ(bytes[4], 8);  // image height, little-endian
  EXPECT_EQ(bytes.size(), b.HeaderBytes() + b.payload.size());
  EXPECT_EQ(b.TotalBits(), 8 * bytes.size());
}

TEST(RangeCoder, ErrorsOnBadInput) {
  SymbolTensor s{1, 2, 2, {0, 1, 2, 3}};
  std::vector<CdfTable> tables{BuildCdfTable(0, 1, 64)};
  auto bytes = EncodeSymbols(s, tables).Serialize();

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(Bitstream::Parse(bad_magic), std::runtime_error);

  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_THROW(Bitstream::Parse(truncated), std::runtime_error);

  Bitstream cut = Bitstream::Parse(bytes);
  cut.payload.resize(1);
  EXPECT_THROW(DecodeSymbols(cut), std::runtime_error);

  SymbolTensor huge{1, 1, 1, {40000}};
  EXPECT_THROW(EncodeSymbols(huge, tables), std::invalid_argument);
  SymbolTensor wrong{2, 1, 1, {0, 0}};
  EXPECT_THROW(EncodeSymbols(wrong, tables), std::invalid_argument);
}

TEST(RangeCoder, ExtremeEscapeValuesSurvive) {
  SymbolTensor s{1, 1, 4, {-32768, 32767, 65, -65}};
  std::vector<CdfTable> tables{BuildCdfTable(0, 1, 64)};
  EXPECT_EQ(DecodeSymbols(EncodeSymbols(s, tables)).values, s.values);
}

}  // namespace
}  // namespace qlab
