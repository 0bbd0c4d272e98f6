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

#include "qlab/checkpoint.h"

#include <filesystem>
#include <stdexcept>

#include "gtest/gtest.h"

namespace qlab {
namespace {

NamedTensors Sample() {
  return {{"enc0.weight", Tensor<float>({2, 1, 2}, {1.5f, -2.f, 0.f, 3.25f})},
          {"scalar", Tensor<float>({}, {7.f})}};
}

TEST(Checkpoint, RoundTripsNamesShapesAndValues) {
  const auto bytes = SerializeCheckpoint(Sample());
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "QLT1");
  const NamedTensors back = DeserializeCheckpoint(bytes);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].first, "enc0.weight");
  EXPECT_EQ(back[0].second.shape(), (Shape{2, 1, 2}));
  EXPECT_EQ(back[0].second[3], 3.25f);
  EXPECT_EQ(back[1].second.rank(), 0u);
  EXPECT_EQ(back[1].second.item(), 7.f);
}

TEST(Checkpoint, LittleEndianLayout) {
  const auto bytes = SerializeCheckpoint({{"a", Tensor<float>({1}, {1.0f})}});
  // magic, version 1, count 1, name length 1, 'a', rank 1, extent 1, 0x3f800000
  const std::vector<std::uint8_t> want = {'Q', 'L', 'T', '1', 1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0,
                                          'a', 1,   0,   0,   0, 1, 0, 0, 0, 0, 0, 0x80, 0x3f};
  EXPECT_EQ(bytes, want);
}

TEST(Checkpoint, RejectsCorruptFiles) {
  auto bytes = SerializeCheckpoint(Sample());
  auto bad = bytes;
  bad[1] = 'X';
  EXPECT_THROW(DeserializeCheckpoint(bad), std::runtime_error);
  for (std::size_t cut : {3ul, 10ul, bytes.size() - 1}) {
    std::vector<std::uint8_t> shorter(bytes.begin(), bytes.begin() + static_cast<long>(cut));
    EXPECT_THROW(DeserializeCheckpoint(shorter), std::runtime_error) << cut;
  }
  bytes.push_back(0);
  EXPECT_THROW(DeserializeCheckpoint(bytes), std::runtime_error);
}

TEST(Checkpoint, FileRoundTripAndMissingFile) {
  const auto dir = std::filesystem::temp_directory_path() / "qlab_checkpoint_test";
  std::filesystem::remove_all(dir);
  SaveCheckpoint(dir / "nested" / "c.qlt", Sample());
  EXPECT_EQ(LoadCheckpoint(dir / "nested" / "c.qlt").size(), 2u);
  EXPECT_FALSE(std::filesystem::exists(dir / "nested" / "c.qlt.tmp"));
  EXPECT_THROW(LoadCheckpoint(dir / "missing.qlt"), std::runtime_error);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace qlab
