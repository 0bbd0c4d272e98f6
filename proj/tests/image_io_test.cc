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

#include "qlab/image_io.h"

#include <filesystem>
#include <stdexcept>
#include <string>

#include "gtest/gtest.h"

namespace qlab {
namespace {

std::vector<std::uint8_t> Bytes(const std::string& s) { return {s.begin(), s.end()}; }

TEST(ImageIo, ParsesP6WithComments) {
  std::string text = "P6\n# made by hand\n2 1 # width height\n255\n";
  text += std::string("\x01\x02\x03\xfa\xfb\xfc", 6);
  Image img = ParsePpm(Bytes(text));
  EXPECT_EQ(img.width, 2u);
  EXPECT_EQ(img.height, 1u);
  EXPECT_EQ(img.at(0, 1, 2), 0xfc);
}

TEST(ImageIo, EncodeParseRoundTrip) {
  ImageSet set = SynthDataset(3, 16, 4);
  for (const auto& img : set.images) EXPECT_EQ(ParsePpm(EncodePpm(img)), img);
}

TEST(ImageIo, RejectsUnsupportedFiles) {
  auto expect_error = [](const std::string& text, const std::string& fragment) {
    try {
      ParsePpm(Bytes(text), "pic.ppm");
      ADD_FAILURE() << "accepted: " << fragment;
    } catch (const std::runtime_error& e) {
      const std::string what = e.what();
      EXPECT_NE(what.find("pic.ppm"), std::string::npos) << what;
      EXPECT_NE(what.find(fragment), std::string::npos) << what;
    }
  };
  expect_error("P3\n1 1\n255\n0 0 0\n", "P3");
  expect_error("P6\n1 1\n65535\n", "maxval");
  expect_error("P6\n2 2\n255\n\x01\x02", "truncated");
  expect_error("JPEG", "magic");
}

TEST(ImageIo, DirectoryLoadingIsSortedAndFailsWhenEmpty) {
  const auto dir = std::filesystem::temp_directory_path() / "qlab_image_io_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  EXPECT_THROW(LoadPpmDir(dir), std::runtime_error);
  ImageSet set = SynthDataset(2, 8, 1);
  SavePpm(dir / "b.ppm", set.images[0]);
  SavePpm(dir / "a.ppm", set.images[1]);
  ImageSet loaded = LoadPpmDir(dir);
  ASSERT_EQ(loaded.names.size(), 2u);
  EXPECT_EQ(loaded.names[0], "a.ppm");
  EXPECT_EQ(loaded.images[0], set.images[1]);
  std::filesystem::remove_all(dir);
}

TEST(ImageIo, SyntheticSetIsDeterministic) {
  ImageSet a = SynthDataset(4, 32, 9);
  ImageSet b = SynthDataset(4, 32, 9);
  ImageSet c = SynthDataset(4, 32, 10);
  EXPECT_EQ(a.images, b.images);
  EXPECT_NE(a.images, c.images);
  EXPECT_THROW(SynthDataset(1, 12, 0), std::invalid_argument);
}

TEST(ImageIo, RandomCropShapeRangeAndContent) {
  ImageSet set = SynthDataset(2, 32, 3);
  CounterRng rng(5);
  Tensor<float> crop = RandomCrop(set, 4, 16, rng);
  EXPECT_EQ(crop.shape(), (Shape{4, 3, 16, 16}));
  for (float v : crop.data()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  // Every crop is an exact window of one of the images.
  for (std::size_t b = 0; b < 4; ++b) {
    Image window = TensorToImage(crop, b);
    bool found = false;
    for (const auto& img : set.images) {
      for (std::size_t y0 = 0; y0 + 16 <= 32 && !found; ++y0) {
        for (std::size_t x0 = 0; x0 + 16 <= 32 && !found; ++x0) {
          bool same = true;
          for (std::size_t y = 0; y < 16 && same; ++y)
            for (std::size_t x = 0; x < 16 && same; ++x)
              for (std::size_t c = 0; c < 3 && same; ++c)
                same = window.at(y, x, c) == img.at(y0 + y, x0 + x, c);
          found = same;
        }
      }
    }
    EXPECT_TRUE(found) << "crop " << b;
  }
  EXPECT_THROW(RandomCrop(set, 1, 40, rng), std::invalid_argument);
}

TEST(ImageIo, TensorConversionRoundTrips) {
  ImageSet set = SynthDataset(1, 8, 2);
  Tensor<float> t = ImageToTensor(set.images[0]);
  EXPECT_EQ(t.shape(), (Shape{1, 3, 8, 8}));
  EXPECT_EQ(TensorToImage(t), set.images[0]);
}

}  // namespace
}  // namespace qlab
