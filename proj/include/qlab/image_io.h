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

#ifndef QLAB_IMAGE_IO_H_
#define QLAB_IMAGE_IO_H_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "qlab/rng.h"
#include "qlab/tensor.h"

namespace qlab {

// 8-bit RGB, interleaved HWC.
struct Image {
  static constexpr std::size_t kChannels = 3;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * kChannels + c];
  }
  std::size_t pixel_count() const { return height * width; }
  bool operator==(const Image&) const = default;
};

enum class ImageSource { kPpmDir, kSynthetic };

struct ImageSet {
  std::vector<Image> images;
  std::vector<std::string> names;
  ImageSource source = ImageSource::kSynthetic;
  std::uint64_t seed = 0;
};

// Binary P6 only, maxval 255. Errors mention `name`.
Image ParsePpm(std::span<const std::uint8_t> bytes, const std::string& name = "<memory>");
std::vector<std::uint8_t> EncodePpm(const Image& image);
Image LoadPpm(const std::filesystem::path& path);
void SavePpm(const std::filesystem::path& path, const Image& image);

// Every *.ppm in `dir`, sorted by filename.
ImageSet LoadPpmDir(const std::filesystem::path& dir);

// Smooth gradients, Gaussian blobs and checkerboards with random
// frequencies and phases; identical for identical (n, size, seed).
ImageSet SynthDataset(std::size_t n, std::size_t size, std::uint64_t seed);
void SaveImageSet(const std::filesystem::path& dir, const ImageSet& set);

// [batch,3,patch,patch] in [0,1], each crop from a random image at a random
// position fully inside it.
Tensor<float> RandomCrop(const ImageSet& set, std::size_t batch, std::size_t patch,
                         CounterRng& rng);

// [1,3,H,W] in [0,1].
Tensor<float> ImageToTensor(const Image& image);
// Sample `index` of an [N,3,H,W] tensor, clipped to [0,1] and rounded.
Image TensorToImage(const Tensor<float>& t, std::size_t index = 0);

}  // namespace qlab

#endif  // QLAB_IMAGE_IO_H_
