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

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>

#include "qlab/checkpoint.h"

namespace qlab {

namespace {

class HeaderScanner {
 public:
  HeaderScanner(std::span<const std::uint8_t> bytes, const std::string& name)
      : bytes_(bytes), name_(name) {}

  std::size_t Number() {
    SkipSpaceAndComments();
    if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) Fail("malformed header");
    std::size_t v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_++] - '0');
      if (v > (1u << 24)) Fail("header value too large");
    }
    return v;
  }

  // Exactly one whitespace byte separates maxval from the raster.
  void SingleSpace() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) Fail("malformed header");
    ++pos_;
  }

  std::size_t position() const { return pos_; }
  void Advance(std::size_t n) { pos_ += n; }

  [[noreturn]] void Fail(const std::string& what) const {
    throw std::runtime_error(name_ + ": " + what);
  }

 private:
  void SkipSpaceAndComments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::span<const std::uint8_t> bytes_;
  const std::string& name_;
  std::size_t pos_ = 0;
};

double Clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

Image ParsePpm(std::span<const std::uint8_t> bytes, const std::string& name) {
  HeaderScanner scan(bytes, name);
  if (bytes.size() < 2 || bytes[0] != 'P') scan.Fail("not a PPM file (bad magic)");
  if (bytes[1] != '6') {
    scan.Fail(std::string("unsupported PPM variant P") + static_cast<char>(bytes[1]) +
              " (only binary P6)");
  }
  scan.Advance(2);
  Image img;
  img.width = scan.Number();
  img.height = scan.Number();
  const std::size_t maxval = scan.Number();
  if (img.width == 0 || img.height == 0) scan.Fail("zero image dimension");
  if (maxval != 255) scan.Fail("maxval " + std::to_string(maxval) + " unsupported (need 255)");
  scan.SingleSpace();
  const std::size_t need = img.width * img.height * Image::kChannels;
  if (bytes.size() - scan.position() < need) {
    scan.Fail("truncated payload (" + std::to_string(bytes.size() - scan.position()) + " of " +
              std::to_string(need) + " bytes)");
  }
  const auto* begin = bytes.data() + scan.position();
  img.pixels.assign(begin, begin + need);
  return img;
}

std::vector<std::uint8_t> EncodePpm(const Image& image) {
  const std::string header =
      "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.pixels.begin(), image.pixels.end());
  return out;
}

Image LoadPpm(const std::filesystem::path& path) {
  return ParsePpm(ReadFileBytes(path), path.filename().string());
}

void SavePpm(const std::filesystem::path& path, const Image& image) {
  WriteFileBytes(path, EncodePpm(image));
}

ImageSet LoadPpmDir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw std::runtime_error(dir.string() + ": not a directory");
  }
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".ppm") files.push_back(e.path());
  }
  if (files.empty()) throw std::runtime_error(dir.string() + ": no .ppm files (empty image set)");
  std::sort(files.begin(), files.end());
  ImageSet set;
  set.source = ImageSource::kPpmDir;
  for (const auto& f : files) {
    set.images.push_back(LoadPpm(f));
    set.names.push_back(f.filename().string());
  }
  return set;
}

ImageSet SynthDataset(std::size_t n, std::size_t size, std::uint64_t seed) {
  if (size == 0 || size % 8 != 0) {
    throw std::invalid_argument("synth_dataset: size must be a positive multiple of 8");
  }
  ImageSet set;
  set.source = ImageSource::kSynthetic;
  set.seed = seed;
  const double s = static_cast<double>(size);
  for (std::size_t idx = 0; idx < n; ++idx) {
    CounterRng rng = CounterRng::Derive({seed, idx, 0x5e7});
    std::vector<double> buf(size * size * 3);

    // Linear gradient between two random colours along a random direction.
    const double angle = rng.Uniform() * 6.283185307179586;
    const double dx = std::cos(angle), dy = std::sin(angle);
    double c0[3], c1[3];
    for (int c = 0; c < 3; ++c) {
      c0[c] = rng.Uniform();
      c1[c] = rng.Uniform();
    }
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const double t = 0.5 + 0.5 * ((x / s - 0.5) * dx + (y / s - 0.5) * dy) * 1.41421356;
        for (int c = 0; c < 3; ++c) buf[(y * size + x) * 3 + c] = c0[c] + (c1[c] - c0[c]) * t;
      }
    }

    // Gaussian blobs.
    const int blobs = 1 + static_cast<int>(rng.Below(4));
    for (int b = 0; b < blobs; ++b) {
      const double cx = rng.Uniform() * s, cy = rng.Uniform() * s;
      const double radius = s * (0.05 + 0.25 * rng.Uniform());
      double amp[3];
      for (auto& a : amp) a = rng.Uniform() - 0.5;
      for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
          const double d2 = ((x - cx) * (x - cx) + (y - cy) * (y - cy)) / (radius * radius);
          const double g = std::exp(-0.5 * d2);
          for (int c = 0; c < 3; ++c) buf[(y * size + x) * 3 + c] += amp[c] * g;
        }
      }
    }

    // Checkerboard over a random region with random frequency and phase.
    if (rng.Uniform() < 0.6) {
      const double freq = 2.0 + rng.Uniform() * 10.0;
      const double px = rng.Uniform(), py = rng.Uniform();
      const double contrast = 0.1 + 0.3 * rng.Uniform();
      const std::size_t x0 = rng.Below(size / 2), y0 = rng.Below(size / 2);
      const std::size_t x1 = x0 + size / 4 + rng.Below(size / 2), y1 = y0 + size / 4 + rng.Below(size / 2);
      for (std::size_t y = y0; y < std::min(y1, size); ++y) {
        for (std::size_t x = x0; x < std::min(x1, size); ++x) {
          const long cx = static_cast<long>(std::floor(x / s * freq + px));
          const long cy = static_cast<long>(std::floor(y / s * freq + py));
          const double sign = ((cx + cy) & 1) ? contrast : -contrast;
          for (int c = 0; c < 3; ++c) buf[(y * size + x) * 3 + c] += sign;
        }
      }
    }

    Image img;
    img.height = img.width = size;
    img.pixels.resize(buf.size());
    for (std::size_t i = 0; i < buf.size(); ++i) {
      img.pixels[i] = static_cast<std::uint8_t>(std::lround(Clamp01(buf[i]) * 255.0));
    }
    set.images.push_back(std::move(img));
    set.names.push_back("synth_" + std::to_string(idx) + ".ppm");
  }
  return set;
}

void SaveImageSet(const std::filesystem::path& dir, const ImageSet& set) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < set.images.size(); ++i) {
    const std::string name =
        i < set.names.size() ? set.names[i] : "image_" + std::to_string(i) + ".ppm";
    SavePpm(dir / name, set.images[i]);
  }
}

Tensor<float> RandomCrop(const ImageSet& set, std::size_t batch, std::size_t patch,
                         CounterRng& rng) {
  if (set.images.empty()) throw std::invalid_argument("random_crop: empty image set");
  for (std::size_t i = 0; i < set.images.size(); ++i) {
    const auto& img = set.images[i];
    if (img.height < patch || img.width < patch) {
      throw std::invalid_argument("random_crop: image " + std::to_string(i) + " (" +
                                  std::to_string(img.height) + "x" + std::to_string(img.width) +
                                  ") is smaller than patch " + std::to_string(patch));
    }
  }
  const std::size_t plane = patch * patch;
  std::vector<float> data(batch * 3 * plane);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto& img = set.images[rng.Below(set.images.size())];
    const std::size_t y0 = rng.Below(img.height - patch + 1);
    const std::size_t x0 = rng.Below(img.width - patch + 1);
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t y = 0; y < patch; ++y) {
        for (std::size_t x = 0; x < patch; ++x) {
          data[(b * 3 + c) * plane + y * patch + x] = img.at(y0 + y, x0 + x, c) / 255.0f;
        }
      }
    }
  }
  return Tensor<float>({batch, 3, patch, patch}, std::move(data));
}

Tensor<float> ImageToTensor(const Image& image) {
  const std::size_t plane = image.height * image.width;
  std::vector<float> data(3 * plane);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < plane; ++i) data[c * plane + i] = image.pixels[i * 3 + c] / 255.0f;
  }
  return Tensor<float>({1, 3, image.height, image.width}, std::move(data));
}

Image TensorToImage(const Tensor<float>& t, std::size_t index) {
  if (t.rank() != 4 || t.dim(1) != 3 || index >= t.dim(0)) {
    throw std::invalid_argument("tensor_to_image: expected [N,3,H,W], got " + ShapeString(t.shape()));
  }
  Image img;
  img.height = t.dim(2);
  img.width = t.dim(3);
  const std::size_t plane = img.height * img.width;
  img.pixels.resize(plane * 3);
  const float* base = t.data().data() + index * 3 * plane;
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      img.pixels[i * 3 + c] =
          static_cast<std::uint8_t>(std::lround(Clamp01(base[c * plane + i]) * 255.0));
    }
  }
  return img;
}

}  // namespace qlab
