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

#ifndef QLAB_CHECKPOINT_H_
#define QLAB_CHECKPOINT_H_

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "qlab/tensor.h"

namespace qlab {

// Flat binary parameter file:
//   "QLT1" | version u32 | count u32 |
//   per tensor: name_len u32 | name bytes | rank u32 | extents u32... | f32 payload
// All integers and floats little-endian.
inline constexpr char kCheckpointMagic[4] = {'Q', 'L', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor<float>>>;

std::vector<std::uint8_t> SerializeCheckpoint(const NamedTensors& tensors);
NamedTensors DeserializeCheckpoint(const std::vector<std::uint8_t>& bytes);

void SaveCheckpoint(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors LoadCheckpoint(const std::filesystem::path& path);

// Little-endian helpers shared with the bitstream writer.
namespace le {
void PutU16(std::vector<std::uint8_t>& out, std::uint16_t v);
void PutU32(std::vector<std::uint8_t>& out, std::uint32_t v);
void PutF32(std::vector<std::uint8_t>& out, float v);

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}
  std::uint16_t U16();
  std::uint32_t U32();
  float F32();
  void Bytes(void* dst, std::size_t n);
  std::size_t remaining() const { return size_ - pos_; }
  std::size_t position() const { return pos_; }

 private:
  void Need(std::size_t n) const;
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};
}  // namespace le

std::vector<std::uint8_t> ReadFileBytes(const std::filesystem::path& path);
void WriteFileBytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace qlab

#endif  // QLAB_CHECKPOINT_H_
