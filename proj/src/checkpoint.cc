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

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace qlab {

namespace le {

void PutU16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void PutU32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void PutF32(std::vector<std::uint8_t>& out, float v) {
  PutU32(out, std::bit_cast<std::uint32_t>(v));
}

void Reader::Need(std::size_t n) const {
  if (size_ - pos_ < n) {
    throw std::runtime_error("unexpected end of data at byte " + std::to_string(pos_));
  }
}

std::uint16_t Reader::U16() {
  Need(2);
  std::uint16_t v = static_cast<std::uint16_t>(data_[pos_] | (data_[pos_ + 1] << 8));
  pos_ += 2;
  return v;
}

std::uint32_t Reader::U32() {
  Need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
  pos_ += 4;
  return v;
}

float Reader::F32() { return std::bit_cast<float>(U32()); }

void Reader::Bytes(void* dst, std::size_t n) {
  Need(n);
  std::memcpy(dst, data_ + pos_, n);
  pos_ += n;
}

}  // namespace le

std::vector<std::uint8_t> SerializeCheckpoint(const NamedTensors& tensors) {
  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  le::PutU32(out, kCheckpointVersion);
  le::PutU32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    le::PutU32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    le::PutU32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) le::PutU32(out, static_cast<std::uint32_t>(e));
    for (float v : t.data()) le::PutF32(out, v);
  }
  return out;
}

NamedTensors DeserializeCheckpoint(const std::vector<std::uint8_t>& bytes) {
  le::Reader r(bytes.data(), bytes.size());
  char magic[4];
  r.Bytes(magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw std::runtime_error("checkpoint: bad magic");
  }
  const std::uint32_t version = r.U32();
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  const std::uint32_t count = r.U32();
  NamedTensors out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = r.U32();
    if (len > r.remaining()) throw std::runtime_error("checkpoint: truncated name");
    std::string name(len, '\0');
    r.Bytes(name.data(), len);
    const std::uint32_t rank = r.U32();
    if (rank > 8) throw std::runtime_error("checkpoint: implausible rank for " + name);
    Shape shape(rank);
    for (auto& e : shape) e = r.U32();
    const std::size_t n = NumElements(shape);
    if (n * 4 > r.remaining()) throw std::runtime_error("checkpoint: truncated payload for " + name);
    std::vector<float> data(n);
    for (auto& v : data) v = r.F32();
    out.emplace_back(std::move(name), Tensor<float>(std::move(shape), std::move(data)));
  }
  if (r.remaining() != 0) throw std::runtime_error("checkpoint: trailing bytes");
  return out;
}

std::vector<std::uint8_t> ReadFileBytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void WriteFileBytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // Write-then-rename so an interrupted run never leaves a partial file.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void SaveCheckpoint(const std::filesystem::path& path, const NamedTensors& tensors) {
  WriteFileBytes(path, SerializeCheckpoint(tensors));
}

NamedTensors LoadCheckpoint(const std::filesystem::path& path) {
  try {
    return DeserializeCheckpoint(ReadFileBytes(path));
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

}  // namespace qlab
