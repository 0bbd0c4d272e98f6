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
#include <cstring>
#include <stdexcept>
#include <string>

#include "qlab/checkpoint.h"

namespace qlab {

namespace {

constexpr std::uint32_t kTop = 1u << 24;
constexpr std::uint32_t kBot = 1u << 16;
constexpr std::int32_t kRawMin = -32768;
constexpr std::int32_t kRawMax = 32767;

}  // namespace

void RangeEncoder::Encode(std::uint32_t cum, std::uint32_t freq) {
  used_ = true;
  range_ >>= kCdfPrecisionBits;
  low_ += cum * range_;
  range_ *= freq;
  while ((low_ ^ (low_ + range_)) < kTop ||
         (range_ < kBot && ((range_ = (0u - low_) & (kBot - 1)), true))) {
    out_.push_back(static_cast<std::uint8_t>(low_ >> 24));
    low_ <<= 8;
    range_ <<= 8;
  }
}

std::vector<std::uint8_t> RangeEncoder::Finish() {
  if (used_) {
    for (int i = 0; i < 4; ++i) {
      out_.push_back(static_cast<std::uint8_t>(low_ >> 24));
      low_ <<= 8;
    }
  }
  return std::move(out_);
}

RangeDecoder::RangeDecoder(std::span<const std::uint8_t> data) : data_(data) {
  for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | NextByte();
}

std::uint8_t RangeDecoder::NextByte() {
  if (pos_ >= data_.size()) throw std::runtime_error("bitstream: truncated payload");
  return data_[pos_++];
}

std::uint32_t RangeDecoder::Target() {
  range_ >>= kCdfPrecisionBits;
  const std::uint32_t t = (code_ - low_) / range_;
  if (t >= kCdfTotal) throw std::runtime_error("bitstream: corrupt payload");
  return t;
}

void RangeDecoder::Consume(std::uint32_t cum, std::uint32_t freq) {
  low_ += cum * range_;
  range_ *= freq;
  while ((low_ ^ (low_ + range_)) < kTop ||
         (range_ < kBot && ((range_ = (0u - low_) & (kBot - 1)), true))) {
    code_ = (code_ << 8) | NextByte();
    low_ <<= 8;
    range_ <<= 8;
  }
}

std::size_t Bitstream::HeaderBytes() const {
  std::size_t n = 4 + 5 * 4 + 4;
  for (const auto& t : tables) n += 2 + 2 * (t.cdf.size() - 1);
  return n;
}

std::vector<std::uint8_t> Bitstream::Serialize() const {
  if (tables.size() != channels) {
    throw std::invalid_argument("bitstream: table count does not match channel count");
  }
  std::vector<std::uint8_t> out(std::begin(kBitstreamMagic), std::end(kBitstreamMagic));
  for (std::uint32_t v : {image_height, image_width, latent_height, latent_width, channels}) {
    le::PutU32(out, v);
  }
  for (const auto& t : tables) SerializeCdfTable(t, out);
  le::PutU32(out, static_cast<std::uint32_t>(payload.size()));
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

Bitstream Bitstream::Parse(std::span<const std::uint8_t> bytes) {
  le::Reader r(bytes.data(), bytes.size());
  char magic[4];
  try {
    r.Bytes(magic, 4);
  } catch (const std::runtime_error&) {
    throw std::runtime_error("bitstream: too short for header");
  }
  if (std::memcmp(magic, kBitstreamMagic, 4) != 0) {
    throw std::runtime_error("bitstream: bad magic");
  }
  Bitstream s;
  try {
    s.image_height = r.U32();
    s.image_width = r.U32();
    s.latent_height = r.U32();
    s.latent_width = r.U32();
    s.channels = r.U32();
    if (s.channels > 65536) throw std::runtime_error("implausible channel count");
    for (std::uint32_t c = 0; c < s.channels; ++c) s.tables.push_back(ParseCdfTable(r));
    const std::uint32_t len = r.U32();
    if (len > r.remaining()) {
      throw std::runtime_error("truncated payload (" + std::to_string(r.remaining()) + " of " +
                               std::to_string(len) + " bytes)");
    }
    s.payload.resize(len);
    r.Bytes(s.payload.data(), len);
  } catch (const std::runtime_error& e) {
    const std::string what = e.what();
    throw std::runtime_error(what.rfind("bitstream", 0) == 0 ? what : "bitstream: " + what);
  }
  if (r.remaining() != 0) throw std::runtime_error("bitstream: trailing bytes");
  return s;
}

Bitstream EncodeSymbols(const SymbolTensor& symbols, const std::vector<CdfTable>& tables,
                        std::uint32_t image_height, std::uint32_t image_width) {
  if (tables.size() != symbols.channels) {
    throw std::invalid_argument("encode: " + std::to_string(tables.size()) + " tables for " +
                                std::to_string(symbols.channels) + " channels");
  }
  const std::size_t plane = static_cast<std::size_t>(symbols.height) * symbols.width;
  if (symbols.values.size() != plane * symbols.channels) {
    throw std::invalid_argument("encode: symbol count does not match dimensions");
  }
  RangeEncoder enc;
  for (std::size_t i = 0; i < symbols.values.size(); ++i) {
    const CdfTable& t = tables[plane ? i / plane : 0];
    const std::int32_t v = symbols.values[i];
    const std::size_t idx = t.IndexOf(v);
    enc.Encode(t.cdf[idx], t.Frequency(idx));
    if (idx == t.escape_index()) {
      if (v < kRawMin || v > kRawMax) {
        throw std::invalid_argument("encode: value " + std::to_string(v) +
                                    " exceeds the 16-bit escape range");
      }
      enc.Encode(static_cast<std::uint16_t>(v), 1);
    }
  }
  Bitstream s;
  s.image_height = image_height;
  s.image_width = image_width;
  s.latent_height = symbols.height;
  s.latent_width = symbols.width;
  s.channels = symbols.channels;
  s.tables = tables;
  s.payload = enc.Finish();
  return s;
}

SymbolTensor DecodeSymbols(const Bitstream& stream) {
  if (stream.tables.size() != stream.channels) {
    throw std::runtime_error("bitstream: table count does not match channel count");
  }
  SymbolTensor out;
  out.channels = stream.channels;
  out.height = stream.latent_height;
  out.width = stream.latent_width;
  const std::size_t plane = static_cast<std::size_t>(out.height) * out.width;
  const std::size_t count = plane * out.channels;
  out.values.resize(count);
  if (count == 0) return out;
  RangeDecoder dec(stream.payload);
  for (std::size_t i = 0; i < count; ++i) {
    const CdfTable& t = stream.tables[i / plane];
    const std::size_t idx = t.Lookup(dec.Target());
    dec.Consume(t.cdf[idx], t.Frequency(idx));
    if (idx == t.escape_index()) {
      const std::uint32_t raw = dec.Target();
      dec.Consume(raw, 1);
      out.values[i] = static_cast<std::int16_t>(static_cast<std::uint16_t>(raw));
    } else {
      out.values[i] = static_cast<std::int32_t>(idx) - t.support;
    }
  }
  return out;
}

double TableCodeLength(const SymbolTensor& symbols, const std::vector<CdfTable>& tables) {
  const std::size_t plane = static_cast<std::size_t>(symbols.height) * symbols.width;
  double bits = 0;
  for (std::size_t i = 0; i < symbols.values.size(); ++i) {
    const CdfTable& t = tables[i / plane];
    const std::size_t idx = t.IndexOf(symbols.values[i]);
    bits -= std::log2(static_cast<double>(t.Frequency(idx)) / kCdfTotal);
    if (idx == t.escape_index()) bits += kCdfPrecisionBits;
  }
  return bits;
}

}  // namespace qlab
