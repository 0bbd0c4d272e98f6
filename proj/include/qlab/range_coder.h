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

#ifndef QLAB_RANGE_CODER_H_
#define QLAB_RANGE_CODER_H_

#include <cstdint>
#include <span>
#include <vector>

#include "qlab/entropy_model.h"

namespace qlab {

// 32-bit carry-less range coder (Subbotin) over 16-bit frequency tables.
class RangeEncoder {
 public:
  void Encode(std::uint32_t cum, std::uint32_t freq);  // total is kCdfTotal
  // Appends the final state; an encoder that coded nothing emits nothing.
  std::vector<std::uint8_t> Finish();

 private:
  std::uint32_t low_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  bool used_ = false;
  std::vector<std::uint8_t> out_;
};

class RangeDecoder {
 public:
  explicit RangeDecoder(std::span<const std::uint8_t> data);
  // Cumulative target in [0, kCdfTotal); call Consume with the symbol's
  // interval afterwards.
  std::uint32_t Target();
  void Consume(std::uint32_t cum, std::uint32_t freq);

 private:
  std::uint8_t NextByte();
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
  std::uint32_t low_ = 0;
  std::uint32_t code_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
};

// Integer latents laid out [C,H,W].
struct SymbolTensor {
  std::uint32_t channels = 0;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::vector<std::int32_t> values;
};

inline constexpr char kBitstreamMagic[4] = {'Q', 'L', 'B', '1'};

// "QLB1" | image H u32 | image W u32 | latent H u32 | latent W u32 |
// channels u32 | CdfTable per channel | payload length u32 | payload.
struct Bitstream {
  std::uint32_t image_height = 0;
  std::uint32_t image_width = 0;
  std::uint32_t latent_height = 0;
  std::uint32_t latent_width = 0;
  std::uint32_t channels = 0;
  std::vector<CdfTable> tables;
  std::vector<std::uint8_t> payload;

  std::vector<std::uint8_t> Serialize() const;
  static Bitstream Parse(std::span<const std::uint8_t> bytes);

  std::size_t HeaderBytes() const;
  std::size_t TotalBits() const { return 8 * (HeaderBytes() + payload.size()); }
  std::size_t PayloadBits() const { return 8 * payload.size(); }
};

// Values outside a channel's [-L, L] go through the escape symbol followed
// by a flat 16-bit two's-complement value.
Bitstream EncodeSymbols(const SymbolTensor& symbols, const std::vector<CdfTable>& tables,
                        std::uint32_t image_height = 0, std::uint32_t image_width = 0);
SymbolTensor DecodeSymbols(const Bitstream& stream);

// Sum of -log2(freq / 2^16) over the symbols, including escape costs.
double TableCodeLength(const SymbolTensor& symbols, const std::vector<CdfTable>& tables);

}  // namespace qlab

#endif  // QLAB_RANGE_CODER_H_
