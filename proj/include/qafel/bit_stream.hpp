// Copyright 2026 The qafel-sim Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// =============================================================================

#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace qafel {

// MSB-first bit packing; the final byte is zero-padded.
class BitWriter {
 public:
  void write(std::uint64_t value, unsigned width) {
    for (unsigned i = width; i-- > 0;) {
      if (bit_count_ % 8 == 0) bytes_.push_back(0);
      if ((value >> i) & 1u) bytes_.back() |= static_cast<std::uint8_t>(0x80u >> (bit_count_ % 8));
      ++bit_count_;
    }
  }

  std::uint64_t bit_count() const { return bit_count_; }
  std::vector<std::uint8_t> take() && { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
  std::uint64_t bit_count_ = 0;
};

class BitReader {
 public:
  BitReader(std::span<const std::uint8_t> bytes, std::uint64_t bit_limit)
      : bytes_(bytes), limit_(bit_limit) {}

  std::uint64_t read(unsigned width) {
    if (pos_ + width > limit_) throw std::out_of_range("bit stream exhausted");
    std::uint64_t v = 0;
    for (unsigned i = 0; i < width; ++i, ++pos_) {
      v = (v << 1) | ((bytes_[pos_ / 8] >> (7 - pos_ % 8)) & 1u);
    }
    return v;
  }

  std::uint64_t position() const { return pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::uint64_t limit_;
  std::uint64_t pos_ = 0;
};

}  // namespace qafel
