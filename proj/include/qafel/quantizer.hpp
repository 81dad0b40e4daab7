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
#include <string>
#include <string_view>
#include <vector>

#include "qafel/random.hpp"
#include "qafel/types.hpp"

namespace qafel {

class QuantizerError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class QuantizerKind { kIdentity, kQsgd, kTopK, kRandK };

// A compression operator Q with E||Q(x) - x||^2 <= (1 - delta) ||x||^2.
//
// `param` is the QSGD level count s for kQsgd and the kept-coordinate budget
// k for the sparsifiers; it is unused for kIdentity. An n-bit QSGD spends n
// bits per coordinate on the wire (one sign bit, n - 1 magnitude bits), so
// s = 2^(n-1) - 1.
struct QuantizerSpec {
  QuantizerKind kind = QuantizerKind::kIdentity;
  std::uint32_t param = 0;

  static QuantizerSpec identity() { return {}; }
  static QuantizerSpec qsgd_bits(unsigned n_bits);
  static QuantizerSpec qsgd_levels(std::uint32_t levels);
  static QuantizerSpec top_k(std::uint32_t k) { return {QuantizerKind::kTopK, k}; }
  static QuantizerSpec rand_k(std::uint32_t k) { return {QuantizerKind::kRandK, k}; }

  // "identity", "qsgd:<n_bits>", "qsgd-levels:<s>", "topk:<k>", "randk:<k>".
  static QuantizerSpec parse(std::string_view text);
  std::string to_string() const;

  bool operator==(const QuantizerSpec&) const = default;
};

// Identity, QSGD and RandK (with its d/k rescale) are unbiased; TopK is not.
bool is_unbiased(const QuantizerSpec& spec);

enum class Encoding : std::uint8_t { kDense32 = 0, kQsgdPacked = 1, kSparse = 2 };

struct MessageHeader {
  Encoding encoding;
  std::uint32_t dim;
  std::uint32_t param;  // 0, QSGD levels, or sparse k
};

// The serialized wire form is the message: header (4-bit tag, 28-bit dim,
// 32-bit param) followed by the encoding body, big-endian bit order,
// zero-padded to a byte boundary. `bit_size` is the unpadded length.
struct QuantizedMessage {
  std::vector<std::uint8_t> payload;
  std::uint64_t bit_size = 0;

  std::uint64_t byte_size() const { return (bit_size + 7) / 8; }
  bool operator==(const QuantizedMessage&) const = default;
};

inline constexpr std::uint32_t kMaxWireDim = (1u << 28) - 1;
inline constexpr double kDeltaFloor = 1e-6;

// Draws exactly d uniforms for QSGD, k for RandK and none otherwise.
QuantizedMessage quantize(const QuantizerSpec& spec, std::span<const float> x, Rng& rng);

ParameterVector dequantize(const QuantizedMessage& msg);

// For sparse messages: the kept coordinates without the rescale factor (the
// projection the k/d contract refers to). Other encodings decode as usual.
ParameterVector dequantize_unscaled(const QuantizedMessage& msg);

// Lossless Dense32 image of a vector; used for hidden-state snapshots.
QuantizedMessage encode_dense(std::span<const float> x);

MessageHeader read_header(const QuantizedMessage& msg);

// Bit length implied by the header; equals msg.bit_size for a well-formed message.
std::uint64_t encoded_bits(const QuantizedMessage& msg);

// Exact serialized length for a spec applied to a d-dimensional vector.
std::uint64_t encoded_bits(const QuantizerSpec& spec, std::uint32_t dim);

double compression_parameter(const QuantizerSpec& spec, std::uint32_t dim);

// Throws QuantizerError if the spec cannot be applied to dimension `dim`.
void validate(const QuantizerSpec& spec, std::uint32_t dim);

}  // namespace qafel
