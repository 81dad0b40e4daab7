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

#include "qafel/quantizer.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <numeric>

#include "qafel/bit_stream.hpp"

namespace qafel {
namespace {

constexpr unsigned kHeaderBits = 64;

std::uint32_t float_bits(float f) {
  std::uint32_t u;
  std::memcpy(&u, &f, sizeof u);
  return u;
}

float bits_float(std::uint32_t u) {
  float f;
  std::memcpy(&f, &u, sizeof f);
  return f;
}

unsigned magnitude_width(std::uint32_t levels) { return std::bit_width(levels); }

void write_header(BitWriter& w, Encoding enc, std::uint32_t dim, std::uint32_t param) {
  w.write(static_cast<std::uint8_t>(enc), 4);
  w.write(dim, 28);
  w.write(param, 32);
}

QuantizedMessage finish(BitWriter&& w) {
  QuantizedMessage m;
  m.bit_size = w.bit_count();
  m.payload = std::move(w).take();
  return m;
}

std::uint64_t body_bits(Encoding enc, std::uint32_t dim, std::uint32_t param) {
  switch (enc) {
    case Encoding::kDense32:
      return 32ull * dim;
    case Encoding::kQsgdPacked:
      return 32ull + std::uint64_t{dim} * (1 + magnitude_width(param));
    case Encoding::kSparse:
      return 32ull + 64ull * param;
  }
  throw QuantizerError("unknown encoding tag");
}

void check_finite(std::span<const float> x) {
  for (float v : x) {
    if (!std::isfinite(v)) throw QuantizerError("non-finite input to quantizer");
  }
}

QuantizedMessage encode_qsgd(std::uint32_t levels, std::span<const float> x, Rng& rng) {
  const auto d = static_cast<std::uint32_t>(x.size());
  double sq = 0.0;
  for (float v : x) sq += static_cast<double>(v) * v;
  const double norm = std::sqrt(sq);
  float stored = static_cast<float>(norm);
  if (static_cast<double>(stored) < norm) stored = std::nextafter(stored, INFINITY);
  if (!std::isfinite(stored)) throw QuantizerError("vector norm overflows float32");

  BitWriter w;
  write_header(w, Encoding::kQsgdPacked, d, levels);
  w.write(float_bits(stored), 32);
  const unsigned width = magnitude_width(levels);
  for (std::uint32_t i = 0; i < d; ++i) {
    const double u = uniform01(rng);
    std::uint64_t level = 0;
    if (stored > 0.0f) {
      const double target = std::fabs(static_cast<double>(x[i])) * levels / stored;
      const double lower = std::floor(target);
      level = static_cast<std::uint64_t>(lower) + (u < target - lower ? 1 : 0);
      level = std::min<std::uint64_t>(level, levels);
    }
    w.write(std::signbit(x[i]) && level != 0 ? 1 : 0, 1);
    w.write(level, width);
  }
  return finish(std::move(w));
}

QuantizedMessage encode_sparse(std::span<const float> x, std::vector<std::uint32_t> kept,
                               float rescale) {
  std::sort(kept.begin(), kept.end());
  BitWriter w;
  write_header(w, Encoding::kSparse, static_cast<std::uint32_t>(x.size()),
               static_cast<std::uint32_t>(kept.size()));
  w.write(float_bits(rescale), 32);
  for (std::uint32_t idx : kept) {
    w.write(idx, 32);
    w.write(float_bits(x[idx]), 32);
  }
  return finish(std::move(w));
}

std::uint32_t parse_uint(std::string_view s, std::string_view what) {
  std::uint32_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw QuantizerError("invalid " + std::string(what) + " '" + std::string(s) + "'");
  }
  return v;
}

struct Decoded {
  MessageHeader header;
  float scale = 1.0f;  // QSGD norm or sparse rescale
  std::vector<std::uint32_t> indices;
  std::vector<float> values;  // dense values, sparse values, or signed QSGD levels
};

Decoded decode(const QuantizedMessage& msg) {
  if (msg.payload.size() != msg.byte_size()) {
    throw QuantizerError("corrupted message: payload length does not match bit_size");
  }
  if (msg.bit_size < kHeaderBits) throw QuantizerError("corrupted message: truncated header");
  BitReader r(msg.payload, msg.bit_size);
  Decoded out;
  const auto tag = r.read(4);
  if (tag > 2) throw QuantizerError("corrupted message: unknown encoding tag");
  out.header.encoding = static_cast<Encoding>(tag);
  out.header.dim = static_cast<std::uint32_t>(r.read(28));
  out.header.param = static_cast<std::uint32_t>(r.read(32));
  const auto& h = out.header;
  if (h.encoding == Encoding::kQsgdPacked && h.param == 0) {
    throw QuantizerError("corrupted message: QSGD with zero levels");
  }
  if (h.encoding == Encoding::kSparse && h.param > h.dim) {
    throw QuantizerError("corrupted message: sparse k exceeds dim");
  }
  if (msg.bit_size != kHeaderBits + body_bits(h.encoding, h.dim, h.param)) {
    throw QuantizerError("corrupted message: bit_size inconsistent with header");
  }
  switch (h.encoding) {
    case Encoding::kDense32:
      out.values.resize(h.dim);
      for (auto& v : out.values) v = bits_float(static_cast<std::uint32_t>(r.read(32)));
      break;
    case Encoding::kQsgdPacked: {
      out.scale = bits_float(static_cast<std::uint32_t>(r.read(32)));
      const unsigned width = magnitude_width(h.param);
      out.values.resize(h.dim);
      for (auto& v : out.values) {
        const bool negative = r.read(1) != 0;
        const auto level = r.read(width);
        if (level > h.param) throw QuantizerError("corrupted message: QSGD level exceeds s");
        v = negative ? -static_cast<float>(level) : static_cast<float>(level);
      }
      break;
    }
    case Encoding::kSparse: {
      out.scale = bits_float(static_cast<std::uint32_t>(r.read(32)));
      out.indices.resize(h.param);
      out.values.resize(h.param);
      for (std::uint32_t j = 0; j < h.param; ++j) {
        out.indices[j] = static_cast<std::uint32_t>(r.read(32));
        out.values[j] = bits_float(static_cast<std::uint32_t>(r.read(32)));
        if (out.indices[j] >= h.dim || (j > 0 && out.indices[j] <= out.indices[j - 1])) {
          throw QuantizerError("corrupted message: sparse indices out of order or range");
        }
      }
      break;
    }
  }
  // Padding bits must be zero.
  const auto pad = msg.payload.size() * 8 - msg.bit_size;
  if (pad > 0 && (msg.payload.back() & ((1u << pad) - 1u)) != 0) {
    throw QuantizerError("corrupted message: non-zero padding");
  }
  return out;
}

ParameterVector reconstruct(const Decoded& dec, bool apply_rescale) {
  const auto& h = dec.header;
  switch (h.encoding) {
    case Encoding::kDense32:
      return dec.values;
    case Encoding::kQsgdPacked: {
      ParameterVector out(h.dim);
      const double step = static_cast<double>(dec.scale) / h.param;
      for (std::uint32_t i = 0; i < h.dim; ++i) {
        out[i] = static_cast<float>(step * dec.values[i]);
      }
      return out;
    }
    case Encoding::kSparse: {
      ParameterVector out(h.dim, 0.0f);
      const double scale = apply_rescale ? static_cast<double>(dec.scale) : 1.0;
      for (std::size_t j = 0; j < dec.indices.size(); ++j) {
        out[dec.indices[j]] = static_cast<float>(scale * dec.values[j]);
      }
      return out;
    }
  }
  return {};
}

}  // namespace

QuantizerSpec QuantizerSpec::qsgd_bits(unsigned n_bits) {
  if (n_bits < 2 || n_bits > 32) {
    throw QuantizerError("QSGD bit width must be in [2, 32], got " + std::to_string(n_bits));
  }
  return {QuantizerKind::kQsgd, static_cast<std::uint32_t>((1ull << (n_bits - 1)) - 1)};
}

QuantizerSpec QuantizerSpec::qsgd_levels(std::uint32_t levels) {
  if (levels == 0 || levels > 0x7fffffffu) throw QuantizerError("QSGD levels must be in [1, 2^31 - 1]");
  return {QuantizerKind::kQsgd, levels};
}

QuantizerSpec QuantizerSpec::parse(std::string_view text) {
  if (text == "identity") return identity();
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) {
    throw QuantizerError("unknown quantizer '" + std::string(text) + "'");
  }
  const auto name = text.substr(0, colon);
  const auto arg = text.substr(colon + 1);
  if (name == "qsgd") return qsgd_bits(parse_uint(arg, "QSGD bit width"));
  if (name == "qsgd-levels") return qsgd_levels(parse_uint(arg, "QSGD level count"));
  if (name == "topk" || name == "randk") {
    const auto k = parse_uint(arg, "sparsifier budget");
    if (k == 0) throw QuantizerError("sparsifier budget k must be >= 1");
    return name == "topk" ? top_k(k) : rand_k(k);
  }
  throw QuantizerError("unknown quantizer '" + std::string(text) + "'");
}

std::string QuantizerSpec::to_string() const {
  switch (kind) {
    case QuantizerKind::kIdentity:
      return "identity";
    case QuantizerKind::kQsgd:
      if (std::has_single_bit(param + 1ull)) {
        return "qsgd:" + std::to_string(std::bit_width(param) + 1);
      }
      return "qsgd-levels:" + std::to_string(param);
    case QuantizerKind::kTopK:
      return "topk:" + std::to_string(param);
    case QuantizerKind::kRandK:
      return "randk:" + std::to_string(param);
  }
  return "?";
}

bool is_unbiased(const QuantizerSpec& spec) { return spec.kind != QuantizerKind::kTopK; }

void validate(const QuantizerSpec& spec, std::uint32_t dim) {
  if (dim == 0 || dim > kMaxWireDim) throw QuantizerError("dimension out of wire range");
  switch (spec.kind) {
    case QuantizerKind::kIdentity:
      return;
    case QuantizerKind::kQsgd:
      if (spec.param == 0 || spec.param > 0x7fffffffu) throw QuantizerError("QSGD levels out of range");
      return;
    case QuantizerKind::kTopK:
    case QuantizerKind::kRandK:
      if (spec.param == 0) throw QuantizerError("sparsifier budget k must be >= 1");
      if (spec.param > dim) {
        throw QuantizerError("sparsifier budget k=" + std::to_string(spec.param) +
                             " exceeds dimension " + std::to_string(dim));
      }
      return;
  }
}

QuantizedMessage encode_dense(std::span<const float> x) {
  BitWriter w;
  write_header(w, Encoding::kDense32, static_cast<std::uint32_t>(x.size()), 0);
  for (float v : x) w.write(float_bits(v), 32);
  return finish(std::move(w));
}

QuantizedMessage quantize(const QuantizerSpec& spec, std::span<const float> x, Rng& rng) {
  validate(spec, static_cast<std::uint32_t>(x.size()));
  check_finite(x);
  const auto d = static_cast<std::uint32_t>(x.size());
  switch (spec.kind) {
    case QuantizerKind::kIdentity:
      return encode_dense(x);
    case QuantizerKind::kQsgd:
      return encode_qsgd(spec.param, x, rng);
    case QuantizerKind::kTopK: {
      std::vector<std::uint32_t> order(d);
      std::iota(order.begin(), order.end(), 0u);
      // Largest magnitude first; ties go to the lower index.
      std::partial_sort(order.begin(), order.begin() + spec.param, order.end(),
                        [&](std::uint32_t a, std::uint32_t b) {
                          const float ma = std::fabs(x[a]), mb = std::fabs(x[b]);
                          return ma != mb ? ma > mb : a < b;
                        });
      order.resize(spec.param);
      return encode_sparse(x, std::move(order), 1.0f);
    }
    case QuantizerKind::kRandK: {
      std::vector<std::uint32_t> pool(d);
      std::iota(pool.begin(), pool.end(), 0u);
      for (std::uint32_t i = 0; i < spec.param; ++i) {
        const auto j = i + static_cast<std::uint32_t>(uniform_index(rng, d - i));
        std::swap(pool[i], pool[j]);
      }
      pool.resize(spec.param);
      const float rescale = static_cast<float>(static_cast<double>(d) / spec.param);
      return encode_sparse(x, std::move(pool), rescale);
    }
  }
  throw QuantizerError("unknown quantizer kind");
}

ParameterVector dequantize(const QuantizedMessage& msg) { return reconstruct(decode(msg), true); }

ParameterVector dequantize_unscaled(const QuantizedMessage& msg) {
  return reconstruct(decode(msg), false);
}

MessageHeader read_header(const QuantizedMessage& msg) {
  if (msg.bit_size < kHeaderBits || msg.payload.size() < 8) {
    throw QuantizerError("corrupted message: truncated header");
  }
  BitReader r(msg.payload, kHeaderBits);
  MessageHeader h;
  const auto tag = r.read(4);
  if (tag > 2) throw QuantizerError("corrupted message: unknown encoding tag");
  h.encoding = static_cast<Encoding>(tag);
  h.dim = static_cast<std::uint32_t>(r.read(28));
  h.param = static_cast<std::uint32_t>(r.read(32));
  return h;
}

std::uint64_t encoded_bits(const QuantizedMessage& msg) {
  const auto h = read_header(msg);
  return kHeaderBits + body_bits(h.encoding, h.dim, h.param);
}

std::uint64_t encoded_bits(const QuantizerSpec& spec, std::uint32_t dim) {
  validate(spec, dim);
  switch (spec.kind) {
    case QuantizerKind::kIdentity:
      return kHeaderBits + body_bits(Encoding::kDense32, dim, 0);
    case QuantizerKind::kQsgd:
      return kHeaderBits + body_bits(Encoding::kQsgdPacked, dim, spec.param);
    case QuantizerKind::kTopK:
    case QuantizerKind::kRandK:
      return kHeaderBits + body_bits(Encoding::kSparse, dim, spec.param);
  }
  return 0;
}

double compression_parameter(const QuantizerSpec& spec, std::uint32_t dim) {
  if (dim == 0) throw QuantizerError("dimension must be >= 1");
  switch (spec.kind) {
    case QuantizerKind::kIdentity:
      return 1.0;
    case QuantizerKind::kTopK:
    case QuantizerKind::kRandK:
      validate(spec, dim);
      return static_cast<double>(spec.param) / dim;
    case QuantizerKind::kQsgd: {
      const double s = spec.param;
      const double d = dim;
      const double delta = 1.0 - std::min(2.0 * d / (s * s), std::sqrt(2.0 * d) / s);
      return std::max(delta, kDeltaFloor);
    }
  }
  return kDeltaFloor;
}

}  // namespace qafel
