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
#include <cstring>
#include <span>
#include <vector>

namespace qafel {

// Model, hidden-state and delta values travel in the 4-byte float format.
using ParameterVector = std::vector<float>;

// Task-side arithmetic (gradients, losses) runs in double.
using RealVector = std::vector<double>;

inline RealVector to_real(std::span<const float> v) {
  return RealVector(v.begin(), v.end());
}

inline ParameterVector to_parameters(std::span<const double> v) {
  ParameterVector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i]);
  return out;
}

// FNV-1a over the raw float bytes; equal hashes are used as a cheap witness of
// bit-identical vectors in logs.
inline std::uint64_t fingerprint(std::span<const float> v) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (float f : v) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, sizeof bits);
    for (int b = 0; b < 4; ++b) {
      h ^= (bits >> (8 * b)) & 0xffu;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

inline double squared_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

}  // namespace qafel
