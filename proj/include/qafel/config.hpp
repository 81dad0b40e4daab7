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

#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "qafel/experiment_config.hpp"

namespace qafel {

// Thrown by parse_config with every violation found in the input.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(std::vector<std::string> violations);

  const std::vector<std::string>& violations() const { return violations_; }

 private:
  std::vector<std::string> violations_;
};

// Line-oriented `key = value` text. Blank lines and lines starting with '#'
// are ignored. `preset = <name>` loads named defaults that the remaining keys
// override, regardless of line order.
ExperimentConfig parse_config(std::string_view text);

// Semantic checks on an already-built config. Empty when valid.
std::vector<std::string> validate_config(const ExperimentConfig& config);

// Canonical text form; parse_config(serialize_config(c)) == c.
std::string serialize_config(const ExperimentConfig& config);

// Re-parses `base` with the given keys replaced.
ExperimentConfig with_overrides(const ExperimentConfig& base,
                                const std::vector<std::pair<std::string, std::string>>& overrides);

// Names accepted by `preset = ...`.
std::vector<std::string> preset_names();

// Shortest decimal text that parses back to the same double.
std::string format_double(double value);

}  // namespace qafel
