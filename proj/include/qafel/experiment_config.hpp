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
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "qafel/protocol.hpp"
#include "qafel/quantizer.hpp"
#include "qafel/task.hpp"

namespace qafel {

struct TaskSpec {
  TaskKind kind = TaskKind::kQuadratic;
  std::size_t n_clients = 4;
  std::size_t dim = 4;
  double heterogeneity = 0.5;  // quadratic
  std::size_t rows = 0;        // quadratic; 0 means 2 * dim
  PartitionConfig partition;   // logistic
  double l2_reg = 1e-2;        // logistic
  std::uint64_t seed = 0;

  bool operator==(const TaskSpec&) const = default;
};

// Client arrivals at a constant rate, half-normal training durations, and a
// cap on the number of clients training concurrently.
struct DelayModel {
  double sigma = 1.0;
  double arrival_rate = 1.0;
  std::size_t concurrency_cap = 1;

  bool operator==(const DelayModel&) const = default;
};

enum class ClientSelection { kRoundRobin, kUniform };

struct ExperimentConfig {
  std::string preset;
  TaskSpec task;
  HyperParams hp;
  QuantizerSpec q_client;
  QuantizerSpec q_server;
  DelayModel delay;
  std::int64_t T_max = 100;
  std::optional<double> target_loss;
  bool stop_at_target = true;
  std::vector<std::uint64_t> seeds = {0};
  // Non-broadcast storage; 0 derives it from the model and message sizes.
  std::size_t c_max = 0;
  ClientSelection selection = ClientSelection::kRoundRobin;

  bool operator==(const ExperimentConfig&) const = default;
};

std::shared_ptr<const Task> build_task(const TaskSpec& spec);

// Stored corrections in non-broadcast mode: the configured value, or
// floor(bits(Dense32 model) / bits(server message)).
std::size_t effective_c_max(const ExperimentConfig& config);

}  // namespace qafel
