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
#include <deque>
#include <stdexcept>
#include <string>
#include <vector>

#include "qafel/quantizer.hpp"
#include "qafel/random.hpp"
#include "qafel/task.hpp"
#include "qafel/types.hpp"

namespace qafel {

// Violations of the server/client state machine (out-of-order broadcasts,
// flushing a partial buffer, ...). These indicate a driver bug.
class ProtocolError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Local training produced a non-finite iterate.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class SyncMode { kBroadcast, kNonBroadcast };

struct HyperParams {
  double eta_g = 1.0;
  std::vector<double> eta_l = {0.01};  // one rate per local step; size() == P
  std::size_t K = 1;
  double momentum_beta = 0.0;
  bool staleness_scaling = false;
  SyncMode mode = SyncMode::kBroadcast;

  std::size_t P() const { return eta_l.size(); }

  // Returns human-readable violations; empty when valid.
  std::vector<std::string> violations() const;

  bool operator==(const HyperParams&) const = default;
};

struct ServerState {
  ParameterVector x;
  ParameterVector x_hat;
  std::vector<double> buffer_sum;
  std::size_t buffer_count = 0;
  std::int64_t step = 0;
  std::vector<double> momentum;

  // Non-broadcast mode: the last `c_max` broadcast corrections, oldest first.
  // stored_updates[i] moves the hidden state from version
  // `stored_first_version + i` to the next one.
  std::size_t c_max = 0;
  std::deque<QuantizedMessage> stored_updates;
  std::int64_t stored_first_version = 0;

  ServerState() = default;
  ServerState(ParameterVector x0, std::size_t c_max);
};

struct ClientState {
  std::size_t client_id = 0;
  ParameterVector hidden_copy;
  std::int64_t hidden_version = 0;
  std::int64_t start_version = 0;

  ClientState() = default;
  ClientState(std::size_t id, ParameterVector x0) : client_id(id), hidden_copy(std::move(x0)) {}
};

struct ClientUpdate {
  std::size_t client_id = 0;
  std::int64_t start_version = 0;
  QuantizedMessage message;
  double raw_norm = 0.0;
};

// Runs P local SGD steps from the client's hidden copy and returns the
// descent delta y_P - y_0. Records the start version on the client.
ParameterVector client_local_train(ClientState& client, const Task& task, const HyperParams& hp,
                                   Rng& rng);

ClientUpdate client_compress(const ClientState& client, std::span<const float> delta,
                             const QuantizerSpec& q_client, Rng& rng);

struct ReceiveInfo {
  std::int64_t staleness = 0;
  double weight = 1.0;
};

ReceiveInfo server_receive(ServerState& state, const ClientUpdate& update, const HyperParams& hp);

// Averages the full buffer, applies heavy-ball momentum and the server step,
// then compresses x^{t+1} - x_hat^t with q_server and advances the hidden state
// by the decoded correction. Returns the correction for delivery.
QuantizedMessage server_flush(ServerState& state, const QuantizerSpec& q_server,
                              const HyperParams& hp, Rng& rng);

void apply_broadcast(ClientState& client, const QuantizedMessage& q, std::int64_t version);

struct SyncBundle {
  bool snapshot = false;  // true: messages[0] is a Dense32 image of x_hat
  std::vector<QuantizedMessage> messages;
  std::uint64_t bits_sent = 0;
  std::int64_t target_version = 0;
};

SyncBundle nonbroadcast_sync(const ServerState& state, std::int64_t client_version);

void apply_sync(ClientState& client, const SyncBundle& bundle);

}  // namespace qafel
