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

#include "qafel/protocol.hpp"

#include <cmath>
#include <string>

namespace qafel {

std::vector<std::string> HyperParams::violations() const {
  std::vector<std::string> out;
  if (!(eta_g > 0.0)) out.push_back("hp.eta_g must be > 0");
  if (eta_l.empty()) out.push_back("hp.eta_l needs at least one local step (P >= 1)");
  for (double e : eta_l) {
    if (!(e > 0.0)) {
      out.push_back("hp.eta_l entries must be > 0");
      break;
    }
  }
  if (K < 1) out.push_back("hp.K must be >= 1");
  if (!(momentum_beta >= 0.0 && momentum_beta < 1.0)) out.push_back("hp.beta must be in [0, 1)");
  return out;
}

ServerState::ServerState(ParameterVector x0, std::size_t c_max_updates)
    : x(x0),
      x_hat(std::move(x0)),
      buffer_sum(x.size(), 0.0),
      momentum(x.size(), 0.0),
      c_max(c_max_updates) {}

ParameterVector client_local_train(ClientState& client, const Task& task, const HyperParams& hp,
                                   Rng& rng) {
  if (hp.P() == 0) throw ProtocolError("client training needs P >= 1");
  if (client.hidden_copy.size() != task.dim()) throw ProtocolError("client hidden state has wrong dim");
  client.start_version = client.hidden_version;
  const RealVector y0 = to_real(client.hidden_copy);
  RealVector y = y0;
  for (double eta : hp.eta_l) {
    const auto g = stochastic_gradient(task, client.client_id, y, rng);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] -= eta * g[i];
  }
  ParameterVector delta(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    delta[i] = static_cast<float>(y[i] - y0[i]);
    if (!std::isfinite(delta[i])) {
      throw DivergenceError("non-finite local update on client " + std::to_string(client.client_id) +
                            " at coordinate " + std::to_string(i) + " (start version " +
                            std::to_string(client.start_version) + ")");
    }
  }
  return delta;
}

ClientUpdate client_compress(const ClientState& client, std::span<const float> delta,
                             const QuantizerSpec& q_client, Rng& rng) {
  if (!is_unbiased(q_client)) throw ProtocolError("client quantizer must be unbiased");
  ClientUpdate u;
  u.client_id = client.client_id;
  u.start_version = client.start_version;
  double sq = 0.0;
  for (float v : delta) sq += static_cast<double>(v) * v;
  u.raw_norm = std::sqrt(sq);
  u.message = quantize(q_client, delta, rng);
  return u;
}

ReceiveInfo server_receive(ServerState& state, const ClientUpdate& update, const HyperParams& hp) {
  if (state.buffer_count >= hp.K) throw ProtocolError("server buffer already holds K updates");
  const auto delta = dequantize(update.message);
  if (delta.size() != state.x.size()) throw ProtocolError("client update has wrong dimension");
  ReceiveInfo info;
  info.staleness = state.step - update.start_version;
  if (info.staleness < 0) throw ProtocolError("client update claims a future model version");
  info.weight = hp.staleness_scaling ? 1.0 / std::sqrt(1.0 + static_cast<double>(info.staleness)) : 1.0;
  for (std::size_t i = 0; i < delta.size(); ++i) {
    state.buffer_sum[i] += info.weight * static_cast<double>(delta[i]);
  }
  ++state.buffer_count;
  return info;
}

QuantizedMessage server_flush(ServerState& state, const QuantizerSpec& q_server,
                              const HyperParams& hp, Rng& rng) {
  if (state.buffer_count != hp.K) {
    throw ProtocolError("server flush with " + std::to_string(state.buffer_count) + " of " +
                        std::to_string(hp.K) + " buffered updates");
  }
  const std::size_t d = state.x.size();
  const double inv_k = 1.0 / static_cast<double>(hp.K);
  ParameterVector correction(d);
  for (std::size_t i = 0; i < d; ++i) {
    const double avg = state.buffer_sum[i] * inv_k;
    state.momentum[i] = hp.momentum_beta * state.momentum[i] + avg;
    // Float step, then float add: x_hat + fl(x_new - x_hat) then reproduces
    // x_new exactly under a lossless server quantizer.
    const auto step = static_cast<float>(hp.eta_g * state.momentum[i]);
    state.x[i] = state.x[i] + step;
    correction[i] = state.x[i] - state.x_hat[i];
    if (!std::isfinite(state.x[i])) {
      throw DivergenceError("server model became non-finite at step " + std::to_string(state.step + 1) +
                            ", coordinate " + std::to_string(i));
    }
  }
  QuantizedMessage q = quantize(q_server, correction, rng);
  const auto decoded = dequantize(q);
  for (std::size_t i = 0; i < d; ++i) state.x_hat[i] += decoded[i];

  std::fill(state.buffer_sum.begin(), state.buffer_sum.end(), 0.0);
  state.buffer_count = 0;
  if (state.c_max > 0) {
    if (state.stored_updates.empty()) state.stored_first_version = state.step;
    state.stored_updates.push_back(q);
    while (state.stored_updates.size() > state.c_max) {
      state.stored_updates.pop_front();
      ++state.stored_first_version;
    }
  }
  ++state.step;
  return q;
}

void apply_broadcast(ClientState& client, const QuantizedMessage& q, std::int64_t version) {
  if (version != client.hidden_version + 1) {
    throw ProtocolError("out-of-order broadcast: client at version " +
                        std::to_string(client.hidden_version) + " received version " +
                        std::to_string(version));
  }
  const auto decoded = dequantize(q);
  if (decoded.size() != client.hidden_copy.size()) throw ProtocolError("broadcast has wrong dimension");
  for (std::size_t i = 0; i < decoded.size(); ++i) client.hidden_copy[i] += decoded[i];
  client.hidden_version = version;
}

SyncBundle nonbroadcast_sync(const ServerState& state, std::int64_t client_version) {
  if (client_version > state.step) {
    throw ProtocolError("client version " + std::to_string(client_version) +
                        " is newer than server step " + std::to_string(state.step));
  }
  if (client_version < 0) throw ProtocolError("negative client version");
  SyncBundle bundle;
  bundle.target_version = state.step;
  const auto lag = state.step - client_version;
  if (lag == 0) return bundle;
  const bool stored = static_cast<std::size_t>(lag) <= state.c_max &&
                      client_version >= state.stored_first_version &&
                      !state.stored_updates.empty();
  if (stored) {
    const auto first = static_cast<std::size_t>(client_version - state.stored_first_version);
    for (std::size_t i = first; i < state.stored_updates.size(); ++i) {
      bundle.messages.push_back(state.stored_updates[i]);
      bundle.bits_sent += state.stored_updates[i].bit_size;
    }
  } else {
    bundle.snapshot = true;
    bundle.messages.push_back(encode_dense(state.x_hat));
    bundle.bits_sent = bundle.messages.back().bit_size;
  }
  return bundle;
}

void apply_sync(ClientState& client, const SyncBundle& bundle) {
  if (bundle.snapshot) {
    if (bundle.messages.size() != 1) throw ProtocolError("snapshot sync must carry one message");
    auto image = dequantize(bundle.messages.front());
    if (image.size() != client.hidden_copy.size()) throw ProtocolError("snapshot has wrong dimension");
    client.hidden_copy = std::move(image);
    client.hidden_version = bundle.target_version;
    return;
  }
  const auto first = bundle.target_version - static_cast<std::int64_t>(bundle.messages.size());
  if (first != client.hidden_version) throw ProtocolError("sync bundle does not start at client version");
  for (std::size_t i = 0; i < bundle.messages.size(); ++i) {
    apply_broadcast(client, bundle.messages[i], first + 1 + static_cast<std::int64_t>(i));
  }
}

}  // namespace qafel
