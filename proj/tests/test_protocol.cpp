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

#include <gtest/gtest.h>

#include <cmath>

#include "qafel/protocol.hpp"
#include "test_util.hpp"

namespace qafel {
namespace {

using testing::gaussian_vector;
using testing::Moments;

// F(x) = c.x on a single client with one sample: the gradient is c everywhere.
class LinearTask final : public Task {
 public:
  explicit LinearTask(RealVector c) : c_(std::move(c)) {}
  TaskKind kind() const override { return TaskKind::kQuadratic; }
  std::size_t n_clients() const override { return 1; }
  std::size_t dim() const override { return c_.size(); }
  std::size_t shard_size(std::size_t) const override { return 1; }
  double client_loss(std::size_t, std::span<const double> x) const override {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += c_[i] * x[i];
    return s;
  }
  RealVector client_gradient(std::size_t, std::span<const double>) const override { return c_; }
  RealVector sample_gradient(std::size_t, std::size_t, std::span<const double>) const override { return c_; }
  double smoothness() const override { return 0.0; }

 private:
  RealVector c_;
};

HyperParams params(double eta_g, std::size_t K, double beta = 0.0, bool scaling = false) {
  HyperParams hp;
  hp.eta_g = eta_g;
  hp.K = K;
  hp.momentum_beta = beta;
  hp.staleness_scaling = scaling;
  return hp;
}

ClientUpdate update_of(const ParameterVector& delta, std::int64_t start_version = 0) {
  ClientUpdate u;
  u.message = encode_dense(delta);
  u.start_version = start_version;
  return u;
}

TEST(ClientTrain, SingleStepConstantGradient) {
  const LinearTask task({1.0, 0.0});
  ClientState client(0, {0.0f, 0.0f});
  HyperParams hp;
  hp.eta_l = {0.1};
  Rng rng(0);
  const auto delta = client_local_train(client, task, hp, rng);
  EXPECT_EQ(delta, (ParameterVector{-0.1f, 0.0f}));
}

TEST(ClientTrain, TwoStepSchedule) {
  const auto task = make_quadratic_task(1, {QuadraticClient{1, {1.0}, {0.0}}});
  ClientState client(0, {1.0f});
  client.hidden_version = 4;
  HyperParams hp;
  hp.eta_l = {0.1, 0.2};
  Rng rng(0);
  const auto delta = client_local_train(client, *task, hp, rng);
  EXPECT_FLOAT_EQ(delta[0], -0.28f);
  EXPECT_EQ(client.start_version, 4);
  EXPECT_EQ(client.hidden_copy, ParameterVector{1.0f});
}

TEST(ClientTrain, ZeroGradient) {
  const LinearTask task({0.0, 0.0, 0.0});
  ClientState client(0, {1.0f, -2.0f, 3.0f});
  HyperParams hp;
  hp.eta_l = {0.5, 0.5, 0.5};
  Rng rng(0);
  EXPECT_EQ(client_local_train(client, task, hp, rng), ParameterVector(3, 0.0f));
}

TEST(ClientTrain, DivergenceReported) {
  const LinearTask task({1e300});
  ClientState client(0, {0.0f});
  HyperParams hp;
  hp.eta_l = {1e10};
  Rng rng(0);
  EXPECT_THROW(client_local_train(client, task, hp, rng), DivergenceError);
}

TEST(ClientCompress, Examples) {
  ClientState client(3, {0.0f, 0.0f});
  client.start_version = 7;
  const ParameterVector delta = {0.25f, -1.5f};
  Rng rng(1);
  const auto u = client_compress(client, delta, QuantizerSpec::identity(), rng);
  EXPECT_EQ(dequantize(u.message), delta);
  EXPECT_EQ(u.client_id, 3u);
  EXPECT_EQ(u.start_version, 7);
  EXPECT_DOUBLE_EQ(u.raw_norm, std::sqrt(0.0625 + 2.25));

  const auto zero = client_compress(client, ParameterVector(2, 0.0f), QuantizerSpec::qsgd_bits(4), rng);
  EXPECT_EQ(dequantize(zero.message), ParameterVector(2, 0.0f));
  EXPECT_THROW(client_compress(client, delta, QuantizerSpec::top_k(1), rng), ProtocolError);
}

TEST(ClientCompress, QsgdUnbiased) {
  ClientState client(0, ParameterVector(5, 0.0f));
  const auto delta = gaussian_vector(5, 3);
  std::vector<Moments> coords(5);
  Rng rng(2);
  for (int i = 0; i < 10000; ++i) {
    const auto y = dequantize(client_compress(client, delta, QuantizerSpec::qsgd_bits(4), rng).message);
    for (std::size_t j = 0; j < 5; ++j) coords[j].add(y[j]);
  }
  for (std::size_t j = 0; j < 5; ++j) {
    EXPECT_LE(std::fabs(coords[j].mean - delta[j]), 4.0 * coords[j].standard_error() + 1e-7);
  }
}

TEST(ServerReceive, StalenessWeights) {
  ServerState state({0.0f}, 0);
  state.step = 3;
  auto hp = params(1.0, 4, 0.0, true);
  EXPECT_DOUBLE_EQ(server_receive(state, update_of({1.0f}, 3), hp).weight, 1.0);
  const auto info = server_receive(state, update_of({1.0f}, 0), hp);
  EXPECT_EQ(info.staleness, 3);
  EXPECT_DOUBLE_EQ(info.weight, 0.5);
  EXPECT_DOUBLE_EQ(state.buffer_sum[0], 1.5);
  hp.staleness_scaling = false;
  EXPECT_DOUBLE_EQ(server_receive(state, update_of({1.0f}, 0), hp).weight, 1.0);
  EXPECT_EQ(state.buffer_count, 3u);
}

TEST(ServerReceive, Errors) {
  ServerState state({0.0f, 0.0f}, 0);
  const auto hp = params(1.0, 1);
  EXPECT_THROW(server_receive(state, update_of({1.0f}), hp), ProtocolError);
  EXPECT_THROW(server_receive(state, update_of({1.0f, 1.0f}, 1), hp), ProtocolError);
  server_receive(state, update_of({1.0f, 1.0f}), hp);
  EXPECT_THROW(server_receive(state, update_of({1.0f, 1.0f}), hp), ProtocolError);
}

TEST(ServerFlush, SingleStep) {
  ServerState state({0.0f}, 0);
  const auto hp = params(0.5, 1);
  server_receive(state, update_of({1.0f}), hp);
  Rng rng(0);
  const auto q = server_flush(state, QuantizerSpec::identity(), hp, rng);
  EXPECT_EQ(state.x, ParameterVector{0.5f});
  EXPECT_EQ(state.x_hat, ParameterVector{0.5f});
  EXPECT_EQ(dequantize(q), ParameterVector{0.5f});
  EXPECT_EQ(state.step, 1);
  EXPECT_EQ(state.buffer_count, 0u);
  EXPECT_EQ(state.buffer_sum, std::vector<double>{0.0});
}

TEST(ServerFlush, Momentum) {
  ServerState state({0.0f}, 0);
  const auto hp = params(2.0, 1, 0.3);
  Rng rng(0);
  server_receive(state, update_of({1.0f}), hp);
  server_flush(state, QuantizerSpec::identity(), hp, rng);
  const float first = state.x[0];
  EXPECT_EQ(first, 2.0f);
  server_receive(state, update_of({0.0f}), hp);
  server_flush(state, QuantizerSpec::identity(), hp, rng);
  EXPECT_FLOAT_EQ(state.x[0] - first, 0.3f * 2.0f);
  EXPECT_DOUBLE_EQ(state.momentum[0], 0.3);
}

TEST(ServerFlush, AveragesOverK) {
  ServerState state({0.0f, 0.0f}, 0);
  const auto hp = params(1.0, 2);
  Rng rng(0);
  server_receive(state, update_of({1.0f, 2.0f}), hp);
  EXPECT_THROW(server_flush(state, QuantizerSpec::identity(), hp, rng), ProtocolError);
  server_receive(state, update_of({3.0f, -2.0f}), hp);
  const auto q = server_flush(state, QuantizerSpec::identity(), hp, rng);
  EXPECT_EQ(state.x, (ParameterVector{2.0f, 0.0f}));
  EXPECT_EQ(dequantize(q), state.x);
}

TEST(ServerFlush, IdentityHiddenStateExact) {
  // Random deltas, rates and momentum: x_hat must track x bit for bit.
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng pick(seed);
    const std::size_t d = 1 + seed % 7;
    ServerState state(gaussian_vector(d, seed + 100), 0);
    const auto hp = params(std::exp(standard_normal(pick)), 1 + seed % 3, 0.9 * uniform01(pick), seed % 2 == 0);
    Rng rng(seed);
    for (int step = 0; step < 500; ++step) {
      for (std::size_t k = 0; k < hp.K; ++k) {
        auto delta = gaussian_vector(d, seed * 1000 + step * 10 + k);
        for (auto& v : delta) v *= static_cast<float>(std::exp(3.0 * standard_normal(pick)));
        server_receive(state, update_of(delta, state.step), hp);
      }
      const auto before = state.x_hat;
      const auto q = server_flush(state, QuantizerSpec::identity(), hp, rng);
      ASSERT_EQ(state.x_hat, state.x) << "seed " << seed << " step " << step;
      const auto decoded = dequantize(q);
      for (std::size_t i = 0; i < d; ++i) ASSERT_EQ(before[i] + decoded[i], state.x[i]);
    }
  }
}

TEST(ServerFlush, ResidualContraction) {
  // x fixed, hidden state refined by flushing empty-valued buffers.
  const std::size_t d = 16;
  for (const auto& spec : {QuantizerSpec::qsgd_bits(8), QuantizerSpec::qsgd_bits(6), QuantizerSpec::top_k(4)}) {
    const double delta = compression_parameter(spec, d);
    const double factor = is_unbiased(spec) ? 1.0 - delta : 1.0 - delta / 2.0;
    Moments ratio;
    for (std::uint64_t trial = 0; trial < 2000; ++trial) {
      ServerState state(gaussian_vector(d, trial), 0);
      state.x_hat = gaussian_vector(d, trial + 50000);
      const auto hp = params(1.0, 1);
      Rng rng(trial);
      double before = 0.0;
      for (std::size_t i = 0; i < d; ++i) before += std::pow(double(state.x[i]) - state.x_hat[i], 2);
      server_receive(state, update_of(ParameterVector(d, 0.0f)), hp);
      const auto x = state.x;
      server_flush(state, spec, hp, rng);
      ASSERT_EQ(state.x, x);
      double after = 0.0;
      for (std::size_t i = 0; i < d; ++i) after += std::pow(double(state.x[i]) - state.x_hat[i], 2);
      ratio.add(after / before);
    }
    EXPECT_LE(ratio.mean, factor + 3.0 * ratio.standard_error() + 1e-9) << spec.to_string();
  }
}

TEST(ApplyBroadcast, Examples) {
  ClientState client(0, {1.0f, 2.0f});
  apply_broadcast(client, encode_dense(ParameterVector{0.0f, 0.0f}), 1);
  EXPECT_EQ(client.hidden_copy, (ParameterVector{1.0f, 2.0f}));
  EXPECT_EQ(client.hidden_version, 1);
  EXPECT_THROW(apply_broadcast(client, encode_dense(ParameterVector{0.0f, 0.0f}), 3), ProtocolError);
  EXPECT_THROW(apply_broadcast(client, encode_dense(ParameterVector{0.0f, 0.0f}), 1), ProtocolError);
  EXPECT_THROW(apply_broadcast(client, encode_dense(ParameterVector{0.0f}), 2), ProtocolError);
}

// Drives a server with random updates and a lossy server quantizer.
struct Driver {
  ServerState server;
  HyperParams hp;
  QuantizerSpec q_server;
  std::vector<QuantizedMessage> history;
  std::uint64_t seed;

  Driver(std::size_t d, std::size_t c_max, QuantizerSpec q, std::uint64_t s)
      : server(ParameterVector(d, 0.0f), c_max), hp(params(0.7, 2, 0.3)), q_server(q), seed(s) {}

  void step() {
    const std::size_t d = server.x.size();
    for (std::size_t k = 0; k < hp.K; ++k) {
      server_receive(server, update_of(gaussian_vector(d, seed * 7919 + history.size() * 3 + k), server.step), hp);
    }
    Rng rng = substream(seed, "server-quantizer", static_cast<std::uint64_t>(server.step));
    history.push_back(server_flush(server, q_server, hp, rng));
  }
};

TEST(ApplyBroadcast, ReplayMatchesServer) {
  for (const auto& spec : {QuantizerSpec::qsgd_bits(2), QuantizerSpec::qsgd_bits(4), QuantizerSpec::top_k(3),
                           QuantizerSpec::rand_k(2)}) {
    Driver drv(6, 0, spec, 5);
    ClientState client(0, ParameterVector(6, 0.0f));
    for (int t = 0; t < 100; ++t) {
      drv.step();
      apply_broadcast(client, drv.history.back(), drv.server.step);
      ASSERT_EQ(client.hidden_copy, drv.server.x_hat) << spec.to_string() << " t=" << t;
    }
  }
}

TEST(NonBroadcastSync, Examples) {
  Driver drv(5, 3, QuantizerSpec::qsgd_bits(4), 9);
  for (int t = 0; t < 6; ++t) drv.step();

  const auto none = nonbroadcast_sync(drv.server, 6);
  EXPECT_TRUE(none.messages.empty());
  EXPECT_EQ(none.bits_sent, 0u);

  const auto two = nonbroadcast_sync(drv.server, 4);
  ASSERT_EQ(two.messages.size(), 2u);
  EXPECT_FALSE(two.snapshot);
  EXPECT_EQ(two.messages[0], drv.history[4]);
  EXPECT_EQ(two.messages[1], drv.history[5]);
  EXPECT_EQ(two.bits_sent, drv.history[4].bit_size + drv.history[5].bit_size);

  const auto snap = nonbroadcast_sync(drv.server, 2);
  ASSERT_EQ(snap.messages.size(), 1u);
  EXPECT_TRUE(snap.snapshot);
  EXPECT_EQ(dequantize(snap.messages[0]), drv.server.x_hat);
  EXPECT_EQ(snap.bits_sent, encoded_bits(QuantizerSpec::identity(), 5));

  EXPECT_THROW(nonbroadcast_sync(drv.server, 7), ProtocolError);
}

TEST(NonBroadcastSync, MatchesBroadcastReplica) {
  for (std::size_t c_max : {1u, 2u, 5u}) {
    Driver drv(7, c_max, QuantizerSpec::qsgd_bits(3), c_max);
    ClientState broadcast(0, ParameterVector(7, 0.0f));
    std::vector<ClientState> lagging;
    for (int n = 0; n < 4; ++n) lagging.emplace_back(n + 1, ParameterVector(7, 0.0f));
    for (int t = 0; t < 60; ++t) {
      drv.step();
      apply_broadcast(broadcast, drv.history.back(), drv.server.step);
      // Client n syncs every n + 1 steps.
      for (std::size_t n = 0; n < lagging.size(); ++n) {
        if ((t + 1) % (n + 2) != 0) continue;
        const auto bundle = nonbroadcast_sync(drv.server, lagging[n].hidden_version);
        const auto lag = drv.server.step - lagging[n].hidden_version;
        EXPECT_EQ(bundle.snapshot, lag > static_cast<std::int64_t>(c_max));
        apply_sync(lagging[n], bundle);
        ASSERT_EQ(lagging[n].hidden_copy, broadcast.hidden_copy);
        ASSERT_EQ(lagging[n].hidden_version, drv.server.step);
      }
    }
  }
}

TEST(HyperParams, Violations) {
  HyperParams hp;
  EXPECT_TRUE(hp.violations().empty());
  hp.K = 0;
  hp.eta_l = {};
  hp.eta_g = -1.0;
  hp.momentum_beta = 1.0;
  EXPECT_EQ(hp.violations().size(), 4u);
}

}  // namespace
}  // namespace qafel
