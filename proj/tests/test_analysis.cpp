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
#include <random>

#include "qafel/analysis.hpp"
#include "qafel/config.hpp"
#include "qafel/simulator.hpp"

namespace qafel {
namespace {

TheoryParams base_params() {
  TheoryParams p;
  p.L = 2.0;
  p.sigma2 = 0.5;
  p.G = 0.25;
  p.delta_c = 0.8;
  p.delta_s = 0.6;
  p.K = 4;
  p.T = 50;
  p.tau_max = 3.0;
  p.eta_g = 0.4;
  p.eta_l = {0.01, 0.02};
  p.F_star_gap = 1.5;
  return p;
}

// Draws parameters that satisfy the sufficient rule by construction.
TheoryParams draw_sufficient(std::mt19937_64& gen) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  TheoryParams p;
  p.L = 0.1 + 10.0 * u(gen);
  p.eta_g = (0.01 + 0.99 * u(gen)) / p.L;
  p.K = 1 + gen() % 20;
  p.delta_c = 0.01 + 0.99 * u(gen);
  p.delta_s = 0.01 + 0.99 * u(gen);
  p.server_quantizer_biased = gen() % 2 == 0;
  const std::size_t P = 1 + gen() % 5;
  const double K = static_cast<double>(p.K);
  const double Pd = static_cast<double>(P);
  const double server = p.server_quantizer_biased ? p.delta_s * p.delta_s / (12.0 * Pd)
                                                  : p.delta_s / (3.0 * Pd);
  const double limit = std::min(K / (2.0 * Pd * (K + 1.0 - p.delta_c)), server);
  p.eta_l.clear();
  for (std::size_t i = 0; i < P; ++i) p.eta_l.push_back(limit * u(gen));
  p.eta_l[gen() % P] = limit;
  return p;
}

TEST(AlphaBeta, SumsRatesAndSquares) {
  const std::vector<double> rates = {0.5, 0.25, 0.125};
  const auto s = alpha_beta(rates);
  EXPECT_DOUBLE_EQ(s.alpha, 0.875);
  EXPECT_DOUBLE_EQ(s.beta, 0.25 + 0.0625 + 0.015625);
  EXPECT_THROW(alpha_beta(std::vector<double>{}), std::invalid_argument);
}

TEST(Phi, UnbiasedExamples) {
  EXPECT_DOUBLE_EQ(phi(1, 0.5, false).sum, 0.0);
  EXPECT_DOUBLE_EQ(phi(3, 0.5, false).sum, 0.75);
  EXPECT_DOUBLE_EQ(phi(3, 0.5, false).cap, 2.0);
  EXPECT_DOUBLE_EQ(phi(100, 1.0, false).sum, 0.0);
  EXPECT_NEAR(phi(200, 0.5, false).sum, 1.0, 1e-12);
}

TEST(Phi, BiasedExamples) {
  EXPECT_DOUBLE_EQ(phi(1, 0.5, true).sum, 4.0);
  EXPECT_DOUBLE_EQ(phi(2, 0.5, true).sum, 4.0 * 1.75);
  EXPECT_DOUBLE_EQ(phi(2, 0.5, true).cap, 16.0);
  EXPECT_NEAR(phi(400, 0.5, true).sum, 16.0, 1e-9);
}

TEST(Phi, SumStaysBelowCap) {
  for (bool biased : {false, true}) {
    for (double d : {0.01, 0.1, 0.3, 0.5, 0.9, 1.0}) {
      double prev = -1.0;
      for (std::int64_t T : {1, 2, 5, 10, 100, 1000, 100000}) {
        const auto v = phi(T, d, biased);
        EXPECT_LE(v.sum, v.cap * (1.0 + 1e-12)) << biased << " " << d << " " << T;
        EXPECT_GE(v.sum, prev);
        prev = v.sum;
      }
    }
  }
}

TEST(Phi, RejectsInvalid) {
  EXPECT_THROW(phi(0, 0.5, false), std::invalid_argument);
  EXPECT_THROW(phi(5, 0.0, false), std::invalid_argument);
  EXPECT_THROW(phi(5, 1.5, true), std::invalid_argument);
}

TEST(LrCondition, HandExample) {
  TheoryParams p;
  p.L = 1.0;
  p.eta_g = 0.5;
  p.delta_c = 1.0;
  p.delta_s = 1.0;
  p.K = 3;
  p.eta_l = {0.25, 0.25};
  const auto r = lr_condition(p);
  EXPECT_DOUBLE_EQ(r.max_lhs, 0.4375);
  EXPECT_DOUBLE_EQ(r.margin, 0.5625);
  EXPECT_TRUE(r.satisfied);
}

TEST(LrCondition, LargeLocalRateViolates) {
  auto p = base_params();
  p.eta_l = {1e6};
  const auto r = lr_condition(p);
  EXPECT_FALSE(r.satisfied);
  EXPECT_LT(r.margin, 0.0);
  EXPECT_FALSE(sufficient_lr_rule(p));
}

TEST(LrCondition, ExactPhiIsLooserThanCap) {
  auto p = base_params();
  EXPECT_LE(lr_condition(p, false).max_lhs, lr_condition(p, true).max_lhs);
}

TEST(SufficientRule, ImpliesCondition) {
  std::mt19937_64 gen(11);
  for (int i = 0; i < 1000; ++i) {
    const auto p = draw_sufficient(gen);
    ASSERT_TRUE(sufficient_lr_rule(p)) << i;
    const auto r = lr_condition(p);
    EXPECT_LE(r.max_lhs, 1.0 + 1e-12) << i;
  }
}

TEST(SufficientRule, ServerStepTooLarge) {
  auto p = base_params();
  p.eta_l = {1e-6};
  EXPECT_TRUE(sufficient_lr_rule(p));
  p.eta_g = 1.0 / p.L * 1.01;
  EXPECT_FALSE(sufficient_lr_rule(p));
}

TEST(Bound, LosslessNoStalenessCase) {
  TheoryParams p;
  p.L = 2.0;
  p.sigma2 = 0.3;
  p.G = 0.1;
  p.delta_c = 1.0;
  p.delta_s = 1.0;
  p.K = 5;
  p.T = 40;
  p.tau_max = 0.0;
  p.eta_g = 0.5;
  p.eta_l = {0.1, 0.05};
  p.F_star_gap = 2.0;
  const double alpha = 0.15, beta = 0.0125, P = 2.0;
  const auto b = theoretical_bound(p);
  EXPECT_DOUBLE_EQ(b.optimization, 2.0 * 2.0 / (0.5 * 40.0 * alpha));
  EXPECT_NEAR(b.drift, 3.0 * 4.0 * beta * (0.3 + P * 0.1), 1e-15);
  EXPECT_NEAR(b.quantization, (2.0 * 0.5 / alpha) * (1.0 / 5.0) * beta * (0.3 + 0.4), 1e-15);
  EXPECT_DOUBLE_EQ(b.total(), b.optimization + b.drift + b.quantization);
}

TEST(Bound, DoublingHorizonHalvesOptimizationTerm) {
  auto p = base_params();
  const auto a = theoretical_bound(p, true);
  p.T *= 2;
  const auto b = theoretical_bound(p, true);
  EXPECT_DOUBLE_EQ(b.optimization, a.optimization / 2.0);
  EXPECT_DOUBLE_EQ(b.drift, a.drift);
  EXPECT_DOUBLE_EQ(b.quantization, a.quantization);
}

TEST(Bound, Monotonicity) {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    auto p = draw_sufficient(gen);
    p.sigma2 = u(gen);
    p.G = u(gen);
    p.tau_max = std::floor(10.0 * u(gen));
    p.T = 1 + static_cast<std::int64_t>(gen() % 500);
    p.F_star_gap = u(gen);
    const double base = theoretical_bound(p).total();

    auto q = p;
    q.tau_max += 1.0;
    EXPECT_GE(theoretical_bound(q).total(), base);
    q = p;
    q.sigma2 += 0.1;
    EXPECT_GE(theoretical_bound(q).total(), base);
    q = p;
    q.G += 0.1;
    EXPECT_GE(theoretical_bound(q).total(), base);
    q = p;
    q.K += 1;
    EXPECT_LE(theoretical_bound(q).total(), base);
    q = p;
    q.delta_c = p.delta_c / 2.0;
    EXPECT_GE(theoretical_bound(q).total(), base);
    q = p;
    q.delta_s = p.delta_s / 2.0;
    EXPECT_GE(theoretical_bound(q).total(), base);
  }
}

TEST(Bound, ContinuousAsCompressionVanishes) {
  for (bool biased : {false, true}) {
    auto p = base_params();
    p.server_quantizer_biased = biased;
    p.delta_c = 1.0;
    p.delta_s = 1.0;
    const double exact = theoretical_bound(p).total();
    p.delta_c = 1.0 - 1e-9;
    p.delta_s = 1.0 - 1e-9;
    EXPECT_NEAR(theoretical_bound(p).total(), exact, 1e-6 * exact);
  }
}

MetricsLog log_with_norms(std::vector<double> norms) {
  MetricsLog log;
  for (std::size_t t = 0; t < norms.size(); ++t) {
    MetricsRow r;
    r.t = static_cast<std::int64_t>(t);
    r.grad_norm_sq = norms[t];
    log.rows.push_back(r);
  }
  return log;
}

TEST(ConvergenceRate, Examples) {
  EXPECT_DOUBLE_EQ(convergence_rate(log_with_norms({4, 0, 0, 0}), 4), 1.0);
  EXPECT_DOUBLE_EQ(convergence_rate(log_with_norms({4, 2, 0, 0}), 2), 3.0);
  const std::vector<MetricsLog> logs = {log_with_norms({1, 1}), log_with_norms({3, 3})};
  EXPECT_DOUBLE_EQ(convergence_rate(logs, 2), 2.0);
  EXPECT_THROW(convergence_rate(log_with_norms({1}), 2), std::invalid_argument);
  EXPECT_THROW(convergence_rate(log_with_norms({1}), 0), std::invalid_argument);
}

TEST(CommSummary, EmptyLogIsZero) {
  const auto c = comm_summary(MetricsLog{});
  EXPECT_EQ(c.uploads, 0u);
  EXPECT_EQ(c.MB_uploaded, 0.0);
  EXPECT_EQ(c.kB_per_upload, 0.0);
}

TEST(CommSummary, DenseUploadSize) {
  MetricsLog log;
  MetricsRow r;
  r.uploads = 10;
  r.bytes_up = 10 * (encoded_bits(QuantizerSpec::identity(), 29282) / 8);
  log.rows.push_back(r);
  const auto c = comm_summary(log);
  EXPECT_DOUBLE_EQ(c.kB_per_upload, 117.136);
  EXPECT_DOUBLE_EQ(c.MB_uploaded, 1.17136);
}

TEST(CommSummary, BroadcastCountsFromSimulation) {
  ExperimentConfig c;
  c.task.n_clients = 4;
  c.task.dim = 8;
  c.hp.eta_l = {0.05};
  c.hp.K = 3;
  c.q_client = QuantizerSpec::qsgd_bits(4);
  c.q_server = QuantizerSpec::qsgd_bits(8);
  c.delay = {1.0, 2.0, 4};
  c.T_max = 20;
  const auto log = run_simulation(c, 1);
  const auto s = comm_summary(log);
  EXPECT_EQ(s.uploads, 60u);
  EXPECT_EQ(s.downloads, s.uploads / c.hp.K);
  EXPECT_DOUBLE_EQ(s.kB_per_upload, (encoded_bits(c.q_client, 8) + 7) / 8 / 1e3);
  EXPECT_DOUBLE_EQ(s.kB_per_broadcast, (encoded_bits(c.q_server, 8) + 7) / 8 / 1e3);
}

}  // namespace
}  // namespace qafel
