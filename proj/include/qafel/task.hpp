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
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "qafel/random.hpp"
#include "qafel/types.hpp"

namespace qafel {

class TaskError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class TaskKind { kQuadratic, kLogistic };

// A federated objective f(x) = (1/N) sum_n F_n(x), with each client owning a
// shard of samples. A stochastic gradient is the gradient of one uniformly
// drawn shard element, scaled so that its mean over the shard is grad F_n.
//
// Tasks are immutable after construction.
class Task {
 public:
  virtual ~Task() = default;

  virtual TaskKind kind() const = 0;
  virtual std::size_t n_clients() const = 0;
  virtual std::size_t dim() const = 0;
  virtual std::size_t shard_size(std::size_t client) const = 0;

  virtual double client_loss(std::size_t client, std::span<const double> x) const = 0;
  virtual RealVector client_gradient(std::size_t client, std::span<const double> x) const = 0;
  virtual RealVector sample_gradient(std::size_t client, std::size_t sample,
                                     std::span<const double> x) const = 0;

  // Smoothness constant reported by construction (exact for quadratics, an
  // analytic upper bound for logistic regression).
  virtual double smoothness() const = 0;

  // Closed-form minimizer when one exists and is cheap.
  virtual std::optional<RealVector> minimizer() const { return std::nullopt; }

  // True when sum_n A_n^T A_n is singular (quadratic tasks only).
  virtual bool degenerate() const { return false; }

  double loss(std::span<const double> x) const;
};

struct QuadraticClient {
  std::size_t rows = 0;
  std::vector<double> a;  // row-major rows x dim
  std::vector<double> b;
};

// F_n(x) = 1/2 ||A_n x - b_n||^2.
std::shared_ptr<const Task> make_quadratic_task(std::size_t dim, std::vector<QuadraticClient> clients);

// Random instance: each client perturbs a shared (A, b) by `heterogeneity`
// times an independent Gaussian draw, so heterogeneity = 0 gives identical
// clients. `rows` rows per client (0 picks 2 * dim).
std::shared_ptr<const Task> make_quadratic_task(std::size_t n_clients, std::size_t dim,
                                                double heterogeneity, std::uint64_t seed,
                                                std::size_t rows = 0);

struct PartitionConfig {
  double skew = 0.0;  // 0: every client draws labels 50/50; 1: single-label clients
  std::size_t samples_min = 1;
  std::size_t samples_max = 32;
  std::uint64_t seed = 0;

  bool operator==(const PartitionConfig&) const = default;
};

struct LogisticSample {
  std::vector<double> features;
  int label = 1;  // +1 or -1
};

// F_n(w) = mean_i log(1 + exp(-y_i w.x_i)) + (lambda/2) ||w||^2.
std::shared_ptr<const Task> make_logistic_task(std::size_t dim,
                                               std::vector<std::vector<LogisticSample>> shards,
                                               double l2_reg);

// Synthetic label-skewed shards: features are drawn around a label-dependent
// mean so the labels are learnable.
std::shared_ptr<const Task> make_logistic_task(std::size_t n_clients, std::size_t dim,
                                               const PartitionConfig& partition,
                                               double l2_reg = 1e-2);

// Access to the generated shards (for tests and diagnostics).
const std::vector<std::vector<LogisticSample>>* logistic_shards(const Task& task);

RealVector full_gradient(const Task& task, std::span<const double> x);

RealVector stochastic_gradient(const Task& task, std::size_t client, std::span<const double> x,
                               Rng& rng);

// Exact local variance E||g_n(x) - grad F_n(x)||^2 by enumerating the shard.
double gradient_variance(const Task& task, std::size_t client, std::span<const double> x);

struct ConstantEstimates {
  double L_hat = 0.0;
  double sigma2_hat = 0.0;
  double G_hat = 0.0;
  // Maxima over finitely many probes are lower bounds on the true suprema.
  bool lower_bounds = true;
};

// Probes are drawn as center + radius * z / sqrt(d), z standard normal.
ConstantEstimates estimate_constants(const Task& task, std::size_t probe_points, Rng& rng,
                                     std::span<const double> center = {}, double radius = 1.0);

// Max over coordinates of |fd_i - g_i| / max(1, |g_i|), where fd is the
// central difference of f with step h.
double finite_difference_check(const Task& task, std::span<const double> x, double h);

}  // namespace qafel
