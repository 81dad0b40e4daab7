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

#include "qafel/task.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

namespace qafel {
namespace {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void check_dim(const Task& task, std::span<const double> x) {
  if (x.size() != task.dim()) {
    throw TaskError("dimension mismatch: expected " + std::to_string(task.dim()) + ", got " +
                    std::to_string(x.size()));
  }
}

void check_client(const Task& task, std::size_t client) {
  if (client >= task.n_clients()) throw TaskError("invalid client id " + std::to_string(client));
}

double largest_eigenvalue(const Matrix& gram) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(gram, Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

class QuadraticTask final : public Task {
 public:
  QuadraticTask(std::size_t dim, std::vector<QuadraticClient> clients)
      : dim_(dim), clients_(std::move(clients)) {
    if (dim_ == 0) throw TaskError("quadratic task needs dim >= 1");
    if (clients_.empty()) throw TaskError("quadratic task needs at least one client");
    Matrix total = Matrix::Zero(dim_, dim_);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(dim_);
    for (const auto& c : clients_) {
      if (c.rows == 0 || c.a.size() != c.rows * dim_ || c.b.size() != c.rows) {
        throw TaskError("quadratic client has inconsistent shapes");
      }
      Eigen::Map<const Matrix> a(c.a.data(), c.rows, dim_);
      Eigen::Map<const Eigen::VectorXd> b(c.b.data(), c.rows);
      const Matrix gram = a.transpose() * a;
      smoothness_ = std::max(smoothness_, largest_eigenvalue(gram));
      total += gram;
      rhs += a.transpose() * b;
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(total, Eigen::EigenvaluesOnly);
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    degenerate_ = !(lo > 1e-10 * std::max(hi, 1.0));
    if (!degenerate_) {
      Eigen::VectorXd sol = total.ldlt().solve(rhs);
      minimizer_.assign(sol.data(), sol.data() + dim_);
    }
  }

  TaskKind kind() const override { return TaskKind::kQuadratic; }
  std::size_t n_clients() const override { return clients_.size(); }
  std::size_t dim() const override { return dim_; }
  std::size_t shard_size(std::size_t client) const override { return clients_.at(client).rows; }

  double client_loss(std::size_t client, std::span<const double> x) const override {
    const auto& c = clients_.at(client);
    double s = 0.0;
    for (std::size_t j = 0; j < c.rows; ++j) {
      const double r = dot(row(c, j), x) - c.b[j];
      s += r * r;
    }
    return 0.5 * s;
  }

  RealVector client_gradient(std::size_t client, std::span<const double> x) const override {
    const auto& c = clients_.at(client);
    RealVector g(dim_, 0.0);
    for (std::size_t j = 0; j < c.rows; ++j) {
      const auto a = row(c, j);
      const double r = dot(a, x) - c.b[j];
      for (std::size_t i = 0; i < dim_; ++i) g[i] += r * a[i];
    }
    return g;
  }

  RealVector sample_gradient(std::size_t client, std::size_t sample,
                             std::span<const double> x) const override {
    const auto& c = clients_.at(client);
    const auto a = row(c, sample);
    const double r = (dot(a, x) - c.b[sample]) * static_cast<double>(c.rows);
    RealVector g(dim_);
    for (std::size_t i = 0; i < dim_; ++i) g[i] = r * a[i];
    return g;
  }

  double smoothness() const override { return smoothness_; }
  bool degenerate() const override { return degenerate_; }
  std::optional<RealVector> minimizer() const override {
    if (degenerate_) return std::nullopt;
    return minimizer_;
  }

 private:
  std::span<const double> row(const QuadraticClient& c, std::size_t j) const {
    return std::span<const double>(c.a).subspan(j * dim_, dim_);
  }

  std::size_t dim_;
  std::vector<QuadraticClient> clients_;
  double smoothness_ = 0.0;
  bool degenerate_ = false;
  RealVector minimizer_;
};

class LogisticTask final : public Task {
 public:
  LogisticTask(std::size_t dim, std::vector<std::vector<LogisticSample>> shards, double l2_reg)
      : dim_(dim), shards_(std::move(shards)), l2_(l2_reg) {
    if (dim_ == 0) throw TaskError("logistic task needs dim >= 1");
    if (shards_.empty()) throw TaskError("logistic task needs at least one client");
    if (l2_ < 0.0) throw TaskError("l2 regularization must be >= 0");
    double worst = 0.0;
    for (std::size_t n = 0; n < shards_.size(); ++n) {
      const auto& shard = shards_[n];
      if (shard.empty()) throw TaskError("client " + std::to_string(n) + " has an empty shard");
      Matrix gram = Matrix::Zero(dim_, dim_);
      for (const auto& s : shard) {
        if (s.features.size() != dim_) throw TaskError("sample feature length mismatch");
        if (s.label != 1 && s.label != -1) throw TaskError("labels must be +1 or -1");
        Eigen::Map<const Eigen::VectorXd> v(s.features.data(), dim_);
        gram += v * v.transpose();
      }
      worst = std::max(worst, largest_eigenvalue(gram / static_cast<double>(shard.size())));
    }
    smoothness_ = 0.25 * worst + l2_;
  }

  TaskKind kind() const override { return TaskKind::kLogistic; }
  std::size_t n_clients() const override { return shards_.size(); }
  std::size_t dim() const override { return dim_; }
  std::size_t shard_size(std::size_t client) const override { return shards_.at(client).size(); }

  double client_loss(std::size_t client, std::span<const double> w) const override {
    const auto& shard = shards_.at(client);
    double s = 0.0;
    for (const auto& smp : shard) {
      const double m = smp.label * dot(smp.features, w);
      // log(1 + e^{-m}) without overflow
      s += m > 0 ? std::log1p(std::exp(-m)) : -m + std::log1p(std::exp(m));
    }
    return s / static_cast<double>(shard.size()) + 0.5 * l2_ * dot(w, w);
  }

  RealVector client_gradient(std::size_t client, std::span<const double> w) const override {
    const auto& shard = shards_.at(client);
    RealVector g(dim_, 0.0);
    for (const auto& smp : shard) accumulate(smp, w, 1.0, g);
    const double inv = 1.0 / static_cast<double>(shard.size());
    for (std::size_t i = 0; i < dim_; ++i) g[i] = g[i] * inv + l2_ * w[i];
    return g;
  }

  RealVector sample_gradient(std::size_t client, std::size_t sample,
                             std::span<const double> w) const override {
    RealVector g(dim_, 0.0);
    accumulate(shards_.at(client).at(sample), w, 1.0, g);
    for (std::size_t i = 0; i < dim_; ++i) g[i] += l2_ * w[i];
    return g;
  }

  double smoothness() const override { return smoothness_; }

  const std::vector<std::vector<LogisticSample>>& shards() const { return shards_; }

 private:
  // g += scale * d/dw log(1 + exp(-y w.x)) = -scale * y * sigmoid(-y w.x) * x
  void accumulate(const LogisticSample& s, std::span<const double> w, double scale,
                  RealVector& g) const {
    const double m = s.label * dot(s.features, w);
    const double sig = m >= 0 ? std::exp(-m) / (1.0 + std::exp(-m)) : 1.0 / (1.0 + std::exp(m));
    const double c = -scale * s.label * sig;
    for (std::size_t i = 0; i < dim_; ++i) g[i] += c * s.features[i];
  }

  std::size_t dim_;
  std::vector<std::vector<LogisticSample>> shards_;
  double l2_;
  double smoothness_ = 0.0;
};

}  // namespace

double Task::loss(std::span<const double> x) const {
  check_dim(*this, x);
  double s = 0.0;
  for (std::size_t n = 0; n < n_clients(); ++n) s += client_loss(n, x);
  return s / static_cast<double>(n_clients());
}

std::shared_ptr<const Task> make_quadratic_task(std::size_t dim, std::vector<QuadraticClient> clients) {
  return std::make_shared<QuadraticTask>(dim, std::move(clients));
}

std::shared_ptr<const Task> make_quadratic_task(std::size_t n_clients, std::size_t dim,
                                                double heterogeneity, std::uint64_t seed,
                                                std::size_t rows) {
  if (n_clients == 0) throw TaskError("quadratic task needs at least one client");
  if (dim == 0) throw TaskError("quadratic task needs dim >= 1");
  if (heterogeneity < 0.0) throw TaskError("heterogeneity must be >= 0");
  if (rows == 0) rows = 2 * dim;
  Rng base_rng = substream(seed, "quadratic-base");
  const double row_scale = 1.0 / std::sqrt(static_cast<double>(rows));
  QuadraticClient base{rows, std::vector<double>(rows * dim), std::vector<double>(rows)};
  for (auto& v : base.a) v = row_scale * standard_normal(base_rng);
  for (auto& v : base.b) v = standard_normal(base_rng);

  std::vector<QuadraticClient> clients;
  clients.reserve(n_clients);
  for (std::size_t n = 0; n < n_clients; ++n) {
    Rng rng = substream(seed, "quadratic-client", n);
    QuadraticClient c = base;
    for (auto& v : c.a) v += heterogeneity * row_scale * standard_normal(rng);
    for (auto& v : c.b) v += heterogeneity * standard_normal(rng);
    clients.push_back(std::move(c));
  }
  return make_quadratic_task(dim, std::move(clients));
}

std::shared_ptr<const Task> make_logistic_task(std::size_t dim,
                                               std::vector<std::vector<LogisticSample>> shards,
                                               double l2_reg) {
  return std::make_shared<LogisticTask>(dim, std::move(shards), l2_reg);
}

std::shared_ptr<const Task> make_logistic_task(std::size_t n_clients, std::size_t dim,
                                               const PartitionConfig& partition, double l2_reg) {
  if (n_clients == 0 || dim == 0) throw TaskError("logistic task needs clients and dim >= 1");
  if (partition.skew < 0.0 || partition.skew > 1.0) throw TaskError("skew must be in [0, 1]");
  if (partition.samples_min == 0 || partition.samples_min > partition.samples_max) {
    throw TaskError("samples per client range must satisfy 1 <= min <= max");
  }
  Rng mean_rng = substream(partition.seed, "logistic-mean");
  std::vector<double> mean(dim);
  for (auto& v : mean) v = standard_normal(mean_rng);
  const double mean_norm = std::sqrt(squared_norm(mean));
  for (auto& v : mean) v /= mean_norm;

  std::vector<std::vector<LogisticSample>> shards(n_clients);
  for (std::size_t n = 0; n < n_clients; ++n) {
    Rng rng = substream(partition.seed, "logistic-client", n);
    const auto span = partition.samples_max - partition.samples_min + 1;
    const auto m = partition.samples_min + static_cast<std::size_t>(uniform_index(rng, span));
    const double preferred = uniform01(rng) < 0.5 ? 0.0 : 1.0;
    const double p_positive = (1.0 - partition.skew) * 0.5 + partition.skew * preferred;
    auto& shard = shards[n];
    shard.resize(m);
    for (auto& s : shard) {
      s.label = uniform01(rng) < p_positive ? 1 : -1;
      s.features.resize(dim);
      for (std::size_t i = 0; i < dim; ++i) s.features[i] = s.label * mean[i] + standard_normal(rng);
    }
  }
  return make_logistic_task(dim, std::move(shards), l2_reg);
}

const std::vector<std::vector<LogisticSample>>* logistic_shards(const Task& task) {
  const auto* lt = dynamic_cast<const LogisticTask*>(&task);
  return lt ? &lt->shards() : nullptr;
}

RealVector full_gradient(const Task& task, std::span<const double> x) {
  check_dim(task, x);
  RealVector g(task.dim(), 0.0);
  for (std::size_t n = 0; n < task.n_clients(); ++n) {
    const auto gn = task.client_gradient(n, x);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gn[i];
  }
  const double inv = 1.0 / static_cast<double>(task.n_clients());
  for (auto& v : g) v *= inv;
  return g;
}

RealVector stochastic_gradient(const Task& task, std::size_t client, std::span<const double> x,
                               Rng& rng) {
  check_client(task, client);
  check_dim(task, x);
  const auto j = static_cast<std::size_t>(uniform_index(rng, task.shard_size(client)));
  return task.sample_gradient(client, j, x);
}

double gradient_variance(const Task& task, std::size_t client, std::span<const double> x) {
  check_client(task, client);
  check_dim(task, x);
  const auto mean = task.client_gradient(client, x);
  const auto m = task.shard_size(client);
  double total = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    const auto g = task.sample_gradient(client, j, x);
    for (std::size_t i = 0; i < g.size(); ++i) total += (g[i] - mean[i]) * (g[i] - mean[i]);
  }
  return total / static_cast<double>(m);
}

ConstantEstimates estimate_constants(const Task& task, std::size_t probe_points, Rng& rng,
                                     std::span<const double> center, double radius) {
  if (probe_points < 2) throw TaskError("estimate_constants needs at least 2 probe points");
  const auto d = task.dim();
  if (!center.empty()) check_dim(task, center);
  const double scale = radius / std::sqrt(static_cast<double>(d));
  std::vector<RealVector> probes(probe_points, RealVector(d));
  for (auto& p : probes) {
    for (std::size_t i = 0; i < d; ++i) {
      p[i] = (center.empty() ? 0.0 : center[i]) + scale * standard_normal(rng);
    }
  }
  ConstantEstimates est;
  for (std::size_t n = 0; n < task.n_clients(); ++n) {
    std::vector<RealVector> grads;
    grads.reserve(probe_points);
    for (const auto& p : probes) {
      grads.push_back(task.client_gradient(n, p));
      est.G_hat = std::max(est.G_hat, squared_norm(grads.back()));
      est.sigma2_hat = std::max(est.sigma2_hat, gradient_variance(task, n, p));
    }
    for (std::size_t a = 0; a + 1 < probe_points; ++a) {
      for (std::size_t b = a + 1; b < probe_points; ++b) {
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
          num += (grads[a][i] - grads[b][i]) * (grads[a][i] - grads[b][i]);
          den += (probes[a][i] - probes[b][i]) * (probes[a][i] - probes[b][i]);
        }
        if (den > 0.0) est.L_hat = std::max(est.L_hat, std::sqrt(num / den));
      }
    }
  }
  return est;
}

double finite_difference_check(const Task& task, std::span<const double> x, double h) {
  if (!(h > 0.0)) throw TaskError("finite difference step must be > 0");
  check_dim(task, x);
  const auto g = full_gradient(task, x);
  RealVector probe(x.begin(), x.end());
  double worst = 0.0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double keep = probe[i];
    probe[i] = keep + h;
    const double up = task.loss(probe);
    probe[i] = keep - h;
    const double down = task.loss(probe);
    probe[i] = keep;
    const double fd = (up - down) / (2.0 * h);
    worst = std::max(worst, std::fabs(fd - g[i]) / std::max(1.0, std::fabs(g[i])));
  }
  return worst;
}

}  // namespace qafel
