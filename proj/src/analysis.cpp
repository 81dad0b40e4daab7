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

#include "qafel/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace qafel {
namespace {

void check_delta(double delta, const char* what) {
  if (!(delta > 0.0 && delta <= 1.0)) {
    throw std::invalid_argument(std::string(what) + " must be in (0, 1]");
  }
}

double phi_for(const TheoryParams& p, bool use_cap) {
  const auto v = phi(p.T, p.delta_s, p.server_quantizer_biased);
  return use_cap ? v.cap : v.sum;
}

}  // namespace

StepSums alpha_beta(std::span<const double> eta_l) {
  if (eta_l.empty()) throw std::invalid_argument("learning-rate schedule must be nonempty");
  StepSums s;
  for (double e : eta_l) {
    s.alpha += e;
    s.beta += e * e;
  }
  return s;
}

PhiValue phi(std::int64_t T, double delta_s, bool biased) {
  if (T < 1) throw std::invalid_argument("T must be >= 1");
  check_delta(delta_s, "delta_s");
  PhiValue v;
  if (biased) {
    const double r = 1.0 - delta_s / 2.0;
    double term = 1.0, sum = 0.0;
    for (std::int64_t t = 0; t < T; ++t, term *= r) sum += term;
    v.sum = 2.0 / delta_s * sum;
    v.cap = 4.0 / (delta_s * delta_s);
  } else {
    const double r = 1.0 - delta_s;
    double term = r, sum = 0.0;
    for (std::int64_t t = 1; t < T && term > 0.0; ++t, term *= r) sum += term;
    v.sum = sum;
    v.cap = 1.0 / delta_s;
  }
  return v;
}

ConditionResult lr_condition(const TheoryParams& p, bool use_cap) {
  check_delta(p.delta_c, "delta_c");
  const auto sums = alpha_beta(p.eta_l);
  const double ph = phi_for(p, use_cap);
  const double lead = sums.alpha * 3.0 * p.L * p.L * p.eta_g * p.eta_g * ph + p.L * p.eta_g;
  const double buffer = 1.0 + (1.0 - p.delta_c) / static_cast<double>(p.K);
  const double P = static_cast<double>(p.P());
  ConditionResult r;
  for (double e : p.eta_l) r.max_lhs = std::max(r.max_lhs, lead * buffer * P * e);
  r.margin = 1.0 - r.max_lhs;
  r.satisfied = r.max_lhs <= 1.0;
  return r;
}

bool sufficient_lr_rule(const TheoryParams& p) {
  const double P = static_cast<double>(p.P());
  const double K = static_cast<double>(p.K);
  const double server_limit = p.server_quantizer_biased ? p.delta_s * p.delta_s / (12.0 * P)
                                                        : p.delta_s / (3.0 * P);
  const double limit = std::min(K / (2.0 * P * (K + 1.0 - p.delta_c)), server_limit);
  if (!(p.eta_g * p.L <= 1.0)) return false;
  return std::all_of(p.eta_l.begin(), p.eta_l.end(), [&](double e) { return e <= limit; });
}

BoundTerms theoretical_bound(const TheoryParams& p, bool use_cap) {
  check_delta(p.delta_c, "delta_c");
  const auto sums = alpha_beta(p.eta_l);
  const double P = static_cast<double>(p.P());
  const double K = static_cast<double>(p.K);
  const double L2 = p.L * p.L;
  const double ph = phi_for(p, use_cap);

  BoundTerms b;
  b.optimization = 2.0 * p.F_star_gap / (p.eta_g * static_cast<double>(p.T) * sums.alpha);
  // eta_g^2 tau^2 ((1 - delta_c)/(K tau) + 1), written to stay finite at tau = 0.
  const double staleness =
      p.eta_g * p.eta_g * (p.tau_max * p.tau_max + p.tau_max * (1.0 - p.delta_c) / K);
  b.drift = 3.0 * L2 * sums.beta * (staleness + 1.0) * (p.sigma2 + P * p.G);
  b.quantization = (3.0 * L2 * p.eta_g * p.eta_g * ph + p.L * p.eta_g / sums.alpha) *
                   ((2.0 - p.delta_c) / K) * sums.beta * (p.sigma2 + 4.0 * p.G);
  return b;
}

double convergence_rate(const MetricsLog& log, std::int64_t T) {
  return convergence_rate(std::span<const MetricsLog>(&log, 1), T);
}

double convergence_rate(std::span<const MetricsLog> logs, std::int64_t T) {
  if (logs.empty()) throw std::invalid_argument("convergence_rate needs at least one log");
  if (T < 1) throw std::invalid_argument("T must be >= 1");
  double total = 0.0;
  for (const auto& log : logs) {
    if (log.rows.size() < static_cast<std::size_t>(T)) {
      throw std::invalid_argument("log has fewer than T rows");
    }
    double s = 0.0;
    for (std::int64_t t = 0; t < T; ++t) s += log.rows[static_cast<std::size_t>(t)].grad_norm_sq;
    total += s / static_cast<double>(T);
  }
  return total / static_cast<double>(logs.size());
}

CommSummary comm_summary(const MetricsLog& log) {
  CommSummary c;
  if (log.rows.empty()) return c;
  const auto& last = log.rows.back();
  c.uploads = last.uploads;
  c.downloads = log.downloads;
  c.MB_uploaded = static_cast<double>(last.bytes_up) / 1e6;
  c.MB_broadcast = static_cast<double>(last.bytes_down) / 1e6;
  if (c.uploads > 0) c.kB_per_upload = static_cast<double>(last.bytes_up) / 1e3 / c.uploads;
  if (c.downloads > 0) c.kB_per_broadcast = static_cast<double>(last.bytes_down) / 1e3 / c.downloads;
  return c;
}

}  // namespace qafel
