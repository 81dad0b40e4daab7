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
#include <span>
#include <vector>

#include "qafel/simulator.hpp"

namespace qafel {

struct TheoryParams {
  double L = 0.0;
  double sigma2 = 0.0;
  double G = 0.0;
  double delta_c = 1.0;
  double delta_s = 1.0;
  std::size_t K = 1;
  std::int64_t T = 1;
  double tau_max = 0.0;
  double eta_g = 1.0;
  std::vector<double> eta_l = {0.01};
  double F_star_gap = 0.0;
  bool server_quantizer_biased = false;

  std::size_t P() const { return eta_l.size(); }
};

struct StepSums {
  double alpha = 0.0;  // sum of local rates
  double beta = 0.0;   // sum of squared local rates
};

StepSums alpha_beta(std::span<const double> eta_l);

struct PhiValue {
  double sum = 0.0;  // finite geometric sum for T iterations
  double cap = 0.0;  // T-independent cap: 1/delta_s or 4/delta_s^2
};

// Accumulated server-quantization residual factor.
//   unbiased: sum_{t=1}^{T-1} (1 - delta_s)^t            <= 1/delta_s
//   biased:   (2/delta_s) sum_{t=0}^{T-1} (1 - delta_s/2)^t <= 4/delta_s^2
PhiValue phi(std::int64_t T, double delta_s, bool biased);

struct ConditionResult {
  bool satisfied = false;
  double margin = 0.0;  // 1 - max_p LHS_p
  double max_lhs = 0.0;
};

// (alpha_P * 3 L^2 eta_g^2 * phi + L eta_g) (1 + (1 - delta_c)/K) P eta_l^(p) <= 1
// for every local step p. `use_cap` selects the T-independent phi cap.
ConditionResult lr_condition(const TheoryParams& params, bool use_cap = true);

// eta_g <= 1/L and eta_l^(p) <= min(K / (2P(K + 1 - delta_c)), delta_s / (3P))
// (delta_s^2 / (12P) for a biased server quantizer).
bool sufficient_lr_rule(const TheoryParams& params);

struct BoundTerms {
  double optimization = 0.0;  // 2 F* / (eta_g T alpha_P)
  double drift = 0.0;         // staleness and local drift
  double quantization = 0.0;  // buffered-update variance amplified by phi
  double total() const { return optimization + drift + quantization; }
};

// Ergodic bound on (1/T) sum_t E||grad f(x^t)||^2. `use_cap` swaps the exact
// phi sum for its cap.
BoundTerms theoretical_bound(const TheoryParams& params, bool use_cap = false);

// Mean of grad_norm_sq over rows 0..T-1, averaged across logs.
double convergence_rate(std::span<const MetricsLog> logs, std::int64_t T);
double convergence_rate(const MetricsLog& log, std::int64_t T);

struct CommSummary {
  std::uint64_t uploads = 0;
  std::uint64_t downloads = 0;
  double MB_uploaded = 0.0;
  double MB_broadcast = 0.0;
  double kB_per_upload = 0.0;
  double kB_per_broadcast = 0.0;
};

CommSummary comm_summary(const MetricsLog& log);

}  // namespace qafel
