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

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qafel/analysis.hpp"
#include "qafel/config.hpp"

namespace qafel {

struct RunSummary {
  std::string label;  // sweep coordinates, empty for a single run
  std::size_t runs = 0;
  std::size_t reached_target = 0;
  // Mean and sample standard deviation over seeds; the upload statistics
  // cover the seeds that reached the target and are NaN when none did.
  double uploads_to_target_mean = 0.0;
  double uploads_to_target_std = 0.0;
  double MB_up_mean = 0.0;
  double MB_up_std = 0.0;
  double MB_down_mean = 0.0;
  double MB_down_std = 0.0;
  double kB_per_upload = 0.0;
  double kB_per_broadcast = 0.0;
  std::int64_t steps = 0;  // fewest server steps over the seeds
  double final_loss_mean = 0.0;
  double measured_R = 0.0;
  TheoryParams theory;
  ConditionResult lr;
  BoundTerms bound;
};

struct ResultBundle {
  ExperimentConfig config;
  std::vector<MetricsLog> logs;  // one per seed, in config order
  RunSummary summary;
};

ResultBundle run_experiment(const ExperimentConfig& config);

// Theory inputs for a finished run: the task's smoothness constant, sigma^2
// and G estimated by probing around the visited region, delta from the
// quantizers, tau_max from the logs and F(x^0) - f* (the lowest observed loss
// stands in for f* when no closed form exists).
TheoryParams estimate_theory_params(const ExperimentConfig& config, const Task& task,
                                    std::span<const MetricsLog> logs);

RunSummary summarize(const ExperimentConfig& config, const Task& task, std::span<const MetricsLog> logs);

struct GridAxis {
  std::string key;
  std::vector<std::string> values;
};

// "key=v1,v2,..."
GridAxis parse_grid_axis(std::string_view text);

// Cartesian product over the axes, first axis outermost; one bundle per point.
std::vector<ResultBundle> run_sweep(const ExperimentConfig& base, const std::vector<GridAxis>& grid);

enum class OutputFormat { kCsv, kJson };

std::string metrics_csv(const MetricsLog& log);
std::string summary_csv(std::span<const ResultBundle> results);
std::string results_json(std::span<const ResultBundle> results);

// CSV: summary.csv plus run<i>_seed<s>.csv per log. JSON: results.json.
// Throws std::runtime_error on I/O failure.
void emit(std::span<const ResultBundle> results, OutputFormat format, const std::filesystem::path& dir);

}  // namespace qafel
