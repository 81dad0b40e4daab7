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
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "qafel/experiment_config.hpp"

namespace qafel {

// |z| * sigma for a standard normal z.
double sample_duration(const DelayModel& model, Rng& rng);

struct TraceAction {
  enum class Kind : std::uint8_t { kStart, kComplete };
  Kind kind;
  std::size_t job;
  double time;
};

struct JobStart {
  std::size_t job;
  std::size_t client_id;
  double arrival_time;
  double start_time;
};

// Event engine for arrivals, training starts and upload completions. Events
// are ordered by (time, seq); arrivals beyond the concurrency cap wait in a
// FIFO queue and start when a slot frees. Every start and completion is
// appended to the trace in processing order.
class Scheduler {
 public:
  using StartFn = std::function<void(const JobStart&)>;
  // Returns true to stop the run.
  using CompleteFn = std::function<bool(std::size_t job, double time)>;

  Scheduler(const DelayModel& delay, std::uint64_t seed, std::size_t n_clients,
            ClientSelection selection);

  // Runs until on_complete asks to stop or `max_arrivals` jobs have arrived
  // and drained.
  void run(const StartFn& on_start, const CompleteFn& on_complete,
           std::optional<std::size_t> max_arrivals = std::nullopt);

  const std::vector<TraceAction>& trace() const { return trace_; }
  std::size_t max_in_flight() const { return max_in_flight_; }

 private:
  DelayModel delay_;
  std::uint64_t seed_;
  std::size_t n_clients_;
  ClientSelection selection_;
  std::vector<TraceAction> trace_;
  std::size_t max_in_flight_ = 0;
};

struct JobRecord {
  std::size_t job = 0;
  std::size_t client_id = 0;
  double arrival_time = 0.0;
  double start_time = 0.0;
  double complete_time = 0.0;
  std::int64_t start_version = 0;
  std::int64_t applied_step = 0;  // server step when the update was buffered
  std::int64_t staleness = 0;
  double weight = 1.0;
  std::uint64_t upload_bits = 0;
  // Fingerprint of the client's y_0 and of the server's x_hat at start_version.
  std::uint64_t start_fingerprint = 0;
  std::uint64_t server_fingerprint = 0;
};

struct MetricsRow {
  std::int64_t t = 0;
  double sim_time = 0.0;
  std::uint64_t uploads = 0;
  std::uint64_t bytes_up = 0;
  std::uint64_t bytes_down = 0;
  double grad_norm_sq = 0.0;
  double loss = 0.0;
  double mean_staleness = 0.0;
  std::int64_t max_staleness = 0;
  double running_R = 0.0;

  bool operator==(const MetricsRow&) const = default;
};

// Row 0 describes x^0; each server flush appends the row for the new x^t.
struct MetricsLog {
  std::uint64_t seed = 0;
  std::vector<MetricsRow> rows;
  std::vector<JobRecord> jobs;  // in buffer-arrival order
  std::vector<TraceAction> trace;
  std::vector<std::uint64_t> hidden_fingerprints;  // x_hat per server version
  std::vector<std::uint64_t> model_fingerprints;   // x per server version
  std::optional<std::uint64_t> uploads_to_target;
  std::uint64_t broadcasts = 0;
  std::uint64_t downloads = 0;  // messages sent server -> clients
  std::size_t max_in_flight = 0;
  ParameterVector final_x;
  ParameterVector final_x_hat;
};

MetricsLog run_simulation(const ExperimentConfig& config, const Task& task, std::uint64_t seed);
MetricsLog run_simulation(const ExperimentConfig& config, std::uint64_t seed);

// Arrival/duration/cap schedule alone, no training: `n_jobs` arrivals.
std::vector<TraceAction> generate_trace(const DelayModel& delay, std::size_t n_jobs,
                                        std::uint64_t seed);

// Per-update staleness in buffer-arrival order.
std::vector<std::int64_t> staleness_trace(const MetricsLog& log);

// Staleness each completion would see on a frozen trace with buffer size K:
// the server version advances after every K-th completion.
std::vector<std::int64_t> replay_staleness(const std::vector<TraceAction>& trace, std::size_t K);

// Time-averaged number of jobs in training over [from, to].
double mean_in_flight(const std::vector<TraceAction>& trace, double from, double to);

}  // namespace qafel
