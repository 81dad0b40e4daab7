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

#include "qafel/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <queue>
#include <string>
#include <unordered_map>

namespace qafel {
namespace {

enum class EventKind : std::uint8_t { kArrival, kComplete };

struct Event {
  double time;
  std::uint64_t seq;
  EventKind kind;
  std::size_t job;
};

struct Later {
  bool operator()(const Event& a, const Event& b) const {
    return a.time != b.time ? a.time > b.time : a.seq > b.seq;
  }
};

void validate_delay(const DelayModel& d) {
  if (!(d.sigma > 0.0)) throw std::invalid_argument("delay.sigma must be > 0");
  if (!(d.arrival_rate > 0.0)) throw std::invalid_argument("delay.rate must be > 0");
  if (d.concurrency_cap < 1) throw std::invalid_argument("delay.concurrency must be >= 1");
}

MetricsRow make_row(const Task& task, const ServerState& server, double time,
                    std::uint64_t uploads, std::uint64_t bytes_up, std::uint64_t bytes_down) {
  MetricsRow row;
  row.t = server.step;
  row.sim_time = time;
  row.uploads = uploads;
  row.bytes_up = bytes_up;
  row.bytes_down = bytes_down;
  const auto x = to_real(server.x);
  row.grad_norm_sq = squared_norm(full_gradient(task, x));
  row.loss = task.loss(x);
  return row;
}

}  // namespace

double sample_duration(const DelayModel& model, Rng& rng) {
  return std::fabs(standard_normal(rng)) * model.sigma;
}

Scheduler::Scheduler(const DelayModel& delay, std::uint64_t seed, std::size_t n_clients,
                     ClientSelection selection)
    : delay_(delay), seed_(seed), n_clients_(n_clients), selection_(selection) {
  validate_delay(delay_);
  if (n_clients_ == 0) throw std::invalid_argument("scheduler needs at least one client");
}

void Scheduler::run(const StartFn& on_start, const CompleteFn& on_complete,
                    std::optional<std::size_t> max_arrivals) {
  std::priority_queue<Event, std::vector<Event>, Later> queue;
  Rng durations = substream(seed_, "durations");
  Rng picker = substream(seed_, "selection");
  std::uint64_t seq = 0;
  std::size_t in_flight = 0;
  std::deque<JobStart> deferred;

  auto schedule_arrival = [&](std::size_t i) {
    if (max_arrivals && i >= *max_arrivals) return;
    queue.push({static_cast<double>(i) / delay_.arrival_rate, seq++, EventKind::kArrival, i});
  };
  auto start = [&](const JobStart& js) {
    ++in_flight;
    max_in_flight_ = std::max(max_in_flight_, in_flight);
    trace_.push_back({TraceAction::Kind::kStart, js.job, js.start_time});
    on_start(js);
    const double done = js.start_time + sample_duration(delay_, durations);
    queue.push({done, seq++, EventKind::kComplete, js.job});
  };

  schedule_arrival(0);
  while (!queue.empty()) {
    const Event e = queue.top();
    queue.pop();
    if (e.kind == EventKind::kArrival) {
      schedule_arrival(e.job + 1);
      const std::size_t client = selection_ == ClientSelection::kRoundRobin
                                     ? e.job % n_clients_
                                     : static_cast<std::size_t>(uniform_index(picker, n_clients_));
      JobStart js{e.job, client, e.time, e.time};
      if (in_flight < delay_.concurrency_cap) {
        start(js);
      } else {
        deferred.push_back(js);
      }
      continue;
    }
    --in_flight;
    trace_.push_back({TraceAction::Kind::kComplete, e.job, e.time});
    if (on_complete(e.job, e.time)) return;
    if (!deferred.empty() && in_flight < delay_.concurrency_cap) {
      JobStart js = deferred.front();
      deferred.pop_front();
      js.start_time = e.time;
      start(js);
    }
  }
}

MetricsLog run_simulation(const ExperimentConfig& config, const Task& task, std::uint64_t seed) {
  const auto hp_errors = config.hp.violations();
  if (!hp_errors.empty()) throw std::invalid_argument(hp_errors.front());
  if (config.T_max < 1) throw std::invalid_argument("run.T_max must be >= 1");
  const auto d = static_cast<std::uint32_t>(task.dim());
  validate(config.q_client, d);
  validate(config.q_server, d);
  if (!is_unbiased(config.q_client)) throw std::invalid_argument("client quantizer must be unbiased");

  const bool broadcast = config.hp.mode == SyncMode::kBroadcast;
  const ParameterVector x0(task.dim(), 0.0f);
  ServerState server(x0, broadcast ? 0 : effective_c_max(config));
  std::vector<ClientState> clients;
  clients.reserve(task.n_clients());
  for (std::size_t n = 0; n < task.n_clients(); ++n) clients.emplace_back(n, x0);

  MetricsLog log;
  log.seed = seed;
  log.hidden_fingerprints.push_back(fingerprint(server.x_hat));
  log.model_fingerprints.push_back(fingerprint(server.x));
  std::uint64_t uploads = 0, bytes_up = 0, bytes_down = 0;
  double grad_sum = 0.0;

  auto push_row = [&](double time, const std::vector<std::int64_t>& staleness) {
    MetricsRow row = make_row(task, server, time, uploads, bytes_up, bytes_down);
    if (!staleness.empty()) {
      double s = 0.0;
      for (auto v : staleness) s += static_cast<double>(v);
      row.mean_staleness = s / static_cast<double>(staleness.size());
      row.max_staleness = *std::max_element(staleness.begin(), staleness.end());
    }
    grad_sum += row.grad_norm_sq;
    row.running_R = grad_sum / static_cast<double>(log.rows.size() + 1);
    log.rows.push_back(row);
    if (config.target_loss && !log.uploads_to_target && row.loss <= *config.target_loss) {
      log.uploads_to_target = uploads;
    }
  };

  push_row(0.0, {});
  const bool done_at_start = config.target_loss && config.stop_at_target && log.uploads_to_target;

  struct Pending {
    ClientUpdate update;
    JobRecord record;
  };
  std::unordered_map<std::size_t, Pending> pending;
  std::vector<std::int64_t> buffered_staleness;

  auto on_start = [&](const JobStart& js) {
    ClientState& client = clients[js.client_id];
    if (!broadcast) {
      const SyncBundle bundle = nonbroadcast_sync(server, client.hidden_version);
      for (const auto& m : bundle.messages) bytes_down += m.byte_size();
      log.downloads += bundle.messages.size();
      apply_sync(client, bundle);
    }
    JobRecord rec;
    rec.job = js.job;
    rec.client_id = js.client_id;
    rec.arrival_time = js.arrival_time;
    rec.start_time = js.start_time;
    rec.start_fingerprint = fingerprint(client.hidden_copy);
    rec.server_fingerprint = log.hidden_fingerprints.at(static_cast<std::size_t>(client.hidden_version));

    Rng grad_rng = substream(seed, "gradients", js.job);
    const ParameterVector delta = client_local_train(client, task, config.hp, grad_rng);
    Rng quant_rng = substream(seed, "client-quantizer", js.job);
    ClientUpdate update = client_compress(client, delta, config.q_client, quant_rng);
    rec.start_version = update.start_version;
    rec.upload_bits = update.message.bit_size;
    pending.emplace(js.job, Pending{std::move(update), rec});
  };

  auto on_complete = [&](std::size_t job, double time) -> bool {
    auto it = pending.find(job);
    if (it == pending.end()) throw ProtocolError("completion for unknown job " + std::to_string(job));
    Pending p = std::move(it->second);
    pending.erase(it);

    const ReceiveInfo info = server_receive(server, p.update, config.hp);
    ++uploads;
    bytes_up += p.update.message.byte_size();
    p.record.complete_time = time;
    p.record.applied_step = server.step;
    p.record.staleness = info.staleness;
    p.record.weight = info.weight;
    log.jobs.push_back(p.record);
    buffered_staleness.push_back(info.staleness);
    if (server.buffer_count < config.hp.K) return false;

    Rng server_rng = substream(seed, "server-quantizer", static_cast<std::uint64_t>(server.step));
    const QuantizedMessage q = server_flush(server, config.q_server, config.hp, server_rng);
    log.hidden_fingerprints.push_back(fingerprint(server.x_hat));
    log.model_fingerprints.push_back(fingerprint(server.x));
    ++log.broadcasts;
    if (broadcast) {
      for (auto& c : clients) apply_broadcast(c, q, server.step);
      bytes_down += q.byte_size();
      ++log.downloads;
    }
    push_row(time, buffered_staleness);
    buffered_staleness.clear();
    if (server.step >= config.T_max) return true;
    return config.target_loss && config.stop_at_target && log.uploads_to_target.has_value();
  };

  Scheduler scheduler(config.delay, seed, task.n_clients(), config.selection);
  if (!done_at_start) scheduler.run(on_start, on_complete);
  log.trace = scheduler.trace();
  log.max_in_flight = scheduler.max_in_flight();
  log.final_x = server.x;
  log.final_x_hat = server.x_hat;
  return log;
}

MetricsLog run_simulation(const ExperimentConfig& config, std::uint64_t seed) {
  const auto task = build_task(config.task);
  return run_simulation(config, *task, seed);
}

std::vector<TraceAction> generate_trace(const DelayModel& delay, std::size_t n_jobs,
                                        std::uint64_t seed) {
  Scheduler scheduler(delay, seed, 1, ClientSelection::kRoundRobin);
  scheduler.run([](const JobStart&) {}, [](std::size_t, double) { return false; }, n_jobs);
  return scheduler.trace();
}

std::vector<std::int64_t> staleness_trace(const MetricsLog& log) {
  std::vector<std::int64_t> out;
  out.reserve(log.jobs.size());
  for (const auto& j : log.jobs) out.push_back(j.staleness);
  return out;
}

std::vector<std::int64_t> replay_staleness(const std::vector<TraceAction>& trace, std::size_t K) {
  if (K < 1) throw std::invalid_argument("buffer size must be >= 1");
  std::unordered_map<std::size_t, std::int64_t> started_at;
  std::vector<std::int64_t> out;
  std::int64_t version = 0;
  std::size_t buffered = 0;
  for (const auto& a : trace) {
    if (a.kind == TraceAction::Kind::kStart) {
      started_at[a.job] = version;
      continue;
    }
    out.push_back(version - started_at.at(a.job));
    if (++buffered == K) {
      buffered = 0;
      ++version;
    }
  }
  return out;
}

double mean_in_flight(const std::vector<TraceAction>& trace, double from, double to) {
  if (!(to > from)) throw std::invalid_argument("mean_in_flight needs to > from");
  double area = 0.0;
  double last = from;
  long count = 0;
  for (const auto& a : trace) {
    const double t = std::clamp(a.time, from, to);
    area += static_cast<double>(count) * (t - last);
    last = t;
    count += a.kind == TraceAction::Kind::kStart ? 1 : -1;
  }
  area += static_cast<double>(count) * (to - last);
  return area / (to - from);
}

}  // namespace qafel
