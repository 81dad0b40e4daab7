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

#include "qafel/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include "json.hpp"
#include <sstream>
#include <stdexcept>

#include "qafel/simulator.hpp"

namespace qafel {
namespace {

constexpr std::size_t kProbePoints = 8;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct MeanStd {
  double mean = kNaN;
  double std = kNaN;
};

// Sample standard deviation; a single value has std 0.
MeanStd mean_std(const std::vector<double>& v) {
  MeanStd r;
  if (v.empty()) return r;
  double s = 0.0;
  for (double x : v) s += x;
  r.mean = s / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - r.mean) * (x - r.mean);
  r.std = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  return r;
}

std::string csv_number(double v) { return format_double(v); }

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  out.close();
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

nlohmann::json row_json(const MetricsRow& r) {
  return {{"t", r.t},
          {"sim_time", r.sim_time},
          {"uploads", r.uploads},
          {"bytes_up", r.bytes_up},
          {"bytes_down", r.bytes_down},
          {"grad_norm_sq", r.grad_norm_sq},
          {"loss", r.loss},
          {"mean_staleness", r.mean_staleness},
          {"max_staleness", r.max_staleness},
          {"running_R", r.running_R}};
}

nlohmann::json summary_json(const RunSummary& s) {
  const auto& p = s.theory;
  return {{"label", s.label},
          {"runs", s.runs},
          {"reached_target", s.reached_target},
          {"uploads_to_target_mean", s.uploads_to_target_mean},
          {"uploads_to_target_std", s.uploads_to_target_std},
          {"MB_up_mean", s.MB_up_mean},
          {"MB_up_std", s.MB_up_std},
          {"MB_down_mean", s.MB_down_mean},
          {"MB_down_std", s.MB_down_std},
          {"kB_per_upload", s.kB_per_upload},
          {"kB_per_broadcast", s.kB_per_broadcast},
          {"steps", s.steps},
          {"final_loss_mean", s.final_loss_mean},
          {"measured_R", s.measured_R},
          {"lr_condition",
           {{"satisfied", s.lr.satisfied}, {"margin", s.lr.margin}, {"max_lhs", s.lr.max_lhs}}},
          {"bound",
           {{"optimization", s.bound.optimization},
            {"drift", s.bound.drift},
            {"quantization", s.bound.quantization},
            {"total", s.bound.total()}}},
          {"constants",
           {{"L", p.L},
            {"sigma2", p.sigma2},
            {"G", p.G},
            {"delta_c", p.delta_c},
            {"delta_s", p.delta_s},
            {"K", p.K},
            {"T", p.T},
            {"tau_max", p.tau_max},
            {"F_star_gap", p.F_star_gap}}}};
}

}  // namespace

TheoryParams estimate_theory_params(const ExperimentConfig& config, const Task& task,
                                    std::span<const MetricsLog> logs) {
  const auto d = static_cast<std::uint32_t>(task.dim());
  TheoryParams p;
  p.L = task.smoothness();
  p.delta_c = compression_parameter(config.q_client, d);
  p.delta_s = compression_parameter(config.q_server, d);
  p.server_quantizer_biased = !is_unbiased(config.q_server);
  p.K = config.hp.K;
  p.eta_g = config.hp.eta_g;
  p.eta_l = config.hp.eta_l;

  std::int64_t steps = std::numeric_limits<std::int64_t>::max();
  double radius = 1.0;
  double lowest = std::numeric_limits<double>::infinity();
  for (const auto& log : logs) {
    steps = std::min<std::int64_t>(steps, static_cast<std::int64_t>(log.rows.size()) - 1);
    for (const auto& job : log.jobs) p.tau_max = std::max(p.tau_max, static_cast<double>(job.staleness));
    for (const auto& row : log.rows) lowest = std::min(lowest, row.loss);
    if (!log.final_x.empty()) radius = std::max(radius, std::sqrt(squared_norm(to_real(log.final_x))));
  }
  p.T = std::max<std::int64_t>(1, logs.empty() ? 1 : steps);

  const RealVector x0(task.dim(), 0.0);
  const double f0 = task.loss(x0);
  if (const auto xs = task.minimizer()) {
    p.F_star_gap = f0 - task.loss(*xs);
  } else if (std::isfinite(lowest)) {
    p.F_star_gap = f0 - lowest;
  }
  p.F_star_gap = std::max(p.F_star_gap, 0.0);

  Rng rng = substream(config.seeds.empty() ? 0 : config.seeds.front(), "constants");
  const auto est = estimate_constants(task, kProbePoints, rng, x0, radius);
  p.sigma2 = est.sigma2_hat;
  p.G = est.G_hat;
  return p;
}

RunSummary summarize(const ExperimentConfig& config, const Task& task, std::span<const MetricsLog> logs) {
  RunSummary s;
  s.runs = logs.size();
  std::vector<double> uploads, up, down, per_upload, per_broadcast, final_loss;
  for (const auto& log : logs) {
    const auto c = comm_summary(log);
    up.push_back(c.MB_uploaded);
    down.push_back(c.MB_broadcast);
    per_upload.push_back(c.kB_per_upload);
    per_broadcast.push_back(c.kB_per_broadcast);
    if (!log.rows.empty()) final_loss.push_back(log.rows.back().loss);
    if (log.uploads_to_target) uploads.push_back(static_cast<double>(*log.uploads_to_target));
  }
  s.reached_target = uploads.size();
  const auto u = mean_std(uploads);
  s.uploads_to_target_mean = u.mean;
  s.uploads_to_target_std = u.std;
  const auto mu = mean_std(up);
  s.MB_up_mean = mu.mean;
  s.MB_up_std = mu.std;
  const auto md = mean_std(down);
  s.MB_down_mean = md.mean;
  s.MB_down_std = md.std;
  s.kB_per_upload = mean_std(per_upload).mean;
  s.kB_per_broadcast = mean_std(per_broadcast).mean;
  s.final_loss_mean = mean_std(final_loss).mean;
  if (logs.empty()) return s;

  s.theory = estimate_theory_params(config, task, logs);
  s.steps = s.theory.T;
  s.measured_R = convergence_rate(logs, s.theory.T);
  s.lr = lr_condition(s.theory);
  s.bound = theoretical_bound(s.theory);
  return s;
}

ResultBundle run_experiment(const ExperimentConfig& config) {
  if (const auto errors = validate_config(config); !errors.empty()) throw ConfigError(errors);
  const auto task = build_task(config.task);
  ResultBundle bundle;
  bundle.config = config;
  for (const auto seed : config.seeds) bundle.logs.push_back(run_simulation(config, *task, seed));
  bundle.summary = summarize(config, *task, bundle.logs);
  return bundle;
}

GridAxis parse_grid_axis(std::string_view text) {
  const auto eq = text.find('=');
  if (eq == std::string_view::npos || eq == 0 || eq + 1 == text.size()) {
    throw ConfigError({"grid axis must look like key=v1,v2,... got '" + std::string(text) + "'"});
  }
  GridAxis axis;
  axis.key = std::string(text.substr(0, eq));
  std::string_view rest = text.substr(eq + 1);
  while (true) {
    const auto comma = rest.find(',');
    axis.values.emplace_back(rest.substr(0, comma));
    if (axis.values.back().empty()) throw ConfigError({"empty value in grid axis '" + axis.key + "'"});
    if (comma == std::string_view::npos) break;
    rest.remove_prefix(comma + 1);
  }
  return axis;
}

std::vector<ResultBundle> run_sweep(const ExperimentConfig& base, const std::vector<GridAxis>& grid) {
  std::size_t points = 1;
  for (const auto& axis : grid) {
    if (axis.values.empty()) throw ConfigError({"grid axis '" + axis.key + "' has no values"});
    points *= axis.values.size();
  }
  // Validate every point before running any of them.
  std::vector<std::pair<std::string, ExperimentConfig>> configs;
  std::vector<std::string> errors;
  for (std::size_t i = 0; i < points; ++i) {
    std::vector<std::pair<std::string, std::string>> overrides;
    std::string label;
    std::size_t rem = i;
    std::vector<std::size_t> idx(grid.size());
    for (std::size_t a = grid.size(); a-- > 0;) {
      idx[a] = rem % grid[a].values.size();
      rem /= grid[a].values.size();
    }
    for (std::size_t a = 0; a < grid.size(); ++a) {
      const auto& value = grid[a].values[idx[a]];
      overrides.emplace_back(grid[a].key, value);
      label += (a ? ";" : "") + grid[a].key + "=" + value;
    }
    try {
      configs.emplace_back(label, with_overrides(base, overrides));
    } catch (const ConfigError& e) {
      for (const auto& v : e.violations()) errors.push_back(label + ": " + v);
    }
  }
  if (!errors.empty()) throw ConfigError(errors);

  std::vector<ResultBundle> results;
  for (auto& [label, config] : configs) {
    auto bundle = run_experiment(config);
    bundle.summary.label = label;
    results.push_back(std::move(bundle));
  }
  return results;
}

std::string metrics_csv(const MetricsLog& log) {
  std::ostringstream out;
  out << "t,sim_time,uploads,bytes_up,bytes_down,grad_norm_sq,loss,mean_staleness,max_staleness,running_R\n";
  for (const auto& r : log.rows) {
    out << r.t << ',' << csv_number(r.sim_time) << ',' << r.uploads << ',' << r.bytes_up << ','
        << r.bytes_down << ',' << csv_number(r.grad_norm_sq) << ',' << csv_number(r.loss) << ','
        << csv_number(r.mean_staleness) << ',' << r.max_staleness << ',' << csv_number(r.running_R) << '\n';
  }
  return out.str();
}

std::string summary_csv(std::span<const ResultBundle> results) {
  std::ostringstream out;
  out << "label,runs,reached_target,uploads_to_target_mean,uploads_to_target_std,MB_up_mean,MB_up_std,"
         "MB_down_mean,MB_down_std,kB_per_upload,kB_per_broadcast,steps,final_loss_mean,measured_R,"
         "lr_satisfied,lr_margin,bound_optimization,bound_drift,bound_quantization,bound_total\n";
  for (const auto& b : results) {
    const auto& s = b.summary;
    out << s.label << ',' << s.runs << ',' << s.reached_target << ',' << csv_number(s.uploads_to_target_mean)
        << ',' << csv_number(s.uploads_to_target_std) << ',' << csv_number(s.MB_up_mean) << ','
        << csv_number(s.MB_up_std) << ',' << csv_number(s.MB_down_mean) << ',' << csv_number(s.MB_down_std)
        << ',' << csv_number(s.kB_per_upload) << ',' << csv_number(s.kB_per_broadcast) << ',' << s.steps
        << ',' << csv_number(s.final_loss_mean) << ',' << csv_number(s.measured_R) << ','
        << (s.lr.satisfied ? "true" : "false") << ',' << csv_number(s.lr.margin) << ','
        << csv_number(s.bound.optimization) << ',' << csv_number(s.bound.drift) << ','
        << csv_number(s.bound.quantization) << ',' << csv_number(s.bound.total()) << '\n';
  }
  return out.str();
}

std::string results_json(std::span<const ResultBundle> results) {
  auto doc = nlohmann::json::array();
  for (const auto& b : results) {
    auto runs = nlohmann::json::array();
    for (const auto& log : b.logs) {
      auto rows = nlohmann::json::array();
      for (const auto& r : log.rows) rows.push_back(row_json(r));
      runs.push_back({{"seed", log.seed},
                      {"uploads_to_target", log.uploads_to_target ? nlohmann::json(*log.uploads_to_target)
                                                                  : nlohmann::json(nullptr)},
                      {"broadcasts", log.broadcasts},
                      {"downloads", log.downloads},
                      {"max_in_flight", log.max_in_flight},
                      {"rows", std::move(rows)}});
    }
    doc.push_back({{"config", serialize_config(b.config)},
                   {"summary", summary_json(b.summary)},
                   {"runs", std::move(runs)}});
  }
  return nlohmann::json{{"results", std::move(doc)}}.dump(2) + "\n";
}

void emit(std::span<const ResultBundle> results, OutputFormat format, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
  if (format == OutputFormat::kJson) {
    write_file(dir / "results.json", results_json(results));
    return;
  }
  write_file(dir / "summary.csv", summary_csv(results));
  for (std::size_t i = 0; i < results.size(); ++i) {
    for (const auto& log : results[i].logs) {
      write_file(dir / ("run" + std::to_string(i) + "_seed" + std::to_string(log.seed) + ".csv"),
                 metrics_csv(log));
    }
  }
}

}  // namespace qafel
