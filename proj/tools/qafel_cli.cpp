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

// Command-line driver: run, sweep and validate experiment configs.

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "qafel/config.hpp"
#include "qafel/experiment.hpp"

namespace {

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void print_violations(const qafel::ConfigError& e) {
  std::cerr << "invalid config:\n";
  for (const auto& v : e.violations()) std::cerr << "  " << v << '\n';
}

void print_summary(const qafel::RunSummary& s) {
  using qafel::format_double;
  if (!s.label.empty()) std::cout << s.label << '\n';
  std::cout << "  runs " << s.runs << ", reached target " << s.reached_target << '\n'
            << "  uploads to target " << format_double(s.uploads_to_target_mean) << " +- "
            << format_double(s.uploads_to_target_std) << '\n'
            << "  MB up " << format_double(s.MB_up_mean) << " +- " << format_double(s.MB_up_std)
            << ", MB down " << format_double(s.MB_down_mean) << " +- " << format_double(s.MB_down_std) << '\n'
            << "  R over " << s.steps << " steps " << format_double(s.measured_R) << ", bound "
            << format_double(s.bound.total()) << ", lr condition "
            << (s.lr.satisfied ? "satisfied" : "violated") << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Buffered asynchronous federated learning simulator"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "results";
  std::string format = "csv";
  std::vector<std::string> grid;
  std::uint64_t seed_override = 0;

  auto* run = app.add_subcommand("run", "Run one experiment over the configured seeds");
  run->add_option("config", config_path, "Config file")->required();
  run->add_option("--out", out_dir, "Output directory");
  run->add_option("--format", format, "Output format")->check(CLI::IsMember({"csv", "json"}));
  auto* seed_opt = run->add_option("--seed-override", seed_override, "Run this single seed instead");

  auto* sweep = app.add_subcommand("sweep", "Run the config over a grid of overrides");
  sweep->add_option("config", config_path, "Config file")->required();
  sweep->add_option("--grid", grid, "Axis as key=v1,v2,... (repeatable)")->required();
  sweep->add_option("--out", out_dir, "Output directory");
  sweep->add_option("--format", format, "Output format")->check(CLI::IsMember({"csv", "json"}));

  auto* validate = app.add_subcommand("validate", "Check a config and report every violation");
  validate->add_option("config", config_path, "Config file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    auto config = qafel::parse_config(read_text(config_path));
    if (validate->parsed()) {
      std::cout << "ok\n";
      return 0;
    }
    const auto fmt = format == "json" ? qafel::OutputFormat::kJson : qafel::OutputFormat::kCsv;
    std::vector<qafel::ResultBundle> results;
    if (run->parsed()) {
      if (*seed_opt) config.seeds = {seed_override};
      results.push_back(qafel::run_experiment(config));
    } else {
      std::vector<qafel::GridAxis> axes;
      for (const auto& g : grid) axes.push_back(qafel::parse_grid_axis(g));
      results = qafel::run_sweep(config, axes);
    }
    for (const auto& r : results) print_summary(r.summary);
    qafel::emit(results, fmt, out_dir);
    std::cout << "wrote " << out_dir << '\n';
  } catch (const qafel::ConfigError& e) {
    print_violations(e);
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
