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

#include "qafel/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace qafel {
namespace {

using Errors = std::vector<std::string>;

std::string_view trim(std::string_view s) {
  const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r'; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_list(std::string_view s) {
  std::vector<std::string_view> out;
  while (true) {
    const auto comma = s.find(',');
    out.push_back(trim(s.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    s.remove_prefix(comma + 1);
  }
  return out;
}

template <typename T>
bool parse_number(std::string_view text, T& out) {
  if (text.empty()) return false;
  if (text.front() == '+') text.remove_prefix(1);
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, out);
  return ec == std::errc() && ptr == end;
}

struct Entry {
  std::string value;
  std::size_t line = 0;
};

class Reader {
 public:
  Reader(const std::string& key, const Entry& entry, Errors& errors)
      : key_(key), entry_(entry), errors_(errors) {}

  void fail(const std::string& what) const {
    errors_.push_back("line " + std::to_string(entry_.line) + ": " + key_ + ": " + what);
  }

  template <typename T>
  void unsigned_value(T& out) const {
    std::uint64_t v = 0;
    if (!parse_number(entry_.value, v) || v > std::numeric_limits<T>::max()) {
      fail("expected a non-negative integer, got '" + entry_.value + "'");
      return;
    }
    out = static_cast<T>(v);
  }

  void integer(std::int64_t& out) const {
    if (!parse_number(entry_.value, out)) fail("expected an integer, got '" + entry_.value + "'");
  }

  void real(double& out) const {
    double v = 0.0;
    if (!parse_number(entry_.value, v) || !std::isfinite(v)) {
      fail("expected a finite number, got '" + entry_.value + "'");
      return;
    }
    out = v;
  }

  void boolean(bool& out) const {
    if (entry_.value == "true") {
      out = true;
    } else if (entry_.value == "false") {
      out = false;
    } else {
      fail("expected true or false, got '" + entry_.value + "'");
    }
  }

  void quantizer(QuantizerSpec& out) const {
    try {
      out = QuantizerSpec::parse(entry_.value);
    } catch (const QuantizerError& e) {
      fail(e.what());
    }
  }

  const std::string& text() const { return entry_.value; }

 private:
  const std::string& key_;
  const Entry& entry_;
  Errors& errors_;
};

using Setter = std::function<void(ExperimentConfig&, const Reader&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"task.kind",
       [](ExperimentConfig& c, const Reader& r) {
         if (r.text() == "quadratic") {
           c.task.kind = TaskKind::kQuadratic;
         } else if (r.text() == "logistic") {
           c.task.kind = TaskKind::kLogistic;
         } else {
           r.fail("expected quadratic or logistic, got '" + r.text() + "'");
         }
       }},
      {"task.clients", [](ExperimentConfig& c, const Reader& r) { r.unsigned_value(c.task.n_clients); }},
      {"task.dim", [](ExperimentConfig& c, const Reader& r) { r.unsigned_value(c.task.dim); }},
      {"task.heterogeneity", [](ExperimentConfig& c, const Reader& r) { r.real(c.task.heterogeneity); }},
      {"task.rows", [](ExperimentConfig& c, const Reader& r) { r.unsigned_value(c.task.rows); }},
      {"task.skew", [](ExperimentConfig& c, const Reader& r) { r.real(c.task.partition.skew); }},
      {"task.samples_min",
       [](ExperimentConfig& c, const Reader& r) { r.unsigned_value(c.task.partition.samples_min); }},
      {"task.samples_max",
       [](ExperimentConfig& c, const Reader& r) { r.unsigned_value(c.task.partition.samples_max); }},
      {"task.l2", [](ExperimentConfig& c, const Reader& r) { r.real(c.task.l2_reg); }},
      {"task.seed", [](ExperimentConfig& c, const Reader& r) { r.unsigned_value(c.task.seed); }},
      {"hp.eta_g", [](ExperimentConfig& c, const Reader& r) { r.real(c.hp.eta_g); }},
      {"hp.eta_l",
       [](ExperimentConfig& c, const Reader& r) {
         std::vector<double> rates;
         for (auto item : split_list(r.text())) {
           double v = 0.0;
           if (!parse_number(item, v) || !std::isfinite(v)) {
             r.fail("expected a comma-separated list of numbers, got '" + r.text() + "'");
             return;
           }
           rates.push_back(v);
         }
         c.hp.eta_l = std::move(rates);
       }},
      {"hp.K", [](ExperimentConfig& c, const Reader& r) { r.unsigned_value(c.hp.K); }},
      {"hp.beta", [](ExperimentConfig& c, const Reader& r) { r.real(c.hp.momentum_beta); }},
      {"hp.staleness_scaling",
       [](ExperimentConfig& c, const Reader& r) { r.boolean(c.hp.staleness_scaling); }},
      {"quant.client", [](ExperimentConfig& c, const Reader& r) { r.quantizer(c.q_client); }},
      {"quant.server", [](ExperimentConfig& c, const Reader& r) { r.quantizer(c.q_server); }},
      {"delay.sigma", [](ExperimentConfig& c, const Reader& r) { r.real(c.delay.sigma); }},
      {"delay.rate", [](ExperimentConfig& c, const Reader& r) { r.real(c.delay.arrival_rate); }},
      {"delay.concurrency",
       [](ExperimentConfig& c, const Reader& r) { r.unsigned_value(c.delay.concurrency_cap); }},
      {"run.T_max", [](ExperimentConfig& c, const Reader& r) { r.integer(c.T_max); }},
      {"run.target_loss",
       [](ExperimentConfig& c, const Reader& r) {
         if (r.text() == "none") {
           c.target_loss.reset();
           return;
         }
         double v = 0.0;
         r.real(v);
         c.target_loss = v;
       }},
      {"run.stop_at_target", [](ExperimentConfig& c, const Reader& r) { r.boolean(c.stop_at_target); }},
      {"run.seeds",
       [](ExperimentConfig& c, const Reader& r) {
         std::vector<std::uint64_t> seeds;
         for (auto item : split_list(r.text())) {
           std::uint64_t v = 0;
           if (!parse_number(item, v)) {
             r.fail("expected a comma-separated list of non-negative integers, got '" + r.text() + "'");
             return;
           }
           seeds.push_back(v);
         }
         c.seeds = std::move(seeds);
       }},
      {"run.selection",
       [](ExperimentConfig& c, const Reader& r) {
         if (r.text() == "round-robin") {
           c.selection = ClientSelection::kRoundRobin;
         } else if (r.text() == "uniform") {
           c.selection = ClientSelection::kUniform;
         } else {
           r.fail("expected round-robin or uniform, got '" + r.text() + "'");
         }
       }},
      {"mode.broadcast",
       [](ExperimentConfig& c, const Reader& r) {
         bool broadcast = true;
         r.boolean(broadcast);
         c.hp.mode = broadcast ? SyncMode::kBroadcast : SyncMode::kNonBroadcast;
       }},
      {"mode.c_max", [](ExperimentConfig& c, const Reader& r) { r.unsigned_value(c.c_max); }},
  };
  return table;
}

// Skewed logistic regression: 100 clients, QSGD 4-bit both ways.
ExperimentConfig skewed_logistic_preset() {
  ExperimentConfig c;
  c.preset = "skewed-logistic";
  c.task.kind = TaskKind::kLogistic;
  c.task.n_clients = 100;
  c.task.dim = 16;
  c.task.partition.skew = 0.5;
  c.hp.eta_g = 1000.0;
  c.hp.eta_l = {4.7e-6};
  c.hp.K = 10;
  c.hp.momentum_beta = 0.3;
  c.hp.staleness_scaling = true;
  c.q_client = QuantizerSpec::qsgd_bits(4);
  c.q_server = QuantizerSpec::qsgd_bits(4);
  c.delay = {1.0, 125.0, 100};
  c.T_max = 1000;
  return c;
}

std::map<std::string, Entry> read_entries(std::string_view text, Errors& errors) {
  std::map<std::string, Entry> entries;
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    auto line = trim(text.substr(0, nl));
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      errors.push_back("line " + std::to_string(line_no) + ": expected key = value");
      continue;
    }
    const std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) {
      errors.push_back("line " + std::to_string(line_no) + ": empty key");
      continue;
    }
    if (key != "preset" && key != "hp.P" && setters().count(key) == 0) {
      errors.push_back("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
      continue;
    }
    if (!entries.emplace(key, Entry{value, line_no}).second) {
      errors.push_back("line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
  }
  return entries;
}

ExperimentConfig build(const std::map<std::string, Entry>& entries, Errors& errors) {
  ExperimentConfig config;
  if (auto it = entries.find("preset"); it != entries.end()) {
    if (it->second.value == "skewed-logistic") {
      config = skewed_logistic_preset();
    } else {
      errors.push_back("line " + std::to_string(it->second.line) + ": preset: unknown preset '" +
                       it->second.value + "'");
    }
  }
  for (const auto& [key, entry] : entries) {
    if (auto s = setters().find(key); s != setters().end()) {
      s->second(config, Reader(key, entry, errors));
    }
  }
  // hp.P sizes the local-rate schedule: a single rate is repeated, a full
  // list must agree with it.
  if (auto it = entries.find("hp.P"); it != entries.end()) {
    std::size_t p = 0;
    const Reader reader(it->first, it->second, errors);
    if (!parse_number(std::string_view(it->second.value), p) || p < 1) {
      reader.fail("expected an integer >= 1, got '" + it->second.value + "'");
    } else if (config.hp.eta_l.size() == 1) {
      config.hp.eta_l.assign(p, config.hp.eta_l.front());
    } else if (config.hp.eta_l.size() != p) {
      reader.fail("hp.eta_l lists " + std::to_string(config.hp.eta_l.size()) + " rates but hp.P = " +
                  std::to_string(p));
    }
  }
  return config;
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> violations)
    : std::invalid_argument([&] {
        std::string joined = "invalid config";
        for (const auto& v : violations) joined += "\n  " + v;
        return joined;
      }()),
      violations_(std::move(violations)) {}

std::vector<std::string> validate_config(const ExperimentConfig& c) {
  Errors errors = c.hp.violations();
  const auto& t = c.task;
  if (t.n_clients < 1) errors.push_back("task.clients must be >= 1");
  if (t.dim < 1 || t.dim > kMaxWireDim) errors.push_back("task.dim must be in [1, 2^28 - 1]");
  if (!(t.heterogeneity >= 0.0)) errors.push_back("task.heterogeneity must be >= 0");
  if (!(t.partition.skew >= 0.0 && t.partition.skew <= 1.0)) errors.push_back("task.skew must be in [0, 1]");
  if (t.partition.samples_min < 1 || t.partition.samples_min > t.partition.samples_max) {
    errors.push_back("task.samples_min must be in [1, task.samples_max]");
  }
  if (!(t.l2_reg >= 0.0)) errors.push_back("task.l2 must be >= 0");
  if (!is_unbiased(c.q_client)) errors.push_back("client quantizer must be unbiased");
  if (t.dim >= 1 && t.dim <= kMaxWireDim) {
    for (const auto& [name, q] : {std::pair{"quant.client", c.q_client}, std::pair{"quant.server", c.q_server}}) {
      try {
        validate(q, static_cast<std::uint32_t>(t.dim));
      } catch (const QuantizerError& e) {
        errors.push_back(std::string(name) + ": " + e.what());
      }
    }
  }
  if (!(c.delay.sigma > 0.0)) errors.push_back("delay.sigma must be > 0");
  if (!(c.delay.arrival_rate > 0.0)) errors.push_back("delay.rate must be > 0");
  if (c.delay.concurrency_cap < 1) errors.push_back("delay.concurrency must be >= 1");
  if (c.T_max < 1) errors.push_back("run.T_max must be >= 1");
  if (c.target_loss && !std::isfinite(*c.target_loss)) errors.push_back("run.target_loss must be finite");
  if (c.seeds.empty()) errors.push_back("run.seeds needs at least one seed");
  if (std::set<std::uint64_t>(c.seeds.begin(), c.seeds.end()).size() != c.seeds.size()) {
    errors.push_back("run.seeds must be distinct");
  }
  return errors;
}

ExperimentConfig parse_config(std::string_view text) {
  Errors errors;
  const auto entries = read_entries(text, errors);
  ExperimentConfig config = build(entries, errors);
  if (errors.empty()) errors = validate_config(config);
  if (!errors.empty()) throw ConfigError(std::move(errors));
  return config;
}

std::string format_double(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

std::string serialize_config(const ExperimentConfig& c) {
  std::ostringstream out;
  const auto line = [&](const char* key, const std::string& value) { out << key << " = " << value << '\n'; };
  const auto join = [](const auto& values, auto fmt) {
    std::string s;
    for (std::size_t i = 0; i < values.size(); ++i) s += (i ? "," : "") + fmt(values[i]);
    return s;
  };
  const auto flag = [](bool b) { return std::string(b ? "true" : "false"); };
  if (!c.preset.empty()) line("preset", c.preset);
  line("task.kind", c.task.kind == TaskKind::kQuadratic ? "quadratic" : "logistic");
  line("task.clients", std::to_string(c.task.n_clients));
  line("task.dim", std::to_string(c.task.dim));
  line("task.heterogeneity", format_double(c.task.heterogeneity));
  line("task.rows", std::to_string(c.task.rows));
  line("task.skew", format_double(c.task.partition.skew));
  line("task.samples_min", std::to_string(c.task.partition.samples_min));
  line("task.samples_max", std::to_string(c.task.partition.samples_max));
  line("task.l2", format_double(c.task.l2_reg));
  line("task.seed", std::to_string(c.task.seed));
  line("hp.eta_g", format_double(c.hp.eta_g));
  line("hp.eta_l", join(c.hp.eta_l, format_double));
  line("hp.P", std::to_string(c.hp.P()));
  line("hp.K", std::to_string(c.hp.K));
  line("hp.beta", format_double(c.hp.momentum_beta));
  line("hp.staleness_scaling", flag(c.hp.staleness_scaling));
  line("quant.client", c.q_client.to_string());
  line("quant.server", c.q_server.to_string());
  line("delay.sigma", format_double(c.delay.sigma));
  line("delay.rate", format_double(c.delay.arrival_rate));
  line("delay.concurrency", std::to_string(c.delay.concurrency_cap));
  line("run.T_max", std::to_string(c.T_max));
  line("run.target_loss", c.target_loss ? format_double(*c.target_loss) : "none");
  line("run.stop_at_target", flag(c.stop_at_target));
  line("run.seeds", join(c.seeds, [](std::uint64_t s) { return std::to_string(s); }));
  line("run.selection", c.selection == ClientSelection::kRoundRobin ? "round-robin" : "uniform");
  line("mode.broadcast", flag(c.hp.mode == SyncMode::kBroadcast));
  line("mode.c_max", std::to_string(c.c_max));
  return out.str();
}

ExperimentConfig with_overrides(const ExperimentConfig& base,
                                const std::vector<std::pair<std::string, std::string>>& overrides) {
  Errors errors;
  auto entries = read_entries(serialize_config(base), errors);
  for (const auto& [key, value] : overrides) {
    if (key != "preset" && key != "hp.P" && setters().count(key) == 0) {
      errors.push_back("override: unknown key '" + key + "'");
      continue;
    }
    entries[key] = Entry{value, 0};
    // A new rate list must not be checked against the old P.
    if (key == "hp.eta_l") entries.erase("hp.P");
    if (key == "hp.P" && overrides.end() == std::find_if(overrides.begin(), overrides.end(),
                                                        [](const auto& o) { return o.first == "hp.eta_l"; })) {
      const auto& rates = base.hp.eta_l;
      if (!rates.empty() && std::all_of(rates.begin(), rates.end(), [&](double r) { return r == rates[0]; })) {
        entries["hp.eta_l"] = Entry{format_double(rates[0]), 0};
      }
    }
  }
  ExperimentConfig config = build(entries, errors);
  if (errors.empty()) errors = validate_config(config);
  if (!errors.empty()) throw ConfigError(std::move(errors));
  return config;
}

std::vector<std::string> preset_names() { return {"skewed-logistic"}; }

std::shared_ptr<const Task> build_task(const TaskSpec& spec) {
  if (spec.kind == TaskKind::kQuadratic) {
    return make_quadratic_task(spec.n_clients, spec.dim, spec.heterogeneity, spec.seed, spec.rows);
  }
  PartitionConfig partition = spec.partition;
  partition.seed = spec.seed;
  return make_logistic_task(spec.n_clients, spec.dim, partition, spec.l2_reg);
}

std::size_t effective_c_max(const ExperimentConfig& config) {
  if (config.c_max > 0) return config.c_max;
  const auto d = static_cast<std::uint32_t>(config.task.dim);
  const auto model_bits = encoded_bits(QuantizerSpec::identity(), d);
  const auto message_bits = encoded_bits(config.q_server, d);
  return std::max<std::size_t>(1, model_bits / message_bits);
}

}  // namespace qafel
