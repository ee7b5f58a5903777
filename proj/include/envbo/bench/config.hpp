#pragma once

// Flat `key = value` experiment configs with dotted section keys.

#include "envbo/bench/objectives.hpp"
#include "envbo/optimizer.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

namespace envbo::bench {

struct ValidationSpec {
  int m = 1000;
  int n_samples = 10000;
};

struct BenchConfig {
  ExperimentConfig experiment;
  ObjectiveSpec objective;
  CostSpec cost;
  ValidationSpec validation;
  int runs = 1;
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> objective_seed;  // defaults to seed + run index
  int aggregate_points = 100;
  std::map<std::string, std::string> echo;  // the parsed key/value pairs
};

inline const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys{
      "mode", "report", "runs", "seed", "init.n",
      "objective.id", "objective.dim", "objective.lengthscale", "objective.l_ev", "objective.seed",
      "fidelity.transform", "fidelity.scale",
      "cost.id", "cost.l_c", "cost.min_s", "cost.max_s", "cost.value_s", "cost.time_scale", "cost.floor_frac",
      "budget.total_s", "budget.max_evals", "overhead.clock",
      "hyper.k", "hyper.burn_in", "hyper.thin", "hyper.warm_burn_in", "hyper.noise_rel",
      "pes.n_min_draws", "pes.support_m", "pes.max_redraws", "pes.global_min_constraint",
      "validation.m", "validation.n_samples", "aggregate.points"};
  return keys;
}

/// Parses `key = value` lines; `#` starts a comment.
inline std::map<std::string, std::string> parse_key_values(std::istream& in) {
  std::map<std::string, std::string> out;
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorKind::Config, "line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw Error(ErrorKind::Config, "line " + std::to_string(lineno) + ": empty key");
    if (!out.emplace(key, value).second)
      throw Error(ErrorKind::Config, "line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
  }
  return out;
}

namespace detail {

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw Error(ErrorKind::Config, "key '" + key + "': cannot parse '" + text + "'");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "on") return true;
  if (text == "false" || text == "0" || text == "off") return false;
  throw Error(ErrorKind::Config, "key '" + key + "': expected true or false, got '" + text + "'");
}

inline std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) out += (out.empty() ? "" : ", ") + s;
  return out;
}

}  // namespace detail

inline BenchConfig make_config(const std::map<std::string, std::string>& kv) {
  for (const auto& [key, value] : kv) {
    const auto& keys = config_keys();
    if (std::find(keys.begin(), keys.end(), key) == keys.end())
      throw Error(ErrorKind::Config, "unknown key '" + key + "' (valid: " + detail::join(keys) + ")");
  }
  auto get = [&](const std::string& key) -> const std::string* {
    const auto it = kv.find(key);
    return it == kv.end() ? nullptr : &it->second;
  };
  auto set_int = [&](const std::string& key, int& dst) {
    if (auto v = get(key)) dst = detail::parse_number<int>(key, *v);
  };
  auto set_double = [&](const std::string& key, double& dst) {
    if (auto v = get(key)) dst = detail::parse_number<double>(key, *v);
  };

  BenchConfig c;
  c.echo = kv;
  ExperimentConfig& e = c.experiment;
  if (auto v = get("mode")) {
    if (*v == "ei") e.mode = Mode::EI;
    else if (*v == "pes") e.mode = Mode::PES;
    else if (*v == "envpes") e.mode = Mode::EnvPES;
    else throw Error(ErrorKind::Config, "unknown mode '" + *v + "' (valid: ei, pes, envpes)");
  }
  if (auto v = get("report")) {
    if (*v == "posterior-min") e.report = Report::PosteriorMin;
    else if (*v == "argmin") e.report = Report::Argmin;
    else throw Error(ErrorKind::Config, "unknown report '" + *v + "' (valid: posterior-min, argmin)");
  }
  if (auto v = get("overhead.clock")) {
    if (*v == "wall") e.clock = OverheadClock::Wall;
    else if (*v == "none") e.clock = OverheadClock::None;
    else throw Error(ErrorKind::Config, "unknown overhead.clock '" + *v + "' (valid: wall, none)");
  }
  set_int("runs", c.runs);
  if (auto v = get("seed")) c.seed = detail::parse_number<std::uint64_t>("seed", *v);
  if (auto v = get("objective.seed")) c.objective_seed = detail::parse_number<std::uint64_t>("objective.seed", *v);
  set_int("init.n", e.n_init);

  if (auto v = get("objective.id")) {
    const auto& ids = objective_ids();
    if (std::find(ids.begin(), ids.end(), *v) == ids.end())
      throw Error(ErrorKind::Config, "unknown objective.id '" + *v + "' (valid: " + detail::join(ids) + ")");
    c.objective.id = *v;
  }
  set_int("objective.dim", c.objective.dim);
  set_double("objective.lengthscale", c.objective.lengthscale);
  set_double("objective.l_ev", c.objective.l_ev);
  if (auto v = get("fidelity.transform")) {
    if (*v == "none") c.objective.transform = Transform::None;
    else if (*v == "linear-shift") c.objective.transform = Transform::LinearShift;
    else throw Error(ErrorKind::Config, "unknown fidelity.transform '" + *v + "' (valid: none, linear-shift)");
  }
  if (auto v = get("fidelity.scale")) c.objective.shift_scale = detail::parse_number<double>("fidelity.scale", *v);

  if (auto v = get("cost.id")) {
    const auto& ids = cost_ids();
    if (std::find(ids.begin(), ids.end(), *v) == ids.end())
      throw Error(ErrorKind::Config, "unknown cost.id '" + *v + "' (valid: " + detail::join(ids) + ")");
    c.cost.id = *v;
  }
  set_double("cost.l_c", c.cost.l_c);
  set_double("cost.min_s", c.cost.min_s);
  set_double("cost.max_s", c.cost.max_s);
  set_double("cost.value_s", c.cost.value_s);
  set_double("cost.time_scale", e.time_scale);
  set_double("cost.floor_frac", e.cost_floor_frac);

  set_double("budget.total_s", e.budget_s);
  set_int("budget.max_evals", e.max_evals);

  set_int("hyper.k", e.hyper.k);
  set_int("hyper.burn_in", e.hyper.burn_in);
  set_int("hyper.thin", e.hyper.thin);
  set_int("hyper.warm_burn_in", e.hyper.warm_burn_in);
  set_double("hyper.noise_rel", e.hyper.noise_rel);
  set_int("pes.n_min_draws", e.pes.n_min_draws);
  set_int("pes.support_m", e.pes.support_m);
  set_int("pes.max_redraws", e.pes.max_redraws);
  if (auto v = get("pes.global_min_constraint"))
    e.global_min_constraint = detail::parse_bool("pes.global_min_constraint", *v);

  set_int("validation.m", c.validation.m);
  set_int("validation.n_samples", c.validation.n_samples);
  set_int("aggregate.points", c.aggregate_points);

  if (c.runs < 1) throw Error(ErrorKind::Config, "runs must be at least 1");
  if (!(e.budget_s > 0.0) && e.max_evals <= 0)
    throw Error(ErrorKind::Config, "set budget.total_s or budget.max_evals");
  if (!(e.budget_s > 0.0)) e.budget_s = kInf;
  if (e.n_init < 1) throw Error(ErrorKind::Config, "init.n must be at least 1");
  if (!(e.time_scale > 0.0)) throw Error(ErrorKind::Config, "cost.time_scale must be positive");
  if (c.aggregate_points < 2) throw Error(ErrorKind::Config, "aggregate.points must be at least 2");
  return c;
}

inline BenchConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Config, "cannot open config '" + path + "'");
  return make_config(parse_key_values(in));
}

inline BenchConfig parse_config(const std::string& text) {
  std::istringstream in(text);
  return make_config(parse_key_values(in));
}

}  // namespace envbo::bench
