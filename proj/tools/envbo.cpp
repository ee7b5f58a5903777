// Command-line front end: run experiments, run the support-sampler study and
// re-aggregate trace directories.

#include "envbo/bench/experiment.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace fs = std::filesystem;
using namespace envbo;
using namespace envbo::bench;

namespace {

struct Options {
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::optional<int> runs;
  int jobs = 1;
  int points = 100;
};

BenchConfig load(const Options& o) {
  BenchConfig cfg = load_config(o.config);
  if (o.seed) {
    cfg.seed = *o.seed;
    cfg.echo["seed"] = std::to_string(*o.seed);
  }
  if (o.runs) {
    if (*o.runs < 1) throw Error(ErrorKind::Config, "--runs must be at least 1");
    cfg.runs = *o.runs;
    cfg.echo["runs"] = std::to_string(*o.runs);
  }
  return cfg;
}

int cmd_run(const Options& o) {
  const BenchConfig cfg = load(o);
  const ExperimentResult res = run_experiment(cfg, fs::path(o.out), o.jobs);
  nlohmann::ordered_json summary;
  summary["runs"] = cfg.runs;
  summary["failed_runs"] = res.failed_runs;
  summary["out"] = o.out;
  std::cout << summary.dump() << '\n';
  return res.failed_runs == 0 ? 0 : 3;
}

int cmd_validate(const Options& o) {
  const BenchConfig cfg = load(o);
  fs::create_directories(o.out);
  const auto rows = run_sampler_validation(cfg, o.jobs);
  std::ofstream csv(fs::path(o.out) / "sampler_metrics.csv");
  write_sampler_csv(csv, rows);
  const auto summary = summarize_samplers(rows);
  std::ofstream sum(fs::path(o.out) / "sampler_summary.csv");
  write_sampler_summary_csv(sum, cfg.objective.id, summary);
  write_sampler_summary_csv(std::cout, cfg.objective.id, summary);
  return 0;
}

int cmd_aggregate(const Options& o) {
  const auto rows = aggregate_directory(o.out, o.points);
  std::cout << nlohmann::json{{"rows", rows.size()}, {"file", (fs::path(o.out) / "aggregate.csv").string()}}.dump()
            << '\n';
  return 0;
}

void error_line(const std::string& kind, const std::string& message) {
  std::cerr << nlohmann::json{{"error", kind}, {"message", message}}.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cost-aware Bayesian optimization benchmarks"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "experiment config file")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--seed", o.seed, "base seed, overrides the config");
    sub->add_option("--runs", o.runs, "number of runs, overrides the config");
    sub->add_option("--jobs", o.jobs, "concurrent runs")->check(CLI::PositiveNumber);
  };
  CLI::App* run = app.add_subcommand("run", "run an experiment and aggregate its traces");
  add_common(run);
  CLI::App* validate = app.add_subcommand("validate-sampler", "compare support-point samplers along optimization runs");
  add_common(validate);
  CLI::App* aggregate = app.add_subcommand("aggregate", "re-aggregate the traces in a directory");
  aggregate->add_option("--out", o.out, "directory holding run_*.csv")->required()->check(CLI::ExistingDirectory);
  aggregate->add_option("--points", o.points, "cost grid size")->check(CLI::Range(2, 100000));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    error_line("usage", e.what());
    return 2;
  }

  try {
    if (*run) return cmd_run(o);
    if (*validate) return cmd_validate(o);
    return cmd_aggregate(o);
  } catch (const Error& e) {
    error_line(to_string(e.kind()), e.what());
  } catch (const std::exception& e) {
    error_line("internal", e.what());
  }
  return 1;
}
