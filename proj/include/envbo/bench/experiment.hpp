#pragma once

// Experiment runner: independent seeded runs, per-run trace files, aggregate
// regret curves over cumulative cost, and the support-sampler study.

#include "envbo/bench/config.hpp"

#include <json.hpp>

#include <atomic>
#include <filesystem>
#include <iomanip>
#include <mutex>
#include <thread>

namespace envbo::bench {

inline constexpr const char* kVersion = "0.1.0";

struct RunSetup {
  std::shared_ptr<const Objective> objective;
  Problem problem;
  ExperimentConfig experiment;
  std::uint64_t objective_seed = 0;
};

inline RunSetup make_run(const BenchConfig& cfg, int run) {
  RunSetup out;
  const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(run);
  out.objective_seed = cfg.objective_seed.value_or(seed);
  out.objective = std::make_shared<const Objective>(cfg.objective, out.objective_seed);
  out.problem.x_box = out.objective->box();
  out.problem.value = [obj = out.objective](const Vector& x, double s) { return (*obj)(x, s); };
  out.problem.cost = make_cost(cfg.cost);
  out.problem.f_star = out.objective->f_star();
  out.experiment = cfg.experiment;
  out.experiment.seed = seed;
  return out;
}

inline std::string run_stem(int run) {
  std::ostringstream s;
  s << "run_" << std::setw(3) << std::setfill('0') << run;
  return s.str();
}

inline nlohmann::ordered_json run_metadata(const BenchConfig& cfg, const RunSetup& setup, const Trace& trace) {
  nlohmann::ordered_json meta;
  meta["version"] = kVersion;
  meta["mode"] = to_string(setup.experiment.mode);
  meta["seed"] = setup.experiment.seed;
  meta["objective"] = cfg.objective.id;
  meta["objective_seed"] = setup.objective_seed;
  meta["f_star"] = setup.problem.f_star;
  meta["shift_scale"] = setup.objective->shift_scale();
  meta["rows"] = trace.rows.size();
  meta["error"] = trace.error;
  meta["config"] = cfg.echo;
  return meta;
}

/// Runs `fn(i)` for i in [0, n) on up to `jobs` threads. The first exception
/// is rethrown after all workers finish.
inline void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
  jobs = std::clamp(jobs, 1, std::max(n, 1));
  std::atomic<int> next{0};
  std::exception_ptr first;
  std::mutex mu;
  auto worker = [&] {
    for (int i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!first) first = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (first) std::rethrow_exception(first);
}

struct CurvePoint {
  double cum_eval = 0.0;
  double cum_total = 0.0;
  double ir = kNaN;
};

/// The cost and regret columns of a trace CSV.
inline std::vector<CurvePoint> read_trace_curve(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::InvalidRecord, "empty trace file");
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(s);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!s.empty() && s.back() == ',') out.emplace_back();
    return out;
  };
  const auto header = split(line);
  auto column = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw Error(ErrorKind::InvalidRecord, "trace lacks column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t ce = column("cum_eval_cost_s"), ct = column("cum_total_cost_s"), ir = column("immediate_regret");
  std::vector<CurvePoint> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() < header.size()) throw Error(ErrorKind::InvalidRecord, "short trace row");
    out.push_back({std::stod(cells[ce]), std::stod(cells[ct]), std::stod(cells[ir])});
  }
  return out;
}

inline std::vector<CurvePoint> curve_of(const Trace& trace) {
  std::vector<CurvePoint> out;
  for (const auto& r : trace.rows) out.push_back({r.cum_eval_cost_s, r.cum_total_cost_s, r.immediate_regret});
  return out;
}

struct AggregateRow {
  std::string axis;  // "eval" or "total"
  double cost = 0.0;
  int count = 0;
  double median = kNaN, q25 = kNaN, q75 = kNaN;
};

/// Median and quartiles of immediate regret on a log-spaced cost grid, per
/// cost axis. A run contributes at cost c when it has a recommendation at or
/// before c and has not yet ended; its value is the latest one.
inline std::vector<AggregateRow> aggregate_curves(const std::vector<std::vector<CurvePoint>>& runs, int points) {
  std::vector<AggregateRow> out;
  for (const bool total : {false, true}) {
    auto cost = [&](const CurvePoint& p) { return total ? p.cum_total : p.cum_eval; };
    double lo = kInf, hi = 0.0;
    for (const auto& run : runs) {
      for (const auto& p : run)
        if (std::isfinite(p.ir)) {
          lo = std::min(lo, cost(p));
          break;
        }
      if (!run.empty()) hi = std::max(hi, cost(run.back()));
    }
    if (!std::isfinite(lo) || !(lo > 0.0) || !(hi >= lo)) continue;
    for (int g = 0; g < points; ++g) {
      const double frac = static_cast<double>(g) / (points - 1);
      const double c = g == points - 1 ? hi : lo * std::pow(hi / lo, frac);
      std::vector<double> vals;
      for (const auto& run : runs) {
        if (run.empty() || cost(run.back()) < c) continue;
        double v = kNaN;
        for (const auto& p : run) {
          if (cost(p) > c) break;
          if (std::isfinite(p.ir)) v = p.ir;
        }
        if (std::isfinite(v)) vals.push_back(v);
      }
      AggregateRow row{total ? "total" : "eval", c, static_cast<int>(vals.size())};
      if (!vals.empty()) {
        row.median = median(vals);
        row.q25 = quantile(vals, 0.25);
        row.q75 = quantile(vals, 0.75);
      }
      out.push_back(row);
    }
  }
  return out;
}

inline void write_aggregate_csv(std::ostream& out, const std::vector<AggregateRow>& rows) {
  out << "axis,cost,count,median,q25,q75\n";
  for (const auto& r : rows)
    out << r.axis << ',' << format_double(r.cost) << ',' << r.count << ',' << format_double(r.median) << ','
        << format_double(r.q25) << ',' << format_double(r.q75) << '\n';
}

/// Aggregates every run_*.csv in `dir` into aggregate.csv. Pure in the trace files.
inline std::vector<AggregateRow> aggregate_directory(const std::filesystem::path& dir, int points) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (name.rfind("run_", 0) == 0 && entry.path().extension() == ".csv") files.push_back(entry.path());
  }
  if (files.empty()) throw Error(ErrorKind::InvalidRecord, "no run_*.csv traces in " + dir.string());
  std::sort(files.begin(), files.end());
  std::vector<std::vector<CurvePoint>> runs;
  for (const auto& f : files) {
    std::ifstream in(f);
    runs.push_back(read_trace_curve(in));
  }
  const auto rows = aggregate_curves(runs, points);
  std::ofstream out(dir / "aggregate.csv");
  write_aggregate_csv(out, rows);
  return rows;
}

struct ExperimentResult {
  std::vector<Trace> traces;
  std::vector<double> f_stars;
  std::vector<AggregateRow> aggregate;
  int failed_runs = 0;
};

/// R seeded runs (seed, seed + 1, ...). With `out_dir` set, writes
/// run_NNN.csv, run_NNN.json and aggregate.csv there.
inline ExperimentResult run_experiment(const BenchConfig& cfg, const std::optional<std::filesystem::path>& out_dir,
                                       int jobs = 1) {
  if (out_dir) std::filesystem::create_directories(*out_dir);
  ExperimentResult res;
  res.traces.resize(static_cast<std::size_t>(cfg.runs));
  res.f_stars.resize(static_cast<std::size_t>(cfg.runs));
  parallel_for(cfg.runs, jobs, [&](int r) {
    const RunSetup setup = make_run(cfg, r);
    Trace trace = run(setup.experiment, setup.problem);
    if (out_dir) {
      std::ofstream csv(*out_dir / (run_stem(r) + ".csv"));
      write_trace_csv(csv, trace);
      std::ofstream meta(*out_dir / (run_stem(r) + ".json"));
      meta << run_metadata(cfg, setup, trace).dump(2) << '\n';
    }
    res.f_stars[static_cast<std::size_t>(r)] = setup.problem.f_star;
    res.traces[static_cast<std::size_t>(r)] = std::move(trace);
  });
  std::vector<std::vector<CurvePoint>> curves;
  for (const auto& t : res.traces) {
    curves.push_back(curve_of(t));
    if (!t.error.empty()) ++res.failed_runs;
  }
  res.aggregate = aggregate_curves(curves, cfg.aggregate_points);
  if (out_dir) {
    std::ofstream out(*out_dir / "aggregate.csv");
    write_aggregate_csv(out, res.aggregate);
  }
  return res;
}

struct SamplerRow {
  std::string objective;
  SupportMethod method = SupportMethod::Uniform;
  int run = 0;
  int step = 0;
  SamplerMetrics metrics;
  bool fallback = false;
};

inline constexpr SupportMethod kSupportMethods[] = {SupportMethod::Uniform, SupportMethod::EiSlice,
                                                    SupportMethod::LcbSlice, SupportMethod::Wlh};

/// Support-point quality of the four samplers on the posterior of every
/// optimization step. Timing covers support generation only.
inline std::vector<SamplerRow> run_sampler_validation(const BenchConfig& cfg, int jobs = 1) {
  std::vector<std::vector<SamplerRow>> per_run(static_cast<std::size_t>(cfg.runs));
  parallel_for(cfg.runs, jobs, [&](int r) {
    const RunSetup setup = make_run(cfg, r);
    Optimizer opt(setup.experiment, setup.problem);
    auto& rows = per_run[static_cast<std::size_t>(r)];
    opt.observer = [&](int step, const HyperPosteriorSet& set) {
      const std::uint64_t base = mix_seed(setup.experiment.seed, 0x5a000000ULL + static_cast<std::uint64_t>(step));
      for (const SupportMethod method : kSupportMethods) {
        const auto t0 = std::chrono::steady_clock::now();
        const SupportDraw draw =
            draw_support_points(set, setup.problem.x_box, cfg.validation.m, method, mix_seed(base, 1));
        const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const auto counts = draw_minimizer_samples(set, draw.points, cfg.validation.n_samples, mix_seed(base, 2));
        rows.push_back({cfg.objective.id, method, r, step, sampler_metrics(counts, elapsed), draw.fallback});
      }
    };
    const Trace trace = opt.run();
    if (!trace.error.empty()) throw Error(ErrorKind::Domain, "run " + std::to_string(r) + ": " + trace.error);
  });
  std::vector<SamplerRow> out;
  for (auto& rows : per_run) out.insert(out.end(), rows.begin(), rows.end());
  return out;
}

inline void write_sampler_csv(std::ostream& out, const std::vector<SamplerRow>& rows) {
  out << "objective,method,run,step,kl,unused_pct,time_s,useful_rate,n_useful,fallback\n";
  for (const auto& r : rows)
    out << r.objective << ',' << to_string(r.method) << ',' << r.run << ',' << r.step << ','
        << format_double(r.metrics.kl) << ',' << format_double(r.metrics.unused_pct) << ','
        << format_double(r.metrics.time_s) << ',' << format_double(r.metrics.useful_rate) << ','
        << r.metrics.n_useful << ',' << (r.fallback ? 1 : 0) << '\n';
}

struct SamplerSummary {
  SupportMethod method = SupportMethod::Uniform;
  double kl = 0.0, unused_pct = 0.0, time_s = 0.0, useful_rate = 0.0;  // medians over steps
};

inline std::vector<SamplerSummary> summarize_samplers(const std::vector<SamplerRow>& rows) {
  std::vector<SamplerSummary> out;
  for (const SupportMethod method : kSupportMethods) {
    std::vector<double> kl, unused, time, rate;
    for (const auto& r : rows) {
      if (r.method != method) continue;
      kl.push_back(r.metrics.kl);
      unused.push_back(r.metrics.unused_pct);
      time.push_back(r.metrics.time_s);
      rate.push_back(r.metrics.useful_rate);
    }
    if (kl.empty()) continue;
    out.push_back({method, median(kl), median(unused), median(time), median(rate)});
  }
  return out;
}

inline void write_sampler_summary_csv(std::ostream& out, const std::string& objective,
                                      const std::vector<SamplerSummary>& summary) {
  out << "objective,method,kl,unused_pct,time_s,useful_rate\n";
  for (const auto& s : summary)
    out << objective << ',' << to_string(s.method) << ',' << format_double(s.kl) << ','
        << format_double(s.unused_pct) << ',' << format_double(s.time_s) << ',' << format_double(s.useful_rate)
        << '\n';
}

}  // namespace envbo::bench
