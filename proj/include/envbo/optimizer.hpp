#pragma once

// The optimization loop: initial design, per-step model refits and point
// selection, offline posterior-minimum recommendations and the trace.

#include "envbo/cost_model.hpp"
#include "envbo/pes.hpp"

#include <chrono>
#include <cstdio>
#include <ostream>

namespace envbo {

enum class Mode { EI, PES, EnvPES };
enum class Report { PosteriorMin, Argmin };
enum class OverheadClock { Wall, None };

inline const char* to_string(Mode m) {
  switch (m) {
    case Mode::EI: return "ei";
    case Mode::PES: return "pes";
    case Mode::EnvPES: return "envpes";
  }
  return "?";
}

/// Black-box problem over an x box with an optional fidelity variable s in [0, 1].
struct Problem {
  Box x_box;
  std::function<double(const Vector& x, double s)> value;
  std::function<double(const Vector& x, double s)> cost;  // simulated seconds
  double f_star = kNaN;
};

struct ExperimentConfig {
  Mode mode = Mode::EnvPES;
  Report report = Report::PosteriorMin;
  OverheadClock clock = OverheadClock::Wall;
  double budget_s = 0.0;  // on cumulative eval + overhead cost
  int max_evals = 0;      // extra stop on the number of evaluations, 0 disables it
  int n_init = 20;
  std::vector<double> init_fidelities{0.5, 0.75, 0.875};
  double cost_floor_frac = 1e-3;
  double time_scale = 1.0;  // multiplies simulated evaluation cost
  HyperConfig hyper{};
  PesConfig pes{};
  std::optional<bool> global_min_constraint;  // defaults to on for PES, off for EnvPES
  AcqSearch search{};
  MinimaSearch minima{};
  std::uint64_t seed = 0;

  bool fidelity() const { return mode == Mode::EnvPES; }
};

struct TraceRow {
  int step = 0;
  Vector x;
  double s = 0.0;
  double y = kNaN;
  double eval_cost_s = 0.0;
  double overhead_s = 0.0;
  Vector x_rec;
  double rec_mean = kNaN;
  double immediate_regret = kNaN;
  double cum_eval_cost_s = 0.0;
  double cum_total_cost_s = 0.0;
  double predicted_cost_s = kNaN;
  long n_remaining = -1;
  std::string flags;

  void flag(const std::string& f) {
    if (!flags.empty()) flags += ';';
    flags += f;
  }
};

struct Trace {
  int dim = 0;
  std::vector<TraceRow> rows;
  std::string error;  // non-empty when the run aborted
};

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_trace_csv(std::ostream& out, const Trace& trace) {
  out << "step";
  for (int i = 0; i < trace.dim; ++i) out << ",x" << i;
  out << ",s,y,eval_cost_s,overhead_s";
  for (int i = 0; i < trace.dim; ++i) out << ",xrec" << i;
  out << ",rec_mean,immediate_regret,cum_eval_cost_s,cum_total_cost_s,predicted_cost_s,n_remaining,flags\n";
  for (const auto& r : trace.rows) {
    out << r.step;
    for (int i = 0; i < trace.dim; ++i) out << ',' << format_double(r.x[i]);
    out << ',' << format_double(r.s) << ',' << format_double(r.y) << ',' << format_double(r.eval_cost_s) << ','
        << format_double(r.overhead_s);
    for (int i = 0; i < trace.dim; ++i) out << ',' << (r.x_rec.size() ? format_double(r.x_rec[i]) : "nan");
    out << ',' << format_double(r.rec_mean) << ',' << format_double(r.immediate_regret) << ','
        << format_double(r.cum_eval_cost_s) << ',' << format_double(r.cum_total_cost_s) << ','
        << format_double(r.predicted_cost_s) << ',' << r.n_remaining << ',' << r.flags << '\n';
  }
}

/// Initial design: x draws evaluated at each init fidelity in turn (fidelity
/// mode) or at s = 0, truncated to `n_init` evaluations.
inline std::vector<std::pair<Vector, double>> initial_design(const ExperimentConfig& cfg, const Box& x_box) {
  Rng rng(mix_seed(cfg.seed, 0x1417));
  std::vector<std::pair<Vector, double>> out;
  while (static_cast<int>(out.size()) < cfg.n_init) {
    const Vector x = rng.uniform_in(x_box);
    if (!cfg.fidelity()) {
      out.emplace_back(x, 0.0);
      continue;
    }
    for (double s : cfg.init_fidelities)
      if (static_cast<int>(out.size()) < cfg.n_init) out.emplace_back(x, s);
  }
  return out;
}

class Optimizer {
 public:
  Optimizer(ExperimentConfig cfg, Problem problem)
      : cfg_(std::move(cfg)), problem_(std::move(problem)), sampler_(cfg_.hyper) {
    d_ = problem_.x_box.dim();
    trace_.dim = d_;
    if (cfg_.fidelity()) {
      Vector lo(d_ + 1), hi(d_ + 1);
      lo << problem_.x_box.lo, 0.0;
      hi << problem_.x_box.hi, 1.0;
      model_box_ = Box(lo, hi);
    } else {
      model_box_ = problem_.x_box;
    }
    cfg_.pes.global_min_constraint = cfg_.global_min_constraint.value_or(cfg_.mode != Mode::EnvPES);
  }

  /// Called after each hyperparameter refit with the step index and the posterior.
  std::function<void(int, const HyperPosteriorSet&)> observer;

  const Trace& trace() const { return trace_; }
  const std::vector<Observation>& data() const { return data_; }
  const ExperimentConfig& config() const { return cfg_; }

  void initialize() {
    for (const auto& [x, s] : initial_design(cfg_, problem_.x_box)) {
      evaluate(x, s, 0.0, kNaN, -1).flag("init");
    }
  }

  bool budget_left() const {
    if (trace_.rows.empty()) return true;
    if (cfg_.max_evals > 0 && static_cast<int>(trace_.rows.size()) >= cfg_.max_evals) return false;
    return trace_.rows.back().cum_total_cost_s < cfg_.budget_s;
  }

  /// One selection-and-evaluation step. Fills the recommendation of the
  /// previous row first, outside the overhead timer.
  void step() {
    const int t = static_cast<int>(trace_.rows.size());
    std::string err;
    for (int attempt = 0; attempt < 2; ++attempt) {
      try {
        step_once(t, attempt);
        return;
      } catch (const Error& e) {
        err = std::string(to_string(e.kind())) + ": " + e.what();
      }
    }
    throw Error(ErrorKind::Domain, "step " + std::to_string(t) + " failed twice (" + err + ")");
  }

  /// Recommendation for the last row after the loop ends.
  void finalize() {
    if (trace_.rows.empty() || trace_.rows.back().x_rec.size()) return;
    const HyperPosteriorSet set = fit_hyper(static_cast<int>(trace_.rows.size()), 0);
    if (observer) observer(static_cast<int>(trace_.rows.size()), set);
    recommend_into(trace_.rows.back(), set);
  }

  Trace run() {
    try {
      initialize();
      if (!budget_left()) trace_.rows.back().flag("budget-exhausted-in-init");
      while (budget_left()) step();
      finalize();
    } catch (const Error& e) {
      trace_.error = std::string(to_string(e.kind())) + ": " + e.what();
    }
    return trace_;
  }

  /// Minimizer of the hyper-averaged posterior mean in the s=0 plane.
  std::pair<Vector, std::string> recommend(const HyperPosteriorSet& set) const {
    if (cfg_.report == Report::Argmin) return {best_observed(), ""};
    MinimaSearch ms = cfg_.minima;
    ms.moments = false;
    const auto found = find_posterior_minima(set, problem_.x_box, mix_seed(cfg_.seed, 0xbeef), ms);
    if (found.empty()) return {best_observed(), "recommend-fallback"};
    return {found.front().x, ""};
  }

 private:
  TraceRow& evaluate(const Vector& x, double s, double overhead, double predicted, long n_remaining) {
    TraceRow row;
    row.step = static_cast<int>(trace_.rows.size());
    row.x = x;
    row.s = s;
    row.y = problem_.value(x, s);
    row.eval_cost_s = problem_.cost(x, s) * cfg_.time_scale;
    row.overhead_s = overhead;
    row.predicted_cost_s = predicted;
    row.n_remaining = n_remaining;
    const TraceRow* prev = trace_.rows.empty() ? nullptr : &trace_.rows.back();
    row.cum_eval_cost_s = (prev ? prev->cum_eval_cost_s : 0.0) + row.eval_cost_s;
    row.cum_total_cost_s = (prev ? prev->cum_total_cost_s : 0.0) + row.eval_cost_s + row.overhead_s;
    Observation o;
    o.location = lift(x, s);
    o.value = row.y;
    data_.push_back(o);
    if (cfg_.fidelity()) cost_records_.push_back({o.location, row.eval_cost_s});
    trace_.rows.push_back(std::move(row));
    return trace_.rows.back();
  }

  Vector lift(const Vector& x, double s) const {
    if (!cfg_.fidelity()) return x;
    Vector out(d_ + 1);
    out << x, s;
    return out;
  }

  Vector best_observed() const {
    const TraceRow* best = nullptr;
    for (const auto& r : trace_.rows)
      if (r.s == 0.0 && (!best || r.y < best->y)) best = &r;
    if (best) return best->x;
    return trace_.rows.empty() ? problem_.x_box.lo : trace_.rows.front().x;
  }

  double incumbent() const {
    double best = kInf;
    for (const auto& r : trace_.rows)
      if (r.s == 0.0) best = std::min(best, r.y);
    return best;
  }

  HyperPosteriorSet fit_hyper(int t, int attempt) {
    const HyperPrior prior = HyperPrior::for_data(model_box_.width(), data_, cfg_.fidelity(), cfg_.hyper.noise_rel);
    return sampler_.sample(data_, prior, mix_seed(cfg_.seed, 1000003ULL * static_cast<std::uint64_t>(t) + attempt));
  }

  void recommend_into(TraceRow& row, const HyperPosteriorSet& set) const {
    auto [x, flag] = recommend(set);
    row.x_rec = x;
    row.rec_mean = set.mean(on_plane(set, x));
    row.immediate_regret = std::isnan(problem_.f_star) ? kNaN : problem_.value(x, 0.0) - problem_.f_star;
    if (!flag.empty()) row.flag(flag);
  }

  void step_once(int t, int attempt) {
    using clock = std::chrono::steady_clock;
    const auto seed = [&](std::uint64_t purpose) {
      return mix_seed(cfg_.seed, 1000003ULL * static_cast<std::uint64_t>(t) + 97ULL * purpose + attempt);
    };
    auto t0 = clock::now();
    const HyperPosteriorSet set = fit_hyper(t, attempt);
    double elapsed = std::chrono::duration<double>(clock::now() - t0).count();

    // Offline recommendation for the previous row: not charged as overhead.
    if (observer) observer(t, set);
    recommend_into(trace_.rows.back(), set);
    const Vector x_rec = trace_.rows.back().x_rec;

    t0 = clock::now();
    std::string flags;
    double predicted = kNaN;
    long n_remaining = -1;
    Vector chosen;

    if (cfg_.mode == Mode::EI) {
      const double inc = incumbent();
      const ScoredPoint sp = maximize_on_box([&](const Vector& x) { return mixture_ei(set, x, inc); }, model_box_,
                                             false, 100 * (d_ + 1), seed(1), {}, cfg_.search);
      chosen = sp.x;
    } else {
      std::function<double(const Vector&)> divisor = [](const Vector&) { return 1.0; };
      CostGP cost_gp;
      OverheadModel overhead;
      double mean_overhead = 0.0;
      if (cfg_.fidelity()) {
        cost_gp = fit_cost_gp(cost_records_, model_box_, seed(2));
        overhead = fit_overhead_map(overhead_history_);
        const double c_eval = cost_gp.predict(lift(x_rec, 0.0));
        const double remaining = std::max(0.0, cfg_.budget_s - trace_.rows.back().cum_total_cost_s);
        const long offset = static_cast<long>(overhead_history_.size());
        n_remaining = remaining_steps(overhead, remaining, c_eval, offset);
        mean_overhead = mean_future_overhead(overhead, remaining, c_eval, offset);
        divisor = [&](const Vector& x) {
          Vector full = x;
          full[d_] = 0.0;
          return acquisition_divisor(cost_gp.predict(x), mean_overhead, cost_gp.predict(full), cfg_.cost_floor_frac);
        };
        if (overhead.prior_only) flags = "overhead-prior-only";
      }
      try {
        const AcquisitionContext ctx = build_context(set, problem_.x_box, cfg_.pes, seed(3), incumbent());
        const AcqChoice choice =
            optimize_acquisition(ctx, model_box_, cfg_.fidelity(), divisor, seed(4), ctx.support, cfg_.search);
        chosen = choice.x;
        if (ctx.support_fallback) append(flags, "support-fallback");
        if (choice.clamped > 0) append(flags, "clamped=" + std::to_string(choice.clamped));
        if (ctx.ep_failures > 0) append(flags, "ep-failures=" + std::to_string(ctx.ep_failures));
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::AcquisitionUnavailable) throw;
        const ScoredPoint sp = maximize_on_box(
            [&](const Vector& x) { return marginal_posterior(set, x).variance() / divisor(x); }, model_box_,
            cfg_.fidelity(), 100 * (d_ + 1), seed(5), {}, cfg_.search);
        chosen = sp.x;
        append(flags, "max-variance-fallback");
      }
      if (cfg_.fidelity()) predicted = cost_gp.predict(chosen);
    }
    elapsed += std::chrono::duration<double>(clock::now() - t0).count();
    const double overhead_s = cfg_.clock == OverheadClock::Wall ? elapsed : 0.0;
    overhead_history_.push_back(overhead_s);

    const Vector x = chosen.head(d_);
    const double s = cfg_.fidelity() ? std::clamp(chosen[d_], 0.0, 1.0) : 0.0;
    TraceRow& row = evaluate(x, s, overhead_s, predicted, n_remaining);
    row.flags = flags;
  }

  static void append(std::string& flags, const std::string& f) {
    if (!flags.empty()) flags += ';';
    flags += f;
  }

  ExperimentConfig cfg_;
  Problem problem_;
  HyperSampler sampler_;
  Box model_box_;
  int d_ = 0;
  std::vector<Observation> data_;
  std::vector<CostRecord> cost_records_;
  std::vector<double> overhead_history_;
  Trace trace_;
};

inline Trace run(const ExperimentConfig& cfg, const Problem& problem) { return Optimizer(cfg, problem).run(); }

}  // namespace envbo
