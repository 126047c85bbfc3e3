#pragma once

// Test-time evaluation and the multi-trial synthetic experiment.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "dataset.hpp"
#include "errors.hpp"
#include "model.hpp"
#include "proclivity.hpp"
#include "synthgen.hpp"
#include "training.hpp"

namespace turntaking {

struct GroupLoss {
  std::size_t group_id = 0;
  std::size_t turns = 0;
  double loss = 0.0;       // mean per-turn NLL
  double loss_turn = 0.0;  // mean per-turn class-weighted NLL
};

inline GroupLoss evaluate_group(const ScoreParams& scores, const ProclivityFn& proclivity, const GroupData& group,
                                double floor = kLikelihoodFloor) {
  const auto U = likelihood_sequence(scores, proclivity, group.conversation);
  return {group.group_id, group.turns(), nll_loss(U, group.conversation, floor),
          weighted_loss(U, group.conversation, floor)};
}

inline std::vector<GroupLoss> evaluate(const ModelBundle& bundle, const GroupList& test,
                                       double floor = kLikelihoodFloor) {
  bundle.validate();
  const auto proclivity = bundle.proclivity();
  std::vector<GroupLoss> out;
  out.reserve(test.size());
  for (const auto& g : test) out.push_back(evaluate_group(predict_scores(bundle, g.roster), proclivity, g, floor));
  return out;
}

/// Evaluator that uses each group's ground-truth scores and the generating
/// proclivity; there is no prediction step.
struct TrueModel {
  ProclivityFn proclivity;
};

inline TrueModel true_model(const GroupList& groups, ProclivityFn proclivity) {
  for (const auto& g : groups)
    if (!g.truth) throw DomainError("group " + std::to_string(g.group_id) + " has no ground-truth scores");
  return {std::move(proclivity)};
}

inline std::vector<GroupLoss> evaluate(const TrueModel& model, const GroupList& test,
                                       double floor = kLikelihoodFloor) {
  std::vector<GroupLoss> out;
  for (const auto& g : test) {
    if (!g.truth) throw DomainError("group " + std::to_string(g.group_id) + " has no ground-truth scores");
    out.push_back(evaluate_group(*g.truth, model.proclivity, g, floor));
  }
  return out;
}

struct Aggregate {
  double mean = 0.0;  // turn-weighted mean across groups
  double sum = 0.0;   // plain sum of per-group values
};

enum class Metric { kLoss, kLossTurn };
inline const char* to_string(Metric m) noexcept { return m == Metric::kLoss ? "loss" : "loss_turn"; }

inline double metric_value(const GroupLoss& g, Metric m) noexcept { return m == Metric::kLoss ? g.loss : g.loss_turn; }

inline Aggregate aggregate(const std::vector<GroupLoss>& groups, Metric m) {
  Aggregate a;
  std::size_t turns = 0;
  for (const auto& g : groups) {
    a.mean += static_cast<double>(g.turns) * metric_value(g, m);
    a.sum += metric_value(g, m);
    turns += g.turns;
  }
  if (turns == 0) throw DomainError("cannot aggregate zero turns");
  a.mean /= static_cast<double>(turns);
  return a;
}

// ---------------------------------------------------------------------------
// Boxplot statistics

struct BoxStats {
  double median = 0.0, q1 = 0.0, q3 = 0.0, lo_whisker = 0.0, hi_whisker = 0.0;
  std::size_t count = 0;
};

/// Quantile with linear interpolation between order statistics.
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw DomainError("quantile of an empty sample");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/// Median and quartiles; whiskers reach the most extreme samples within
/// 1.5 IQR of the box.
inline BoxStats box_stats(const std::vector<double>& v) {
  BoxStats b;
  b.count = v.size();
  if (v.empty()) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    b.median = b.q1 = b.q3 = b.lo_whisker = b.hi_whisker = nan;
    return b;
  }
  b.median = quantile(v, 0.5);
  b.q1 = quantile(v, 0.25);
  b.q3 = quantile(v, 0.75);
  const double iqr = b.q3 - b.q1;
  b.lo_whisker = b.q1;
  b.hi_whisker = b.q3;
  for (double x : v) {
    if (x >= b.q1 - 1.5 * iqr) b.lo_whisker = std::min(b.lo_whisker, x);
    if (x <= b.q3 + 1.5 * iqr) b.hi_whisker = std::max(b.hi_whisker, x);
  }
  return b;
}

// ---------------------------------------------------------------------------
// Experiments

struct ExperimentConfig {
  SynthConfig synth{};
  FitConfig fit{};
  std::vector<Variant> variants{Variant::kPro, Variant::kExp, Variant::kNm, Variant::kHm};
  bool include_true = true;
  std::vector<long> curve_gaps = gap_grid(2, 40);
  std::size_t parallel_trials = 1;

  void validate() const {
    synth.validate();
    fit.validate();
    if (variants.empty() && !include_true) throw DomainError("experiment needs at least one variant");
    if (curve_gaps.empty()) throw DomainError("curve grid is empty");
    for (std::size_t k = 1; k < curve_gaps.size(); ++k)
      if (curve_gaps[k] <= curve_gaps[k - 1]) throw DomainError("curve grid must be strictly increasing");
    if (parallel_trials == 0) throw DomainError("parallel_trials must be positive");
  }
};

/// One (trial, model) evaluation. `model` is a variant name or "true".
struct ReportCell {
  std::size_t trial = 0;  // 1-based
  std::string model;
  bool failed = false;
  std::string failure;
  std::vector<GroupLoss> groups;
  Aggregate loss, loss_turn;
  std::optional<ProclivityCurve> curve;
  std::vector<LossRecord> history;

  const Aggregate& aggregate_for(Metric m) const noexcept { return m == Metric::kLoss ? loss : loss_turn; }
};

struct EvalReport {
  std::vector<ReportCell> cells;  // ordered by trial, then by model

  std::vector<std::string> models() const {
    std::vector<std::string> out;
    for (const auto& c : cells)
      if (std::find(out.begin(), out.end(), c.model) == out.end()) out.push_back(c.model);
    return out;
  }

  const ReportCell* find(std::size_t trial, const std::string& model) const {
    for (const auto& c : cells)
      if (c.trial == trial && c.model == model) return &c;
    return nullptr;
  }

  /// Aggregated means across trials, failed cells excluded.
  std::vector<double> trial_values(const std::string& model, Metric m) const {
    std::vector<double> v;
    for (const auto& c : cells)
      if (c.model == model && !c.failed) v.push_back(c.aggregate_for(m).mean);
    return v;
  }

  bool all_failed() const {
    return std::all_of(cells.begin(), cells.end(), [](const ReportCell& c) { return c.failed; });
  }
};

inline std::uint64_t fit_seed(std::uint64_t master, std::size_t trial, Variant v) {
  return derive_seed(master, {trial, 0x100 + static_cast<std::uint64_t>(v)});
}

inline ReportCell finish_cell(ReportCell cell, std::vector<GroupLoss> losses) {
  cell.groups = std::move(losses);
  cell.loss = aggregate(cell.groups, Metric::kLoss);
  cell.loss_turn = aggregate(cell.groups, Metric::kLossTurn);
  return cell;
}

/// All cells for one trial: "true" first (when enabled), then the variants in
/// configured order.
inline std::vector<ReportCell> run_trial(const ExperimentConfig& config, std::size_t trial) {
  std::vector<ReportCell> cells;
  const std::size_t trial_no = trial + 1;
  SyntheticDataset ds;
  try {
    ds = generate_dataset(config.synth, trial);
  } catch (const std::exception& e) {
    if (config.include_true) cells.push_back({trial_no, "true", true, e.what(), {}, {}, {}, {}, {}});
    for (auto v : config.variants) cells.push_back({trial_no, std::string(to_string(v)), true, e.what(), {}, {}, {}, {}, {}});
    return cells;
  }
  const auto trait_grid = default_trait_grid();
  if (config.include_true) {
    ReportCell cell{trial_no, "true", false, {}, {}, {}, {}, {}, {}};
    const auto truth = true_model(ds.test, config.synth.proclivity_fn());
    cell = finish_cell(std::move(cell), evaluate(truth, ds.test, config.fit.floor));
    cell.curve = rescaled_curve(inherent_from_trait, memory_from_trait, truth.proclivity, trait_grid, config.curve_gaps);
    cells.push_back(std::move(cell));
  }
  for (auto v : config.variants) {
    ReportCell cell{trial_no, std::string(to_string(v)), false, {}, {}, {}, {}, {}, {}};
    try {
      FitConfig fc = config.fit;
      fc.seed = fit_seed(config.synth.seed, trial, v);
      auto bundle = ModelBundle::make(v, fc.seed, fc.shape);
      if (is_learnable(v)) {
        auto fitted = fit(bundle, ds.training_set(), fc);
        bundle = std::move(fitted.bundle);
        cell.history = std::move(fitted.history);
      }
      cell = finish_cell(std::move(cell), evaluate(bundle, ds.test, config.fit.floor));
      cell.curve = rescaled_curve(bundle, trait_grid, config.curve_gaps);
    } catch (const std::exception& e) {
      cell.failed = true;
      cell.failure = e.what();
      cell.groups.clear();
    }
    cells.push_back(std::move(cell));
  }
  return cells;
}

/// Runs every trial (optionally on several threads) and assembles the report
/// in trial order, so the result does not depend on scheduling.
inline EvalReport run_experiment(const ExperimentConfig& config) {
  config.validate();
  const std::size_t trials = config.synth.trials;
  std::vector<std::vector<ReportCell>> per_trial(trials);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < trials; k = next++) per_trial[k] = run_trial(config, k);
  };
  const std::size_t threads = std::min(config.parallel_trials, trials);
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t k = 0; k < threads; ++k) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  EvalReport report;
  for (auto& cells : per_trial)
    for (auto& c : cells) report.cells.push_back(std::move(c));
  return report;
}

/// Pointwise mean of the non-failed curves of one model across trials.
inline std::optional<ProclivityCurve> mean_curve(const EvalReport& report, const std::string& model) {
  std::optional<ProclivityCurve> out;
  std::size_t n = 0;
  for (const auto& c : report.cells) {
    if (c.model != model || c.failed || !c.curve) continue;
    if (!out) {
      out = ProclivityCurve{c.curve->gaps, std::vector<double>(c.curve->gaps.size(), 0.0)};
    }
    for (std::size_t k = 0; k < out->values.size(); ++k) out->values[k] += c.curve->values[k];
    ++n;
  }
  if (out)
    for (auto& v : out->values) v /= static_cast<double>(n);
  return out;
}

// ---------------------------------------------------------------------------
// Report files

/// `trial,variant,metric,group_id,value`. Besides per-group rows every cell has
/// a `mean` row (turn-weighted) and a `sum` row; failed cells have a single
/// `failed` row per metric with value nan.
inline void write_report_csv(std::ostream& os, const EvalReport& report) {
  os << "trial,variant,metric,group_id,value\n";
  auto old = os.precision(17);
  for (const auto& c : report.cells) {
    for (auto m : {Metric::kLoss, Metric::kLossTurn}) {
      const std::string prefix = std::to_string(c.trial) + ',' + c.model + ',' + to_string(m) + ',';
      if (c.failed) {
        os << prefix << "failed,nan\n";
        continue;
      }
      for (const auto& g : c.groups) os << prefix << g.group_id << ',' << metric_value(g, m) << '\n';
      os << prefix << "mean," << c.aggregate_for(m).mean << '\n';
      os << prefix << "sum," << c.aggregate_for(m).sum << '\n';
    }
  }
  os.precision(old);
}

inline void write_summary_csv(std::ostream& os, const EvalReport& report) {
  os << "variant,metric,median,q1,q3,lo_whisker,hi_whisker\n";
  auto old = os.precision(17);
  for (const auto& model : report.models()) {
    for (auto m : {Metric::kLoss, Metric::kLossTurn}) {
      const auto b = box_stats(report.trial_values(model, m));
      os << model << ',' << to_string(m) << ',' << b.median << ',' << b.q1 << ',' << b.q3 << ',' << b.lo_whisker
         << ',' << b.hi_whisker << '\n';
    }
  }
  os.precision(old);
}

inline void write_history_csv(std::ostream& os, const std::vector<LossRecord>& history) {
  os << "outer_iter,train_loss,val_loss\n";
  auto old = os.precision(17);
  for (const auto& r : history) os << r.outer_iter << ',' << r.train_loss << ',' << r.val_loss << '\n';
  os.precision(old);
}

namespace detail {
inline void write_file(const std::filesystem::path& path, const auto& writer) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::ios_base::failure("cannot open " + path.string() + " for writing");
  writer(os);
  if (!os) throw std::ios_base::failure("failed writing " + path.string());
}
}  // namespace detail

/// Writes report.csv, summary.csv, curves/trial_<k>/<model>.csv,
/// curves/mean_<model>.csv and history/trial_<k>/<model>.csv into `dir`.
inline void write_experiment(const std::filesystem::path& dir, const EvalReport& report) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "curves");
  detail::write_file(dir / "report.csv", [&](std::ostream& os) { write_report_csv(os, report); });
  detail::write_file(dir / "summary.csv", [&](std::ostream& os) { write_summary_csv(os, report); });
  for (const auto& c : report.cells) {
    if (c.failed) continue;
    if (c.curve) {
      const auto d = dir / "curves" / ("trial_" + std::to_string(c.trial));
      fs::create_directories(d);
      detail::write_file(d / (c.model + ".csv"), [&](std::ostream& os) { write_curve_csv(os, *c.curve); });
    }
    if (!c.history.empty()) {
      const auto d = dir / "history" / ("trial_" + std::to_string(c.trial));
      fs::create_directories(d);
      detail::write_file(d / (c.model + ".csv"), [&](std::ostream& os) { write_history_csv(os, c.history); });
    }
  }
  for (const auto& model : report.models()) {
    if (auto curve = mean_curve(report, model))
      detail::write_file(dir / "curves" / ("mean_" + model + ".csv"),
                         [&](std::ostream& os) { write_curve_csv(os, *curve); });
  }
}

}  // namespace turntaking
