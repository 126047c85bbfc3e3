// turntaking: generate synthetic groups, fit models, evaluate, run experiments
// and export proclivity curves.
//
// Exit codes: 0 success, 2 usage or configuration, 3 I/O, 4 numeric failure.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "config.hpp"
#include "turntaking/turntaking.hpp"

namespace fs = std::filesystem;
using namespace turntaking;
using ttcli::ConfigError;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;

/// I/O failure (missing input, unwritable output); maps to exit code 3.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Options shared by every subcommand. Flags left unset keep the value from
/// the config file (or the built-in default).
struct CommonOptions {
  std::string config_path;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> proclivity;
  std::optional<std::size_t> trials;
  std::optional<std::size_t> turns;
  std::optional<std::size_t> parallel_trials;
};

ExperimentConfig resolve_config(const CommonOptions& o) {
  ExperimentConfig c;
  if (!o.config_path.empty()) ttcli::read_config_file(o.config_path, c);
  if (o.seed) c.synth.seed = *o.seed;
  if (o.proclivity) c.synth.proclivity = ttcli::parse_proclivity(*o.proclivity);
  if (o.trials) c.synth.trials = *o.trials;
  if (o.turns) c.synth.turns = *o.turns;
  if (o.parallel_trials) c.parallel_trials = *o.parallel_trials;
  try {
    c.validate();
  } catch (const DomainError& e) {
    throw ConfigError(std::string("invalid configuration: ") + e.what());
  }
  return c;
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory '" + dir.string() + "'");
}

template <class Writer>
void write_file(const fs::path& path, Writer&& writer) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  writer(os);
  if (!os) throw IoError("failed writing '" + path.string() + "'");
}

std::ifstream open_input(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read '" + path.string() + "'");
  return is;
}

/// Appends one run record to <dir>/manifest.txt.
void append_manifest(const fs::path& dir, const std::string& command, const std::string& started,
                     const ExperimentConfig& config, const std::vector<std::string>& extra,
                     const std::vector<fs::path>& artifacts) {
  std::ofstream os(dir / "manifest.txt", std::ios::binary | std::ios::app);
  if (!os) throw IoError("cannot append to manifest in '" + dir.string() + "'");
  os << "[run]\n"
     << "tool = turntaking " << TURNTAKING_VERSION << '\n'
     << "command = " << command << '\n'
     << "started = " << started << '\n'
     << "finished = " << utc_now() << '\n';
  for (const auto& e : extra) os << e << '\n';
  os << "[config]\n" << ttcli::dump_config(config) << "[artifacts]\n";
  for (const auto& a : artifacts) os << a.generic_string() << '\n';
  os << '\n';
  if (!os) throw IoError("failed writing manifest in '" + dir.string() + "'");
}

// ---------------------------------------------------------------------------
// Data directories: <split>_rosters.csv, <split>_conversations.csv and
// (synthetic only) <split>_truth.csv for split in train, val, test.

std::vector<fs::path> write_split(const fs::path& dir, const std::string& split, const GroupList& groups) {
  const std::vector<fs::path> files{split + "_rosters.csv", split + "_conversations.csv", split + "_truth.csv"};
  write_file(dir / files[0], [&](std::ostream& os) { write_rosters_csv(os, groups); });
  write_file(dir / files[1], [&](std::ostream& os) { write_conversations_csv(os, groups); });
  write_file(dir / files[2], [&](std::ostream& os) { write_truth_csv(os, groups); });
  return files;
}

GroupList read_split(const fs::path& dir, const std::string& split, bool required) {
  const auto rosters = dir / (split + "_rosters.csv");
  const auto conversations = dir / (split + "_conversations.csv");
  const auto truth = dir / (split + "_truth.csv");
  if (!fs::exists(rosters) && !fs::exists(conversations)) {
    if (required) throw IoError("data directory '" + dir.string() + "' has no " + split + " split");
    return {};
  }
  auto r = open_input(rosters);
  auto c = open_input(conversations);
  try {
    if (fs::exists(truth)) {
      auto t = open_input(truth);
      return read_groups(r, c, &t);
    }
    return read_groups(r, c);
  } catch (const FormatError& e) {
    throw IoError(split + " split: " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Checkpoints: f.csv, g.csv and (PRO only) nu.csv in the network snapshot
// format, plus loss_history.csv.

DenseNet read_net(const fs::path& path) {
  auto is = open_input(path);
  try {
    return read_snapshot(is);
  } catch (const FormatError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

ModelBundle read_checkpoint(const fs::path& dir) {
  if (!fs::exists(dir / "f.csv") || !fs::exists(dir / "g.csv"))
    throw ConfigError("'" + dir.string() + "' is not a checkpoint (needs f.csv and g.csv)");
  ModelBundle b;
  b.inherent_net = read_net(dir / "f.csv");
  b.memory_net = read_net(dir / "g.csv");
  if (fs::exists(dir / "nu.csv")) {
    b.variant = Variant::kPro;
    b.proclivity_net = read_net(dir / "nu.csv");
  } else {
    b.variant = Variant::kExp;
  }
  return b;
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_generate(const CommonOptions& o, std::size_t trial) {
  const auto started = utc_now();
  const auto config = resolve_config(o);
  if (trial == 0 || trial > config.synth.trials)
    throw ConfigError("--trial must lie in 1.." + std::to_string(config.synth.trials));
  const fs::path out(o.out);
  ensure_dir(out);
  const auto ds = generate_dataset(config.synth, trial - 1);
  std::vector<fs::path> artifacts;
  for (const auto& [split, groups] : {std::pair<std::string, const GroupList*>{"train", &ds.train},
                                      {"val", &ds.validation}, {"test", &ds.test}}) {
    const auto files = write_split(out, split, *groups);
    artifacts.insert(artifacts.end(), files.begin(), files.end());
  }
  append_manifest(out, "generate", started, config, {"trial = " + std::to_string(trial)}, artifacts);
  std::cout << "wrote " << ds.train.size() + ds.validation.size() + ds.test.size() << " groups to " << out.string()
            << '\n';
  return kExitOk;
}

int cmd_fit(const CommonOptions& o, const std::string& data, const std::string& variant_name) {
  const auto started = utc_now();
  const auto config = resolve_config(o);
  Variant v;
  try {
    v = parse_variant(variant_name);
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
  if (!is_learnable(v)) throw ConfigError("nothing to fit for variant " + variant_name + " (fit pro or exp)");
  TrainingSet set{read_split(data, "train", true), read_split(data, "val", false)};
  const fs::path out(o.out);
  ensure_dir(out);

  FitConfig fc = config.fit;
  fc.seed = fit_seed(config.synth.seed, 0, v);
  const auto result = fit(ModelBundle::make(v, fc.seed, fc.shape), set, fc);

  std::vector<fs::path> artifacts{"f.csv", "g.csv"};
  write_file(out / "f.csv", [&](std::ostream& os) { write_snapshot(os, *result.bundle.inherent_net); });
  write_file(out / "g.csv", [&](std::ostream& os) { write_snapshot(os, *result.bundle.memory_net); });
  if (result.bundle.proclivity_net) {
    write_file(out / "nu.csv", [&](std::ostream& os) { write_snapshot(os, *result.bundle.proclivity_net); });
    artifacts.emplace_back("nu.csv");
  }
  write_file(out / "loss_history.csv", [&](std::ostream& os) { write_history_csv(os, result.history); });
  artifacts.emplace_back("loss_history.csv");
  append_manifest(out, "fit", started, config,
                  {"variant = " + std::string(to_string(v)), "data = " + data,
                   "best_iter = " + std::to_string(result.best_iter)},
                  artifacts);
  std::cout << to_string(v) << ": best validation loss " << result.best_val_loss << " at outer iteration "
            << result.best_iter << " of " << result.history.size() << '\n';
  return kExitOk;
}

int cmd_eval(const CommonOptions& o, const std::string& data, const std::vector<std::string>& checkpoints,
             const std::vector<std::string>& variant_args, bool include_true) {
  const auto started = utc_now();
  const auto config = resolve_config(o);
  const auto test = read_split(data, "test", true);

  std::vector<std::pair<std::string, ModelBundle>> models;
  for (const auto& dir : checkpoints) {
    auto b = read_checkpoint(dir);
    const std::string name(to_string(b.variant));
    for (const auto& [n, _] : models)
      if (n == name) throw ConfigError("two checkpoints for variant " + name);
    models.emplace_back(name, std::move(b));
  }
  std::vector<Variant> fixed;
  for (const auto& arg : variant_args)
    for (auto v : ttcli::parse_variants(arg)) fixed.push_back(v);
  for (auto v : fixed) {
    const std::string name(to_string(v));
    const bool have = std::any_of(models.begin(), models.end(), [&](const auto& m) { return m.first == name; });
    if (is_learnable(v)) {
      if (!have) throw ConfigError("variant " + name + " needs a checkpoint (pass --checkpoint DIR)");
      continue;
    }
    if (!have) models.emplace_back(name, ModelBundle::make(v));
  }
  if (models.empty() && !include_true) throw ConfigError("nothing to evaluate: pass --variant or --checkpoint");

  EvalReport report;
  if (include_true) {
    ReportCell cell{1, "true", false, {}, {}, {}, {}, {}, {}};
    try {
      cell = finish_cell(std::move(cell), evaluate(true_model(test, config.synth.proclivity_fn()), test,
                                                   config.fit.floor));
    } catch (const DomainError& e) {
      throw ConfigError(std::string("cannot evaluate the true model: ") + e.what());
    }
    report.cells.push_back(std::move(cell));
  }
  for (const auto& [name, bundle] : models) {
    ReportCell cell{1, name, false, {}, {}, {}, {}, {}, {}};
    report.cells.push_back(finish_cell(std::move(cell), evaluate(bundle, test, config.fit.floor)));
  }
  const fs::path out(o.out);
  ensure_dir(out);
  write_file(out / "report.csv", [&](std::ostream& os) { write_report_csv(os, report); });
  write_file(out / "summary.csv", [&](std::ostream& os) { write_summary_csv(os, report); });
  std::vector<std::string> extra{"data = " + data};
  for (const auto& c : checkpoints) extra.push_back("checkpoint = " + c);
  append_manifest(out, "eval", started, config, extra, {"report.csv", "summary.csv"});
  for (const auto& c : report.cells)
    std::cout << c.model << ": loss " << c.loss.mean << ", loss_turn " << c.loss_turn.mean << '\n';
  return kExitOk;
}

int cmd_experiment(const CommonOptions& o) {
  const auto started = utc_now();
  const auto config = resolve_config(o);
  const fs::path out(o.out);
  ensure_dir(out);
  const auto report = run_experiment(config);
  try {
    write_experiment(out, report);
  } catch (const std::ios_base::failure& e) {
    throw IoError(e.what());
  }
  std::vector<fs::path> artifacts;
  for (const auto& e : fs::recursive_directory_iterator(out))
    if (e.is_regular_file() && e.path().filename() != "manifest.txt") artifacts.push_back(fs::relative(e.path(), out));
  std::sort(artifacts.begin(), artifacts.end());
  std::size_t failed = 0;
  for (const auto& c : report.cells) {
    if (!c.failed) continue;
    ++failed;
    std::cerr << "trial " << c.trial << " " << c.model << " failed: " << c.failure << '\n';
  }
  append_manifest(out, "experiment", started, config, {"failed_cells = " + std::to_string(failed)}, artifacts);
  for (const auto& model : report.models()) {
    const auto l = box_stats(report.trial_values(model, Metric::kLoss));
    const auto lt = box_stats(report.trial_values(model, Metric::kLossTurn));
    std::cout << model << ": median loss " << l.median << ", median loss_turn " << lt.median << " over " << l.count
              << " trials\n";
  }
  if (report.all_failed()) {
    std::cerr << "every trial failed\n";
    return kExitNumeric;
  }
  return kExitOk;
}

int cmd_curve(const CommonOptions& o, const std::string& checkpoint, const std::string& variant_name, long gap_min,
              long gap_max) {
  const auto started = utc_now();
  const auto config = resolve_config(o);
  std::vector<long> gaps;
  try {
    gaps = gap_grid(gap_min, gap_max);
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
  if (gaps.front() < 1) throw ConfigError("--gap-min must be at least 1");
  const auto grid = default_trait_grid();
  std::string name;
  ProclivityCurve curve;
  if (!checkpoint.empty()) {
    const auto bundle = read_checkpoint(checkpoint);
    name = to_string(bundle.variant);
    if (!variant_name.empty() && variant_name != name)
      throw ConfigError("checkpoint holds variant " + name + ", not " + variant_name);
    curve = rescaled_curve(bundle, grid, gaps);
  } else if (variant_name == "true") {
    name = "true";
    curve = rescaled_curve(inherent_from_trait, memory_from_trait, config.synth.proclivity_fn(), grid, gaps);
  } else if (!variant_name.empty()) {
    Variant v;
    try {
      v = parse_variant(variant_name);
    } catch (const DomainError& e) {
      throw ConfigError(e.what());
    }
    if (is_learnable(v)) throw ConfigError("variant " + variant_name + " needs --checkpoint");
    name = variant_name;
    curve = rescaled_curve(ModelBundle::make(v), grid, gaps);
  } else {
    throw ConfigError("pass --checkpoint DIR or --variant nm|hm|true");
  }
  const fs::path out(o.out);
  ensure_dir(out);
  write_file(out / (name + ".csv"), [&](std::ostream& os) { write_curve_csv(os, curve); });
  append_manifest(out, "curve", started, config, {"model = " + name}, {name + ".csv"});
  return kExitOk;
}

void add_common(CLI::App* cmd, CommonOptions& o, bool synth_flags) {
  cmd->add_option("--config", o.config_path, "key = value configuration file");
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_option("--out", o.out, "output directory")->required();
  if (synth_flags) {
    cmd->add_option("--proclivity", o.proclivity, "generating proclivity: exp or sigmoid");
    cmd->add_option("--turns", o.turns, "turns per conversation");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Turn-taking models for group conversations"};
  app.set_version_flag("--version", std::string("turntaking ") + TURNTAKING_VERSION);
  app.require_subcommand(1);

  CommonOptions common;

  auto* generate = app.add_subcommand("generate", "write one synthetic train/val/test dataset");
  add_common(generate, common, true);
  std::size_t trial = 1;
  generate->add_option("--trial", trial, "trial to generate (1-based)");
  generate->add_option("--trials", common.trials, "trials in the configured experiment");

  auto* fit_cmd = app.add_subcommand("fit", "fit a PRO or EXP model on a data directory");
  add_common(fit_cmd, common, false);
  std::string data, variant;
  fit_cmd->add_option("--data", data, "data directory written by generate")->required();
  fit_cmd->add_option("--variant", variant, "pro or exp")->required();

  auto* eval_cmd = app.add_subcommand("eval", "evaluate models on the test split of a data directory");
  add_common(eval_cmd, common, false);
  std::vector<std::string> checkpoints, variants;
  bool include_true = false;
  eval_cmd->add_option("--data", data, "data directory")->required();
  eval_cmd->add_option("--checkpoint", checkpoints, "checkpoint directory written by fit (repeatable)");
  eval_cmd->add_option("--variant", variants, "fixed variants to include, e.g. nm,hm (repeatable)");
  eval_cmd->add_flag("--true", include_true, "include the ground-truth model (needs test_truth.csv)");
  eval_cmd->add_option("--proclivity", common.proclivity, "proclivity of the ground-truth model");

  auto* experiment = app.add_subcommand("experiment", "run the full multi-trial experiment");
  add_common(experiment, common, true);
  experiment->add_option("--trials", common.trials, "number of trials");
  experiment->add_option("--parallel-trials", common.parallel_trials, "trials run concurrently");

  auto* curve = app.add_subcommand("curve", "export a rescaled proclivity curve");
  add_common(curve, common, false);
  std::string checkpoint;
  long gap_min = 2, gap_max = 40;
  curve->add_option("--checkpoint", checkpoint, "checkpoint directory written by fit");
  curve->add_option("--variant", variant, "nm, hm or true when no checkpoint is given");
  curve->add_option("--proclivity", common.proclivity, "proclivity of the true curve");
  curve->add_option("--gap-min", gap_min, "first gap of the grid");
  curve->add_option("--gap-max", gap_max, "last gap of the grid");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*generate) return cmd_generate(common, trial);
    if (*fit_cmd) return cmd_fit(common, data, variant);
    if (*eval_cmd) return cmd_eval(common, data, checkpoints, variants, include_true);
    if (*experiment) return cmd_experiment(common);
    if (*curve) return cmd_curve(common, checkpoint, variant, gap_min, gap_max);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const InfiniteLoss& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const DegenerateDistribution& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::ios_base::failure& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  }
  return kExitUsage;
}
