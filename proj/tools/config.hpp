#pragma once

// Flat `key = value` run configuration. Blank lines and lines starting with
// '#' are ignored. Every key maps onto a field of ExperimentConfig.

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "turntaking/eval.hpp"

namespace ttcli {

/// Invalid configuration or usage; maps to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::size_t parse_count(const std::string& v, const std::string& key) {
  std::size_t out = 0;
  const auto* end = v.data() + v.size();
  const auto r = std::from_chars(v.data(), end, out);
  if (r.ec != std::errc() || r.ptr != end) throw ConfigError("expected a nonnegative integer for '" + key + "', got '" + v + "'");
  return out;
}

inline double parse_real(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos == v.size() && std::isfinite(d)) return d;
  } catch (const std::exception&) {
  }
  throw ConfigError("expected a number for '" + key + "', got '" + v + "'");
}

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("expected true or false for '" + key + "', got '" + v + "'");
}

inline turntaking::ProclivityKind parse_proclivity(const std::string& v) {
  if (v == "exp" || v == "exp_decay") return turntaking::ProclivityKind::kExpDecay;
  if (v == "sigmoid" || v == "sig") return turntaking::ProclivityKind::kSigmoid;
  throw ConfigError("proclivity must be exp or sigmoid, got '" + v + "'");
}

inline std::vector<turntaking::Variant> parse_variants(const std::string& v) {
  std::vector<turntaking::Variant> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      out.push_back(turntaking::parse_variant(item));
    } catch (const turntaking::DomainError& e) {
      throw ConfigError(e.what());
    }
  }
  if (out.empty()) throw ConfigError("variant list is empty");
  return out;
}

using Setter = std::function<void(turntaking::ExperimentConfig&, const std::string&)>;

inline const std::map<std::string, Setter>& config_keys() {
  using turntaking::ExperimentConfig;
  static const std::map<std::string, Setter> keys = {
      {"seed", [](ExperimentConfig& c, const std::string& v) { c.synth.seed = parse_count(v, "seed"); }},
      {"proclivity", [](ExperimentConfig& c, const std::string& v) { c.synth.proclivity = parse_proclivity(v); }},
      {"trials", [](ExperimentConfig& c, const std::string& v) { c.synth.trials = parse_count(v, "trials"); }},
      {"turns", [](ExperimentConfig& c, const std::string& v) { c.synth.turns = parse_count(v, "turns"); }},
      {"members", [](ExperimentConfig& c, const std::string& v) { c.synth.members = parse_count(v, "members"); }},
      {"train_groups", [](ExperimentConfig& c, const std::string& v) { c.synth.train_groups = parse_count(v, "train_groups"); }},
      {"val_groups", [](ExperimentConfig& c, const std::string& v) { c.synth.val_groups = parse_count(v, "val_groups"); }},
      {"test_groups", [](ExperimentConfig& c, const std::string& v) { c.synth.test_groups = parse_count(v, "test_groups"); }},
      {"trait_min", [](ExperimentConfig& c, const std::string& v) { c.synth.trait_min = parse_real(v, "trait_min"); }},
      {"trait_max", [](ExperimentConfig& c, const std::string& v) { c.synth.trait_max = parse_real(v, "trait_max"); }},
      {"step_size", [](ExperimentConfig& c, const std::string& v) { c.fit.step_size = parse_real(v, "step_size"); }},
      {"max_outer", [](ExperimentConfig& c, const std::string& v) { c.fit.max_outer = parse_count(v, "max_outer"); }},
      {"epochs_scores", [](ExperimentConfig& c, const std::string& v) { c.fit.epochs_scores = parse_count(v, "epochs_scores"); }},
      {"epochs_proclivity",
       [](ExperimentConfig& c, const std::string& v) { c.fit.epochs_proclivity = parse_count(v, "epochs_proclivity"); }},
      {"patience", [](ExperimentConfig& c, const std::string& v) { c.fit.patience = parse_count(v, "patience"); }},
      {"floor", [](ExperimentConfig& c, const std::string& v) { c.fit.floor = parse_real(v, "floor"); }},
      {"clip_norm", [](ExperimentConfig& c, const std::string& v) { c.fit.clip_norm = parse_real(v, "clip_norm"); }},
      {"hidden_layers", [](ExperimentConfig& c, const std::string& v) { c.fit.shape.hidden_layers = parse_count(v, "hidden_layers"); }},
      {"hidden_width", [](ExperimentConfig& c, const std::string& v) { c.fit.shape.hidden_width = parse_count(v, "hidden_width"); }},
      {"variants", [](ExperimentConfig& c, const std::string& v) { c.variants = parse_variants(v); }},
      {"include_true", [](ExperimentConfig& c, const std::string& v) { c.include_true = parse_bool(v, "include_true"); }},
      {"curve_min",
       [](ExperimentConfig& c, const std::string& v) {
         c.curve_gaps = turntaking::gap_grid(static_cast<long>(parse_count(v, "curve_min")), c.curve_gaps.back());
       }},
      {"curve_max",
       [](ExperimentConfig& c, const std::string& v) {
         c.curve_gaps = turntaking::gap_grid(c.curve_gaps.front(), static_cast<long>(parse_count(v, "curve_max")));
       }},
      {"parallel_trials",
       [](ExperimentConfig& c, const std::string& v) { c.parallel_trials = parse_count(v, "parallel_trials"); }},
  };
  return keys;
}

/// Applies one `key = value` pair; throws ConfigError on unknown keys or bad values.
inline void apply(turntaking::ExperimentConfig& config, const std::string& key, const std::string& value) {
  const auto& keys = config_keys();
  const auto it = keys.find(key);
  if (it == keys.end()) throw ConfigError("unknown key '" + key + "'");
  try {
    it->second(config, value);
  } catch (const turntaking::DomainError& e) {
    throw ConfigError(e.what());
  }
}

/// Parses a config stream; diagnostics carry `name:line:`.
inline void read_config(std::istream& is, const std::string& name, turntaking::ExperimentConfig& config) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    const std::string where = name + ":" + std::to_string(lineno) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + "missing key");
    try {
      apply(config, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
}

inline void read_config_file(const std::string& path, turntaking::ExperimentConfig& config) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file '" + path + "'");
  read_config(is, path, config);
}

/// Canonical dump of every key, used in manifests.
inline std::string dump_config(const turntaking::ExperimentConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "seed = " << c.synth.seed << '\n'
     << "proclivity = " << turntaking::to_string(c.synth.proclivity) << '\n'
     << "trials = " << c.synth.trials << '\n'
     << "turns = " << c.synth.turns << '\n'
     << "members = " << c.synth.members << '\n'
     << "train_groups = " << c.synth.train_groups << '\n'
     << "val_groups = " << c.synth.val_groups << '\n'
     << "test_groups = " << c.synth.test_groups << '\n'
     << "trait_min = " << c.synth.trait_min << '\n'
     << "trait_max = " << c.synth.trait_max << '\n'
     << "step_size = " << c.fit.step_size << '\n'
     << "max_outer = " << c.fit.max_outer << '\n'
     << "epochs_scores = " << c.fit.epochs_scores << '\n'
     << "epochs_proclivity = " << c.fit.epochs_proclivity << '\n'
     << "patience = " << c.fit.patience << '\n'
     << "floor = " << c.fit.floor << '\n'
     << "clip_norm = " << c.fit.clip_norm << '\n'
     << "hidden_layers = " << c.fit.shape.hidden_layers << '\n'
     << "hidden_width = " << c.fit.shape.hidden_width << '\n'
     << "variants = ";
  for (std::size_t k = 0; k < c.variants.size(); ++k) os << (k ? "," : "") << turntaking::to_string(c.variants[k]);
  os << '\n'
     << "include_true = " << (c.include_true ? "true" : "false") << '\n'
     << "curve_min = " << c.curve_gaps.front() << '\n'
     << "curve_max = " << c.curve_gaps.back() << '\n'
     << "parallel_trials = " << c.parallel_trials << '\n';
  return os.str();
}

}  // namespace ttcli
