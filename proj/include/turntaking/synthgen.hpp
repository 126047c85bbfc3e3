#pragma once

// Synthetic groups with known scores.
//
// Traits are uniform on [0.1, 1]; scores follow
//   pi(x) = sqrt(x)
//   d(x)  = (15e/2) * ((exp(-2(1.1 - x)) - exp(-2)) / (exp(-0.2) - exp(-2)) + 1/3)
// so that pi in [sqrt(0.1), 1] and d in [2.5e, 10e].

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <string>

#include "dataset.hpp"
#include "errors.hpp"
#include "model.hpp"
#include "proclivity.hpp"
#include "rng.hpp"
#include "training.hpp"

namespace turntaking {

struct SynthConfig {
  std::size_t train_groups = 10;
  std::size_t val_groups = 5;
  std::size_t test_groups = 5;
  std::size_t members = 5;
  std::size_t turns = 800;
  double trait_min = 0.1;
  double trait_max = 1.0;
  ProclivityKind proclivity = ProclivityKind::kExpDecay;
  std::size_t trials = 10;
  std::uint64_t seed = 0;

  std::size_t groups_total() const noexcept { return train_groups + val_groups; }

  void validate() const {
    if (train_groups == 0) throw DomainError("train_groups must be positive");
    if (test_groups == 0) throw DomainError("test_groups must be positive");
    if (members < 2) throw DomainError("members must be at least 2");
    if (turns == 0) throw DomainError("turns must be positive");
    if (trials == 0) throw DomainError("trials must be positive");
    if (!(trait_min > 0.0) || !(trait_max <= 1.0) || !(trait_min <= trait_max))
      throw DomainError("trait range must lie within (0, 1]");
    if (trait_min < 0.1) throw DomainError("the score mappings are defined for traits in [0.1, 1]");
    if (proclivity != ProclivityKind::kExpDecay && proclivity != ProclivityKind::kSigmoid)
      throw DomainError("synthetic proclivity must be exp or sigmoid");
  }

  ProclivityFn proclivity_fn() const {
    return proclivity == ProclivityKind::kSigmoid ? ProclivityFn::sigmoid() : ProclivityFn::exp_decay();
  }
};

inline double inherent_from_trait(double x) {
  if (!(x >= 0.1 && x <= 1.0)) throw DomainError("trait " + std::to_string(x) + " outside [0.1, 1]");
  return std::sqrt(x);
}

inline double memory_from_trait(double x) {
  if (!(x >= 0.1 && x <= 1.0)) throw DomainError("trait " + std::to_string(x) + " outside [0.1, 1]");
  constexpr double e = std::numbers::e;
  const double lo = std::exp(-2.0);
  const double hi = std::exp(-0.2);
  return 15.0 * e / 2.0 * ((std::exp(-2.0 * (1.1 - x)) - lo) / (hi - lo) + 1.0 / 3.0);
}

inline ScoreParams traits_to_scores(const Roster& roster) {
  ScoreParams p;
  for (double x : roster.traits()) {
    p.inherent.push_back(inherent_from_trait(x));
    p.memory.push_back(memory_from_trait(x));
  }
  return p;
}

/// Groups are numbered globally within a trial: train, then validation, then test.
inline Roster sample_traits(const SynthConfig& config, std::size_t trial, std::size_t group) {
  Rng rng(derive_seed(config.seed, {trial, group, static_cast<std::uint64_t>(StreamPurpose::kTraits)}));
  std::vector<double> x(config.members);
  for (auto& v : x) v = rng.uniform(config.trait_min, config.trait_max);
  return Roster(std::move(x));
}

struct SyntheticDataset {
  GroupList train;
  GroupList validation;
  GroupList test;

  TrainingSet training_set() const { return {train, validation}; }
};

inline GroupData generate_group(const SynthConfig& config, std::size_t trial, std::size_t group) {
  GroupData g;
  g.group_id = group + 1;
  g.roster = sample_traits(config, trial, group);
  g.truth = traits_to_scores(g.roster);
  Rng rng(derive_seed(config.seed, {trial, group, static_cast<std::uint64_t>(StreamPurpose::kConversation)}));
  g.conversation = sample_conversation(*g.truth, config.proclivity_fn(), config.turns, rng);
  return g;
}

inline SyntheticDataset generate_dataset(const SynthConfig& config, std::size_t trial = 0) {
  config.validate();
  SyntheticDataset ds;
  std::size_t id = 0;
  for (std::size_t k = 0; k < config.train_groups; ++k) ds.train.push_back(generate_group(config, trial, id++));
  for (std::size_t k = 0; k < config.val_groups; ++k) ds.validation.push_back(generate_group(config, trial, id++));
  for (std::size_t k = 0; k < config.test_groups; ++k) ds.test.push_back(generate_group(config, trial, id++));
  return ds;
}

}  // namespace turntaking
