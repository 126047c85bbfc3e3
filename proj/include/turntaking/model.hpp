#pragma once

// Turn-taking likelihood model.
//
// At turn t every member i has a speaking likelihood
//
//   u_i(t) = pi_i + d_i * w(delta_i(t))   if member i spoke before, delta > 1
//   u_i(t) = pi_i                          if member i never spoke
//   u_i(t) = 0                             if member i spoke at turn t-1
//
// and speaks with probability u_i(t) / sum_j u_j(t).
//
// Indexing: members and turns are 0-based in this API. File formats and user
// facing output are 1-based.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "errors.hpp"
#include "proclivity.hpp"
#include "rng.hpp"

namespace turntaking {

/// Lower bound applied to eligible likelihoods inside losses (never in sampling).
inline constexpr double kLikelihoodFloor = 1e-8;

/// Scalar trait per group member.
class Roster {
 public:
  Roster() = default;
  explicit Roster(std::vector<double> traits) : traits_(std::move(traits)) {
    if (traits_.size() < 2) throw DomainError("a roster needs at least two members");
    for (double x : traits_)
      if (!std::isfinite(x)) throw DomainError("roster traits must be finite");
  }
  std::size_t size() const noexcept { return traits_.size(); }
  const std::vector<double>& traits() const noexcept { return traits_; }
  double operator[](std::size_t i) const { return traits_.at(i); }
  bool operator==(const Roster&) const = default;

 private:
  std::vector<double> traits_;
};

/// Ordered speakers of a conversation among `group_size` members.
class Conversation {
 public:
  Conversation() = default;
  Conversation(std::vector<std::size_t> speakers, std::size_t group_size)
      : speakers_(std::move(speakers)), group_size_(group_size) {
    if (group_size_ < 2) throw DomainError("a conversation needs at least two members");
    for (std::size_t t = 0; t < speakers_.size(); ++t) {
      if (speakers_[t] >= group_size_)
        throw DomainError("speaker index out of range at turn " + std::to_string(t + 1));
      if (t > 0 && speakers_[t] == speakers_[t - 1])
        throw DomainError("consecutive turns by the same speaker at turn " + std::to_string(t + 1));
    }
  }
  std::size_t size() const noexcept { return speakers_.size(); }
  std::size_t group_size() const noexcept { return group_size_; }
  const std::vector<std::size_t>& speakers() const noexcept { return speakers_; }
  std::size_t operator[](std::size_t t) const { return speakers_.at(t); }
  bool operator==(const Conversation&) const = default;

 private:
  std::vector<std::size_t> speakers_;
  std::size_t group_size_ = 0;
};

/// Inherent (pi) and memory (d) scores, one pair per member.
struct ScoreParams {
  std::vector<double> inherent;
  std::vector<double> memory;

  std::size_t size() const noexcept { return inherent.size(); }

  void validate() const {
    if (inherent.size() != memory.size()) throw DomainError("inherent and memory scores differ in length");
    for (std::size_t i = 0; i < inherent.size(); ++i) {
      if (!std::isfinite(inherent[i]) || inherent[i] < 0.0 || !std::isfinite(memory[i]) || memory[i] < 0.0)
        throw DomainError("scores must be finite and nonnegative");
    }
  }
  void validate(std::size_t group_size) const {
    validate();
    if (inherent.size() != group_size) throw DomainError("score vector length does not match the group size");
  }
};

/// Most recent turn at which each member spoke, advanced one turn at a time.
class GapState {
 public:
  explicit GapState(std::size_t group_size) : last_(group_size, kNone) {}

  /// Turn index the next call to gaps() refers to.
  std::size_t turn() const noexcept { return turn_; }
  std::size_t group_size() const noexcept { return last_.size(); }

  Gap gap(std::size_t member) const {
    const auto l = last_.at(member);
    if (l == kNone) return kNever;
    return static_cast<long>(turn_ - l);
  }

  std::vector<Gap> gaps() const {
    std::vector<Gap> g(last_.size());
    for (std::size_t i = 0; i < last_.size(); ++i) g[i] = gap(i);
    return g;
  }

  void advance(std::size_t speaker) {
    last_.at(speaker) = turn_;
    ++turn_;
  }

 private:
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> last_;
  std::size_t turn_ = 0;
};

/// Gaps at 0-based turn t in [0, T]; t == T describes the turn after the last.
inline std::vector<Gap> compute_gaps(const Conversation& conversation, std::size_t t) {
  if (t > conversation.size())
    throw DomainError("turn " + std::to_string(t) + " outside [0, " + std::to_string(conversation.size()) + "]");
  GapState state(conversation.group_size());
  for (std::size_t j = 0; j < t; ++j) state.advance(conversation[j]);
  return state.gaps();
}

inline std::vector<double> speaking_scores(const ScoreParams& params, const ProclivityFn& proclivity,
                                           const std::vector<Gap>& gaps) {
  if (gaps.size() != params.size()) throw DomainError("gap vector length does not match the scores");
  std::vector<double> u(gaps.size());
  for (std::size_t i = 0; i < gaps.size(); ++i) {
    if (!gaps[i]) u[i] = params.inherent[i];
    else if (*gaps[i] <= 1) u[i] = 0.0;
    else u[i] = params.inherent[i] + params.memory[i] * proclivity(gaps[i]);
  }
  return u;
}

inline std::vector<double> speaking_probabilities(const std::vector<double>& u) {
  double total = 0.0;
  for (double v : u) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw DomainError("speaking likelihoods must be finite and nonnegative");
    total += v;
  }
  if (!(total > 0.0)) throw DegenerateDistribution("no member has a positive speaking likelihood");
  std::vector<double> p(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) p[i] = u[i] / total;
  return p;
}

/// Most likely next speaker; ties go to the lowest member index.
inline std::size_t next_speaker(const std::vector<double>& u) {
  bool any = false;
  std::size_t best = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (u[i] > 0.0) any = true;
    if (u[i] > u[best]) best = i;
  }
  if (!any) throw DegenerateDistribution("no member has a positive speaking likelihood");
  return best;
}

// ---------------------------------------------------------------------------
// Turn classes

enum class TurnClass : std::uint8_t { kFloor = 0, kBrokenFloor = 1, kRegain = 2, kNonfloor = 3 };
inline constexpr std::size_t kTurnClassCount = 4;

inline const char* to_string(TurnClass c) noexcept {
  switch (c) {
    case TurnClass::kFloor: return "floor";
    case TurnClass::kBrokenFloor: return "broken_floor";
    case TurnClass::kRegain: return "regain";
    case TurnClass::kNonfloor: return "nonfloor";
  }
  return "?";
}

/// floor:        s(t) = s(t-2)
/// broken floor: s(t) != s(t-2), s(t-1) = s(t-3)
/// regain:       s(t) = s(t-3) != s(t-1), s(t-2) = s(t-4)
/// nonfloor:     everything else.
/// A condition that refers to a turn before the first one is false.
inline TurnClass classify_turn(const Conversation& c, std::size_t t) {
  if (t >= c.size()) throw DomainError("turn " + std::to_string(t) + " out of range");
  const auto& s = c.speakers();
  if (t >= 2 && s[t] == s[t - 2]) return TurnClass::kFloor;
  if (t >= 3 && s[t] != s[t - 2] && s[t - 1] == s[t - 3]) return TurnClass::kBrokenFloor;
  if (t >= 4 && s[t] == s[t - 3] && s[t] != s[t - 1] && s[t - 2] == s[t - 4]) return TurnClass::kRegain;
  return TurnClass::kNonfloor;
}

struct ClassWeights {
  std::array<std::size_t, kTurnClassCount> counts{};
  std::vector<TurnClass> classes;  // per turn
  std::vector<double> weights;     // per turn, T / (K * T_k)
};

/// Weight T / (K * T_k) of a turn whose class occurs T_k times among T turns.
inline double class_weight(std::size_t turns, std::size_t class_count) {
  if (class_count == 0 || class_count > turns) throw DomainError("class count must be in [1, T]");
  return static_cast<double>(turns) / (static_cast<double>(kTurnClassCount) * static_cast<double>(class_count));
}

inline ClassWeights class_weights(const Conversation& c) {
  ClassWeights cw;
  cw.classes.reserve(c.size());
  for (std::size_t t = 0; t < c.size(); ++t) {
    cw.classes.push_back(classify_turn(c, t));
    ++cw.counts[static_cast<std::size_t>(cw.classes.back())];
  }
  cw.weights.reserve(c.size());
  for (auto k : cw.classes) cw.weights.push_back(class_weight(c.size(), cw.counts[static_cast<std::size_t>(k)]));
  return cw;
}

// ---------------------------------------------------------------------------
// Likelihood sequences and losses

/// u(t) for every turn t of a conversation; row t has one entry per member.
using LikelihoodSequence = std::vector<std::vector<double>>;

inline LikelihoodSequence likelihood_sequence(const ScoreParams& params, const ProclivityFn& proclivity,
                                              const Conversation& c) {
  params.validate(c.group_size());
  LikelihoodSequence U;
  U.reserve(c.size());
  GapState state(c.group_size());
  for (std::size_t t = 0; t < c.size(); ++t) {
    U.push_back(speaking_scores(params, proclivity, state.gaps()));
    state.advance(c[t]);
  }
  return U;
}

/// -log P[s(t)] for every turn. Members other than the previous speaker are
/// floored at `floor` before normalizing.
inline std::vector<double> turn_nll(const LikelihoodSequence& U, const Conversation& c,
                                    double floor = kLikelihoodFloor) {
  if (U.size() != c.size()) throw DomainError("likelihood sequence and conversation differ in length");
  if (c.size() == 0) throw DomainError("loss of an empty conversation is undefined");
  std::vector<double> out(c.size());
  for (std::size_t t = 0; t < c.size(); ++t) {
    const auto& u = U[t];
    if (u.size() != c.group_size()) throw DomainError("likelihood row has the wrong length");
    double total = 0.0, observed = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
      if (!(u[i] >= 0.0) || !std::isfinite(u[i])) throw DomainError("likelihoods must be finite and nonnegative");
      const bool previous = t > 0 && i == c[t - 1];
      const double v = previous ? u[i] : std::max(u[i], floor);
      total += v;
      if (i == c[t]) observed = v;
    }
    if (!(observed > 0.0) || !(total > 0.0))
      throw InfiniteLoss("observed speaker has zero probability at turn " + std::to_string(t + 1));
    out[t] = -std::log(observed / total);
  }
  return out;
}

/// Mean per-turn negative log-likelihood.
inline double nll_loss(const LikelihoodSequence& U, const Conversation& c, double floor = kLikelihoodFloor) {
  double s = 0.0;
  for (double v : turn_nll(U, c, floor)) s += v;
  return s / static_cast<double>(c.size());
}

/// Mean per-turn class-weighted negative log-likelihood.
inline double weighted_loss(const LikelihoodSequence& U, const Conversation& c, double floor = kLikelihoodFloor) {
  const auto nll = turn_nll(U, c, floor);
  const auto cw = class_weights(c);
  double s = 0.0;
  for (std::size_t t = 0; t < nll.size(); ++t) s += cw.weights[t] * nll[t];
  return s / static_cast<double>(c.size());
}

// ---------------------------------------------------------------------------
// Sampling

/// Index drawn with probability proportional to u; zero entries are never drawn.
inline std::size_t draw_member(const std::vector<double>& u, Rng& rng) {
  double total = 0.0;
  for (double v : u) total += v;
  if (!(total > 0.0) || !std::isfinite(total)) throw DegenerateDistribution("cannot sample from an all-zero likelihood");
  const double r = rng.uniform() * total;
  double cum = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (u[i] <= 0.0) continue;
    cum += u[i];
    last_positive = i;
    if (r < cum) return i;
  }
  return last_positive;  // rounding at the upper end
}

inline Conversation sample_conversation(const ScoreParams& params, const ProclivityFn& proclivity,
                                        std::size_t turns, Rng& rng) {
  if (turns == 0) throw DomainError("conversation length must be positive");
  params.validate();
  const std::size_t n = params.size();
  if (n < 2) throw DomainError("a conversation needs at least two members");
  GapState state(n);
  std::vector<std::size_t> speakers;
  speakers.reserve(turns);
  for (std::size_t t = 0; t < turns; ++t) {
    const auto u = speaking_scores(params, proclivity, state.gaps());
    const auto s = draw_member(u, rng);
    speakers.push_back(s);
    state.advance(s);
  }
  return Conversation(std::move(speakers), n);
}

inline Conversation sample_conversation(const ScoreParams& params, const ProclivityFn& proclivity,
                                        std::size_t turns, std::uint64_t seed) {
  Rng rng(seed);
  return sample_conversation(params, proclivity, turns, rng);
}

}  // namespace turntaking
