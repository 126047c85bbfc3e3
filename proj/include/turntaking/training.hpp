#pragma once

// Model variants and maximum-likelihood fitting.
//
// A bundle predicts pi_hat = f(x), d_hat = g(x) from a member's trait and uses
// a proclivity that is either learned (nu) or fixed. Fitting alternates
// gradient descent on the score networks (f, g) with gradient descent on nu,
// holding the other block fixed, and keeps the parameters with the best
// validation loss.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dataset.hpp"
#include "errors.hpp"
#include "model.hpp"
#include "neural.hpp"
#include "proclivity.hpp"
#include "rng.hpp"

namespace turntaking {

enum class Variant { kPro, kExp, kNm, kHm };

inline std::string_view to_string(Variant v) noexcept {
  switch (v) {
    case Variant::kPro: return "pro";
    case Variant::kExp: return "exp";
    case Variant::kNm: return "nm";
    case Variant::kHm: return "hm";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  if (s == "pro") return Variant::kPro;
  if (s == "exp") return Variant::kExp;
  if (s == "nm") return Variant::kNm;
  if (s == "hm") return Variant::kHm;
  throw DomainError("unknown variant '" + std::string(s) + "' (expected pro, exp, nm or hm)");
}

inline bool is_learnable(Variant v) noexcept { return v == Variant::kPro || v == Variant::kExp; }

struct NetShape {
  std::size_t hidden_layers = 2;
  std::size_t hidden_width = 16;

  std::vector<std::size_t> layer_sizes() const {
    std::vector<std::size_t> s{1};
    for (std::size_t k = 0; k < hidden_layers; ++k) s.push_back(hidden_width);
    s.push_back(1);
    return s;
  }
};

inline constexpr double kHighMemoryInherent = 1e-2;

struct ModelBundle {
  Variant variant = Variant::kNm;
  std::optional<DenseNet> inherent_net;    // f
  std::optional<DenseNet> memory_net;      // g
  std::optional<DenseNet> proclivity_net;  // nu, PRO only

  /// Fresh bundle. Learnable networks start with a zeroed output layer so
  /// every prediction is 0.5 before training.
  static ModelBundle make(Variant v, std::uint64_t seed = 0, const NetShape& shape = {}) {
    ModelBundle b;
    b.variant = v;
    if (is_learnable(v)) {
      const auto sizes = shape.layer_sizes();
      b.inherent_net = init_net(sizes, derive_seed(seed, {static_cast<std::uint64_t>(StreamPurpose::kInitScores), 0}),
                                HeadInit::kZero);
      b.memory_net = init_net(sizes, derive_seed(seed, {static_cast<std::uint64_t>(StreamPurpose::kInitScores), 1}),
                              HeadInit::kZero);
    }
    if (v == Variant::kPro)
      b.proclivity_net = init_net(shape.layer_sizes(),
                                  derive_seed(seed, {static_cast<std::uint64_t>(StreamPurpose::kInitProclivity)}),
                                  HeadInit::kZero);
    return b;
  }

  void validate() const {
    const bool scores = inherent_net.has_value() && memory_net.has_value();
    switch (variant) {
      case Variant::kPro:
        if (!scores || !proclivity_net) throw DomainError("PRO bundle needs f, g and nu networks");
        break;
      case Variant::kExp:
        if (!scores || proclivity_net) throw DomainError("EXP bundle needs f and g networks and no nu network");
        break;
      case Variant::kNm:
      case Variant::kHm:
        if (inherent_net || memory_net || proclivity_net) throw DomainError("fixed baselines carry no networks");
        break;
    }
  }

  double inherent(double trait) const {
    switch (variant) {
      case Variant::kNm: return 1.0;
      case Variant::kHm: return kHighMemoryInherent;
      default: return forward(*inherent_net, trait);
    }
  }

  double memory(double trait) const {
    switch (variant) {
      case Variant::kNm: return 0.0;
      case Variant::kHm: return 1.0;
      default: return forward(*memory_net, trait);
    }
  }

  ProclivityFn proclivity() const {
    switch (variant) {
      case Variant::kPro: return ProclivityFn::learned(*proclivity_net);
      case Variant::kNm: return ProclivityFn::zero();
      default: return ProclivityFn::exp_decay();
    }
  }
};

inline ScoreParams predict_scores(const ModelBundle& bundle, const Roster& roster) {
  ScoreParams p;
  p.inherent.reserve(roster.size());
  p.memory.reserve(roster.size());
  for (double x : roster.traits()) {
    p.inherent.push_back(bundle.inherent(x));
    p.memory.push_back(bundle.memory(x));
  }
  return p;
}

inline ProclivityCurve rescaled_curve(const ModelBundle& bundle,
                                      const std::vector<double>& trait_grid = default_trait_grid(),
                                      const std::vector<long>& gaps = gap_grid()) {
  return rescaled_curve([&](double x) { return bundle.inherent(x); },
                        [&](double x) { return bundle.memory(x); }, bundle.proclivity(), trait_grid, gaps);
}

// ---------------------------------------------------------------------------
// Likelihood pass over precomputed gaps

/// A conversation with its gap table precomputed: gaps[t * N + i] is the gap
/// of member i at turn t, 0 when the member never spoke.
struct PreparedGroup {
  std::vector<double> traits;
  std::vector<std::size_t> speakers;
  std::vector<long> gaps;
  std::size_t members = 0;
  long max_gap = 0;

  explicit PreparedGroup(const GroupData& g)
      : traits(g.roster.traits()), speakers(g.conversation.speakers()), members(g.roster.size()) {
    if (g.conversation.group_size() != members) throw DomainError("roster and conversation sizes differ");
    GapState state(members);
    gaps.reserve(speakers.size() * members);
    for (auto s : speakers) {
      for (std::size_t i = 0; i < members; ++i) {
        const Gap d = state.gap(i);
        gaps.push_back(d ? *d : 0);
        if (d) max_gap = std::max(max_gap, *d);
      }
      state.advance(s);
    }
  }
  std::size_t turns() const noexcept { return speakers.size(); }
};

/// d(sum of turn losses)/d(score-level quantity).
struct ScoreGradients {
  std::vector<double> inherent;    // per member
  std::vector<double> memory;      // per member
  std::vector<double> proclivity;  // per gap value, index = gap
};

/// Sum over turns of -log P[s(t)] given member scores and a proclivity table
/// (nu[gap] for gap >= 2). Accumulates score-level gradients when `grads` is
/// non-null; entries floored at `floor` pass no gradient.
inline double group_nll_sum(const PreparedGroup& g, const std::vector<double>& pi, const std::vector<double>& d,
                            const std::vector<double>& nu, double floor, ScoreGradients* grads = nullptr) {
  const std::size_t n = g.members;
  std::vector<double> v(n);
  std::vector<bool> live(n);
  double loss = 0.0;
  for (std::size_t t = 0; t < g.turns(); ++t) {
    const long* gap = &g.gaps[t * n];
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double u;
      if (gap[i] == 0) u = pi[i];
      else if (gap[i] == 1) {
        v[i] = 0.0;
        live[i] = false;
        continue;
      } else u = pi[i] + d[i] * nu[static_cast<std::size_t>(gap[i])];
      live[i] = u > floor;
      v[i] = live[i] ? u : floor;
      total += v[i];
    }
    const std::size_t s = g.speakers[t];
    if (!(v[s] > 0.0) || !(total > 0.0))
      throw InfiniteLoss("observed speaker has zero probability at turn " + std::to_string(t + 1));
    loss += std::log(total) - std::log(v[s]);
    if (!grads) continue;
    for (std::size_t i = 0; i < n; ++i) {
      if (!live[i]) continue;
      const double dv = 1.0 / total - (i == s ? 1.0 / v[s] : 0.0);
      grads->inherent[i] += dv;
      if (gap[i] >= 2) {
        const auto k = static_cast<std::size_t>(gap[i]);
        grads->memory[i] += dv * nu[k];
        grads->proclivity[k] += dv * d[i];
      }
    }
  }
  return loss;
}

enum class Block { kScores, kProclivity };

struct BundleGradients {
  std::optional<GradientSet> inherent;
  std::optional<GradientSet> memory;
  std::optional<GradientSet> proclivity;

  bool empty() const noexcept { return !inherent && !memory && !proclivity; }
};

namespace detail {

/// Bundle outputs needed by a likelihood pass over a set of prepared groups,
/// plus the traces needed to push score-level gradients into the networks.
class BundleEvaluator {
 public:
  BundleEvaluator(const ModelBundle& bundle, long max_gap) : bundle_(bundle) {
    nu_.assign(static_cast<std::size_t>(std::max<long>(max_gap, 1)) + 1, 0.0);
    if (bundle.variant == Variant::kPro) nu_traces_.resize(nu_.size());
    for (std::size_t k = 2; k < nu_.size(); ++k) {
      if (bundle.variant == Variant::kPro) {
        nu_traces_[k] = forward_trace(*bundle.proclivity_net, static_cast<double>(k) / kGapScale);
        nu_[k] = nu_traces_[k].output();
      } else {
        nu_[k] = bundle.proclivity()(static_cast<long>(k));
      }
    }
  }

  const std::vector<double>& nu() const noexcept { return nu_; }

  void scores(const PreparedGroup& g, std::vector<double>& pi, std::vector<double>& d,
              std::vector<ForwardTrace>* f_traces = nullptr, std::vector<ForwardTrace>* g_traces = nullptr) const {
    pi.resize(g.members);
    d.resize(g.members);
    const bool nets = is_learnable(bundle_.variant);
    if (f_traces) f_traces->resize(g.members);
    if (g_traces) g_traces->resize(g.members);
    for (std::size_t i = 0; i < g.members; ++i) {
      if (nets) {
        auto tf = forward_trace(*bundle_.inherent_net, g.traits[i]);
        auto tg = forward_trace(*bundle_.memory_net, g.traits[i]);
        pi[i] = tf.output();
        d[i] = tg.output();
        if (f_traces) (*f_traces)[i] = std::move(tf);
        if (g_traces) (*g_traces)[i] = std::move(tg);
      } else {
        pi[i] = bundle_.inherent(g.traits[i]);
        d[i] = bundle_.memory(g.traits[i]);
      }
    }
  }

  const std::vector<ForwardTrace>& nu_traces() const noexcept { return nu_traces_; }

 private:
  const ModelBundle& bundle_;
  std::vector<double> nu_;
  std::vector<ForwardTrace> nu_traces_;
};

inline long max_gap(const std::vector<PreparedGroup>& groups) {
  long m = 1;
  for (const auto& g : groups) m = std::max(m, g.max_gap);
  return m;
}

inline std::size_t total_turns(const std::vector<PreparedGroup>& groups) {
  std::size_t n = 0;
  for (const auto& g : groups) n += g.turns();
  return n;
}

}  // namespace detail

/// Turn-weighted mean per-turn NLL of a bundle over prepared groups.
inline double mean_nll(const ModelBundle& bundle, const std::vector<PreparedGroup>& groups,
                       double floor = kLikelihoodFloor) {
  if (groups.empty()) throw DomainError("no groups to evaluate");
  detail::BundleEvaluator ev(bundle, detail::max_gap(groups));
  std::vector<double> pi, d;
  double sum = 0.0;
  for (const auto& g : groups) {
    ev.scores(g, pi, d);
    sum += group_nll_sum(g, pi, d, ev.nu(), floor);
  }
  return sum / static_cast<double>(detail::total_turns(groups));
}

/// Exact gradient of the turn-weighted mean NLL over `groups` with respect
/// to the parameters of the active block; the other block is held fixed.
/// Fixed baselines and blocks without networks yield empty sets.
inline BundleGradients nll_gradients(const ModelBundle& bundle, const std::vector<PreparedGroup>& groups, Block block,
                                     double floor = kLikelihoodFloor) {
  bundle.validate();
  BundleGradients out;
  if (!is_learnable(bundle.variant)) return out;
  if (block == Block::kProclivity && bundle.variant != Variant::kPro) return out;
  if (groups.empty()) throw DomainError("no groups to differentiate");

  const long mg = detail::max_gap(groups);
  detail::BundleEvaluator ev(bundle, mg);
  const double scale = 1.0 / static_cast<double>(detail::total_turns(groups));

  if (block == Block::kScores) {
    out.inherent.emplace(*bundle.inherent_net);
    out.memory.emplace(*bundle.memory_net);
  } else {
    out.proclivity.emplace(*bundle.proclivity_net);
  }
  std::vector<double> nu_grad(ev.nu().size(), 0.0);
  std::vector<double> pi, d;
  std::vector<ForwardTrace> tf, tg;
  for (const auto& g : groups) {
    ScoreGradients sg{std::vector<double>(g.members, 0.0), std::vector<double>(g.members, 0.0),
                      std::vector<double>(ev.nu().size(), 0.0)};
    if (block == Block::kScores) ev.scores(g, pi, d, &tf, &tg);
    else ev.scores(g, pi, d);
    group_nll_sum(g, pi, d, ev.nu(), floor, &sg);
    if (block == Block::kScores) {
      for (std::size_t i = 0; i < g.members; ++i) {
        accumulate_backward(*bundle.inherent_net, tf[i], scale * sg.inherent[i], *out.inherent);
        accumulate_backward(*bundle.memory_net, tg[i], scale * sg.memory[i], *out.memory);
      }
    } else {
      for (std::size_t k = 0; k < nu_grad.size(); ++k) nu_grad[k] += sg.proclivity[k];
    }
  }
  if (block == Block::kProclivity) {
    for (std::size_t k = 2; k < nu_grad.size(); ++k)
      if (nu_grad[k] != 0.0)
        accumulate_backward(*bundle.proclivity_net, ev.nu_traces()[k], scale * nu_grad[k], *out.proclivity);
  }
  return out;
}

/// Gradient of one conversation's mean per-turn NLL for the active block.
inline BundleGradients conversation_nll_gradients(const ModelBundle& bundle, const Roster& roster,
                                                  const Conversation& conversation, Block block,
                                                  double floor = kLikelihoodFloor) {
  GroupData gd{0, roster, conversation, std::nullopt};
  std::vector<PreparedGroup> groups{PreparedGroup(gd)};
  return nll_gradients(bundle, groups, block, floor);
}

// ---------------------------------------------------------------------------
// Fitting

struct FitConfig {
  double step_size = 0.05;
  std::size_t max_outer = 200;
  std::size_t epochs_scores = 5;      // E1
  std::size_t epochs_proclivity = 5;  // E2
  std::size_t patience = 20;
  double floor = kLikelihoodFloor;
  double clip_norm = 10.0;
  std::uint64_t seed = 0;
  NetShape shape{};

  void validate() const {
    if (!(step_size > 0.0) || !std::isfinite(step_size)) throw DomainError("step size must be positive");
    if (max_outer == 0 || epochs_scores == 0 || epochs_proclivity == 0)
      throw DomainError("iteration counts must be positive");
    if (patience == 0) throw DomainError("patience must be at least 1");
    if (!(floor > 0.0)) throw DomainError("likelihood floor must be positive");
    if (!(clip_norm > 0.0)) throw DomainError("clip norm must be positive");
    if (shape.hidden_width == 0) throw DomainError("hidden width must be positive");
  }
};

struct TrainingSet {
  GroupList train;
  GroupList validation;
};

struct LossRecord {
  std::size_t outer_iter = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct FitResult {
  ModelBundle bundle;
  std::vector<LossRecord> history;
  std::size_t best_iter = 0;  // 0 means the initial parameters were best
  double best_val_loss = 0.0;
};

namespace detail {

inline void clip(std::initializer_list<GradientSet*> parts, double max_norm) {
  double sq = 0.0;
  for (auto* g : parts) sq += g->squared_norm();
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw DivergenceError("non-finite gradient");
  if (norm > max_norm)
    for (auto* g : parts) g->scale(max_norm / norm);
}

}  // namespace detail

inline std::vector<PreparedGroup> prepare(const GroupList& groups) {
  std::vector<PreparedGroup> out;
  out.reserve(groups.size());
  for (const auto& g : groups) out.emplace_back(g);
  return out;
}

/// `epochs` full-batch gradient steps on one block, with the block's gradient
/// clipped to `config.clip_norm`. Parameters outside the block are untouched.
inline ModelBundle descend_block(ModelBundle bundle, const std::vector<PreparedGroup>& train, Block block,
                                 std::size_t epochs, const FitConfig& config) {
  for (std::size_t e = 0; e < epochs; ++e) {
    auto g = nll_gradients(bundle, train, block, config.floor);
    if (g.empty()) break;
    if (block == Block::kScores) {
      detail::clip({&*g.inherent, &*g.memory}, config.clip_norm);
      bundle.inherent_net = apply_update(*bundle.inherent_net, *g.inherent, config.step_size);
      bundle.memory_net = apply_update(*bundle.memory_net, *g.memory, config.step_size);
    } else {
      detail::clip({&*g.proclivity}, config.clip_norm);
      bundle.proclivity_net = apply_update(*bundle.proclivity_net, *g.proclivity, config.step_size);
    }
  }
  return bundle;
}

/// Block coordinate descent with validation early stopping. Returns the
/// parameters with the lowest validation loss (training loss when the
/// validation split is empty). NM and HM come back unchanged.
inline FitResult fit(const ModelBundle& initial, const TrainingSet& data, const FitConfig& config) {
  config.validate();
  initial.validate();
  if (data.train.empty()) throw DomainError("training set is empty");
  FitResult result{initial, {}, 0, 0.0};
  if (!is_learnable(initial.variant)) return result;

  const auto train = prepare(data.train);
  const auto val = prepare(data.validation);
  const auto& selection = val.empty() ? train : val;

  ModelBundle bundle = initial;
  double best = mean_nll(bundle, selection, config.floor);
  if (!std::isfinite(best)) throw DivergenceError("initial validation loss is not finite");
  result.best_val_loss = best;
  std::size_t stale = 0;

  for (std::size_t outer = 1; outer <= config.max_outer; ++outer) {
    bundle = descend_block(std::move(bundle), train, Block::kScores, config.epochs_scores, config);
    if (bundle.variant == Variant::kPro)
      bundle = descend_block(std::move(bundle), train, Block::kProclivity, config.epochs_proclivity, config);
    LossRecord rec{outer, mean_nll(bundle, train, config.floor), 0.0};
    rec.val_loss = val.empty() ? rec.train_loss : mean_nll(bundle, val, config.floor);
    if (!std::isfinite(rec.train_loss) || !std::isfinite(rec.val_loss))
      throw DivergenceError("loss became non-finite at outer iteration " + std::to_string(outer));
    result.history.push_back(rec);
    if (rec.val_loss < best) {
      best = rec.val_loss;
      result.bundle = bundle;
      result.best_iter = outer;
      result.best_val_loss = best;
      stale = 0;
    } else if (++stale >= config.patience) {
      break;
    }
  }
  return result;
}

}  // namespace turntaking
