#pragma once

// Proclivity: how a member's inclination to speak depends on the number of
// turns since they last spoke. Every kind is zero for gaps <= 0 and for
// members who have never spoken.

#include <cmath>
#include <cstddef>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "neural.hpp"

namespace turntaking {

/// Turns since a member last spoke; std::nullopt means the member never spoke.
using Gap = std::optional<long>;
inline constexpr std::nullopt_t kNever = std::nullopt;

/// Learned proclivity networks see the gap as delta / kGapScale.
inline constexpr double kGapScale = 20.0;

inline double w_exp(long delta) noexcept {
  return delta >= 1 ? std::exp(-0.5 * static_cast<double>(delta)) : 0.0;
}
inline double w_exp(Gap delta) noexcept { return delta ? w_exp(*delta) : 0.0; }

inline double w_sig(long delta) noexcept {
  return delta >= 1 ? 0.95 * sigmoid(10.0 - 0.5 * static_cast<double>(delta)) : 0.0;
}
inline double w_sig(Gap delta) noexcept { return delta ? w_sig(*delta) : 0.0; }

inline double learned_nu(const DenseNet& net, long delta) {
  return delta >= 1 ? forward(net, static_cast<double>(delta) / kGapScale) : 0.0;
}
inline double learned_nu(const DenseNet& net, Gap delta) {
  return delta ? learned_nu(net, *delta) : 0.0;
}

enum class ProclivityKind { kExpDecay, kSigmoid, kLearned, kZero };

inline std::string_view to_string(ProclivityKind k) noexcept {
  switch (k) {
    case ProclivityKind::kExpDecay: return "exp";
    case ProclivityKind::kSigmoid: return "sigmoid";
    case ProclivityKind::kLearned: return "learned";
    case ProclivityKind::kZero: return "zero";
  }
  return "?";
}

/// A fixed or learned proclivity. Learned proclivities own an immutable copy
/// of their network.
class ProclivityFn {
 public:
  static ProclivityFn exp_decay() { return ProclivityFn(ProclivityKind::kExpDecay); }
  static ProclivityFn sigmoid() { return ProclivityFn(ProclivityKind::kSigmoid); }
  static ProclivityFn zero() { return ProclivityFn(ProclivityKind::kZero); }
  static ProclivityFn learned(DenseNet net) {
    ProclivityFn p(ProclivityKind::kLearned);
    p.net_ = std::move(net);
    return p;
  }

  /// Parses "exp" / "sigmoid" / "zero" (also "sig", "exp_decay").
  static ProclivityFn from_name(std::string_view name) {
    if (name == "exp" || name == "exp_decay") return exp_decay();
    if (name == "sigmoid" || name == "sig") return sigmoid();
    if (name == "zero") return zero();
    throw DomainError("unknown proclivity '" + std::string(name) + "' (expected exp or sigmoid)");
  }

  ProclivityKind kind() const noexcept { return kind_; }
  const DenseNet* network() const noexcept { return net_ ? &*net_ : nullptr; }

  double operator()(long delta) const {
    switch (kind_) {
      case ProclivityKind::kExpDecay: return w_exp(delta);
      case ProclivityKind::kSigmoid: return w_sig(delta);
      case ProclivityKind::kLearned: return learned_nu(*net_, delta);
      case ProclivityKind::kZero: return 0.0;
    }
    return 0.0;
  }
  double operator()(Gap delta) const { return delta ? (*this)(*delta) : 0.0; }

 private:
  explicit ProclivityFn(ProclivityKind k) : kind_(k) {}
  ProclivityKind kind_;
  std::optional<DenseNet> net_;
};

struct ProclivityCurve {
  std::vector<long> gaps;
  std::vector<double> values;
};

/// 50 equidistant traits covering [0.1, 1] inclusive.
inline std::vector<double> default_trait_grid(std::size_t points = 50, double lo = 0.1, double hi = 1.0) {
  if (points < 2) throw DomainError("trait grid needs at least two points");
  std::vector<double> g(points);
  for (std::size_t k = 0; k < points; ++k)
    g[k] = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(points - 1);
  return g;
}

inline std::vector<long> gap_grid(long first = 2, long last = 40) {
  if (first > last) throw DomainError("empty gap grid");
  std::vector<long> g;
  for (long d = first; d <= last; ++d) g.push_back(d);
  return g;
}

/// Proclivity scaled by mean(d_hat) / mean(pi_hat) over a trait grid, which
/// makes the memory term comparable across models with different score scales.
template <class InherentFn, class MemoryFn>
ProclivityCurve rescaled_curve(InherentFn&& inherent, MemoryFn&& memory, const ProclivityFn& proclivity,
                               const std::vector<double>& trait_grid = default_trait_grid(),
                               const std::vector<long>& gaps = gap_grid()) {
  if (trait_grid.empty()) throw DomainError("empty trait grid");
  for (std::size_t k = 1; k < gaps.size(); ++k)
    if (gaps[k] <= gaps[k - 1]) throw DomainError("gap grid must be strictly increasing");
  double sum_pi = 0.0, sum_d = 0.0;
  for (double x : trait_grid) {
    sum_pi += inherent(x);
    sum_d += memory(x);
  }
  if (!(sum_pi > 0.0)) throw DegenerateDistribution("mean inherent score over the trait grid is zero");
  const double ratio = sum_d / sum_pi;
  ProclivityCurve curve{gaps, {}};
  curve.values.reserve(gaps.size());
  for (long d : gaps) curve.values.push_back(ratio * proclivity(d));
  return curve;
}

inline void write_curve_csv(std::ostream& os, const ProclivityCurve& curve) {
  os << "delta,value\n";
  auto old = os.precision(17);
  for (std::size_t k = 0; k < curve.gaps.size(); ++k) os << curve.gaps[k] << ',' << curve.values[k] << '\n';
  os.precision(old);
}

}  // namespace turntaking
