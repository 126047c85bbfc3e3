#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "oracle.hpp"
#include "test_util.hpp"
#include "turntaking/model.hpp"

using namespace turntaking;
using testutil::conv;

namespace {

ScoreParams uniform_scores(std::size_t n, double pi, double d) {
  return {std::vector<double>(n, pi), std::vector<double>(n, d)};
}

}  // namespace

TEST(ModelTypes, RosterAndConversationInvariants) {
  EXPECT_THROW(Roster({0.5}), DomainError);
  EXPECT_THROW(Roster({0.5, std::nan("")}), DomainError);
  EXPECT_NO_THROW(Roster({0.5, 0.7}));
  EXPECT_THROW(conv({1, 1}, 3), DomainError);
  EXPECT_THROW(conv({1, 4}, 3), DomainError);
  EXPECT_NO_THROW(conv({1, 2, 1, 3}, 3));
  ScoreParams bad{{0.1, -0.2}, {1.0, 1.0}};
  EXPECT_THROW(bad.validate(), DomainError);
  EXPECT_THROW(uniform_scores(3, 1.0, 1.0).validate(4), DomainError);
}

TEST(ComputeGaps, WorkedExamples) {
  // 1-based turn 4 of [1,2,1] -> 0-based t = 3
  auto g = compute_gaps(conv({1, 2, 1}, 3), 3);
  ASSERT_EQ(g.size(), 3u);
  EXPECT_EQ(g[0], 1);
  EXPECT_EQ(g[1], 2);
  EXPECT_FALSE(g[2].has_value());

  for (auto gap : compute_gaps(conv({1, 2, 1, 3}, 4), 0)) EXPECT_FALSE(gap.has_value());

  g = compute_gaps(conv({1, 2, 1, 3, 2}, 3), 5);
  EXPECT_EQ(g[0], 3);
  EXPECT_EQ(g[1], 1);
  EXPECT_EQ(g[2], 2);
}

TEST(ComputeGaps, OutOfRange) {
  EXPECT_THROW(compute_gaps(conv({1, 2}, 2), 3), DomainError);
  EXPECT_NO_THROW(compute_gaps(conv({1, 2}, 2), 2));
}

TEST(ComputeGaps, MatchesOracleEverywhere) {
  for (const auto& s : oracle::all_conversations(3, 6)) {
    const auto c = conv(s, 3);
    for (std::size_t t = 0; t <= c.size(); ++t) {
      const auto g = compute_gaps(c, t);
      for (int i = 1; i <= 3; ++i) {
        const auto expect = oracle::gap(s, i, static_cast<int>(t) + 1);
        ASSERT_EQ(g[static_cast<std::size_t>(i - 1)].has_value(), expect.has_value());
        if (expect) EXPECT_EQ(*g[static_cast<std::size_t>(i - 1)], *expect);
      }
    }
  }
}

TEST(SpeakingScores, WorkedExamples) {
  const auto params = uniform_scores(3, 0.5, 1.0);
  const auto w = ProclivityFn::exp_decay();
  // history [1,2], turn 3
  auto u = speaking_scores(params, w, compute_gaps(conv({1, 2}, 3), 2));
  EXPECT_NEAR(u[0], 0.8678794411714423, 1e-15);
  EXPECT_EQ(u[1], 0.0);
  EXPECT_EQ(u[2], 0.5);

  ScoreParams p{{0.2, 0.3, 0.5}, {4.0, 5.0, 6.0}};
  u = speaking_scores(p, w, std::vector<Gap>(3, kNever));
  EXPECT_EQ(u, p.inherent);

  // no memory: inherent score for everyone except the previous speaker
  ScoreParams nomem{{0.2, 0.3, 0.5}, {0.0, 0.0, 0.0}};
  u = speaking_scores(nomem, w, compute_gaps(conv({1, 2, 3, 1}, 3), 4));
  EXPECT_EQ(u[0], 0.0);
  EXPECT_EQ(u[1], 0.3);
  EXPECT_EQ(u[2], 0.5);
}

TEST(SpeakingProbabilities, WorkedExamples) {
  auto p = speaking_probabilities({1, 1, 1, 1});
  for (double v : p) EXPECT_DOUBLE_EQ(v, 0.25);

  p = speaking_probabilities({0.8678794411714423, 0.0, 0.5});
  EXPECT_NEAR(p[0], 0.6345, 1e-4);
  EXPECT_EQ(p[1], 0.0);
  EXPECT_NEAR(p[2], 0.3655, 1e-4);
  EXPECT_NEAR(p[0], 0.6344707106849976, 1e-15);

  const std::vector<double> u{0.3, 2.0, 0.0, 1.7};
  const auto a = speaking_probabilities(u);
  for (double c : {1e-6, 0.37, 5.0, 1e6}) {
    std::vector<double> cu;
    for (double v : u) cu.push_back(c * v);
    const auto b = speaking_probabilities(cu);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-15);
  }
}

TEST(SpeakingProbabilities, Degenerate) {
  EXPECT_THROW(speaking_probabilities({0.0, 0.0, 0.0}), DegenerateDistribution);
  EXPECT_THROW(speaking_probabilities({1.0, -1.0}), DomainError);
}

TEST(NextSpeaker, ArgmaxWithLowestIndexTies) {
  EXPECT_EQ(next_speaker({0.8678794411714423, 0.0, 0.5}), 0u);
  EXPECT_EQ(next_speaker({1.0, 1.0, 1.0}), 0u);
  EXPECT_EQ(next_speaker({0.0, 2.0, 2.0}), 1u);
  EXPECT_EQ(next_speaker({0.2, 0.1, 0.9}), 2u);
  EXPECT_EQ(next_speaker({2.0, 1.0, 9.0}), next_speaker({0.02, 0.01, 0.09}));
  EXPECT_THROW(next_speaker({0.0, 0.0}), DegenerateDistribution);
}

TEST(ClassifyTurn, WorkedExamples) {
  EXPECT_EQ(classify_turn(conv({1, 2, 1, 2, 1}, 2), 2), TurnClass::kFloor);
  EXPECT_EQ(classify_turn(conv({1, 2, 1, 3}, 3), 3), TurnClass::kBrokenFloor);
  EXPECT_EQ(classify_turn(conv({1, 2, 1, 3, 2}, 3), 4), TurnClass::kRegain);
  const auto c = conv({1, 2, 1, 2, 1}, 2);
  EXPECT_EQ(classify_turn(c, 0), TurnClass::kNonfloor);
  EXPECT_EQ(classify_turn(c, 1), TurnClass::kNonfloor);
  EXPECT_THROW(classify_turn(c, 5), DomainError);
}

TEST(ClassifyTurn, PredicatesAreExclusiveAndMatchOracle) {
  for (int len = 1; len <= 6; ++len) {
    for (const auto& s : oracle::all_conversations(3, len)) {
      const auto c = conv(s, 3);
      for (int t = 1; t <= len; ++t) {
        const int expect = oracle::turn_class(s, t);
        ASSERT_NE(expect, -1) << "overlapping class predicates";
        EXPECT_EQ(static_cast<int>(classify_turn(c, static_cast<std::size_t>(t - 1))), expect);
      }
    }
  }
}

TEST(ClassWeights, WorkedExamples) {
  EXPECT_DOUBLE_EQ(class_weight(8, 4), 0.5);
  EXPECT_DOUBLE_EQ(class_weight(8, 2), 1.0);
  EXPECT_DOUBLE_EQ(class_weight(8, 1), 2.0);
  EXPECT_THROW(class_weight(8, 0), DomainError);

  // 1 2 3 4 5 1 2 3 never repeats within a window of five: all nonfloor
  const auto cw = class_weights(conv({1, 2, 3, 4, 5, 1, 2, 3}, 5));
  EXPECT_EQ(cw.counts[3], 8u);
  for (double g : cw.weights) EXPECT_DOUBLE_EQ(g, 0.25);
}

TEST(ClassWeights, SumToTurnsWhenAllClassesPresent) {
  std::size_t checked = 0;
  for (const auto& s : oracle::all_conversations(3, 8)) {
    const auto cw = class_weights(conv(s, 3));
    if (std::find(cw.counts.begin(), cw.counts.end(), 0u) != cw.counts.end()) continue;
    const double sum = std::accumulate(cw.weights.begin(), cw.weights.end(), 0.0);
    EXPECT_NEAR(sum, 8.0, 1e-9);
    ++checked;
  }
  EXPECT_GT(checked, 0u);
}

TEST(NllLoss, UniformOverFourEligible) {
  const std::size_t T = 800;
  Rng rng(11);
  const auto c = sample_conversation(uniform_scores(5, 1.0, 0.0), ProclivityFn::zero(), T, rng);
  LikelihoodSequence U;
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<double> u(5, 1.0);
    if (t > 0) u[c[t - 1]] = 0.0;
    U.push_back(u);
  }
  const auto per_turn = turn_nll(U, c);
  EXPECT_NEAR(per_turn[0], std::log(5.0), 1e-15);
  for (std::size_t t = 1; t < T; ++t) EXPECT_NEAR(per_turn[t], std::log(4.0), 1e-15);
  EXPECT_NEAR(nll_loss(U, c), std::log(4.0) + (std::log(5.0) - std::log(4.0)) / T, 1e-12);
}

TEST(NllLoss, PerfectPrediction) {
  const auto c = conv({1, 2, 3, 1, 2, 1}, 3);
  LikelihoodSequence U;
  for (std::size_t t = 0; t < c.size(); ++t) {
    std::vector<double> u(3, 0.0);
    u[c[t]] = 1.0;
    U.push_back(u);
  }
  EXPECT_EQ(nll_loss(U, c, 0.0), 0.0);
  EXPECT_EQ(weighted_loss(U, c, 0.0), 0.0);
  EXPECT_LT(nll_loss(U, c), 1e-7);  // the floor leaks a little mass to the others
}

TEST(NllLoss, InfiniteWhenObservedSpeakerExcluded) {
  const auto c = conv({1, 2}, 2);
  LikelihoodSequence U{{1.0, 1.0}, {1.0, 0.0}};
  EXPECT_THROW(nll_loss(U, c, 0.0), InfiniteLoss);
  EXPECT_NEAR(nll_loss(U, c), 0.5 * (std::log(2.0) - std::log(1e-8 / (1.0 + 1e-8))), 1e-9);
  EXPECT_THROW(nll_loss({{1.0, 1.0}}, c), DomainError);
}

TEST(WeightedLoss, SingleClassScalesByQuarter) {
  const auto c = conv({1, 2, 3, 4, 5, 1, 2, 3}, 5);
  LikelihoodSequence U;
  Rng rng(3);
  for (std::size_t t = 0; t < c.size(); ++t) {
    std::vector<double> u(5);
    for (auto& v : u) v = rng.uniform(0.1, 2.0);
    if (t > 0) u[c[t - 1]] = 0.0;
    U.push_back(u);
  }
  EXPECT_NEAR(weighted_loss(U, c), 0.25 * nll_loss(U, c), 1e-14);
}

TEST(WeightedLoss, EqualClassCountsGiveUnitWeights) {
  // Find a conversation with two turns of each class.
  std::optional<oracle::Seq> found;
  for (const auto& s : oracle::all_conversations(3, 8)) {
    const auto cw = class_weights(conv(s, 3));
    if (cw.counts == std::array<std::size_t, 4>{2, 2, 2, 2}) {
      found = s;
      break;
    }
  }
  ASSERT_TRUE(found.has_value());
  const auto c = conv(*found, 3);
  const auto U = likelihood_sequence({{0.3, 0.6, 0.9}, {2.0, 1.0, 4.0}}, ProclivityFn::exp_decay(), c);
  EXPECT_DOUBLE_EQ(weighted_loss(U, c), nll_loss(U, c));
}

TEST(Losses, MatchOracleOnEveryShortConversation) {
  const ScoreParams p{{0.4, 0.9, 0.2}, {3.0, 0.5, 7.0}};
  const auto w = ProclivityFn::sigmoid();
  for (const auto& s : oracle::all_conversations(3, 6)) {
    const auto c = conv(s, 3);
    const auto U = likelihood_sequence(p, w, c);
    const auto expect = oracle::losses(U, s, kLikelihoodFloor);
    EXPECT_NEAR(nll_loss(U, c), expect.nll, 1e-12);
    EXPECT_NEAR(weighted_loss(U, c), expect.weighted, 1e-12);
  }
}

TEST(ModelProperties, ProbabilityInvariantsOnSampledConversations) {
  const ScoreParams p{{0.3, 0.8, 0.5, 0.1}, {5.0, 1.0, 9.0, 0.0}};
  const auto w = ProclivityFn::exp_decay();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto c = sample_conversation(p, w, 60, seed);
    const auto U = likelihood_sequence(p, w, c);
    for (std::size_t t = 0; t < c.size(); ++t) {
      const auto prob = speaking_probabilities(U[t]);
      double sum = 0.0;
      for (double v : prob) {
        EXPECT_GE(v, 0.0);
        sum += v;
      }
      EXPECT_NEAR(sum, 1.0, 1e-12);
      if (t > 0) EXPECT_EQ(prob[c[t - 1]], 0.0);
    }
  }
}

TEST(ModelProperties, JointScalingOfScoresChangesNothing) {
  const ScoreParams p{{0.3, 0.8, 0.5, 0.1}, {5.0, 1.0, 9.0, 0.2}};
  const auto w = ProclivityFn::sigmoid();
  const auto c = sample_conversation(p, w, 200, 99);
  const auto U = likelihood_sequence(p, w, c);
  for (double k : {0.01, 3.0, 250.0}) {
    ScoreParams q = p;
    for (auto& v : q.inherent) v *= k;
    for (auto& v : q.memory) v *= k;
    const auto V = likelihood_sequence(q, w, c);
    for (std::size_t t = 0; t < c.size(); ++t) {
      const auto a = speaking_probabilities(U[t]);
      const auto b = speaking_probabilities(V[t]);
      for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-10);
      EXPECT_EQ(next_speaker(U[t]), next_speaker(V[t]));
    }
    EXPECT_NEAR(nll_loss(U, c), nll_loss(V, c), 1e-10);
    EXPECT_NEAR(weighted_loss(U, c), weighted_loss(V, c), 1e-10);
  }
}

TEST(SampleConversation, DeterministicAndValid) {
  const ScoreParams p{{0.3, 0.8, 0.5}, {5.0, 1.0, 9.0}};
  const auto a = sample_conversation(p, ProclivityFn::exp_decay(), 500, 1234);
  const auto b = sample_conversation(p, ProclivityFn::exp_decay(), 500, 1234);
  EXPECT_EQ(a, b);
  for (std::size_t t = 1; t < a.size(); ++t) EXPECT_NE(a[t], a[t - 1]);
  const auto other = sample_conversation(p, ProclivityFn::exp_decay(), 500, 1235);
  EXPECT_NE(a, other);
  EXPECT_THROW(sample_conversation(p, ProclivityFn::exp_decay(), 0, 1), DomainError);
}

TEST(SampleConversation, DegenerateDistribution) {
  const ScoreParams p{{0.0, 0.0}, {1.0, 1.0}};
  EXPECT_THROW(sample_conversation(p, ProclivityFn::exp_decay(), 3, 1), DegenerateDistribution);
}

TEST(SampleConversation, MemorylessUniformFrequencies) {
  // Without memory every member other than the previous speaker is equally
  // likely: conditional frequencies are 1/(N-1).
  const std::size_t n = 4, T = 100000;
  const auto c = sample_conversation(uniform_scores(n, 1.0, 0.0), ProclivityFn::exp_decay(), T, 77);
  std::vector<std::vector<double>> counts(n, std::vector<double>(n, 0.0));
  std::vector<double> from(n, 0.0);
  for (std::size_t t = 1; t < T; ++t) {
    counts[c[t - 1]][c[t]] += 1;
    from[c[t - 1]] += 1;
  }
  const double p = 1.0 / static_cast<double>(n - 1);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      if (a == b) {
        EXPECT_EQ(counts[a][b], 0.0);
        continue;
      }
      const double sigma = std::sqrt(from[a] * p * (1 - p));
      EXPECT_LE(std::abs(counts[a][b] - from[a] * p), 3 * sigma);
    }
  }
}
