#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "oracle.hpp"
#include "test_util.hpp"
#include "turntaking/eval.hpp"

using namespace turntaking;
using testutil::conv;

namespace {

ExperimentConfig tiny_experiment() {
  ExperimentConfig c;
  c.synth.train_groups = 2;
  c.synth.val_groups = 1;
  c.synth.test_groups = 2;
  c.synth.turns = 120;
  c.synth.trials = 2;
  c.synth.seed = 4;
  c.fit.max_outer = 6;
  c.curve_gaps = gap_grid(2, 6);
  return c;
}

std::string read_all(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Evaluate, NoMemoryAnalyticLoss) {
  SynthConfig c;
  c.seed = 2;
  c.test_groups = 5;
  const auto ds = generate_dataset(c, 0);
  const double expect = std::log(4.0) + (std::log(5.0) - std::log(4.0)) / 800.0;
  EXPECT_NEAR(expect, 1.3866, 1e-4);
  for (const auto& g : evaluate(ModelBundle::make(Variant::kNm), ds.test)) {
    EXPECT_EQ(g.turns, 800u);
    EXPECT_NEAR(g.loss, expect, 1e-12);
  }
}

TEST(Evaluate, TrueModelMatchesBruteForce) {
  const oracle::Seq s{2, 1, 3, 2, 3, 1};
  GroupData g{7, Roster({0.2, 0.5, 0.9}), conv(s, 3), traits_to_scores(Roster({0.2, 0.5, 0.9}))};
  const std::vector<double> pi = g.truth->inherent, d = g.truth->memory;
  for (const auto& w : {ProclivityFn::exp_decay(), ProclivityFn::sigmoid()}) {
    const auto fn = [&](int delta) { return w(static_cast<long>(delta)); };
    const auto U = likelihood_sequence(*g.truth, w, g.conversation);
    oracle::Seq prefix;
    std::vector<std::vector<double>> brute;
    for (int t = 1; t <= 6; ++t) {
      brute.push_back(oracle::likelihoods(pi, d, fn, s, t));
      const auto p = speaking_probabilities(U[static_cast<std::size_t>(t - 1)]);
      const auto q = oracle::probabilities(brute.back());
      for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(p[i], q[i], 1e-12);
    }
    const auto expect = oracle::losses(brute, s, kLikelihoodFloor);
    const auto got = evaluate(true_model({g}, w), {g});
    EXPECT_EQ(got[0].group_id, 7u);
    EXPECT_NEAR(got[0].loss, expect.nll, 1e-12);
    EXPECT_NEAR(got[0].loss_turn, expect.weighted, 1e-12);
  }
}

TEST(Evaluate, TrueModelNeedsGroundTruth) {
  GroupData g{1, Roster({0.2, 0.5}), conv({1, 2}, 2), std::nullopt};
  EXPECT_THROW(true_model({g}, ProclivityFn::exp_decay()), DomainError);
  EXPECT_THROW(evaluate(TrueModel{ProclivityFn::exp_decay()}, {g}), DomainError);
}

TEST(Aggregate, TurnWeightedMeanAndSum) {
  const std::vector<GroupLoss> groups{{1, 100, 1.0, 2.0}, {2, 300, 2.0, 1.0}};
  const auto a = aggregate(groups, Metric::kLoss);
  EXPECT_NEAR(a.mean, (100 * 1.0 + 300 * 2.0) / 400.0, 1e-12);
  EXPECT_DOUBLE_EQ(a.sum, 3.0);
  EXPECT_NEAR(aggregate(groups, Metric::kLossTurn).mean, 1.25, 1e-12);
  EXPECT_THROW(aggregate({}, Metric::kLoss), DomainError);
}

TEST(BoxStats, QuartilesAndWhiskers) {
  EXPECT_DOUBLE_EQ(quantile({3, 1, 2}, 0.5), 2.0);
  EXPECT_DOUBLE_EQ(quantile({1, 2, 3, 4}, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(quantile({1, 2, 3, 4}, 0.25), 1.75);
  const auto b = box_stats({1, 2, 3, 4, 5, 6, 7, 8, 9, 100});
  EXPECT_DOUBLE_EQ(b.median, 5.5);
  EXPECT_DOUBLE_EQ(b.q1, 3.25);
  EXPECT_DOUBLE_EQ(b.q3, 7.75);
  EXPECT_DOUBLE_EQ(b.lo_whisker, 1.0);
  EXPECT_DOUBLE_EQ(b.hi_whisker, 9.0);  // 100 is beyond q3 + 1.5 IQR
  EXPECT_TRUE(std::isnan(box_stats({}).median));
}

TEST(RunTrial, CellsIndependentOfVariantOrder) {
  auto forward = tiny_experiment();
  auto reverse = forward;
  reverse.variants = {Variant::kHm, Variant::kNm, Variant::kExp, Variant::kPro};
  const auto a = run_trial(forward, 0);
  const auto b = run_trial(reverse, 0);
  ASSERT_EQ(a.size(), 5u);
  ASSERT_EQ(b.size(), 5u);
  EXPECT_EQ(a[0].model, "true");
  for (const auto& ca : a) {
    const auto it = std::find_if(b.begin(), b.end(), [&](const ReportCell& c) { return c.model == ca.model; });
    ASSERT_NE(it, b.end());
    ASSERT_FALSE(ca.failed) << ca.failure;
    EXPECT_EQ(ca.loss.mean, it->loss.mean) << ca.model;
    EXPECT_EQ(ca.loss_turn.mean, it->loss_turn.mean) << ca.model;
    ASSERT_TRUE(ca.curve && it->curve);
    EXPECT_EQ(ca.curve->values, it->curve->values);
  }
}

TEST(RunExperiment, ParallelMatchesSerial) {
  auto serial = tiny_experiment();
  serial.synth.trials = 3;
  auto parallel = serial;
  parallel.parallel_trials = 3;
  std::ostringstream a, b;
  write_report_csv(a, run_experiment(serial));
  write_report_csv(b, run_experiment(parallel));
  EXPECT_EQ(a.str(), b.str());
}

TEST(RunTrial, FailedFitIsRecordedNotFatal) {
  // run_experiment validates up front; calling run_trial directly lets the
  // bad setting reach fit(), which is where real failures surface.
  auto c = tiny_experiment();
  c.fit.patience = 0;
  EvalReport report;
  report.cells = run_trial(c, 0);
  const auto* pro = report.find(1, "pro");
  ASSERT_NE(pro, nullptr);
  EXPECT_TRUE(pro->failed);
  EXPECT_FALSE(pro->failure.empty());
  EXPECT_TRUE(report.find(1, "exp")->failed);
  EXPECT_FALSE(report.find(1, "nm")->failed);
  EXPECT_FALSE(report.find(1, "true")->failed);
  EXPECT_FALSE(report.all_failed());
  EXPECT_TRUE(report.trial_values("pro", Metric::kLoss).empty());
  EXPECT_EQ(report.trial_values("nm", Metric::kLoss).size(), 1u);
  std::ostringstream os;
  write_report_csv(os, report);
  EXPECT_NE(os.str().find("1,pro,loss,failed,nan\n"), std::string::npos);
  EXPECT_THROW(run_experiment(c), DomainError);
}

TEST(Report, CsvLayout) {
  EvalReport r;
  ReportCell c{1, "nm", false, {}, {}, {}, {}, {}, {}};
  c = finish_cell(c, {{3, 10, 1.5, 2.5}, {4, 30, 0.5, 0.25}});
  r.cells.push_back(c);
  std::ostringstream os;
  write_report_csv(os, r);
  EXPECT_EQ(os.str(),
            "trial,variant,metric,group_id,value\n"
            "1,nm,loss,3,1.5\n1,nm,loss,4,0.5\n1,nm,loss,mean,0.75\n1,nm,loss,sum,2\n"
            "1,nm,loss_turn,3,2.5\n1,nm,loss_turn,4,0.25\n1,nm,loss_turn,mean,0.8125\n1,nm,loss_turn,sum,2.75\n");
  std::ostringstream summary;
  write_summary_csv(summary, r);
  EXPECT_EQ(summary.str(),
            "variant,metric,median,q1,q3,lo_whisker,hi_whisker\n"
            "nm,loss,0.75,0.75,0.75,0.75,0.75\nnm,loss_turn,0.8125,0.8125,0.8125,0.8125,0.8125\n");
}

TEST(Report, ExperimentFilesRegenerateIdentically) {
  const auto c = tiny_experiment();
  const auto base = std::filesystem::temp_directory_path() / ("tt_eval_" + std::to_string(::getpid()));
  write_experiment(base / "a", run_experiment(c));
  write_experiment(base / "b", run_experiment(c));
  std::size_t files = 0;
  for (const auto& e : std::filesystem::recursive_directory_iterator(base / "a")) {
    if (!e.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(e.path(), base / "a");
    EXPECT_EQ(read_all(e.path()), read_all(base / "b" / rel)) << rel;
    ++files;
  }
  // report, summary, 2 trials x 5 curves, 5 mean curves, 2 trials x 2 histories
  EXPECT_EQ(files, 2u + 10 + 5 + 4);
  EXPECT_TRUE(std::filesystem::exists(base / "a" / "curves" / "trial_2" / "pro.csv"));
  EXPECT_TRUE(std::filesystem::exists(base / "a" / "history" / "trial_1" / "exp.csv"));
  std::filesystem::remove_all(base);
}
