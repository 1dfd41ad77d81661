#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"
#include "untangle/analysis.hpp"
#include "untangle/batch.hpp"
#include "untangle/decompose.hpp"
#include "untangle/synth.hpp"

using namespace untangle;
using K = AggregatorKind;

namespace {

std::vector<SampleRecord> records(std::size_t n, const std::string& prefix, bool ood = false) {
  std::vector<SampleRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({prefix + std::to_string(i), PredictionSet(1, 2, {0.0, static_cast<double>(i)}), 0, std::nullopt, ood,
                   ood ? 1 : 0});
  }
  return out;
}

}  // namespace

TEST(OodMixture, EqualSizesKeepEverything) {
  const auto id = records(30, "i");
  const auto ood = records(30, "o", true);
  const auto mix = build_ood_mixture(id, ood, 1);
  ASSERT_EQ(mix.samples.size(), 60u);
  for (std::size_t i = 0; i < 30; ++i) {
    EXPECT_EQ(mix.samples[i].id, id[i].id);
    EXPECT_FALSE(mix.targets[i]);
    EXPECT_EQ(mix.samples[30 + i].id, ood[i].id);
    EXPECT_TRUE(mix.targets[30 + i]);
  }
}

TEST(OodMixture, LargerSideSubsampledDeterministically) {
  const auto id = records(100, "i");
  const auto ood = records(40, "o", true);
  const auto a = build_ood_mixture(id, ood, 5);
  const auto b = build_ood_mixture(id, ood, 5);
  const auto c = build_ood_mixture(id, ood, 6);
  ASSERT_EQ(a.samples.size(), 80u);
  EXPECT_EQ(std::count(a.targets.begin(), a.targets.end(), true), 40);
  std::vector<std::string> ia, ib, ic;
  for (std::size_t i = 0; i < 40; ++i) {
    ia.push_back(a.samples[i].id);
    ib.push_back(b.samples[i].id);
    ic.push_back(c.samples[i].id);
  }
  EXPECT_EQ(ia, ib);
  EXPECT_NE(ia, ic);
  std::set<std::string> unique(ia.begin(), ia.end());
  EXPECT_EQ(unique.size(), 40u);
}

TEST(OodMixture, RejectsEmptyOrMismatchedSides) {
  const auto id = records(3, "i");
  EXPECT_THROW(build_ood_mixture(id, std::vector<SampleRecord>{}, 0), Error);
  std::vector<SampleRecord> three = {{"x", PredictionSet(1, 3, {0, 0, 0}), 0, std::nullopt, true, 1}};
  EXPECT_THROW(build_ood_mixture(id, three, 0), Error);
}

TEST(AmbiguityTargets, CountsMultiClassVotes) {
  std::vector<SampleRecord> s = records(4, "a");
  s[0].soft_label = SoftLabel({10, 0});
  s[1].soft_label = SoftLabel({9, 1});
  s[2].soft_label = SoftLabel({0, 3});
  s[3].soft_label = SoftLabel({2, 2});
  EXPECT_EQ(ambiguity_targets(s), (std::vector<bool>{false, true, false, true}));
  s[3].soft_label.reset();
  EXPECT_THROW(ambiguity_targets(s), Error);
}

TEST(Disentanglement, PerfectAleatoricAndEntangledEstimator) {
  Rng rng(41, Stream::Fuzz, 0);
  const std::size_t n = 2000;
  std::vector<double> gt(n), noise(n);
  std::vector<bool> proxy(n);
  for (std::size_t i = 0; i < n; ++i) {
    gt[i] = rng.uniform();
    noise[i] = rng.uniform();
    proxy[i] = rng.uniform() < 0.5;
  }
  const auto r = disentanglement(gt, noise, gt, proxy);
  EXPECT_DOUBLE_EQ(*r.corr_ua_gtA, 1.0);
  EXPECT_LT(std::abs(*r.corr_ua_ue), 0.1);
  const auto same = disentanglement(gt, gt, gt, proxy);
  EXPECT_DOUBLE_EQ(*same.corr_ua_ue, 1.0);
  EXPECT_THROW(disentanglement(gt, std::vector<double>(3), gt, proxy), Error);
}

TEST(Disentanglement, SimulatedFamilyFiniteAndReproducible) {
  SimConfig cfg;
  cfg.n = 600;
  cfg.seed = 11;
  cfg.severity_levels = {0, 2};
  auto run = [&] {
    const auto data = simulate(cfg);
    const K kinds[] = {K::AU_IT, K::EU_IT};
    const auto t = aggregate_batch(data.samples, kinds);
    std::vector<double> gt;
    std::vector<bool> proxy;
    for (const auto& s : data.samples) {
      gt.push_back(gt_aleatoric(*s.soft_label));
      proxy.push_back(s.ood);
    }
    return disentanglement(t.column(K::AU_IT), t.column(K::EU_IT), gt, proxy);
  };
  const auto a = run();
  const auto b = run();
  for (auto [x, y] : {std::pair{a.corr_ua_ue, b.corr_ua_ue}, {a.corr_ua_gtA, b.corr_ua_gtA},
                      {a.corr_ue_proxyE, b.corr_ue_proxyE}, {a.corr_ua_proxyE, b.corr_ua_proxyE},
                      {a.corr_ue_gtA, b.corr_ue_gtA}}) {
    ASSERT_TRUE(x);
    EXPECT_TRUE(std::isfinite(*x));
    EXPECT_EQ(x, y);
  }
}

TEST(Disentanglement, JudgeThresholds) {
  DisentanglementReport r{0.0, 0.9, 0.8, 0.1, -0.2};
  auto v = judge(r);
  EXPECT_TRUE(v.decorrelated);
  EXPECT_TRUE(v.well_performing);
  EXPECT_TRUE(v.disentangled);
  r.corr_ue_gtA = 0.5;
  v = judge(r);
  EXPECT_FALSE(v.decorrelated);
  EXPECT_FALSE(v.disentangled);
  r.corr_ua_gtA.reset();
  EXPECT_FALSE(judge(r, {0.6, 0.5}).well_performing);
}

TEST(SeveritySweep, SingleSeverityGivesOneRow) {
  SweepInput in;
  in.severity = {0, 0, 0, 0};
  in.uncertainty = {0.1, 0.2, 0.3, 0.4};
  in.correct = {true, true, false, true};
  in.classes = 4;
  const auto rows = severity_sweep(in);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].count, 4u);
  EXPECT_DOUBLE_EQ(*rows[0].accuracy, 0.75);
  EXPECT_DOUBLE_EQ(*rows[0].normalized_accuracy, (0.75 - 0.25) / 0.75);
  EXPECT_FALSE(rows[0].ece);
}

TEST(SeveritySweep, OracleUncertaintyNormalizesToOne) {
  SweepInput in;
  Rng rng(42, Stream::Fuzz, 0);
  for (int s = 0; s <= 5; ++s) {
    for (int i = 0; i < 50; ++i) {
      const bool ok = i % 3 != 0;
      in.severity.push_back(s);
      in.correct.push_back(ok);
      in.uncertainty.push_back(ok ? rng.uniform() : 1.0 + rng.uniform());
    }
  }
  in.classes = 10;
  const auto rows = severity_sweep(in);
  ASSERT_EQ(rows.size(), 6u);
  for (const auto& r : rows) EXPECT_DOUBLE_EQ(*r.normalized_auroc, 1.0);
}

TEST(SeveritySweep, MissingLevelsAndDegenerateCells) {
  SweepInput in;
  in.severity = {0, 0, 2, 2};
  in.uncertainty = {0.1, 0.2, 0.3, 0.4};
  in.correct = {true, true, true, false};
  in.confidence = {0.9, 0.8, 0.7, 0.6};
  const auto rows = severity_sweep(in, {0, 1, 2});
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_FALSE(rows[0].auroc);
  EXPECT_TRUE(rows[0].ece);
  EXPECT_TRUE(rows[1].missing);
  EXPECT_FALSE(rows[1].accuracy);
  EXPECT_DOUBLE_EQ(*rows[2].auroc, 1.0);
  EXPECT_THROW(severity_sweep(in, {7}), Error);
  in.correct.pop_back();
  EXPECT_THROW(severity_sweep(in), Error);
}

TEST(SeveritySweep, SimulatedAccuracyDecreasesWithSeverity) {
  SimConfig cfg;
  cfg.n = 6000;
  cfg.seed = 3;
  cfg.severity_levels = {0, 1, 2, 3, 4, 5};
  const auto data = simulate(cfg);
  SweepInput in;
  const K kinds[] = {K::PU_IT};
  in.uncertainty = aggregate_batch(data.samples, kinds).column(K::PU_IT);
  for (const auto& s : data.samples) {
    in.severity.push_back(s.severity);
    in.correct.push_back(predicted_class(s.prediction) == s.label);
  }
  in.classes = cfg.classes;
  const auto rows = severity_sweep(in);
  ASSERT_EQ(rows.size(), 6u);
  for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_LT(*rows[i].accuracy, *rows[i - 1].accuracy) << i;
}

TEST(ResultsTable, RejectsCalibrationMetricForUnboundedAggregator) {
  ResultsTable t;
  EXPECT_NO_THROW(t.set("m", K::ONE_MINUS_MAX_BMA, "ece", 0.1));
  EXPECT_THROW(t.set("m", K::PU_IT, "ece", 0.1), Error);
  EXPECT_NO_THROW(t.set("m", K::PU_IT, "auroc", 0.7));
  EXPECT_EQ(t.rows().size(), 2u);
  EXPECT_EQ(t.columns().size(), 2u);
  EXPECT_FALSE(t.cell(1, 0));
}

TEST(CorrelationMatrix, DuplicateAndNegatedColumns) {
  ResultsTable t;
  const double vals[] = {0.1, 0.5, 0.3, 0.9, 0.2};
  for (int r = 0; r < 5; ++r) {
    const std::string m = "m" + std::to_string(r);
    t.set_raw(m, "A", "x", vals[r]);
    t.set_raw(m, "A", "dup", vals[r]);
    t.set_raw(m, "A", "neg", -vals[r]);
  }
  for (auto mode : {CorrelationMode::Pearson, CorrelationMode::Spearman}) {
    const auto c = metric_correlation_matrix(t, mode);
    EXPECT_NEAR(*c.at(0, 1), 1.0, 1e-15);
    EXPECT_NEAR(*c.at(0, 2), -1.0, 1e-15);
    EXPECT_EQ(*c.at(2, 2), 1.0);
  }
}

TEST(CorrelationMatrix, MatchesDirectPairwiseCalls) {
  Rng rng(43, Stream::Fuzz, 0);
  ResultsTable t;
  std::vector<std::vector<double>> cols(3, std::vector<double>(5));
  for (int r = 0; r < 5; ++r) {
    for (int c = 0; c < 3; ++c) {
      cols[c][r] = rng.uniform();
      t.set_raw("m" + std::to_string(r), "A", "c" + std::to_string(c), cols[c][r]);
    }
  }
  const auto p = metric_correlation_matrix(t, CorrelationMode::Pearson);
  const auto s = metric_correlation_matrix(t, CorrelationMode::Spearman);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      if (i == j) continue;
      EXPECT_EQ(*p.at(i, j), *pearson(cols[i], cols[j]));
      EXPECT_EQ(*s.at(i, j), *spearman(cols[i], cols[j]));
    }
  }
}

TEST(CorrelationMatrix, SparseAndSmallTables) {
  ResultsTable t;
  t.set_raw("a", "A", "x", 1.0);
  t.set_raw("b", "A", "x", 2.0);
  EXPECT_THROW(metric_correlation_matrix(t, CorrelationMode::Pearson), Error);
  t.set_raw("c", "A", "x", 3.0);
  t.set_raw("d", "A", "x", 4.0);
  t.set_raw("a", "A", "y", 1.0);
  t.set_raw("b", "A", "y", 5.0);
  t.set_raw("c", "A", "const", 2.0);
  t.set_raw("d", "A", "const", 2.0);
  t.set_raw("a", "A", "const", 2.0);
  const auto c = metric_correlation_matrix(t, CorrelationMode::Pearson);
  EXPECT_FALSE(c.at(0, 1));
  EXPECT_FALSE(c.at(0, 2));
  EXPECT_EQ(*c.at(1, 1), 1.0);
}
