#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "arl/eval.hpp"
#include "arl/rng.hpp"
#include "oracles.hpp"

using namespace arl;

namespace {

EmbeddingModel identity_model(int d) {
  EmbeddingModel m;
  m.embed_dim = d;
  m.obs_dim = d;
  m.projection.assign(static_cast<size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i) m.at(i, i) = 1.0;
  return m;
}

PairScores make_scores(Vec pos, Vec neg) {
  PairScores s;
  std::sort(pos.begin(), pos.end());
  std::sort(neg.begin(), neg.end());
  s.positives = std::move(pos);
  s.negatives = std::move(neg);
  return s;
}

PairScores random_scores(Rng& rng, int np, int nn, double pos_shift = 0.0) {
  Vec pos(np), neg(nn);
  for (double& x : pos) x = std::tanh(rng.normal() + pos_shift);
  for (double& x : neg) x = std::tanh(rng.normal());
  return make_scores(std::move(pos), std::move(neg));
}

}  // namespace

// ---------------------------------------------------------------------------
// pair_scores

TEST(PairScoresOp, CountsForTwoByTwo) {
  Rng rng(1);
  int d = 6;
  EmbeddingModel m = identity_model(d);
  std::vector<TestImage> images;
  for (int id = 0; id < 2; ++id)
    for (int im = 0; im < 2; ++im)
      images.push_back({rng.normal_vec(d), id, "g"});
  PairScores s = pair_scores(images, m);
  EXPECT_EQ(s.positives.size(), 2u);
  EXPECT_EQ(s.negatives.size(), 4u);
  EXPECT_EQ(s.group, "g");
}

TEST(PairScoresOp, DuplicateImageScoresOne) {
  EmbeddingModel m = identity_model(3);
  Vec obs{1.0, 2.0, 3.0};
  std::vector<TestImage> images{{obs, 0, "g"}, {obs, 0, "g"}, {{3.0, -1.0, 0.5}, 1, "g"},
                                {{2.9, -1.1, 0.4}, 1, "g"}};
  PairScores s = pair_scores(images, m);
  EXPECT_DOUBLE_EQ(s.positives.back(), 1.0);
}

TEST(PairScoresOp, MatchesBruteForceDoubleLoop) {
  Rng rng(2);
  int d = 5;
  EmbeddingModel m = identity_model(d);
  std::vector<TestImage> images;
  for (int i = 0; i < 20; ++i)
    images.push_back({rng.normal_vec(d), static_cast<int>(rng.below(5)), "g"});
  // ensure feasibility: at least two ids with two images
  images.push_back({rng.normal_vec(d), 0, "g"});
  images.push_back({rng.normal_vec(d), 0, "g"});
  images.push_back({rng.normal_vec(d), 1, "g"});
  images.push_back({rng.normal_vec(d), 1, "g"});

  PairScores s = pair_scores(images, m);
  Vec pos, neg;
  for (size_t i = 0; i < images.size(); ++i)
    for (size_t j = 0; j < images.size(); ++j) {
      if (j <= i) continue;
      double c = cosine(m.embed(images[i].observation), m.embed(images[j].observation));
      (images[i].identity == images[j].identity ? pos : neg).push_back(c);
    }
  std::sort(pos.begin(), pos.end());
  std::sort(neg.begin(), neg.end());
  EXPECT_EQ(s.positives, pos);
  EXPECT_EQ(s.negatives, neg);
}

TEST(PairScoresOp, InsufficientPairs) {
  EmbeddingModel m = identity_model(3);
  std::vector<TestImage> one_id{{{1.0, 0.0, 0.0}, 0, "g"}, {{0.0, 1.0, 0.0}, 0, "g"}};
  EXPECT_THROW(pair_scores(one_id, m), InsufficientPairs);  // no negatives
  std::vector<TestImage> singletons{{{1.0, 0.0, 0.0}, 0, "g"}, {{0.0, 1.0, 0.0}, 1, "g"}};
  EXPECT_THROW(pair_scores(singletons, m), InsufficientPairs);  // no positives
}

// ---------------------------------------------------------------------------
// tpr_at_fpr

TEST(TprAtFpr, SeparatedDistributions) {
  PairScores s = make_scores({0.8, 0.85, 0.9, 0.95}, {0.0, 0.05, 0.1, 0.15, 0.2,
                                                      0.25, 0.3, 0.35, 0.4, 0.45});
  for (double target : {1.0, 0.5, 0.1})
    EXPECT_DOUBLE_EQ(tpr_at_fpr(s, target), 1.0);
}

TEST(TprAtFpr, ChanceLevelWhenDistributionsMatch) {
  Rng rng(3);
  PairScores s = random_scores(rng, 4000, 4000);
  for (double target : {0.5, 0.2, 0.05})
    EXPECT_NEAR(tpr_at_fpr(s, target), target, 0.05);
}

TEST(TprAtFpr, MatchesSweepOracleExactly) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    int np = 5 + static_cast<int>(rng.below(40));
    int nn = 10 + static_cast<int>(rng.below(1000));
    PairScores s = random_scores(rng, np, nn, rng.uniform(0.0, 2.0));
    double target = rng.uniform(1.0 / nn, 1.0);
    EXPECT_EQ(tpr_at_fpr(s, target), oracle::tpr_at_fpr_sweep(s.positives, s.negatives, target))
        << "trial " << trial;
  }
  // the standard target grid on a 1000-negative set
  PairScores s = random_scores(rng, 50, 1000, 1.0);
  for (double target : {1e-1, 1e-2, 1e-3})
    EXPECT_EQ(tpr_at_fpr(s, target), oracle::tpr_at_fpr_sweep(s.positives, s.negatives, target));
}

TEST(TprAtFpr, UnsupportedResolutionReported) {
  Rng rng(5);
  PairScores s = random_scores(rng, 10, 100);
  EXPECT_THROW(tpr_at_fpr(s, 1e-3), InsufficientNegatives);  // needs 1000 negatives
  EXPECT_NO_THROW(tpr_at_fpr(s, 1e-2));
  EXPECT_FALSE(try_tpr_at_fpr(s, 1e-3).has_value());
  EXPECT_TRUE(try_tpr_at_fpr(s, 1e-2).has_value());
  EXPECT_THROW(tpr_at_fpr(s, 0.0), InvalidThreshold);
  EXPECT_THROW(tpr_at_fpr(s, 1.5), InvalidThreshold);
}

TEST(TprAtFpr, MonotoneInTarget) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    PairScores s = random_scores(rng, 30, 200, 1.0);
    double prev = -1.0;
    for (double target : {0.005, 0.01, 0.05, 0.1, 0.3, 0.7, 1.0}) {
      double tpr = tpr_at_fpr(s, target);
      EXPECT_GE(tpr, prev);
      prev = tpr;
    }
  }
}

// ---------------------------------------------------------------------------
// roc_curve

TEST(RocCurve, EndpointsAlwaysPresent) {
  Rng rng(7);
  PairScores s = random_scores(rng, 10, 10);
  auto pts = roc_curve(s);
  EXPECT_EQ(pts.front(), (std::pair<double, double>{0.0, 0.0}));
  EXPECT_EQ(pts.back(), (std::pair<double, double>{1.0, 1.0}));
  for (size_t i = 1; i < pts.size(); ++i) {
    EXPECT_GE(pts[i].first, pts[i - 1].first);
    EXPECT_GE(pts[i].second, pts[i - 1].second);
  }
}

TEST(RocCurve, SeparatedDistributionsHaveUnitArea) {
  PairScores s = make_scores({0.9, 0.95}, {0.1, 0.2, 0.3});
  EXPECT_DOUBLE_EQ(roc_auc(roc_curve(s)), 1.0);
}

TEST(RocCurve, AucMatchesRankStatistic) {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    PairScores s = random_scores(rng, 20 + static_cast<int>(rng.below(30)),
                                 20 + static_cast<int>(rng.below(30)), rng.uniform(0.0, 1.5));
    EXPECT_NEAR(roc_auc(roc_curve(s)), oracle::rank_auc(s.positives, s.negatives), 1e-12);
  }
  // with heavy ties from quantized scores
  for (int trial = 0; trial < 20; ++trial) {
    Vec pos, neg;
    for (int i = 0; i < 40; ++i) pos.push_back(std::round(rng.normal() * 2.0) / 2.0 + 0.5);
    for (int i = 0; i < 40; ++i) neg.push_back(std::round(rng.normal() * 2.0) / 2.0);
    PairScores s = make_scores(pos, neg);
    EXPECT_NEAR(roc_auc(roc_curve(s)), oracle::rank_auc(s.positives, s.negatives), 1e-12);
  }
}

// ---------------------------------------------------------------------------
// histogram_medians

TEST(HistogramMedians, OddAndEvenCounts) {
  PairScores s = make_scores({0.1, 0.2, 0.3, 0.4, 0.5}, {-0.2, 0.0, 0.1, 0.3});
  MedianSummary med = histogram_medians(s);
  EXPECT_DOUBLE_EQ(med.positive, 0.3);
  EXPECT_DOUBLE_EQ(med.negative, 0.05);  // midpoint of 0.0 and 0.1
  EXPECT_DOUBLE_EQ(med.difference, 0.25);
}

TEST(HistogramMedians, SymmetricDistributionCentersAtZero) {
  Rng rng(9);
  Vec neg;
  for (int i = 0; i < 4001; ++i) neg.push_back(rng.normal() * 0.3);
  PairScores s = make_scores({0.5, 0.6, 0.7}, std::move(neg));
  EXPECT_NEAR(histogram_medians(s).negative, 0.0, 0.02);
}

// ---------------------------------------------------------------------------
// verification_accuracy

TEST(VerificationAccuracy, SeparatedDistributions) {
  PairScores s = make_scores({0.8, 0.9}, {0.1, 0.2, 0.3});
  AccuracyResult r = verification_accuracy(s);
  EXPECT_DOUBLE_EQ(r.accuracy, 1.0);
  EXPECT_GT(r.threshold, 0.3);
  EXPECT_LE(r.threshold, 0.8);
}

TEST(VerificationAccuracy, IdenticalDistributionsNearClassPrior) {
  Rng rng(10);
  PairScores s = random_scores(rng, 500, 1500);
  double prior = 1500.0 / 2000.0;
  EXPECT_NEAR(verification_accuracy(s).accuracy, prior, 0.04);
}

TEST(VerificationAccuracy, MatchesExhaustiveOracle) {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    PairScores s = random_scores(rng, 10, 10, rng.uniform(0.0, 2.0));
    EXPECT_EQ(verification_accuracy(s).accuracy,
              oracle::best_accuracy_sweep(s.positives, s.negatives));
  }
}

// ---------------------------------------------------------------------------
// fairness_summary

TEST(FairnessSummary, PublishedGroupAccuraciesPinTheConvention) {
  FairnessSummary f = fairness_summary({85.35, 84.55, 91.25, 88.28});
  EXPECT_NEAR(f.avg, 87.36, 0.01);
  EXPECT_NEAR(f.std_dev, 3.05, 0.01);
}

TEST(FairnessSummary, EqualValuesHaveZeroSpread) {
  FairnessSummary f = fairness_summary({80.0, 80.0, 80.0});
  EXPECT_DOUBLE_EQ(f.avg, 80.0);
  EXPECT_DOUBLE_EQ(f.std_dev, 0.0);
}

TEST(FairnessSummary, TwoPointSpread) {
  FairnessSummary f = fairness_summary({0.0, 1.0});
  EXPECT_DOUBLE_EQ(f.avg, 0.5);
  EXPECT_DOUBLE_EQ(f.std_dev, std::sqrt(0.5));  // n-1 convention
  EXPECT_THROW(fairness_summary({1.0}), InsufficientPairs);
}

// ---------------------------------------------------------------------------
// invariance and report assembly

TEST(Metrics, InvariantUnderMonotoneTransforms) {
  Rng rng(12);
  PairScores s = random_scores(rng, 40, 160, 0.8);
  auto transform = [](const Vec& xs) {
    Vec out = xs;
    for (double& x : out) x = std::exp(2.0 * x) - 1.0;  // strictly increasing
    return out;
  };
  PairScores st = make_scores(transform(s.positives), transform(s.negatives));
  for (double target : {0.5, 0.1, 0.01})
    EXPECT_EQ(tpr_at_fpr(s, target), tpr_at_fpr(st, target));
  EXPECT_EQ(verification_accuracy(s).accuracy, verification_accuracy(st).accuracy);
  EXPECT_NEAR(roc_auc(roc_curve(s)), roc_auc(roc_curve(st)), 1e-12);
}

TEST(Evaluate, EmptyGroupOmittedWithWarning) {
  Rng rng(13);
  EmbeddingModel m = identity_model(4);
  std::vector<TestImage> images;
  for (int id = 0; id < 3; ++id)
    for (int im = 0; im < 3; ++im) images.push_back({rng.normal_vec(4), id, "good"});
  // a group with a single identity has no negative pairs
  images.push_back({rng.normal_vec(4), 99, "thin"});
  images.push_back({rng.normal_vec(4), 99, "thin"});

  EvalReport report = evaluate(images, m, {1e-1});
  ASSERT_EQ(report.groups.size(), 1u);
  EXPECT_EQ(report.groups[0].group, "good");
  ASSERT_EQ(report.warnings.size(), 1u);
  EXPECT_NE(report.warnings[0].find("thin"), std::string::npos);
}

TEST(Evaluate, ReportsGapsAtUnsupportedTargets) {
  Rng rng(14);
  EmbeddingModel m = identity_model(4);
  std::vector<TestImage> images;
  for (int id = 0; id < 3; ++id)
    for (int im = 0; im < 3; ++im) images.push_back({rng.normal_vec(4), id, "g"});
  EvalReport report = evaluate(images, m);  // default targets down to 1e-6
  ASSERT_EQ(report.groups.size(), 1u);
  const GroupReport& g = report.groups[0];
  EXPECT_EQ(g.n_negative, 27);
  EXPECT_TRUE(g.tpr_at[0].second.has_value());   // 1e-1 supported
  EXPECT_FALSE(g.tpr_at[2].second.has_value());  // 1e-3 needs 1000 negatives
  EXPECT_FALSE(g.tpr_at[5].second.has_value());
}
