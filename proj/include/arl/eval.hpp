#pragma once

// Within-group verification metrics: exhaustive pair enumeration, TPR at
// fixed FPR targets, full ROC with AUC, histogram medians, best-threshold
// accuracy, and the cross-group fairness summary.
//
// Decision rule is "score >= tau accepts". The operating threshold for a
// target FPR is the smallest observed score (or +inf) whose FPR does not
// exceed the target; targets below 1/#negatives are unsupported and are
// reported as gaps rather than extrapolated.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "arl/core.hpp"
#include "arl/model.hpp"

namespace arl {

struct PairScores {
  Vec positives;  // same-identity cosines, ascending
  Vec negatives;  // cross-identity cosines, ascending
  std::string group;
};

// Exhaustive same-group pair cosines under the model: every same-identity
// pair is a positive, every cross-identity pair a negative.
inline PairScores pair_scores(const std::vector<TestImage>& images,
                              const EmbeddingModel& model) {
  std::vector<UnitVector> feats;
  feats.reserve(images.size());
  for (const TestImage& im : images) feats.push_back(model.embed(im.observation));
  PairScores out;
  if (!images.empty()) out.group = images.front().ethnicity;
  for (size_t i = 0; i < images.size(); ++i) {
    for (size_t j = i + 1; j < images.size(); ++j) {
      double c = cosine(feats[i], feats[j]);
      (images[i].identity == images[j].identity ? out.positives : out.negatives).push_back(c);
    }
  }
  if (out.positives.empty() || out.negatives.empty())
    throw InsufficientPairs("pair_scores: need >=2 identities with >=2 images");
  std::sort(out.positives.begin(), out.positives.end());
  std::sort(out.negatives.begin(), out.negatives.end());
  return out;
}

namespace detail {

// #(v in sorted `xs` with v >= tau)
inline int count_at_least(const Vec& xs, double tau) {
  return static_cast<int>(xs.end() - std::lower_bound(xs.begin(), xs.end(), tau));
}

inline Vec merged_unique_scores(const PairScores& s) {
  Vec all;
  all.reserve(s.positives.size() + s.negatives.size());
  all.insert(all.end(), s.positives.begin(), s.positives.end());
  all.insert(all.end(), s.negatives.begin(), s.negatives.end());
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  return all;
}

}  // namespace detail

// TPR at the smallest threshold whose FPR is <= fpr_target.
inline double tpr_at_fpr(const PairScores& s, double fpr_target) {
  if (s.negatives.empty()) throw InsufficientNegatives("tpr_at_fpr: no negatives");
  if (!(fpr_target > 0.0 && fpr_target <= 1.0))
    throw InvalidThreshold("tpr_at_fpr: target must be in (0,1]");
  double n = static_cast<double>(s.negatives.size());
  if (fpr_target < 1.0 / n)
    throw InsufficientNegatives("tpr_at_fpr: target below 1/" +
                                std::to_string(s.negatives.size()));
  // Smallest candidate threshold meeting the target. FPR(tau) falls as tau
  // rises, so binary search over merged scores would do; the linear scan is
  // plenty at desk scale and mirrors the definition exactly.
  for (double tau : detail::merged_unique_scores(s)) {
    if (detail::count_at_least(s.negatives, tau) / n <= fpr_target)
      return detail::count_at_least(s.positives, tau) /
             static_cast<double>(s.positives.size());
  }
  return 0.0;  // only tau = +inf satisfies the target
}

inline std::optional<double> try_tpr_at_fpr(const PairScores& s, double fpr_target) {
  if (!s.negatives.empty() && fpr_target >= 1.0 / static_cast<double>(s.negatives.size()))
    return tpr_at_fpr(s, fpr_target);
  return std::nullopt;
}

// Stepwise ROC from a full threshold sweep, from (0,0) down to (1,1).
inline std::vector<std::pair<double, double>> roc_curve(const PairScores& s) {
  if (s.positives.empty() || s.negatives.empty())
    throw InsufficientPairs("roc_curve: need both pair kinds");
  std::vector<std::pair<double, double>> pts;
  pts.emplace_back(0.0, 0.0);  // tau = +inf
  Vec taus = detail::merged_unique_scores(s);
  double np = static_cast<double>(s.positives.size());
  double nn = static_cast<double>(s.negatives.size());
  for (auto it = taus.rbegin(); it != taus.rend(); ++it) {
    pts.emplace_back(detail::count_at_least(s.negatives, *it) / nn,
                     detail::count_at_least(s.positives, *it) / np);
  }
  return pts;  // last point is (1,1): every score passes the minimum
}

inline double roc_auc(const std::vector<std::pair<double, double>>& pts) {
  double auc = 0.0;
  for (size_t i = 1; i < pts.size(); ++i) {
    auc += (pts[i].first - pts[i - 1].first) * (pts[i].second + pts[i - 1].second) * 0.5;
  }
  return auc;
}

struct MedianSummary {
  double positive = 0.0;
  double negative = 0.0;
  double difference = 0.0;  // positive - negative
};

inline double median_sorted(const Vec& xs) {
  size_t n = xs.size();
  if (n == 0) throw InsufficientPairs("median of empty set");
  return n % 2 == 1 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

inline MedianSummary histogram_medians(const PairScores& s) {
  if (s.positives.empty() || s.negatives.empty())
    throw InsufficientPairs("histogram_medians: need both pair kinds");
  MedianSummary out;
  out.positive = median_sorted(s.positives);
  out.negative = median_sorted(s.negatives);
  out.difference = out.positive - out.negative;
  return out;
}

struct AccuracyResult {
  double accuracy = 0.0;
  double threshold = 0.0;
};

// Best single-threshold accuracy over the pair set; ties resolved toward
// the smallest threshold, candidates are the observed scores plus +inf.
inline AccuracyResult verification_accuracy(const PairScores& s) {
  if (s.positives.empty() || s.negatives.empty())
    throw InsufficientPairs("verification_accuracy: need both pair kinds");
  double np = static_cast<double>(s.positives.size());
  double nn = static_cast<double>(s.negatives.size());
  AccuracyResult best{-1.0, 0.0};
  auto consider = [&](double tau) {
    double tp = detail::count_at_least(s.positives, tau);
    double tn = nn - detail::count_at_least(s.negatives, tau);
    double acc = (tp + tn) / (np + nn);
    if (acc > best.accuracy) best = {acc, tau};
  };
  for (double tau : detail::merged_unique_scores(s)) consider(tau);
  consider(std::numeric_limits<double>::infinity());
  return best;
}

struct FairnessSummary {
  double avg = 0.0;
  double std_dev = 0.0;
};

// Mean and standard deviation of per-group accuracies. Uses the n-1
// (sample) convention, which is what reproduces published cross-group
// spread figures from their own group accuracies.
inline FairnessSummary fairness_summary(const Vec& group_values) {
  if (group_values.size() < 2) throw InsufficientPairs("fairness_summary: need >=2 groups");
  FairnessSummary out;
  for (double v : group_values) out.avg += v;
  out.avg /= static_cast<double>(group_values.size());
  double ss = 0.0;
  for (double v : group_values) ss += (v - out.avg) * (v - out.avg);
  out.std_dev = std::sqrt(ss / static_cast<double>(group_values.size() - 1));
  return out;
}

// ---------------------------------------------------------------------------
// Full report over every group in a test set

struct GroupReport {
  std::string group;
  int n_positive = 0;
  int n_negative = 0;
  // (fpr target, tpr); nullopt marks an unsupported resolution.
  std::vector<std::pair<double, std::optional<double>>> tpr_at;
  double auc = 0.0;
  MedianSummary medians;
  AccuracyResult accuracy;
};

struct EvalReport {
  std::vector<GroupReport> groups;
  FairnessSummary accuracy_summary;
  std::vector<std::string> warnings;
};

inline const std::vector<double>& default_fpr_targets() {
  static const std::vector<double> targets{1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6};
  return targets;
}

inline EvalReport evaluate(const std::vector<TestImage>& test_images,
                           const EmbeddingModel& model,
                           const std::vector<double>& fpr_targets = default_fpr_targets()) {
  std::map<std::string, std::vector<TestImage>> by_group;
  for (const TestImage& im : test_images) by_group[im.ethnicity].push_back(im);

  EvalReport report;
  Vec accuracies;
  for (const auto& [tag, images] : by_group) {
    GroupReport gr;
    gr.group = tag;
    try {
      PairScores s = pair_scores(images, model);
      gr.n_positive = static_cast<int>(s.positives.size());
      gr.n_negative = static_cast<int>(s.negatives.size());
      for (double target : fpr_targets) gr.tpr_at.emplace_back(target, try_tpr_at_fpr(s, target));
      gr.auc = roc_auc(roc_curve(s));
      gr.medians = histogram_medians(s);
      gr.accuracy = verification_accuracy(s);
    } catch (const InsufficientPairs&) {
      report.warnings.push_back("group " + tag + " omitted: insufficient pairs");
      continue;
    }
    accuracies.push_back(gr.accuracy.accuracy);
    report.groups.push_back(std::move(gr));
  }
  if (accuracies.size() >= 2) report.accuracy_summary = fairness_summary(accuracies);
  return report;
}

}  // namespace arl
