#pragma once

// Loss kernels with analytic gradients: the asymmetric margin-softmax pair
// (labeled samples classify against N labeled + M unlabeled columns,
// unlabeled samples against N labeled + K cross-ethnicity unlabeled + their
// own column), the negative-entropy rejection baseline, and the safe-pair
// cosine penalty. Gradients are ambient derivatives with respect to the
// given feature/weight vectors; the embedding model chains them through its
// normalization.

#include <cmath>
#include <map>
#include <tuple>
#include <vector>

#include "arl/core.hpp"

namespace arl {

// Value plus sparse gradients of one sample's loss term. grad_weights holds
// an entry for every bank column in the active set and nothing else.
struct SampleLoss {
  double value = 0.0;
  Vec grad_feature;
  std::map<int, Vec> grad_weights;
};

namespace detail {

struct MarginLogits {
  std::vector<int> active;      // column indices, logit order
  std::vector<double> cosines;  // clamped cos(theta_j)
  std::vector<double> logits;
  std::vector<double> dlogit_dcos;
  int target_pos = -1;
};

// Logit for the target column is s*cos(theta + m) computed as
// c*cos(m) - sqrt(1-c^2)*sin(m); every other active column j gets s*c_j.
inline MarginLogits margin_logits_full(const UnitVector& f, const WeightBank& bank,
                                       int target, const std::vector<int>& active,
                                       double s, double m) {
  MarginLogits out;
  out.active = active;
  out.cosines.resize(active.size());
  out.logits.resize(active.size());
  out.dlogit_dcos.resize(active.size());
  const double cos_m = std::cos(m);
  const double sin_m = std::sin(m);
  for (size_t i = 0; i < active.size(); ++i) {
    double c = cosine(f, bank.column(active[i]));
    out.cosines[i] = c;
    if (active[i] == target) {
      out.target_pos = static_cast<int>(i);
      double sin_t = std::sqrt(std::max(0.0, 1.0 - c * c));
      out.logits[i] = s * (c * cos_m - sin_t * sin_m);
      // d/dc [c cos(m) - sqrt(1-c^2) sin(m)]; sin(theta) guarded so the
      // theta ~ 0 case right after weight registration stays finite.
      out.dlogit_dcos[i] = s * (cos_m + c * sin_m / std::max(sin_t, kSinEps));
    } else {
      out.logits[i] = s * c;
      out.dlogit_dcos[i] = s;
    }
  }
  if (out.target_pos < 0) throw TargetNotActive("target column not in active set");
  return out;
}

// log(sum exp(z)) with max subtraction plus the softmax itself.
inline double softmax_lse(const std::vector<double>& z, std::vector<double>& p) {
  double zmax = z[0];
  for (double v : z) zmax = std::max(zmax, v);
  double sum = 0.0;
  p.resize(z.size());
  for (size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - zmax);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return zmax + std::log(sum);
}

// Shared cross-entropy backward: given dL/dlogit_i, accumulate gradients
// onto the feature and the active weight columns.
inline SampleLoss cross_entropy_from_logits(const UnitVector& f, const WeightBank& bank,
                                            const MarginLogits& ml) {
  std::vector<double> p;
  double lse = softmax_lse(ml.logits, p);
  SampleLoss out;
  out.value = lse - ml.logits[ml.target_pos];
  out.grad_feature.assign(f.dim(), 0.0);
  for (size_t i = 0; i < ml.active.size(); ++i) {
    double dz = p[i] - (static_cast<int>(i) == ml.target_pos ? 1.0 : 0.0);
    double dc = dz * ml.dlogit_dcos[i];
    const UnitVector& w = bank.column(ml.active[i]);
    axpy(dc, w.c, out.grad_feature);
    Vec gw(f.dim(), 0.0);
    axpy(dc, f.c, gw);
    out.grad_weights.emplace(ml.active[i], std::move(gw));
  }
  return out;
}

}  // namespace detail

// Margin logits over an explicit active set, in active-set order.
inline std::vector<double> margin_logits(const UnitVector& f, const WeightBank& bank,
                                         int target, const std::vector<int>& active,
                                         double s, double m) {
  return detail::margin_logits_full(f, bank, target, active, s, m).logits;
}

// Cross-ethnicity unlabeled columns usable as negatives for `ethnicity`.
// Never contains the sample's own column.
inline std::vector<int> k_set_columns(const std::string& ethnicity, const WeightBank& bank) {
  std::vector<int> cols;
  int n = bank.labeled_count();
  for (int i = 0; i < bank.unlabeled_count(); ++i) {
    if (bank.unlabeled_ethnicity[i] != ethnicity) cols.push_back(n + i);
  }
  return cols;
}

// N+K+1 margin cross-entropy for an unlabeled sample: its own weight column
// is the target, all labeled classes plus cross-ethnicity unlabeled columns
// are negatives. Same-ethnicity unlabeled columns never participate.
inline SampleLoss loss_unlabeled(const UnitVector& f, const UnlabeledSample& u,
                                 const WeightBank& bank, const Hyperparams& hp,
                                 bool use_k_set = true) {
  int target = bank.column_of_pseudo(u.pseudo_id);
  std::vector<int> active;
  active.reserve(bank.labeled_count() + bank.unlabeled_count() + 1);
  for (int i = 0; i < bank.labeled_count(); ++i) active.push_back(i);
  if (use_k_set) {
    for (int col : k_set_columns(u.ethnicity, bank))
      if (col != target) active.push_back(col);
  }
  active.push_back(target);
  auto ml = detail::margin_logits_full(f, bank, target, active, hp.s, hp.m);
  return detail::cross_entropy_from_logits(f, bank, ml);
}

// N+M margin cross-entropy for a labeled sample. When `batch_unlabeled` is
// given, only those unlabeled columns are rejected instead of the full bank.
inline SampleLoss loss_labeled(const UnitVector& f, int class_id, const WeightBank& bank,
                               const Hyperparams& hp,
                               const std::vector<int>* batch_unlabeled = nullptr) {
  if (class_id < 0 || class_id >= bank.labeled_count())
    throw UnknownClass("class_id " + std::to_string(class_id));
  std::vector<int> active;
  active.reserve(bank.total());
  for (int i = 0; i < bank.labeled_count(); ++i) active.push_back(i);
  if (batch_unlabeled) {
    for (int col : *batch_unlabeled) {
      if (!bank.is_unlabeled_column(col))
        throw MissingWeightColumn("batch_unlabeled holds labeled column");
      active.push_back(col);
    }
  } else {
    for (int i = 0; i < bank.unlabeled_count(); ++i) active.push_back(bank.labeled_count() + i);
  }
  auto ml = detail::margin_logits_full(f, bank, class_id, active, hp.s, hp.m);
  return detail::cross_entropy_from_logits(f, bank, ml);
}

// Negative-entropy rejection baseline: L = -sum_i log p_i with the softmax
// taken over the N labeled classes only, margin-free scaled logits.
inline SampleLoss loss_uir(const UnitVector& f, const WeightBank& bank,
                           const Hyperparams& hp) {
  int n = bank.labeled_count();
  if (n < 1) throw EmptyBank("loss_uir: no labeled classes");
  std::vector<double> z(n);
  for (int i = 0; i < n; ++i) z[i] = hp.s * cosine(f, bank.column(i));
  std::vector<double> p;
  double lse = detail::softmax_lse(z, p);
  SampleLoss out;
  out.value = 0.0;
  for (int i = 0; i < n; ++i) out.value += lse - z[i];
  out.grad_feature.assign(f.dim(), 0.0);
  for (int j = 0; j < n; ++j) {
    // d/dz_j sum_i (lse - z_i) = n p_j - 1
    double dc = (n * p[j] - 1.0) * hp.s;
    axpy(dc, bank.column(j).c, out.grad_feature);
    Vec gw(f.dim(), 0.0);
    axpy(dc, f.c, gw);
    out.grad_weights.emplace(j, std::move(gw));
  }
  return out;
}

// Safe-pair cosine penalty: mean squared cosine over unordered pairs whose
// cosine lies strictly inside (0, t). Membership is treated as fixed, so
// out-of-interval pairs carry exactly zero gradient.
struct PairPenalty {
  double value = 0.0;
  std::vector<Vec> grad_features;               // one per input feature
  std::vector<std::tuple<int, int, double>> pairs;  // (i, j, cosine), i < j
  int pair_count = 0;
};

inline PairPenalty cosine_penalty(const std::vector<UnitVector>& feats, double t) {
  if (!(t > 0.0 && t < 1.0)) throw InvalidThreshold("cosine_penalty: t must be in (0,1)");
  PairPenalty out;
  out.grad_features.resize(feats.size());
  for (size_t i = 0; i < feats.size(); ++i) out.grad_features[i].assign(feats[i].dim(), 0.0);
  for (size_t i = 0; i < feats.size(); ++i) {
    for (size_t j = i + 1; j < feats.size(); ++j) {
      double c = cosine(feats[i], feats[j]);
      if (c > 0.0 && c < t) out.pairs.emplace_back(static_cast<int>(i), static_cast<int>(j), c);
    }
  }
  out.pair_count = static_cast<int>(out.pairs.size());
  if (out.pair_count == 0) return out;
  double inv = 1.0 / out.pair_count;
  for (auto& [i, j, c] : out.pairs) {
    out.value += c * c * inv;
    axpy(2.0 * c * inv, feats[j].c, out.grad_features[i]);
    axpy(2.0 * c * inv, feats[i].c, out.grad_features[j]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Combined batch loss: L = L_L + lambda_U * L_U + lambda_C * L_C, with the
// labeled and unlabeled terms averaged over their batch portions.

struct BatchLoss {
  double total = 0.0;
  double labeled_mean = 0.0;
  double unlabeled_mean = 0.0;
  double cosine_value = 0.0;
  int safe_pair_count = 0;
  std::vector<Vec> grad_labeled_features;
  std::vector<Vec> grad_unlabeled_features;
  std::map<int, Vec> grad_weights;
};

namespace detail {
inline void accumulate_weights(std::map<int, Vec>& into, const std::map<int, Vec>& from,
                               double scale_by) {
  for (const auto& [col, g] : from) {
    auto it = into.find(col);
    if (it == into.end()) {
      Vec v(g.size(), 0.0);
      axpy(scale_by, g, v);
      into.emplace(col, std::move(v));
    } else {
      axpy(scale_by, g, it->second);
    }
  }
}
}  // namespace detail

inline BatchLoss total_loss(const std::vector<UnitVector>& labeled_feats,
                            const std::vector<int>& class_ids,
                            const std::vector<UnitVector>& unlabeled_feats,
                            const std::vector<const UnlabeledSample*>& unlabeled_info,
                            const WeightBank& bank, const Hyperparams& hp,
                            const ModeFlags& flags,
                            const std::vector<int>* batch_unlabeled_cols = nullptr) {
  if (labeled_feats.empty()) throw EmptyLabeledPortion("total_loss: no labeled samples");
  if (labeled_feats.size() != class_ids.size() ||
      unlabeled_feats.size() != unlabeled_info.size())
    throw DimensionMismatch("total_loss: portion sizes");

  BatchLoss out;
  out.grad_labeled_features.resize(labeled_feats.size());
  out.grad_unlabeled_features.resize(unlabeled_feats.size());
  for (size_t i = 0; i < unlabeled_feats.size(); ++i)
    out.grad_unlabeled_features[i].assign(unlabeled_feats[i].dim(), 0.0);

  const std::vector<int>* labeled_active =
      hp.labeled_vs_full_bank ? nullptr : batch_unlabeled_cols;
  double wl = 1.0 / static_cast<double>(labeled_feats.size());
  for (size_t i = 0; i < labeled_feats.size(); ++i) {
    SampleLoss sl = loss_labeled(labeled_feats[i], class_ids[i], bank, hp, labeled_active);
    out.labeled_mean += wl * sl.value;
    out.grad_labeled_features[i] = std::move(sl.grad_feature);
    scale(wl, out.grad_labeled_features[i]);
    detail::accumulate_weights(out.grad_weights, sl.grad_weights, wl);
  }

  if (!unlabeled_feats.empty() && (flags.unlabeled_arcface || flags.unlabeled_uir)) {
    double wu = hp.lambda_u / static_cast<double>(unlabeled_feats.size());
    for (size_t i = 0; i < unlabeled_feats.size(); ++i) {
      SampleLoss sl = flags.unlabeled_arcface
                          ? loss_unlabeled(unlabeled_feats[i], *unlabeled_info[i], bank, hp,
                                           flags.use_k_set)
                          : loss_uir(unlabeled_feats[i], bank, hp);
      out.unlabeled_mean += sl.value / static_cast<double>(unlabeled_feats.size());
      axpy(wu, sl.grad_feature, out.grad_unlabeled_features[i]);
      detail::accumulate_weights(out.grad_weights, sl.grad_weights, wu);
    }
  }

  if (flags.cosine_penalty && unlabeled_feats.size() >= 2) {
    PairPenalty pp = cosine_penalty(unlabeled_feats, hp.t);
    out.cosine_value = pp.value;
    out.safe_pair_count = pp.pair_count;
    for (size_t i = 0; i < unlabeled_feats.size(); ++i)
      axpy(hp.lambda_c, pp.grad_features[i], out.grad_unlabeled_features[i]);
  }

  out.total = out.labeled_mean + hp.lambda_u * out.unlabeled_mean +
              hp.lambda_c * out.cosine_value;
  return out;
}

}  // namespace arl
