#pragma once

// Batch construction and the data-selection pipeline: safe-pair mining,
// cross-ethnicity K-sets, overlap filtering against the labeled classes,
// and the magnitude / gender-balanced unlabeled selection procedures.

#include <algorithm>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "arl/core.hpp"
#include "arl/losses.hpp"
#include "arl/rng.hpp"

namespace arl {

// References into the pools; ratio labeled:unlabeled follows the
// configured quotas except possibly the final batch of an epoch.
struct Batch {
  std::vector<int> labeled;    // indices into the labeled pool
  std::vector<int> unlabeled;  // indices into the unlabeled pool
};

struct SafePairSet {
  std::vector<std::tuple<int, int, double>> pairs;  // (i, j, cosine), i < j
  int count() const { return static_cast<int>(pairs.size()); }
};

// Unordered pairs with cosine strictly inside (0, t).
inline SafePairSet safe_pairs(const std::vector<UnitVector>& feats, double t) {
  if (!(t > 0.0 && t < 1.0)) throw InvalidThreshold("safe_pairs: t must be in (0,1)");
  SafePairSet out;
  for (size_t i = 0; i < feats.size(); ++i) {
    for (size_t j = i + 1; j < feats.size(); ++j) {
      double c = cosine(feats[i], feats[j]);
      if (c > 0.0 && c < t) out.pairs.emplace_back(static_cast<int>(i), static_cast<int>(j), c);
    }
  }
  return out;
}

// Column indices of unlabeled weights whose ethnicity differs from u's.
inline std::vector<int> k_set(const UnlabeledSample& u, const WeightBank& bank) {
  bank.column_of_pseudo(u.pseudo_id);  // must be registered
  return k_set_columns(u.ethnicity, bank);
}

// One batch drawn uniformly without replacement from each pool.
inline Batch build_batch(int labeled_pool_size, int unlabeled_pool_size,
                         const Hyperparams& hp, Rng& rng) {
  if (labeled_pool_size < hp.labeled_per_batch)
    throw PoolExhausted("labeled pool smaller than batch quota");
  if (unlabeled_pool_size < hp.unlabeled_per_batch)
    throw PoolExhausted("unlabeled pool smaller than batch quota");
  auto draw = [&rng](int pool, int quota) {
    std::vector<int> idx(pool);
    std::iota(idx.begin(), idx.end(), 0);
    // partial Fisher-Yates: first `quota` entries are the sample
    for (int i = 0; i < quota; ++i) {
      int j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(pool - i)));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(quota);
    return idx;
  };
  Batch b;
  b.labeled = draw(labeled_pool_size, hp.labeled_per_batch);
  b.unlabeled = draw(unlabeled_pool_size, hp.unlabeled_per_batch);
  return b;
}

// Epoch-scoped batch stream: shuffles each pool once per epoch and walks it
// in quota-sized slices, so every pool element is touched at most once per
// epoch. The final slice floors both portions to keep the ratio roughly.
class BatchPlanner {
 public:
  BatchPlanner(int labeled_pool_size, int unlabeled_pool_size, const Hyperparams& hp)
      : hp_(hp), labeled_idx_(labeled_pool_size), unlabeled_idx_(unlabeled_pool_size) {
    std::iota(labeled_idx_.begin(), labeled_idx_.end(), 0);
    std::iota(unlabeled_idx_.begin(), unlabeled_idx_.end(), 0);
  }

  // Batches for one epoch, reshuffled from `rng`.
  std::vector<Batch> plan_epoch(Rng& rng) {
    rng.shuffle(labeled_idx_);
    if (!unlabeled_idx_.empty()) rng.shuffle(unlabeled_idx_);
    std::vector<Batch> out;
    size_t lpos = 0, upos = 0;
    const int lq = hp_.labeled_per_batch;
    const int uq = hp_.unlabeled_per_batch;
    while (true) {
      int lrem = static_cast<int>(labeled_idx_.size() - lpos);
      int urem = static_cast<int>(unlabeled_idx_.size() - upos);
      int ltake = std::min(lrem, lq);
      int utake = uq == 0 ? 0 : std::min(urem, uq);
      if (ltake < lq || (uq > 0 && utake < uq)) {
        // final short batch: floor both portions to the ratio
        if (uq > 0) {
          int units = std::min(ltake / std::max(1, lq / std::gcd(lq, uq)),
                               utake / std::max(1, uq / std::gcd(lq, uq)));
          int gl = lq / std::gcd(lq, uq), gu = uq / std::gcd(lq, uq);
          ltake = units * gl;
          utake = units * gu;
        }
        if (ltake == 0) break;
      }
      Batch b;
      b.labeled.assign(labeled_idx_.begin() + lpos, labeled_idx_.begin() + lpos + ltake);
      b.unlabeled.assign(unlabeled_idx_.begin() + upos, unlabeled_idx_.begin() + upos + utake);
      lpos += ltake;
      upos += utake;
      out.push_back(std::move(b));
      if (ltake < lq || (uq > 0 && utake < uq)) break;
    }
    return out;
  }

 private:
  Hyperparams hp_;
  std::vector<int> labeled_idx_;
  std::vector<int> unlabeled_idx_;
};

// Max softmax probability of a feature over the N labeled classes,
// margin-free scaled logits.
inline double max_labeled_probability(const UnitVector& f, const WeightBank& bank, double s) {
  int n = bank.labeled_count();
  if (n < 1) throw EmptyBank("max_labeled_probability: no labeled classes");
  std::vector<double> z(n);
  for (int i = 0; i < n; ++i) z[i] = s * cosine(f, bank.column(i));
  std::vector<double> p;
  detail::softmax_lse(z, p);
  return *std::max_element(p.begin(), p.end());
}

struct OverlapFilterResult {
  std::vector<UnlabeledSample> kept;
  int removed_count = 0;
};

// Drops unlabeled samples that the baseline classifies into some labeled
// class with probability above `threshold`; they likely belong to a labeled
// identity. Records each survivor's feature magnitude as a side effect.
template <typename Model>
OverlapFilterResult filter_overlap(const std::vector<UnlabeledSample>& pool,
                                   const Model& model, const WeightBank& bank,
                                   double threshold, double s) {
  OverlapFilterResult out;
  for (const UnlabeledSample& u : pool) {
    double mag = 0.0;
    UnitVector f = model.embed(u.observation, &mag);
    if (max_labeled_probability(f, bank, s) > threshold) {
      ++out.removed_count;
    } else {
      UnlabeledSample kept = u;
      kept.feature_magnitude = mag;
      out.kept.push_back(std::move(kept));
    }
  }
  return out;
}

struct SelectionResult {
  std::vector<UnlabeledSample> selected;
  // Groups whose pool could not fill the quota.
  std::vector<std::string> short_groups;
};

namespace detail {

inline std::map<std::string, std::vector<int>> by_ethnicity(
    const std::vector<UnlabeledSample>& pool) {
  std::map<std::string, std::vector<int>> groups;
  for (size_t i = 0; i < pool.size(); ++i) groups[pool[i].ethnicity].push_back(static_cast<int>(i));
  return groups;
}

// Descending magnitude, ties by pseudo_id ascending for determinism.
inline void magnitude_order(const std::vector<UnlabeledSample>& pool, std::vector<int>& idx) {
  std::sort(idx.begin(), idx.end(), [&pool](int a, int b) {
    if (pool[a].feature_magnitude != pool[b].feature_magnitude)
      return pool[a].feature_magnitude > pool[b].feature_magnitude;
    return pool[a].pseudo_id < pool[b].pseudo_id;
  });
}

}  // namespace detail

// Top `quota` samples per ethnicity group by descending feature magnitude.
inline SelectionResult select_by_magnitude(const std::vector<UnlabeledSample>& pool, int quota) {
  SelectionResult out;
  for (auto& [tag, idx] : detail::by_ethnicity(pool)) {
    std::vector<int> order = idx;
    detail::magnitude_order(pool, order);
    if (static_cast<int>(order.size()) < quota) out.short_groups.push_back(tag);
    for (int i = 0; i < std::min<int>(quota, static_cast<int>(order.size())); ++i)
      out.selected.push_back(pool[order[i]]);
  }
  return out;
}

inline const char* gender_category(double score) {
  if (score < 0.3) return "female";
  if (score > 0.7) return "male";
  return "unknown";
}

// Gender-aware selection per ethnicity group: females first up to half the
// quota (rounded up), unknowns fill the remaining half-quota, males fill the
// rest. Magnitude ordering applies within each category.
inline SelectionResult gender_balanced_select(const std::vector<UnlabeledSample>& pool,
                                              int quota) {
  SelectionResult out;
  for (auto& [tag, idx] : detail::by_ethnicity(pool)) {
    std::vector<int> female, male, unknown;
    for (int i : idx) {
      const char* cat = gender_category(pool[i].gender_score);
      (cat[0] == 'f' ? female : cat[0] == 'm' ? male : unknown).push_back(i);
    }
    detail::magnitude_order(pool, female);
    detail::magnitude_order(pool, male);
    detail::magnitude_order(pool, unknown);

    int half = (quota + 1) / 2;
    std::vector<int> take;
    int n_female = std::min<int>(half, static_cast<int>(female.size()));
    take.insert(take.end(), female.begin(), female.begin() + n_female);
    int n_unknown = std::min<int>(half - n_female, static_cast<int>(unknown.size()));
    take.insert(take.end(), unknown.begin(), unknown.begin() + n_unknown);
    int n_male = std::min<int>(quota - n_female - n_unknown, static_cast<int>(male.size()));
    take.insert(take.end(), male.begin(), male.begin() + n_male);

    if (static_cast<int>(take.size()) < quota) out.short_groups.push_back(tag);
    for (int i : take) out.selected.push_back(pool[i]);
  }
  return out;
}

}  // namespace arl
