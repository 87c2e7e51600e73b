#pragma once

// Domain types and hypersphere geometry primitives: unit vectors on the
// embedding sphere, labeled/unlabeled samples, the shared classifier weight
// bank, and the hyperparameter block.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace arl {

using Vec = std::vector<double>;

constexpr double kNormEps = 1e-12;  // below this a vector has no direction
constexpr double kSinEps = 1e-8;    // guards sin(theta) in margin gradients

// ---------------------------------------------------------------------------
// Errors

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DegenerateVector : Error {
  using Error::Error;
};
struct DimensionMismatch : Error {
  using Error::Error;
};
struct TargetNotActive : Error {
  using Error::Error;
};
struct MissingWeightColumn : Error {
  using Error::Error;
};
struct UnknownClass : Error {
  using Error::Error;
};
struct EmptyBank : Error {
  using Error::Error;
};
struct EmptyLabeledPortion : Error {
  using Error::Error;
};
struct InvalidThreshold : Error {
  using Error::Error;
};
struct PoolExhausted : Error {
  using Error::Error;
};
struct DuplicatePseudoId : Error {
  using Error::Error;
};
struct NonFiniteGradient : Error {
  using Error::Error;
};
struct DivergenceDetected : Error {
  using Error::Error;
};
struct InsufficientPairs : Error {
  using Error::Error;
};
struct InsufficientNegatives : Error {
  using Error::Error;
};
struct InvalidSpec : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};
struct ChecksumMismatch : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Small vector helpers

inline double dot(const Vec& a, const Vec& b) {
  if (a.size() != b.size())
    throw DimensionMismatch("dot: " + std::to_string(a.size()) + " vs " +
                            std::to_string(b.size()));
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double l2_norm(const Vec& v) { return std::sqrt(dot(v, v)); }

inline void axpy(double a, const Vec& x, Vec& y) {
  if (x.size() != y.size()) throw DimensionMismatch("axpy: size mismatch");
  for (size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

inline void scale(double a, Vec& v) {
  for (double& x : v) x *= a;
}

inline bool all_finite(const Vec& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

// ---------------------------------------------------------------------------
// UnitVector: a direction on the d-sphere, d >= 2, ||v|| == 1 within 1e-9.

struct UnitVector {
  Vec c;

  int dim() const { return static_cast<int>(c.size()); }
  double operator[](size_t i) const { return c[i]; }
};

// Projects v onto the unit sphere. The pre-normalization norm feeds
// magnitude-based selection, so callers can capture it via `magnitude`.
inline UnitVector normalize(const Vec& v, double* magnitude = nullptr) {
  if (v.size() < 2) throw DimensionMismatch("normalize: need dim >= 2");
  double n = l2_norm(v);
  if (!(n > kNormEps)) throw DegenerateVector("normalize: norm " + std::to_string(n));
  if (magnitude) *magnitude = n;
  UnitVector u{v};
  scale(1.0 / n, u.c);
  return u;
}

// Dot product clamped into [-1, 1]; unit-vector dots can drift past 1 by ulps
// and arccos would return NaN.
inline double cosine(const UnitVector& u, const UnitVector& v) {
  double d = dot(u.c, v.c);
  return std::clamp(d, -1.0, 1.0);
}

inline double angle(const UnitVector& u, const UnitVector& v) {
  return std::acos(cosine(u, v));
}

// ---------------------------------------------------------------------------
// Samples

struct LabeledSample {
  Vec observation;
  int class_id = -1;
  std::string ethnicity;
  double gender_score = 0.5;  // masculinity score in [0, 1]
};

struct UnlabeledSample {
  Vec observation;
  int pseudo_id = -1;  // unique across the unlabeled pool
  std::string ethnicity;
  double gender_score = 0.5;
  // Pre-normalization embedding norm, recorded when the selection pipeline
  // embeds the pool with the baseline model.
  double feature_magnitude = 0.0;
  // Hidden ground truth for planted overlap samples (-1 for genuine ones).
  // Never consulted by training code; test assertions only.
  int planted_class = -1;
};

// Held-out image for verification pair evaluation.
struct TestImage {
  Vec observation;
  int identity = -1;
  std::string ethnicity;
};

// ---------------------------------------------------------------------------
// WeightBank: the shared fully-connected classifier matrix. Columns
// 0..N-1 are labeled class weights, N..N+M-1 are per-image unlabeled
// weights. Every column stays unit-norm (re-normalized after each
// optimizer step).

struct WeightBank {
  int dim = 0;
  std::vector<UnitVector> labeled;
  std::vector<UnitVector> unlabeled;
  std::vector<std::string> unlabeled_ethnicity;  // parallel to `unlabeled`
  std::vector<int> unlabeled_pseudo_id;          // parallel to `unlabeled`
  std::unordered_map<int, int> pseudo_to_slot;   // pseudo_id -> index in `unlabeled`

  int labeled_count() const { return static_cast<int>(labeled.size()); }
  int unlabeled_count() const { return static_cast<int>(unlabeled.size()); }
  int total() const { return labeled_count() + unlabeled_count(); }

  bool is_unlabeled_column(int col) const { return col >= labeled_count(); }

  const UnitVector& column(int col) const {
    if (col < 0 || col >= total()) throw MissingWeightColumn("column " + std::to_string(col));
    return col < labeled_count() ? labeled[col] : unlabeled[col - labeled_count()];
  }
  UnitVector& column(int col) {
    if (col < 0 || col >= total()) throw MissingWeightColumn("column " + std::to_string(col));
    return col < labeled_count() ? labeled[col] : unlabeled[col - labeled_count()];
  }

  // Column index of an unlabeled sample's own weight vector.
  int column_of_pseudo(int pseudo_id) const {
    auto it = pseudo_to_slot.find(pseudo_id);
    if (it == pseudo_to_slot.end())
      throw MissingWeightColumn("pseudo_id " + std::to_string(pseudo_id));
    return labeled_count() + it->second;
  }

  void append_unlabeled(const UnitVector& w, int pseudo_id, const std::string& ethnicity) {
    if (pseudo_to_slot.count(pseudo_id))
      throw DuplicatePseudoId("pseudo_id " + std::to_string(pseudo_id));
    if (w.dim() != dim) throw DimensionMismatch("append_unlabeled: column dim");
    pseudo_to_slot[pseudo_id] = static_cast<int>(unlabeled.size());
    unlabeled.push_back(w);
    unlabeled_ethnicity.push_back(ethnicity);
    unlabeled_pseudo_id.push_back(pseudo_id);
  }

  void renormalize() {
    for (auto& w : labeled) w = normalize(w.c);
    for (auto& w : unlabeled) w = normalize(w.c);
  }
};

// ---------------------------------------------------------------------------
// Hyperparams

struct Hyperparams {
  double s = 64.0;            // logit scale
  double m = 0.5;             // additive angular margin, radians
  double t = 0.3;             // safe-pair cosine upper bound
  double lambda_u = 3.0;      // weight of the unlabeled loss term
  double lambda_c = 10.0;     // weight of the cosine penalty term
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int labeled_per_batch = 24;
  int unlabeled_per_batch = 8;  // 3:1 labeled:unlabeled by default
  // When false, labeled samples classify against the labeled classes plus
  // only the current batch's unlabeled columns instead of the full bank.
  bool labeled_vs_full_bank = true;
};

// Split a total batch size by a labeled:unlabeled ratio, e.g. 256 at 3:1
// gives 192 labeled + 64 unlabeled.
inline std::pair<int, int> batch_quotas(int batch_size, int ratio_labeled, int ratio_unlabeled) {
  if (batch_size <= 0 || ratio_labeled <= 0 || ratio_unlabeled < 0)
    throw InvalidSpec("batch_quotas: bad arguments");
  int units = ratio_labeled + ratio_unlabeled;
  if (batch_size % units != 0)
    throw InvalidSpec("batch_quotas: batch size not divisible by ratio");
  int per = batch_size / units;
  return {per * ratio_labeled, per * ratio_unlabeled};
}

// ---------------------------------------------------------------------------
// Experiment modes

enum class Mode {
  kBaseline,  // supervised margin loss over labeled classes only
  kUir,       // finetune with the negative-entropy rejection loss
  kArl,       // asymmetric rejection loss
  kArlC,      // ARL + safe-pair cosine penalty
  kArlCG,     // ARL + cosine penalty + gender-balanced selection
  kArlNoK,    // ARL with the cross-ethnicity K-set disabled
};

struct ModeFlags {
  bool unlabeled_arcface = false;  // N+K+1 margin classification term
  bool unlabeled_uir = false;      // negative-entropy rejection term
  bool cosine_penalty = false;
  bool gender_select = false;
  bool use_k_set = false;
};

inline ModeFlags flags_for(Mode mode) {
  switch (mode) {
    case Mode::kBaseline:
      return {};
    case Mode::kUir:
      return {.unlabeled_uir = true};
    case Mode::kArl:
      return {.unlabeled_arcface = true, .use_k_set = true};
    case Mode::kArlC:
      return {.unlabeled_arcface = true, .cosine_penalty = true, .use_k_set = true};
    case Mode::kArlCG:
      return {.unlabeled_arcface = true,
              .cosine_penalty = true,
              .gender_select = true,
              .use_k_set = true};
    case Mode::kArlNoK:
      return {.unlabeled_arcface = true, .use_k_set = false};
  }
  throw InvalidSpec("unknown mode");
}

inline std::string mode_name(Mode mode) {
  switch (mode) {
    case Mode::kBaseline: return "baseline";
    case Mode::kUir: return "uir";
    case Mode::kArl: return "arl";
    case Mode::kArlC: return "arl_c";
    case Mode::kArlCG: return "arl_c_g";
    case Mode::kArlNoK: return "arl_no_k";
  }
  throw InvalidSpec("unknown mode");
}

inline Mode parse_mode(const std::string& name) {
  for (Mode m : {Mode::kBaseline, Mode::kUir, Mode::kArl, Mode::kArlC, Mode::kArlCG,
                 Mode::kArlNoK}) {
    if (mode_name(m) == name) return m;
  }
  throw InvalidSpec("unknown mode: " + name);
}

}  // namespace arl
