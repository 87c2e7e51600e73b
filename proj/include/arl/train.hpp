#pragma once

// Two-phase optimization: phase 1 trains the baseline on labeled data only;
// the selection pipeline then filters and registers unlabeled samples, and
// phase 2 fine-tunes with the combined loss at a reduced learning rate.
// SGD with momentum and weight decay; bank columns are re-normalized after
// every step.

#include <string>
#include <vector>

#include "arl/core.hpp"
#include "arl/losses.hpp"
#include "arl/model.hpp"
#include "arl/rng.hpp"
#include "arl/sampling.hpp"
#include "arl/synth.hpp"

namespace arl {

struct OptimizerState {
  std::vector<double> vel_projection;
  std::vector<Vec> vel_labeled;
  std::vector<Vec> vel_unlabeled;
  long step = 0;

  static OptimizerState for_params(const EmbeddingModel& model, const WeightBank& bank) {
    OptimizerState st;
    st.vel_projection.assign(model.projection.size(), 0.0);
    st.vel_labeled.assign(bank.labeled.size(), Vec(bank.dim, 0.0));
    st.vel_unlabeled.assign(bank.unlabeled.size(), Vec(bank.dim, 0.0));
    return st;
  }

  // Zero-velocity buffers for columns registered after construction.
  void grow_for(const WeightBank& bank) {
    while (vel_unlabeled.size() < bank.unlabeled.size())
      vel_unlabeled.emplace_back(bank.dim, 0.0);
  }
};

// v <- mu v + (g + wd theta); theta <- theta - lr v
inline void sgd_update(Vec& theta, const Vec& grad, Vec& vel, double lr, double momentum,
                       double weight_decay) {
  if (theta.size() != grad.size() || theta.size() != vel.size())
    throw DimensionMismatch("sgd_update: shapes");
  for (size_t i = 0; i < theta.size(); ++i) {
    vel[i] = momentum * vel[i] + grad[i] + weight_decay * theta[i];
    theta[i] -= lr * vel[i];
  }
}

struct StepGrads {
  std::vector<double> projection;  // dense, shape of model.projection
  std::map<int, Vec> weights;      // bank column -> gradient
};

// One SGD step over model + bank. Non-finite gradients abort the step
// before any parameter is touched.
inline void sgd_step(EmbeddingModel& model, WeightBank& bank, const StepGrads& grads,
                     OptimizerState& state, const Hyperparams& hp, double lr) {
  if (!all_finite(grads.projection))
    throw NonFiniteGradient("sgd_step: projection gradient at step " +
                            std::to_string(state.step));
  for (const auto& [col, g] : grads.weights) {
    if (!all_finite(g))
      throw NonFiniteGradient("sgd_step: bank column " + std::to_string(col) + " at step " +
                              std::to_string(state.step));
  }
  state.grow_for(bank);
  sgd_update(model.projection, grads.projection, state.vel_projection, lr, hp.momentum,
             hp.weight_decay);
  const Vec zero(bank.dim, 0.0);
  int n = bank.labeled_count();
  for (int col = 0; col < bank.total(); ++col) {
    auto it = grads.weights.find(col);
    const Vec& g = it == grads.weights.end() ? zero : it->second;
    Vec& vel = col < n ? state.vel_labeled[col] : state.vel_unlabeled[col - n];
    sgd_update(bank.column(col).c, g, vel, lr, hp.momentum, hp.weight_decay);
  }
  bank.renormalize();
  ++state.step;
}

// Appends one unit column per sample, initialized with its current
// embedding; the sample then acts as its own class.
inline void register_unlabeled(WeightBank& bank, const std::vector<UnlabeledSample>& samples,
                               const EmbeddingModel& model) {
  for (const UnlabeledSample& u : samples) {
    UnitVector f = model.embed(u.observation);
    bank.append_unlabeled(f, u.pseudo_id, u.ethnicity);
  }
}

// ---------------------------------------------------------------------------
// Full training procedure

struct TrainConfig {
  Hyperparams hp;
  Mode mode = Mode::kArlC;
  std::uint64_t seed = 1;
  int embed_dim = 16;
  int phase1_epochs = 40;
  int phase2_epochs = 30;
  double phase1_lr = 0.0;       // 0 -> hp.lr
  double phase2_lr_factor = 0.1;  // finetune at a tenth of the phase-1 rate
  double overlap_threshold = 0.9;
  int select_quota_per_group = 200;
};

struct StepMetrics {
  long step = 0;
  int phase = 1;
  double loss_labeled = 0.0;
  double loss_unlabeled = 0.0;
  double loss_cosine = 0.0;
  double total = 0.0;
  int safe_pair_count = 0;
};

struct TrainResult {
  EmbeddingModel model;
  WeightBank bank;
  EmbeddingModel phase1_model;
  WeightBank phase1_bank;
  std::vector<StepMetrics> metrics;
  std::vector<UnlabeledSample> selected_unlabeled;
  int overlap_removed = 0;
  int overlap_pool_size = 0;
};

namespace detail {

// Loss + gradients for one batch of raw samples, chained through the model.
struct BatchEval {
  BatchLoss loss;
  StepGrads grads;
};

inline BatchEval evaluate_batch(const EmbeddingModel& model,
                                const std::vector<LabeledSample>& labeled_pool,
                                const std::vector<UnlabeledSample>& unlabeled_pool,
                                const Batch& batch, const WeightBank& bank,
                                const Hyperparams& hp, const ModeFlags& flags) {
  std::vector<UnitVector> lf, uf;
  std::vector<int> ids;
  std::vector<const UnlabeledSample*> uinfo;
  for (int i : batch.labeled) {
    lf.push_back(model.embed(labeled_pool[i].observation));
    ids.push_back(labeled_pool[i].class_id);
  }
  std::vector<int> batch_cols;
  for (int i : batch.unlabeled) {
    uf.push_back(model.embed(unlabeled_pool[i].observation));
    uinfo.push_back(&unlabeled_pool[i]);
    if (flags.unlabeled_arcface)
      batch_cols.push_back(bank.column_of_pseudo(unlabeled_pool[i].pseudo_id));
  }

  BatchEval out;
  out.loss = total_loss(lf, ids, uf, uinfo, bank, hp, flags,
                        batch_cols.empty() ? nullptr : &batch_cols);
  out.grads.projection.assign(model.projection.size(), 0.0);
  for (size_t i = 0; i < batch.labeled.size(); ++i)
    model.embed_backward(labeled_pool[batch.labeled[i]].observation,
                         out.loss.grad_labeled_features[i], out.grads.projection);
  for (size_t i = 0; i < batch.unlabeled.size(); ++i)
    model.embed_backward(unlabeled_pool[batch.unlabeled[i]].observation,
                         out.loss.grad_unlabeled_features[i], out.grads.projection);
  out.grads.weights = std::move(out.loss.grad_weights);
  return out;
}

class DivergenceMonitor {
 public:
  void observe(double total, long step) {
    if (first_ < 0.0) first_ = std::max(total, 1e-12);
    if (total > 10.0 * first_) {
      if (++streak_ >= 100)
        throw DivergenceDetected("loss above 10x initial for 100 steps at step " +
                                 std::to_string(step));
    } else {
      streak_ = 0;
    }
  }
  void reset() {
    first_ = -1.0;
    streak_ = 0;
  }

 private:
  double first_ = -1.0;
  int streak_ = 0;
};

}  // namespace detail

// Phase 1 trains the margin-softmax baseline over labeled classes; phase 2
// registers selected unlabeled data and fine-tunes with the mode's loss.
// Deterministic for a fixed (dataset, config): every random choice derives
// from config.seed.
inline TrainResult run_training(const Dataset& ds, const TrainConfig& cfg) {
  if (ds.labeled.empty()) throw InvalidSpec("run_training: empty labeled pool");
  const ModeFlags flags = flags_for(cfg.mode);
  Rng root(cfg.seed);
  Rng init_rng = root.split("model-init");
  double lr1 = cfg.phase1_lr > 0.0 ? cfg.phase1_lr : cfg.hp.lr;

  TrainResult res;
  res.model = EmbeddingModel::random_init(
      cfg.embed_dim, static_cast<int>(ds.labeled.front().observation.size()), init_rng);
  res.bank.dim = cfg.embed_dim;
  Rng bank_rng = root.split("bank-init");
  for (int c = 0; c < ds.n_classes; ++c)
    res.bank.labeled.push_back(normalize(bank_rng.normal_vec(cfg.embed_dim)));

  OptimizerState opt = OptimizerState::for_params(res.model, res.bank);
  detail::DivergenceMonitor monitor;
  long step = 0;

  // Phase 1: labeled-only batches, supervised margin loss.
  Hyperparams hp1 = cfg.hp;
  hp1.unlabeled_per_batch = 0;
  BatchPlanner planner1(static_cast<int>(ds.labeled.size()), 0, hp1);
  Rng epoch_rng = root.split("phase1-batches");
  const ModeFlags baseline_flags{};
  for (int epoch = 0; epoch < cfg.phase1_epochs; ++epoch) {
    Rng er = epoch_rng.split(epoch);
    for (const Batch& b : planner1.plan_epoch(er)) {
      auto ev = detail::evaluate_batch(res.model, ds.labeled, ds.unlabeled, b, res.bank, hp1,
                                       baseline_flags);
      sgd_step(res.model, res.bank, ev.grads, opt, hp1, lr1);
      monitor.observe(ev.loss.total, step);
      res.metrics.push_back({step++, 1, ev.loss.labeled_mean, 0.0, 0.0, ev.loss.total, 0});
    }
  }

  res.phase1_model = res.model;
  res.phase1_bank = res.bank;
  if (cfg.mode == Mode::kBaseline) return res;

  // Selection pipeline: filter overlap against the phase-1 classifier,
  // then pick per-group quotas.
  res.overlap_pool_size = static_cast<int>(ds.unlabeled.size());
  OverlapFilterResult filtered =
      filter_overlap(ds.unlabeled, res.model, res.bank, cfg.overlap_threshold, cfg.hp.s);
  res.overlap_removed = filtered.removed_count;
  SelectionResult sel = flags.gender_select
                            ? gender_balanced_select(filtered.kept, cfg.select_quota_per_group)
                            : select_by_magnitude(filtered.kept, cfg.select_quota_per_group);
  res.selected_unlabeled = std::move(sel.selected);

  if (flags.unlabeled_arcface)
    register_unlabeled(res.bank, res.selected_unlabeled, res.model);
  opt.grow_for(res.bank);

  // Phase 2: mixed batches at the configured ratio, reduced learning rate.
  double lr2 = lr1 * cfg.phase2_lr_factor;
  BatchPlanner planner2(static_cast<int>(ds.labeled.size()),
                        static_cast<int>(res.selected_unlabeled.size()), cfg.hp);
  Rng epoch2_rng = root.split("phase2-batches");
  monitor.reset();
  for (int epoch = 0; epoch < cfg.phase2_epochs; ++epoch) {
    Rng er = epoch2_rng.split(epoch);
    for (const Batch& b : planner2.plan_epoch(er)) {
      auto ev = detail::evaluate_batch(res.model, ds.labeled, res.selected_unlabeled, b,
                                       res.bank, cfg.hp, flags);
      sgd_step(res.model, res.bank, ev.grads, opt, cfg.hp, lr2);
      monitor.observe(ev.loss.total, step);
      res.metrics.push_back({step++, 2, ev.loss.labeled_mean, ev.loss.unlabeled_mean,
                             ev.loss.cosine_value, ev.loss.total, ev.loss.safe_pair_count});
    }
  }
  return res;
}

}  // namespace arl
