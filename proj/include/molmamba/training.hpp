#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "molmamba/losses.hpp"
#include "molmamba/model.hpp"

namespace molmamba {

// Metrics.
/// Rank statistic; tied scores count one half. Throws ValidationError when
/// only one class is present.
double roc_auc(std::span<const double> scores, std::span<const double> labels);
double rmse(std::span<const double> pred, std::span<const double> target);
double mae(std::span<const double> pred, std::span<const double> target);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

/// Seeded shuffle cut by the configured train:val:test parts. Throws when a
/// part ends up empty.
Split split_indices(std::size_t n, const TrainConfig& cfg, std::uint64_t seed);

/// Scales every gradient so the global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_global_norm(GradientSet& grads, double max_norm);

/// Adam with decoupled weight decay.
class AdamW {
 public:
  AdamW(const ParamStore& store, const TrainConfig& cfg);
  /// Clips, then updates every parameter in place.
  void step(ParamStore& store, GradientSet& grads);
  void reset();
  std::size_t steps() const noexcept { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_, decay_, clip_;
  std::size_t t_ = 0;
  GradientSet m_, v_;
};

struct EpochLosses {
  std::size_t epoch = 0;  // 1-based
  LossComponents mean;
  double total = 0.0;     // four-term weighted sum
};

struct PretrainResult {
  std::vector<EpochLosses> train_curve;
  std::vector<EpochLosses> val_curve;
  std::size_t best_epoch = 0;
  double best_val_total = 0.0;
  std::string best_checkpoint;  // serialized parameters at best_epoch
};

/// Mean losses over `indices`, masks drawn from (seed, epoch, molecule).
EpochLosses evaluate_pretrain(const MolMamba& model, std::span<const PreparedMolecule> data,
                              std::span<const std::size_t> indices, const TrainConfig& cfg, std::size_t epoch);

/// Two-stage pretraining. Stage 1 (the first stage1_epochs epochs) optimizes
/// the structure terms, stage 2 adds the mask term and starts with fresh
/// optimizer moments. The model ends holding the best-validation parameters.
PretrainResult pretrain(MolMamba& model, std::span<const PreparedMolecule> data, const TrainConfig& cfg,
                        const std::function<void(const EpochLosses&, const EpochLosses&)>& on_epoch = {});

/// Per-molecule targets for the chosen label keys; NaN marks a missing label.
std::vector<std::vector<double>> label_matrix(std::span<const PreparedMolecule> data,
                                              std::span<const std::string> tasks, const TrainConfig& cfg);

/// Prediction logits (n x tasks) for the given molecules.
std::vector<std::vector<double>> predict_all(const MolMamba& model, std::span<const PreparedMolecule> data,
                                             std::span<const std::size_t> indices);

struct TaskScore {
  double metric = 0.0;  // mean ROC-AUC or mean RMSE over tasks
  double mae = 0.0;     // regression only
  std::vector<double> per_task;
};

TaskScore score(const std::vector<std::vector<double>>& logits, const std::vector<std::vector<double>>& labels,
                std::span<const std::size_t> indices, bool classification);

struct FoldResult {
  std::size_t fold = 0;
  std::uint64_t seed = 0;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  double best_val = 0.0;
  TaskScore test;
  std::vector<double> train_loss;
  std::vector<double> train_metric;
  std::vector<double> val_metric;
};

struct MetricsReport {
  std::string task;
  std::string metric;  // "roc_auc" or "rmse"
  std::vector<FoldResult> folds;
  double mean = 0.0;
  double std = 0.0;

  nlohmann::ordered_json to_json() const;
};

/// Fine-tunes a fresh model (initialized from `pretrained` where names match)
/// once per fold. Fold k uses seed derive_seed(cfg.seed, k) for its split
/// and initialization.
MetricsReport finetune(std::span<const PreparedMolecule> data, std::span<const std::string> tasks,
                       std::size_t vocab_size, const TrainConfig& cfg, const ParamStore* pretrained = nullptr,
                       const std::function<void(std::size_t, std::size_t, double, double)>& on_epoch = {});

/// One fold; returns the result and leaves the best parameters in `model`.
FoldResult finetune_fold(MolMamba& model, std::span<const PreparedMolecule> data,
                         const std::vector<std::vector<double>>& labels, const Split& split, const TrainConfig& cfg,
                         std::uint64_t seed,
                         const std::function<void(std::size_t, std::size_t, double, double)>& on_epoch = {});

}  // namespace molmamba
