#pragma once

// Weak-to-strong self-training on frozen features: feature-space
// perturbations, the confidence-mask family, the combined objective, and the
// per-round training loop with EMA tracking and best-on-validation selection.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hssal/core.hpp"
#include "hssal/model.hpp"

namespace hssal::ssl {

enum class MaskVariant {
  kFixed,          ///< hard threshold tau (FixMatch)
  kClassAdaptive,  ///< tau scaled per class by confident counts (FlexMatch)
  kSelfAdaptive,   ///< EMA global threshold scaled per class (FreeMatch)
  kSoftGaussian,   ///< Gaussian weight below the running mean confidence (SoftMatch)
};

std::string to_string(MaskVariant v);
MaskVariant mask_variant_from_string(const std::string& s);

struct SslConfig {
  double tau = 0.95;
  double lambda_st = 1.0;
  MaskVariant variant = MaskVariant::kFixed;
  /// Momentum of every running mask statistic.
  double mask_momentum = 0.999;

  std::size_t epochs = 20;
  std::size_t iters_per_epoch = 50;
  std::size_t batch_size = 32;
  /// Unlabeled samples per labeled sample in each iteration.
  std::size_t unlabeled_ratio = 1;
  std::uint64_t seed = 0;

  double weak_sigma = 0.01;
  double strong_sigma = 0.1;
  double strong_drop = 0.2;

  std::size_t hidden = 128;
  double dropout = model::kDefaultDropout;
  double ema_alpha = 0.99;
  model::AdamWConfig optimizer{};

  /// Throws ContractViolation on out-of-range fields.
  void validate() const;
};

enum class Perturbation { kWeak, kStrong };

/// weak: x + N(0, weak_sigma^2); strong: (x + N(0, strong_sigma^2)) with each
/// coordinate zeroed with probability strong_drop.
RowMatrix perturb(const RowMatrix& features, Perturbation mode, const SslConfig& config, std::uint64_t seed);

/// Running statistics of the adaptive mask variants.
struct MaskState {
  std::size_t num_classes = 0;
  /// class_adaptive: EMA of per-batch confident-prediction counts per class.
  std::vector<double> confident_counts;
  /// self_adaptive: EMA of mean max-confidence, and of the mean class distribution.
  double global_threshold = 0.0;
  std::vector<double> class_mean_prob;
  /// soft_gaussian: EMA of mean and variance of max-confidence.
  double conf_mean = 0.0;
  double conf_var = 1.0;

  static MaskState initial(std::size_t num_classes);
};

struct MaskDecision {
  double weight = 0.0;
  Label pseudo_label = 0;
};

/// Per-class thresholds currently in effect (fixed, class_adaptive, self_adaptive).
std::vector<double> class_thresholds(const MaskState& state, const SslConfig& config);

MaskDecision mask_weight(const MaskState& state, std::span<const double> probs_row, const SslConfig& config);

/// Folds a batch of weak-view probabilities into the running statistics.
MaskState update_mask_state(const MaskState& state, const RowMatrix& weak_probs, const SslConfig& config);

struct SelfTrainingResult {
  double loss = 0.0;
  model::ClassifierParams grad;
  MaskState state;
  double mask_rate = 0.0;  ///< mean mask weight over the batch
};

/// Pseudo-labels from the EMA model on `weak_view`; loss is the batch mean of
/// m_j * CE(p_theta(strong_view_j), yhat_j). Only the strong branch carries
/// gradient.
SelfTrainingResult self_training_loss(const model::ClassifierParams& params, const RowMatrix& weak_view,
                                      const RowMatrix& strong_view, const model::EmaState& ema,
                                      const MaskState& state, const SslConfig& config, Rng* dropout_rng = nullptr);

struct TraceRow {
  std::size_t iter = 0;
  double sup_loss = 0.0;
  double st_loss = 0.0;
  double mask_rate = 0.0;
  /// Set on the last iteration of each epoch.
  std::optional<double> val_oa;
};

struct RoundOutput {
  model::EmaState best_ema;
  model::ClassifierParams final_params;
  std::vector<TraceRow> trace;
  double best_val_oa = 0.0;
  std::size_t best_epoch = 0;
  std::vector<Index> train_indices;
  std::vector<Index> val_indices;
};

/// Stratified 1/8 hold-out of the labeled pool (seeded). Returns {train, val};
/// val is empty when fewer than 8 labeled samples exist.
std::pair<std::vector<Index>, std::vector<Index>> split_validation(std::span<const Index> labeled,
                                                                   const LabelVector& oracle, std::uint64_t seed);

/// One training round from freshly initialized parameters. Each iteration
/// minimizes sup + lambda_st * st and updates the EMA; the EMA snapshot with
/// the best validation OA (checked after every epoch) is returned.
/// With lambda_st == 0 the unlabeled pool is never touched. `warm_start`,
/// when given, replaces the fresh initialization.
RoundOutput ssl_train_round(const PoolState& pool, const FeatureMatrix& features, const LabelVector& oracle,
                            const SslConfig& config, const model::ClassifierParams* warm_start = nullptr);

std::string trace_csv(const std::vector<TraceRow>& trace);

}  // namespace hssal::ssl
