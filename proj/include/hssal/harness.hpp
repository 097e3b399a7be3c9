#pragma once

// Experiment orchestration: feature files, the synthetic benchmark, the
// multi-round train/evaluate/query loop, and CSV/JSON reports.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hssal/baselines.hpp"
#include "hssal/core.hpp"
#include "hssal/hal.hpp"
#include "hssal/model.hpp"
#include "hssal/ssl.hpp"

namespace hssal::harness {

struct Dataset {
  FeatureMatrix features;
  LabelVector labels;
};

/// Feature file layout (little-endian):
///   "HSSF" | version u16 | N u64 | D u64 | C u32 | N*D f32 row-major | N u32 labels
inline constexpr std::uint16_t kFeatureFileVersion = 1;

void save_features(const std::string& path, const Dataset& data);
/// Throws ParseError (bad magic/version, truncation with missing byte count,
/// non-finite value with row index, label >= C).
Dataset load_features(const std::string& path);

struct SyntheticSpec {
  std::size_t classes = 10;
  std::size_t dim = 16;
  std::size_t per_class = 200;
  /// Standard deviation of the class means around the origin.
  double mean_scale = 1.0;
  /// Within-class spread (per-class random linear map scaled by this).
  double cov_scale = 1.4;
  /// Fraction of samples whose label is replaced by a uniformly drawn class.
  double noise_rate = 0.0;
  std::uint64_t seed = 0;
};

/// Gaussian mixture, one anisotropic component per class, samples ordered by class.
Dataset gen_synthetic(const SyntheticSpec& spec);

struct Split {
  std::vector<Index> train;
  std::vector<Index> val;
  std::vector<Index> test;
};

/// Per-class stratified split: round-half-up test and val counts per class,
/// the rest to train.
Split stratified_split(const LabelVector& labels, double val_fraction, double test_fraction, std::uint64_t seed);

enum class TrainingMode { kSupervised, kSsl };

struct ExperimentConfig {
  std::optional<std::string> feature_path;
  SyntheticSpec synthetic{};
  std::uint64_t split_seed = 0;
  double train_fraction = 0.7;
  double val_fraction = 0.1;
  double test_fraction = 0.2;
  std::vector<double> ratios{0.01, 0.02, 0.04, 0.06, 0.08, 0.10};
  baselines::QueryStrategy strategy{};
  TrainingMode training = TrainingMode::kSsl;
  ssl::SslConfig ssl{};
  std::vector<std::uint64_t> trial_seeds{0};
  /// Carry parameters across rounds instead of re-initializing (ablation only).
  bool warm_start = false;

  void validate() const;
};

struct PhaseSeconds {
  double train = 0.0;
  double eval = 0.0;
  double query = 0.0;
};

struct RoundResult {
  std::size_t round = 0;
  double ratio = 0.0;
  std::size_t n_labeled = 0;
  double oa = 0.0;
  double aa = 0.0;
  std::vector<double> per_class_acc;
  /// Indices (into the training split) queried to reach this round's ratio.
  std::vector<Index> queried;
  double best_val_oa = 0.0;
  PhaseSeconds seconds{};
};

struct TrialResult {
  std::uint64_t seed = 0;
  std::vector<RoundResult> rounds;
  std::vector<Index> initial_labeled;
};

struct ExperimentResult {
  std::string config_json;
  std::uint64_t config_hash = 0;
  std::vector<TrialResult> trials;
  /// Final-round EMA model of the last trial.
  std::optional<model::Checkpoint> final_model;
};

/// Indices of the training split that form the shared initial labeled set.
std::vector<Index> initial_labeled_set(std::size_t n_train, std::size_t count, std::uint64_t split_seed);

/// Seed of round r of a trial.
std::uint64_t round_seed(std::uint64_t trial_seed, std::size_t round);

struct TrainedModel {
  model::EmaState ema;
  model::ClassifierParams params;
  double best_val_oa = 0.0;
};

/// Trains one round's model on the training split and returns it.
TrainedModel train_round(const FeatureMatrix& train_features, const LabelVector& train_labels, const PoolState& pool,
                         const ExperimentConfig& config, std::uint64_t seed);

MetricsRecord evaluate(const model::ClassifierParams& params, const FeatureMatrix& features, const LabelVector& labels);

/// Throws ScheduleError / ContractViolation with the round number on failure.
ExperimentResult run_experiment(const ExperimentConfig& config);
ExperimentResult run_experiment(const ExperimentConfig& config, const Dataset& data);

/// Mean OA over trials for each round.
std::vector<double> mean_oa_per_round(const ExperimentResult& r);

struct ReportOptions {
  bool include_timings = true;
};

std::string config_to_json(const ExperimentConfig& config);
ExperimentConfig config_from_json(const std::string& text);
std::uint64_t fnv1a64(const std::string& s);

std::string report_csv(const ExperimentResult& r, const ReportOptions& options = {});
std::string report_json(const ExperimentResult& r, const ReportOptions& options = {});
ExperimentResult results_from_json(const std::string& text);

/// Writes results.csv and results.json into `dir` (created if missing).
void emit_report(const ExperimentResult& r, const std::string& dir, const ReportOptions& options = {});

}  // namespace hssal::harness
