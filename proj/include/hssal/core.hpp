#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace hssal {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = std::size_t;
using Label = std::uint32_t;

/// N x D matrix of frozen embeddings, one sample per row. All entries finite.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  explicit FeatureMatrix(RowMatrix data);

  std::size_t rows() const noexcept { return static_cast<std::size_t>(data_.rows()); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(data_.cols()); }
  const RowMatrix& matrix() const noexcept { return data_; }
  auto row(Index i) const { return data_.row(static_cast<Eigen::Index>(i)); }

  /// Rows at `indices`, in that order.
  RowMatrix gather(std::span<const Index> indices) const;

 private:
  RowMatrix data_;
};

/// Per-sample class index in [0, C), C >= 2.
class LabelVector {
 public:
  LabelVector() = default;
  LabelVector(std::vector<Label> labels, std::size_t num_classes);

  std::size_t size() const noexcept { return labels_.size(); }
  std::size_t num_classes() const noexcept { return num_classes_; }
  Label operator[](Index i) const { return labels_[i]; }
  const std::vector<Label>& values() const noexcept { return labels_; }

  LabelVector gather(std::span<const Index> indices) const;

 private:
  std::vector<Label> labels_;
  std::size_t num_classes_ = 0;
};

/// Disjoint labeled / unlabeled index sets covering [0, n_total). Both sets are
/// kept sorted ascending.
class PoolState {
 public:
  PoolState() = default;
  PoolState(std::vector<Index> labeled, std::vector<Index> unlabeled, std::size_t n_total);

  /// Pool over [0, n_total) with `labeled` labeled and everything else unlabeled.
  static PoolState from_labeled(std::vector<Index> labeled, std::size_t n_total);

  const std::vector<Index>& labeled() const noexcept { return labeled_; }
  const std::vector<Index>& unlabeled() const noexcept { return unlabeled_; }
  std::size_t n_total() const noexcept { return n_total_; }

  bool is_labeled(Index i) const;
  bool is_unlabeled(Index i) const;

 private:
  std::vector<Index> labeled_;
  std::vector<Index> unlabeled_;
  std::size_t n_total_ = 0;
};

/// Cumulative labeling ratios and the integer query budgets they induce.
struct BudgetSchedule {
  std::vector<double> ratios;
  std::size_t n_total = 0;
  std::size_t initial_labeled = 0;
  /// Budget of rounds 2..R; size ratios.size() - 1.
  std::vector<std::size_t> per_round_budgets;

  /// round(ratios[r] * n_total), the labeled-pool size after round r (0-based).
  std::size_t cumulative_labeled(std::size_t r) const;
  std::size_t unlabeled_after(std::size_t r) const { return n_total - cumulative_labeled(r); }
};

/// Half-up rounding of a nonnegative quantity, tolerant of representation
/// error (0.35 * 10 rounds to 4).
std::size_t round_half_up(double x);

/// Budgets are differences of rounded cumulative counts, so the labeled-pool
/// size after round r is exactly round(ratios[r] * n_total).
/// Throws ScheduleError on non-increasing ratios, ratios outside (0, 1], or a
/// nonpositive budget.
BudgetSchedule make_budget_schedule(std::span<const double> ratios, std::size_t n_total);

struct MetricsRecord {
  double oa = 0.0;
  double aa = 0.0;
  /// Accuracy per class; 0 for classes without evaluation samples.
  std::vector<double> per_class_acc;
  /// Number of evaluation samples of each class.
  std::vector<std::size_t> class_support;
  std::size_t n_eval = 0;
};

/// OA = correct / n; AA averages per-class accuracy over classes present in `truth`.
MetricsRecord compute_metrics(const LabelVector& predictions, const LabelVector& truth);

/// Moves `query` from unlabeled to labeled. Throws ContractViolation if any
/// query index is labeled, out of range, duplicated, or has no oracle label.
PoolState update_pools(const PoolState& state, std::span<const Index> query, const LabelVector& oracle);

}  // namespace hssal
