#include "hssal/core.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hssal/error.hpp"

namespace hssal {

FeatureMatrix::FeatureMatrix(RowMatrix data) : data_(std::move(data)) {
  HSSAL_REQUIRE(data_.rows() >= 1 && data_.cols() >= 1, "feature matrix must be at least 1x1");
  for (Eigen::Index r = 0; r < data_.rows(); ++r) {
    if (!data_.row(r).allFinite()) {
      throw ContractViolation("non-finite feature value in row " + std::to_string(r));
    }
  }
}

RowMatrix FeatureMatrix::gather(std::span<const Index> indices) const {
  RowMatrix out(static_cast<Eigen::Index>(indices.size()), data_.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    HSSAL_REQUIRE(indices[i] < rows(), "feature row index out of range");
    out.row(static_cast<Eigen::Index>(i)) = data_.row(static_cast<Eigen::Index>(indices[i]));
  }
  return out;
}

LabelVector::LabelVector(std::vector<Label> labels, std::size_t num_classes)
    : labels_(std::move(labels)), num_classes_(num_classes) {
  HSSAL_REQUIRE(num_classes_ >= 2, "label vector needs at least two classes");
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i] >= num_classes_) {
      throw ContractViolation("label " + std::to_string(labels_[i]) + " at index " + std::to_string(i) +
                              " is not below class count " + std::to_string(num_classes_));
    }
  }
}

LabelVector LabelVector::gather(std::span<const Index> indices) const {
  std::vector<Label> out;
  out.reserve(indices.size());
  for (Index i : indices) {
    HSSAL_REQUIRE(i < labels_.size(), "label index out of range");
    out.push_back(labels_[i]);
  }
  return LabelVector(std::move(out), num_classes_);
}

namespace {

void check_sorted_unique(const std::vector<Index>& v, std::size_t n_total, const char* name) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] >= n_total) throw ContractViolation(std::string(name) + " index out of range");
    if (i > 0 && v[i] == v[i - 1]) throw ContractViolation(std::string(name) + " set has duplicates");
  }
}

}  // namespace

PoolState::PoolState(std::vector<Index> labeled, std::vector<Index> unlabeled, std::size_t n_total)
    : labeled_(std::move(labeled)), unlabeled_(std::move(unlabeled)), n_total_(n_total) {
  std::sort(labeled_.begin(), labeled_.end());
  std::sort(unlabeled_.begin(), unlabeled_.end());
  check_sorted_unique(labeled_, n_total_, "labeled");
  check_sorted_unique(unlabeled_, n_total_, "unlabeled");
  HSSAL_REQUIRE(labeled_.size() + unlabeled_.size() == n_total_, "pool sizes do not sum to n_total");
  std::vector<Index> both;
  std::set_intersection(labeled_.begin(), labeled_.end(), unlabeled_.begin(), unlabeled_.end(),
                        std::back_inserter(both));
  HSSAL_REQUIRE(both.empty(), "labeled and unlabeled sets overlap");
}

PoolState PoolState::from_labeled(std::vector<Index> labeled, std::size_t n_total) {
  std::sort(labeled.begin(), labeled.end());
  std::vector<Index> unlabeled;
  unlabeled.reserve(n_total >= labeled.size() ? n_total - labeled.size() : 0);
  std::size_t j = 0;
  for (Index i = 0; i < n_total; ++i) {
    if (j < labeled.size() && labeled[j] == i) {
      ++j;
    } else {
      unlabeled.push_back(i);
    }
  }
  return PoolState(std::move(labeled), std::move(unlabeled), n_total);
}

bool PoolState::is_labeled(Index i) const { return std::binary_search(labeled_.begin(), labeled_.end(), i); }

bool PoolState::is_unlabeled(Index i) const {
  return std::binary_search(unlabeled_.begin(), unlabeled_.end(), i);
}

std::size_t round_half_up(double x) {
  return static_cast<std::size_t>(std::floor(x + 0.5 + 1e-9 * std::max(1.0, std::abs(x))));
}

std::size_t BudgetSchedule::cumulative_labeled(std::size_t r) const {
  return round_half_up(ratios.at(r) * static_cast<double>(n_total));
}

BudgetSchedule make_budget_schedule(std::span<const double> ratios, std::size_t n_total) {
  if (ratios.empty()) throw ScheduleError("empty ratio list");
  if (n_total < 1) throw ScheduleError("n_total must be at least 1");
  for (std::size_t r = 0; r < ratios.size(); ++r) {
    if (!(ratios[r] > 0.0 && ratios[r] <= 1.0)) {
      throw ScheduleError("ratio " + std::to_string(ratios[r]) + " outside (0, 1]");
    }
    if (r > 0 && !(ratios[r] > ratios[r - 1])) throw ScheduleError("ratios must be strictly increasing");
  }
  BudgetSchedule s;
  s.ratios.assign(ratios.begin(), ratios.end());
  s.n_total = n_total;
  s.initial_labeled = s.cumulative_labeled(0);
  for (std::size_t r = 1; r < ratios.size(); ++r) {
    const std::size_t hi = s.cumulative_labeled(r);
    const std::size_t lo = s.cumulative_labeled(r - 1);
    if (hi <= lo) {
      throw ScheduleError("round " + std::to_string(r + 1) + " has a nonpositive budget for n_total=" +
                          std::to_string(n_total));
    }
    s.per_round_budgets.push_back(hi - lo);
  }
  return s;
}

MetricsRecord compute_metrics(const LabelVector& predictions, const LabelVector& truth) {
  HSSAL_REQUIRE(predictions.size() == truth.size(), "prediction and truth lengths differ");
  HSSAL_REQUIRE(predictions.num_classes() == truth.num_classes(), "prediction and truth class counts differ");
  const std::size_t c = truth.num_classes();
  MetricsRecord m;
  m.n_eval = truth.size();
  m.per_class_acc.assign(c, 0.0);
  m.class_support.assign(c, 0);
  std::vector<std::size_t> hits(c, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ++m.class_support[truth[i]];
    if (predictions[i] == truth[i]) {
      ++hits[truth[i]];
      ++correct;
    }
  }
  m.oa = m.n_eval == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(m.n_eval);
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t k = 0; k < c; ++k) {
    if (m.class_support[k] == 0) continue;
    m.per_class_acc[k] = static_cast<double>(hits[k]) / static_cast<double>(m.class_support[k]);
    sum += m.per_class_acc[k];
    ++present;
  }
  m.aa = present == 0 ? 0.0 : sum / static_cast<double>(present);
  return m;
}

PoolState update_pools(const PoolState& state, std::span<const Index> query, const LabelVector& oracle) {
  if (query.empty()) return state;
  std::vector<Index> q(query.begin(), query.end());
  std::sort(q.begin(), q.end());
  for (std::size_t i = 0; i < q.size(); ++i) {
    HSSAL_REQUIRE(q[i] < state.n_total(), "query index " + std::to_string(q[i]) + " out of range");
    HSSAL_REQUIRE(i == 0 || q[i] != q[i - 1], "query contains duplicate index " + std::to_string(q[i]));
    HSSAL_REQUIRE(q[i] < oracle.size(), "no oracle label for query index " + std::to_string(q[i]));
    HSSAL_REQUIRE(state.is_unlabeled(q[i]), "query index " + std::to_string(q[i]) + " is not unlabeled");
  }
  std::vector<Index> labeled;
  labeled.reserve(state.labeled().size() + q.size());
  std::merge(state.labeled().begin(), state.labeled().end(), q.begin(), q.end(), std::back_inserter(labeled));
  std::vector<Index> unlabeled;
  unlabeled.reserve(state.unlabeled().size() - q.size());
  std::set_difference(state.unlabeled().begin(), state.unlabeled().end(), q.begin(), q.end(),
                      std::back_inserter(unlabeled));
  return PoolState(std::move(labeled), std::move(unlabeled), state.n_total());
}

}  // namespace hssal
