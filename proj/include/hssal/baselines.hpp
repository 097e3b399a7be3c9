#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "hssal/core.hpp"
#include "hssal/hal.hpp"
#include "hssal/model.hpp"

namespace hssal::baselines {

using hal::QuerySet;

enum class StrategyKind { kRandom, kEntropy, kMargin, kBald, kCoreset, kBadge, kHal };

std::string to_string(StrategyKind k);
StrategyKind strategy_from_string(const std::string& s);

struct QueryStrategy {
  StrategyKind kind = StrategyKind::kHal;
  std::size_t bald_passes = 50;
  /// Dropout rate used for BALD passes; negative keeps the head's own rate.
  double bald_dropout = -1.0;
  /// BADGE: pick the first seed uniformly instead of by maximum norm.
  bool badge_random_first = false;
  /// Include the final-layer bias in HAL's gradient-norm uncertainty.
  bool uncertainty_include_bias = true;
  hal::HalConfig hal{};
  std::uint64_t seed = 0;
};

double entropy(std::span<const double> p);
double margin(std::span<const double> p);
/// H(mean_t p_t) - mean_t H(p_t) over the rows of `passes`.
double mutual_information(const RowMatrix& passes);

/// Top-b unlabeled samples by descending entropy (ties: smaller index).
QuerySet entropy_query(const RowMatrix& probs, const PoolState& pool, std::size_t b);
/// Top-b unlabeled samples by ascending top-two margin.
QuerySet margin_query(const RowMatrix& probs, const PoolState& pool, std::size_t b);
/// Top-b unlabeled samples by descending MC-dropout mutual information.
QuerySet bald_query(const model::ClassifierParams& params, const FeatureMatrix& features, const PoolState& pool,
                    std::size_t b, std::size_t t, std::uint64_t seed);
/// Greedy k-center over (labeled + already selected); with an empty labeled
/// set the first pick is the point farthest from the pool mean.
QuerySet coreset_query(const FeatureMatrix& features, const PoolState& pool, std::size_t b);
/// k-means++ seeding over gradient embeddings of the unlabeled pool.
QuerySet badge_query(const model::ClassifierParams& params, const FeatureMatrix& features, const PoolState& pool,
                     std::size_t b, std::uint64_t seed, bool random_first = false);
QuerySet badge_from_embeddings(const RowMatrix& embeddings, std::span<const Index> candidates, std::size_t b,
                               std::uint64_t seed, bool random_first);
QuerySet random_query(const PoolState& pool, std::size_t b, std::uint64_t seed);

/// Largest distance from any pool point to its nearest point of `centers`.
double coverage_radius(const RowMatrix& points, std::span<const Index> centers);

/// Dispatches one query with the given (EMA) model.
QuerySet run_query(const QueryStrategy& strategy, const model::ClassifierParams& params, const FeatureMatrix& features,
                   const PoolState& pool, std::size_t b);

}  // namespace hssal::baselines
