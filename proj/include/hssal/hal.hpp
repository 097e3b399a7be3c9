#pragma once

// Hierarchical query engine: shuffle-partition the unlabeled pool into
// mini-batches, split the budget proportionally, spectrally cluster each
// batch into K_b = min(round(lambda * B_b), N_b - 1) clusters, rank clusters
// by aggregated uncertainty and take one representative from each of the
// top-B_b clusters.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hssal/core.hpp"
#include "hssal/spectral.hpp"

namespace hssal::hal {

enum class InClusterMode { kRandom, kCentroid, kUncertainty };
enum class ClusterAggregation { kSum, kMean };

std::string to_string(InClusterMode m);
InClusterMode in_cluster_mode_from_string(const std::string& s);

struct HalConfig {
  std::size_t minibatch_size = 10000;
  double cluster_multiplier = 3.0;
  std::size_t k_neighbors = 40;
  InClusterMode in_cluster = InClusterMode::kUncertainty;
  ClusterAggregation aggregation = ClusterAggregation::kSum;
  std::uint64_t seed = 0;
  spectral::EigenOptions eigen{};

  void validate() const;
};

struct BatchReport {
  /// Global indices of the batch members, in partition order.
  std::vector<Index> members;
  /// Cluster id of each member; empty when the batch was not clustered.
  std::vector<std::size_t> assignment;
  std::size_t size = 0;
  std::size_t budget = 0;
  std::size_t clusters = 0;
  std::vector<Index> selected;
  /// Selections made by the top-uncertainty fallback (too few clusters).
  std::size_t fallback_picks = 0;
  double cluster_seconds = 0.0;
  double select_seconds = 0.0;
};

struct QuerySet {
  std::vector<Index> indices;      ///< global indices, in selection order
  std::vector<BatchReport> per_batch;
  double seconds = 0.0;
};

/// Seeded shuffle, then contiguous chunks of `s`; the last chunk holds the remainder.
std::vector<std::vector<Index>> partition_minibatches(std::span<const Index> unlabeled, std::size_t s,
                                                      std::uint64_t seed);

/// floor(b * |U_b| / |U|) for all but the last batch, remainder to the last;
/// any overflow beyond a batch's size moves to batches with spare capacity,
/// largest first.
std::vector<std::size_t> allocate_budget(std::span<const std::size_t> batch_sizes, std::size_t b);

/// min(round_half_up(lambda * b_b), n_b - 1), floored at max(b_b, 1); 0 when b_b == 0.
std::size_t num_clusters(double lambda, std::size_t b_b, std::size_t n_b);

/// Cluster ids ordered by descending aggregated uncertainty (ties: smaller id).
std::vector<std::size_t> rank_clusters(const spectral::ClusterAssignment& assignment,
                                       std::span<const double> u, ClusterAggregation aggregation = ClusterAggregation::kSum);

/// One representative of `cluster` (local indices into `points` / `u`).
Index select_in_cluster(std::span<const Index> cluster, const RowMatrix& points, std::span<const double> u,
                        InClusterMode mode, std::uint64_t seed);

/// Full query. `u` is indexed by global sample index (length features.rows()).
QuerySet hal_query(const FeatureMatrix& features, std::span<const double> u, const PoolState& pool, std::size_t b,
                   const HalConfig& config);

}  // namespace hssal::hal
