#include "hssal/hal.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "hssal/error.hpp"
#include "hssal/random.hpp"

namespace hssal::hal {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Eigen::Index ei(std::size_t v) { return static_cast<Eigen::Index>(v); }

enum StreamTag : std::uint64_t { kPartitionStream = 11, kClusterStream, kSelectStream };

/// Indices of the `count` largest entries of u over `candidates` (ties: smaller index).
std::vector<Index> top_uncertain(std::span<const Index> candidates, std::span<const double> u, std::size_t count) {
  std::vector<Index> order(candidates.begin(), candidates.end());
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return u[a] != u[b] ? u[a] > u[b] : a < b; });
  order.resize(std::min(count, order.size()));
  return order;
}

}  // namespace

std::string to_string(InClusterMode m) {
  switch (m) {
    case InClusterMode::kRandom:
      return "s_random";
    case InClusterMode::kCentroid:
      return "s_centroid";
    case InClusterMode::kUncertainty:
      return "s_uncertainty";
  }
  return "s_uncertainty";
}

InClusterMode in_cluster_mode_from_string(const std::string& s) {
  if (s == "s_random" || s == "random") return InClusterMode::kRandom;
  if (s == "s_centroid" || s == "centroid") return InClusterMode::kCentroid;
  if (s == "s_uncertainty" || s == "uncertainty") return InClusterMode::kUncertainty;
  throw ContractViolation("unknown in-cluster selection mode '" + s + "'");
}

void HalConfig::validate() const {
  HSSAL_REQUIRE(minibatch_size >= 2, "mini-batch size must be at least 2");
  HSSAL_REQUIRE(cluster_multiplier >= 1.0, "cluster multiplier must be at least 1");
  HSSAL_REQUIRE(k_neighbors >= 1, "neighbor count must be positive");
}

std::vector<std::vector<Index>> partition_minibatches(std::span<const Index> unlabeled, std::size_t s,
                                                      std::uint64_t seed) {
  HSSAL_REQUIRE(s >= 2, "mini-batch size must be at least 2");
  HSSAL_REQUIRE(!unlabeled.empty(), "cannot partition an empty pool");
  std::vector<Index> order(unlabeled.begin(), unlabeled.end());
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<Index>> batches;
  for (std::size_t start = 0; start < order.size(); start += s) {
    const std::size_t end = std::min(order.size(), start + s);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

std::vector<std::size_t> allocate_budget(std::span<const std::size_t> batch_sizes, std::size_t b) {
  HSSAL_REQUIRE(!batch_sizes.empty(), "no batches to allocate over");
  const std::size_t total = std::accumulate(batch_sizes.begin(), batch_sizes.end(), std::size_t{0});
  HSSAL_REQUIRE(b <= total, "budget " + std::to_string(b) + " exceeds pool size " + std::to_string(total));
  const std::size_t k = batch_sizes.size();
  std::vector<std::size_t> out(k, 0);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i + 1 < k; ++i) {
    // floor(b * |U_i| / |U|) in exact integer arithmetic
    out[i] = static_cast<std::size_t>((static_cast<unsigned __int128>(b) * batch_sizes[i]) / total);
    assigned += out[i];
  }
  out[k - 1] = b - assigned;

  std::size_t excess = 0;
  for (std::size_t i = 0; i < k; ++i) {
    if (out[i] > batch_sizes[i]) {
      excess += out[i] - batch_sizes[i];
      out[i] = batch_sizes[i];
    }
  }
  if (excess > 0) {
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t c) { return batch_sizes[a] > batch_sizes[c]; });
    for (std::size_t i : order) {
      const std::size_t room = std::min(excess, batch_sizes[i] - out[i]);
      out[i] += room;
      excess -= room;
      if (excess == 0) break;
    }
  }
  return out;
}

std::size_t num_clusters(double lambda, std::size_t b_b, std::size_t n_b) {
  HSSAL_REQUIRE(n_b >= 2, "cluster count needs a batch of at least two samples");
  if (b_b == 0) return 0;
  const std::size_t scaled = round_half_up(lambda * static_cast<double>(b_b));
  const std::size_t k = std::min(scaled, n_b - 1);
  return std::max(k, std::max<std::size_t>(b_b, 1));
}

std::vector<std::size_t> rank_clusters(const spectral::ClusterAssignment& assignment, std::span<const double> u,
                                       ClusterAggregation aggregation) {
  HSSAL_REQUIRE(assignment.assignment.size() == u.size(), "assignment and uncertainty lengths differ");
  std::vector<double> score(assignment.k, 0.0);
  std::vector<std::size_t> count(assignment.k, 0);
  for (std::size_t i = 0; i < u.size(); ++i) {
    score[assignment.assignment[i]] += u[i];
    ++count[assignment.assignment[i]];
  }
  if (aggregation == ClusterAggregation::kMean) {
    for (std::size_t j = 0; j < assignment.k; ++j) score[j] = count[j] ? score[j] / static_cast<double>(count[j]) : 0.0;
  }
  std::vector<std::size_t> order(assignment.k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  return order;
}

Index select_in_cluster(std::span<const Index> cluster, const RowMatrix& points, std::span<const double> u,
                        InClusterMode mode, std::uint64_t seed) {
  HSSAL_REQUIRE(!cluster.empty(), "cannot select from an empty cluster");
  if (cluster.size() == 1) return cluster[0];
  switch (mode) {
    case InClusterMode::kUncertainty: {
      Index best = cluster[0];
      for (Index i : cluster) {
        if (u[i] > u[best] || (u[i] == u[best] && i < best)) best = i;
      }
      return best;
    }
    case InClusterMode::kCentroid: {
      Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(points.cols());
      for (Index i : cluster) mean += points.row(ei(i));
      mean /= static_cast<double>(cluster.size());
      Index best = cluster[0];
      double best_d = std::numeric_limits<double>::infinity();
      for (Index i : cluster) {
        const double d = (points.row(ei(i)) - mean).squaredNorm();
        if (d < best_d || (d == best_d && i < best)) {
          best_d = d;
          best = i;
        }
      }
      return best;
    }
    case InClusterMode::kRandom: {
      Rng rng(seed);
      return cluster[std::uniform_int_distribution<std::size_t>(0, cluster.size() - 1)(rng)];
    }
  }
  return cluster[0];
}

QuerySet hal_query(const FeatureMatrix& features, std::span<const double> u, const PoolState& pool, std::size_t b,
                   const HalConfig& config) {
  config.validate();
  const auto t0 = Clock::now();
  HSSAL_REQUIRE(u.size() == features.rows(), "uncertainty vector must cover every sample");
  HSSAL_REQUIRE(pool.n_total() <= features.rows(), "pool extends beyond the feature matrix");
  HSSAL_REQUIRE(b <= pool.unlabeled().size(), "budget exceeds the unlabeled pool");
  for (double v : u) HSSAL_REQUIRE(std::isfinite(v) && v >= 0.0, "uncertainty scores must be finite and nonnegative");

  QuerySet q;
  if (b == 0) return q;
  const auto batches = partition_minibatches(pool.unlabeled(), config.minibatch_size,
                                             derive_seed(config.seed, {kPartitionStream}));
  std::vector<std::size_t> sizes;
  for (const auto& batch : batches) sizes.push_back(batch.size());
  const std::vector<std::size_t> budgets = allocate_budget(sizes, b);

  for (std::size_t bi = 0; bi < batches.size(); ++bi) {
    const auto& batch = batches[bi];
    BatchReport rep;
    rep.members = batch;
    rep.size = batch.size();
    rep.budget = budgets[bi];
    if (rep.budget == 0) {
      q.per_batch.push_back(std::move(rep));
      continue;
    }
    if (rep.budget >= batch.size()) {
      // Whole batch requested (includes the single-sample batch).
      rep.selected = top_uncertain(batch, u, batch.size());
      q.indices.insert(q.indices.end(), rep.selected.begin(), rep.selected.end());
      q.per_batch.push_back(std::move(rep));
      continue;
    }

    const auto tc = Clock::now();
    const RowMatrix points = features.gather(batch);
    std::vector<double> u_local(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) u_local[i] = u[batch[i]];
    rep.clusters = num_clusters(config.cluster_multiplier, rep.budget, batch.size());
    spectral::SpectralOptions sopts;
    sopts.eigen = config.eigen;
    const spectral::ClusterAssignment assignment = spectral::spectral_cluster(
        points, rep.clusters, config.k_neighbors, derive_seed(config.seed, {kClusterStream, bi}), sopts);
    rep.cluster_seconds = seconds_since(tc);
    rep.assignment = assignment.assignment;

    const auto ts = Clock::now();
    const auto members = assignment.members();
    const auto ranked = rank_clusters(assignment, u_local, config.aggregation);
    std::vector<char> taken(batch.size(), 0);
    for (std::size_t r = 0; r < ranked.size() && rep.selected.size() < rep.budget; ++r) {
      const auto& cluster = members[ranked[r]];
      if (cluster.empty()) continue;
      const Index local = select_in_cluster(cluster, points, u_local, config.in_cluster,
                                            derive_seed(config.seed, {kSelectStream, bi, ranked[r]}));
      taken[local] = 1;
      rep.selected.push_back(batch[local]);
    }
    if (rep.selected.size() < rep.budget) {
      std::vector<Index> rest;
      for (std::size_t i = 0; i < batch.size(); ++i) {
        if (!taken[i]) rest.push_back(i);
      }
      for (Index local : top_uncertain(rest, u_local, rep.budget - rep.selected.size())) {
        rep.selected.push_back(batch[local]);
        ++rep.fallback_picks;
      }
    }
    rep.select_seconds = seconds_since(ts);
    q.indices.insert(q.indices.end(), rep.selected.begin(), rep.selected.end());
    q.per_batch.push_back(std::move(rep));
  }
  q.seconds = seconds_since(t0);
  return q;
}

}  // namespace hssal::hal
