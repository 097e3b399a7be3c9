#include <algorithm>
#include <numeric>
#include <set>

#include <doctest.h>

#include "hssal/random.hpp"
#include "hssal/error.hpp"
#include "hssal/hal.hpp"

using namespace hssal;
using namespace hssal::hal;

namespace {

std::vector<Index> iota_vec(std::size_t n) {
  std::vector<Index> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

// `per` points around each center with isotropic noise sigma.
RowMatrix blob_points(const std::vector<Eigen::RowVectorXd>& centers, std::size_t per, double sigma, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, sigma);
  const Eigen::Index d = centers.front().size();
  RowMatrix x(static_cast<Eigen::Index>(centers.size() * per), d);
  Eigen::Index r = 0;
  for (const auto& c : centers) {
    for (std::size_t i = 0; i < per; ++i, ++r) {
      for (Eigen::Index k = 0; k < d; ++k) x(r, k) = c(k) + g(rng);
    }
  }
  return x;
}

Eigen::RowVectorXd point(std::initializer_list<double> v) {
  Eigen::RowVectorXd p(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) p(i++) = x;
  return p;
}

void check_query_contract(const QuerySet& q, const PoolState& pool, std::size_t b) {
  CHECK(q.indices.size() == b);
  std::set<Index> uniq(q.indices.begin(), q.indices.end());
  CHECK(uniq.size() == q.indices.size());
  for (Index i : q.indices) CHECK(pool.is_unlabeled(i));
  for (const auto& rep : q.per_batch) {
    CHECK(rep.selected.size() == rep.budget);
    if (rep.assignment.empty()) continue;
    std::set<std::size_t> used;
    for (std::size_t s = 0; s + rep.fallback_picks < rep.selected.size(); ++s) {
      const auto pos = std::find(rep.members.begin(), rep.members.end(), rep.selected[s]) - rep.members.begin();
      REQUIRE(pos < static_cast<std::ptrdiff_t>(rep.members.size()));
      CHECK(used.insert(rep.assignment[static_cast<std::size_t>(pos)]).second);
    }
  }
}

}  // namespace

TEST_CASE("mini-batch partition") {
  SUBCASE("27k-sample pool") {
    const auto idx = iota_vec(26730);
    const auto b = partition_minibatches(idx, 10000, 1);
    REQUIRE(b.size() == 3);
    CHECK(b[0].size() == 10000);
    CHECK(b[1].size() == 10000);
    CHECK(b[2].size() == 6730);
    std::vector<Index> all;
    for (const auto& x : b) all.insert(all.end(), x.begin(), x.end());
    std::sort(all.begin(), all.end());
    CHECK(all == idx);
  }
  SUBCASE("single batch holds the whole pool") {
    const std::vector<Index> idx{3, 8, 9, 20};
    const auto b = partition_minibatches(idx, 10, 4);
    REQUIRE(b.size() == 1);
    CHECK(std::set<Index>(b[0].begin(), b[0].end()) == std::set<Index>(idx.begin(), idx.end()));
  }
  SUBCASE("seeded") {
    const auto idx = iota_vec(50);
    CHECK(partition_minibatches(idx, 7, 2) == partition_minibatches(idx, 7, 2));
    const auto a = partition_minibatches(idx, 7, 2), c = partition_minibatches(idx, 7, 3);
    CHECK(a != c);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].size() == c[i].size());
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(partition_minibatches(std::vector<Index>{}, 4, 0), ContractViolation);
    CHECK_THROWS_AS(partition_minibatches(iota_vec(5), 1, 0), ContractViolation);
  }
}

TEST_CASE("budget allocation") {
  CHECK(allocate_budget(std::vector<std::size_t>{10000, 10000, 6730}, 540) == std::vector<std::size_t>{202, 202, 136});
  CHECK(allocate_budget(std::vector<std::size_t>{77}, 30) == std::vector<std::size_t>{30});
  CHECK(allocate_budget(std::vector<std::size_t>{5, 5}, 10) == std::vector<std::size_t>{5, 5});
  // floor gives [3, 3] and leaves 2 for a batch of 1: the excess moves to the largest batch.
  CHECK(allocate_budget(std::vector<std::size_t>{4, 4, 1}, 8) == std::vector<std::size_t>{4, 3, 1});
  CHECK_THROWS_AS(allocate_budget(std::vector<std::size_t>{3, 3}, 7), ContractViolation);

  Rng rng(4);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<std::size_t> sizes(1 + rng() % 6);
    for (auto& s : sizes) s = 1 + rng() % 40;
    const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
    const std::size_t b = rng() % (total + 1);
    const auto out = allocate_budget(sizes, b);
    CHECK(std::accumulate(out.begin(), out.end(), std::size_t{0}) == b);
    for (std::size_t i = 0; i < sizes.size(); ++i) CHECK(out[i] <= sizes[i]);
  }
}

TEST_CASE("cluster count") {
  CHECK(num_clusters(3.0, 201, 10000) == 603);
  CHECK(num_clusters(3.0, 50, 100) == 99);
  CHECK(num_clusters(1.0, 17, 500) == 17);
  CHECK(num_clusters(3.0, 0, 500) == 0);
  CHECK(num_clusters(1.5, 3, 100) == 5);  // 4.5 rounds half up
  CHECK_THROWS_AS(num_clusters(3.0, 1, 1), ContractViolation);
}

TEST_CASE("cluster ranking") {
  spectral::ClusterAssignment a{{0, 0, 1}, 2};
  CHECK(rank_clusters(a, std::vector<double>{1, 1, 3}) == std::vector<std::size_t>{1, 0});
  CHECK(rank_clusters(a, std::vector<double>{0, 0, 0}) == std::vector<std::size_t>{0, 1});
  CHECK(rank_clusters(a, std::vector<double>{2, 2, 3}) == std::vector<std::size_t>{0, 1});
  CHECK(rank_clusters(a, std::vector<double>{2, 2, 3}, ClusterAggregation::kMean) == std::vector<std::size_t>{1, 0});

  Rng rng(2);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    spectral::ClusterAssignment r{std::vector<std::size_t>(30), 6};
    std::vector<double> u(30), scaled(30);
    for (std::size_t i = 0; i < 30; ++i) {
      r.assignment[i] = i % 6;
      u[i] = u01(rng);
      scaled[i] = 8.0 * u[i];
    }
    CHECK(rank_clusters(r, u) == rank_clusters(r, scaled));
  }
}

TEST_CASE("in-cluster selection") {
  RowMatrix pts(3, 2);
  pts << -1, 0, 1, 0, 0, 0;
  const std::vector<double> u{0.1, 0.9, 0.5};
  const std::vector<Index> all{0, 1, 2};
  for (auto mode : {InClusterMode::kRandom, InClusterMode::kCentroid, InClusterMode::kUncertainty}) {
    CHECK(select_in_cluster(std::vector<Index>{2}, pts, u, mode, 0) == 2);
  }
  CHECK(select_in_cluster(all, pts, u, InClusterMode::kUncertainty, 0) == 1);
  CHECK(select_in_cluster(all, pts, u, InClusterMode::kCentroid, 0) == 2);
  CHECK(select_in_cluster(all, pts, std::vector<double>{0.5, 0.5, 0.5}, InClusterMode::kUncertainty, 0) == 0);
  const Index r = select_in_cluster(all, pts, u, InClusterMode::kRandom, 7);
  CHECK(r == select_in_cluster(all, pts, u, InClusterMode::kRandom, 7));
  CHECK(r < 3);
  CHECK_THROWS_AS(select_in_cluster(std::vector<Index>{}, pts, u, InClusterMode::kCentroid, 0), ContractViolation);
  CHECK(in_cluster_mode_from_string(to_string(InClusterMode::kCentroid)) == InClusterMode::kCentroid);
}

TEST_CASE("hal_query examples") {
  HalConfig cfg;
  cfg.k_neighbors = 5;
  SUBCASE("exhaustion") {
    const FeatureMatrix f(blob_points({point({0, 0})}, 12, 1.0, 1));
    const auto pool = PoolState::from_labeled({0, 5}, 12);
    const std::vector<double> u(12, 1.0);
    const auto q = hal_query(f, u, pool, 10, cfg);
    CHECK(std::set<Index>(q.indices.begin(), q.indices.end()) ==
          std::set<Index>(pool.unlabeled().begin(), pool.unlabeled().end()));
  }
  SUBCASE("one sample per blob") {
    cfg.cluster_multiplier = 1.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      cfg.seed = seed;
      const FeatureMatrix f(blob_points({point({0, 0, 0}), point({30, 0, 0})}, 25, 1.0, seed));
      const std::vector<double> u(50, 1.0);
      const auto q = hal_query(f, u, PoolState::from_labeled({}, 50), 2, cfg);
      REQUIRE(q.indices.size() == 2);
      CHECK((q.indices[0] < 25) != (q.indices[1] < 25));
    }
  }
  SUBCASE("the most uncertain blob wins a single query") {
    const FeatureMatrix f(blob_points({point({0, 0}), point({40, 0}), point({0, 40})}, 20, 1.0, 3));
    std::vector<double> u(60, 0.1);
    for (std::size_t i = 40; i < 60; ++i) u[i] = 0.9;
    const auto q = hal_query(f, u, PoolState::from_labeled({}, 60), 1, cfg);
    REQUIRE(q.indices.size() == 1);
    CHECK(q.indices[0] >= 40);
  }
  SUBCASE("single-sample last batch") {
    cfg.minibatch_size = 5;
    const FeatureMatrix f(blob_points({point({0, 0})}, 11, 1.0, 2));
    const std::vector<double> u(11, 0.5);
    const auto q = hal_query(f, u, PoolState::from_labeled({}, 11), 11, cfg);
    CHECK(q.indices.size() == 11);
    CHECK(q.per_batch.back().size == 1);
  }
  SUBCASE("errors") {
    const FeatureMatrix f(blob_points({point({0, 0})}, 6, 1.0, 2));
    CHECK_THROWS_AS(hal_query(f, std::vector<double>(6, 1.0), PoolState::from_labeled({0}, 6), 6, cfg),
                    ContractViolation);
    CHECK_THROWS_AS(hal_query(f, std::vector<double>(5, 1.0), PoolState::from_labeled({}, 6), 2, cfg),
                    ContractViolation);
    CHECK_THROWS_AS(hal_query(f, std::vector<double>(6, -1.0), PoolState::from_labeled({}, 6), 2, cfg),
                    ContractViolation);
    cfg.cluster_multiplier = 0.5;
    CHECK_THROWS_AS(hal_query(f, std::vector<double>(6, 1.0), PoolState::from_labeled({}, 6), 2, cfg),
                    ContractViolation);
  }
}

TEST_CASE("hal_query contracts on random instances") {
  Rng rng(99);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t n = 6 + rng() % 120;
    RowMatrix x(static_cast<Eigen::Index>(n), 3);
    for (auto& v : x.reshaped()) v = g(rng);
    const FeatureMatrix f(x);
    std::vector<Index> perm = iota_vec(n);
    std::shuffle(perm.begin(), perm.end(), rng);
    perm.resize(rng() % (n / 2));
    const auto pool = PoolState::from_labeled(perm, n);
    const std::size_t b = rng() % (pool.unlabeled().size() + 1);
    HalConfig cfg;
    cfg.minibatch_size = 2 + rng() % 60;
    cfg.cluster_multiplier = 1.0 + 3.0 * u01(rng);
    cfg.k_neighbors = 1 + rng() % 12;
    cfg.in_cluster = static_cast<InClusterMode>(rng() % 3);
    cfg.seed = rng();
    std::vector<double> u(n), scaled(n);
    for (std::size_t i = 0; i < n; ++i) {
      u[i] = u01(rng);
      scaled[i] = 3.7 * u[i];
    }
    INFO("trial " << trial << " n=" << n << " b=" << b);
    const auto q = hal_query(f, u, pool, b, cfg);
    check_query_contract(q, pool, b);
    const auto qs = hal_query(f, scaled, pool, b, cfg);
    CHECK(std::set<Index>(q.indices.begin(), q.indices.end()) == std::set<Index>(qs.indices.begin(), qs.indices.end()));
    CHECK(hal_query(f, u, pool, b, cfg).indices == q.indices);
  }
}

TEST_CASE("with lambda = 1 every cluster is hit once") {
  HalConfig cfg;
  cfg.cluster_multiplier = 1.0;
  cfg.k_neighbors = 4;
  const FeatureMatrix f(blob_points({point({0, 0}), point({50, 0}), point({0, 50}), point({50, 50})}, 15, 1.0, 8));
  const std::vector<double> u(60, 0.3);
  const auto q = hal_query(f, u, PoolState::from_labeled({}, 60), 4, cfg);
  REQUIRE(q.per_batch.size() == 1);
  CHECK(q.per_batch[0].clusters == 4);
  CHECK(q.per_batch[0].fallback_picks == 0);
  std::set<std::size_t> blobs;
  for (Index i : q.indices) blobs.insert(i / 15);
  CHECK(blobs.size() == 4);
}
