#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <doctest.h>

#include "hssal/random.hpp"
#include "hssal/baselines.hpp"
#include "hssal/error.hpp"

using namespace hssal;
using namespace hssal::baselines;

namespace {

RowMatrix prob_rows(std::initializer_list<std::initializer_list<double>> rows) {
  RowMatrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index r = 0;
  for (const auto& row : rows) {
    Eigen::Index c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

double exhaustive_k_center(const RowMatrix& x, const std::vector<Index>& fixed, const std::vector<Index>& candidates,
                           std::size_t b) {
  double best = std::numeric_limits<double>::infinity();
  std::vector<char> pick(candidates.size(), 0);
  std::fill(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(b), 1);
  std::sort(pick.begin(), pick.end());
  do {
    std::vector<Index> centers = fixed;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      if (pick[i]) centers.push_back(candidates[i]);
    }
    best = std::min(best, coverage_radius(x, centers));
  } while (std::next_permutation(pick.begin(), pick.end()));
  return best;
}

}  // namespace

TEST_CASE("entropy and margin scores") {
  const std::vector<double> half{0.5, 0.5};
  CHECK(entropy(half) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(entropy(std::vector<double>{1.0, 0.0, 0.0}) == 0.0);
  CHECK(entropy(std::vector<double>(5, 0.2)) == doctest::Approx(std::log(5.0)));
  CHECK(margin(half) == 0.0);
  CHECK(margin(std::vector<double>{0.9, 0.1}) == doctest::Approx(0.8));
  CHECK(margin(std::vector<double>{0.0, 1.0, 0.0}) == 1.0);

  SUBCASE("class-order permutation equivariance") {
    Rng rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> p(6);
      for (auto& v : p) v = u(rng);
      const double s = std::accumulate(p.begin(), p.end(), 0.0);
      for (auto& v : p) v /= s;
      RowMatrix passes(3, 6);
      for (auto& v : passes.reshaped()) v = u(rng);
      for (Eigen::Index r = 0; r < 3; ++r) passes.row(r) /= passes.row(r).sum();
      std::vector<int> perm(6);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      std::vector<double> q(6);
      RowMatrix qp(3, 6);
      for (int c = 0; c < 6; ++c) {
        q[static_cast<std::size_t>(c)] = p[static_cast<std::size_t>(perm[static_cast<std::size_t>(c)])];
        qp.col(c) = passes.col(perm[static_cast<std::size_t>(c)]);
      }
      CHECK(entropy(q) == doctest::Approx(entropy(p)).epsilon(1e-14));
      CHECK(margin(q) == doctest::Approx(margin(p)).epsilon(1e-14));
      CHECK(mutual_information(qp) == doctest::Approx(mutual_information(passes)).epsilon(1e-12));
    }
  }
}

TEST_CASE("entropy and margin queries on three-sample fixtures") {
  const auto pool = PoolState::from_labeled({}, 3);
  SUBCASE("entropy") {
    const auto p = prob_rows({{1.0, 0.0, 0.0}, {1.0 / 3, 1.0 / 3, 1.0 / 3}, {0.7, 0.2, 0.1}});
    CHECK(entropy_query(p, pool, 1).indices == std::vector<Index>{1});
    CHECK(entropy_query(p, pool, 3).indices == std::vector<Index>{1, 2, 0});
  }
  SUBCASE("margin") {
    const auto p = prob_rows({{0.9, 0.1}, {0.6, 0.4}, {1.0, 0.0}});
    CHECK(margin_query(p, pool, 1).indices == std::vector<Index>{1});
    CHECK(margin_query(p, pool, 3).indices == std::vector<Index>{1, 0, 2});
  }
  SUBCASE("labeled samples are skipped and ties go to the smaller index") {
    const auto p = prob_rows({{0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}});
    CHECK(entropy_query(p, PoolState::from_labeled({0}, 3), 1).indices == std::vector<Index>{1});
    CHECK_THROWS_AS(entropy_query(p, PoolState::from_labeled({0}, 3), 3), ContractViolation);
  }
}

TEST_CASE("mutual information") {
  CHECK(mutual_information(prob_rows({{1.0, 0.0}, {0.0, 1.0}})) == doctest::Approx(std::log(2.0)));
  CHECK(mutual_information(prob_rows({{0.3, 0.7}, {0.3, 0.7}})) == doctest::Approx(0.0).epsilon(1e-15));
  Rng rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    RowMatrix m(1 + trial % 9, 4);
    for (auto& v : m.reshaped()) v = u(rng);
    for (Eigen::Index r = 0; r < m.rows(); ++r) m.row(r) /= m.row(r).sum();
    CHECK(mutual_information(m) >= -1e-9);
  }
}

TEST_CASE("BALD") {
  const auto params0 = model::ClassifierParams::initialize({4, 6, 3}, 0.0, 2);
  RowMatrix x(8, 4);
  Rng rng(1);
  std::normal_distribution<double> g(0.0, 1.0);
  for (auto& v : x.reshaped()) v = g(rng);
  const FeatureMatrix f(x);
  const auto pool = PoolState::from_labeled({0}, 8);
  SUBCASE("no dropout, no disagreement") {
    for (Index i = 0; i < 8; ++i) {
      CHECK(std::abs(mutual_information(model::mc_dropout_predict(params0, f.row(i), 50, i))) == 0.0);
    }
    const auto q = bald_query(params0, f, pool, 3, 50, 4);
    CHECK(q.indices.size() == 3);
  }
  SUBCASE("seeded and budget-exact") {
    const auto p = model::ClassifierParams::initialize({4, 6, 3}, 0.5, 2);
    const auto a = bald_query(p, f, pool, 4, 20, 9);
    CHECK(a.indices == bald_query(p, f, pool, 4, 20, 9).indices);
    CHECK(a.indices.size() == 4);
    for (Index i : a.indices) CHECK(i != 0);
  }
}

TEST_CASE("core-set") {
  SUBCASE("points on a line") {
    RowMatrix x(10, 1);
    for (Eigen::Index i = 0; i < 10; ++i) x(i, 0) = static_cast<double>(i);
    CHECK(coreset_query(FeatureMatrix(x), PoolState::from_labeled({0}, 10), 1).indices == std::vector<Index>{9});
    CHECK(coreset_query(FeatureMatrix(x), PoolState::from_labeled({0}, 10), 2).indices == std::vector<Index>{9, 4});
  }
  SUBCASE("empty labeled set starts farthest from the mean") {
    RowMatrix x(4, 2);
    x << 0, 0, 1, 0, 0, 1, 5, 5;
    CHECK(coreset_query(FeatureMatrix(x), PoolState::from_labeled({}, 4), 1).indices == std::vector<Index>{3});
  }
  SUBCASE("greedy radius within twice the optimum") {
    Rng rng(21);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t n = 4 + static_cast<std::size_t>(trial) % 9;
      RowMatrix x(static_cast<Eigen::Index>(n), 2);
      for (auto& v : x.reshaped()) v = g(rng);
      std::vector<Index> labeled;
      if (trial % 2 == 1) labeled.push_back(rng() % n);
      const auto pool = PoolState::from_labeled(labeled, n);
      const std::size_t b = 1 + static_cast<std::size_t>(trial) % 3;
      const auto q = coreset_query(FeatureMatrix(x), pool, b);
      std::vector<Index> centers = labeled;
      centers.insert(centers.end(), q.indices.begin(), q.indices.end());
      const double greedy = coverage_radius(x, centers);
      const double opt = exhaustive_k_center(x, labeled, pool.unlabeled(), b);
      CHECK(greedy <= 2.0 * opt + 1e-12);
    }
  }
}

TEST_CASE("BADGE") {
  SUBCASE("b = 1 takes the largest gradient embedding") {
    RowMatrix emb(4, 2);
    emb << 0.1, 0, 0, 0.3, -2, 1, 0.5, 0.5;
    const std::vector<Index> cand{0, 1, 2, 3};
    CHECK(badge_from_embeddings(emb, cand, 1, 0, false).indices == std::vector<Index>{2});
  }
  SUBCASE("identical embeddings still fill the budget") {
    const RowMatrix emb = RowMatrix::Ones(6, 3);
    const std::vector<Index> cand{0, 1, 2, 3, 4, 5};
    const auto q = badge_from_embeddings(emb, cand, 4, 3, false);
    CHECK(std::set<Index>(q.indices.begin(), q.indices.end()).size() == 4);
  }
  SUBCASE("large-norm region dominates D^2 seeding") {
    // Ten confidently-wrong samples with large embeddings among ninety small ones.
    Rng rng(8);
    std::normal_distribution<double> g(0.0, 1.0);
    RowMatrix emb(100, 4);
    for (Eigen::Index i = 0; i < 100; ++i) {
      for (Eigen::Index k = 0; k < 4; ++k) emb(i, k) = (i < 10 ? 5.0 : 0.2) * g(rng);
    }
    std::vector<Index> cand(100);
    std::iota(cand.begin(), cand.end(), 0);
    std::size_t hits = 0, total = 0;
    for (std::uint64_t t = 0; t < 100; ++t) {
      const auto q = badge_from_embeddings(emb, cand, 3, t, true);
      for (Index i : q.indices) {
        hits += i < 10 ? 1 : 0;
        ++total;
      }
    }
    CHECK(static_cast<double>(hits) / static_cast<double>(total) > 0.1);
  }
  SUBCASE("model-driven query is exact and disjoint") {
    const auto params = model::ClassifierParams::initialize({3, 5, 2}, 0.1, 1);
    const FeatureMatrix f(RowMatrix::Random(20, 3));
    const auto pool = PoolState::from_labeled({1, 2, 3}, 20);
    const auto q = badge_query(params, f, pool, 6, 4);
    CHECK(q.indices.size() == 6);
    for (Index i : q.indices) CHECK(pool.is_unlabeled(i));
    CHECK(q.indices == badge_query(params, f, pool, 6, 4).indices);
  }
}

TEST_CASE("random sampling") {
  const auto pool = PoolState::from_labeled({0, 3}, 22);
  const auto all = random_query(pool, 20, 1);
  CHECK(std::set<Index>(all.indices.begin(), all.indices.end()) ==
        std::set<Index>(pool.unlabeled().begin(), pool.unlabeled().end()));
  CHECK(random_query(pool, 5, 9).indices == random_query(pool, 5, 9).indices);
  CHECK_THROWS_AS(random_query(pool, 21, 0), ContractViolation);

  SUBCASE("per-index frequency is uniform") {
    const auto p = PoolState::from_labeled({}, 20);
    std::vector<double> count(20, 0.0);
    const int trials = 10000;
    for (int t = 0; t < trials; ++t) {
      for (Index i : random_query(p, 5, static_cast<std::uint64_t>(t)).indices) count[i] += 1.0;
    }
    const double mean = trials * 0.25, sd = std::sqrt(trials * 0.25 * 0.75);
    for (double c : count) CHECK(std::abs(c - mean) <= 3.0 * sd);
  }
}

TEST_CASE("every strategy honors the query contract") {
  const auto params = model::ClassifierParams::initialize({4, 8, 3}, 0.1, 3);
  Rng rng(10);
  std::normal_distribution<double> g(0.0, 1.0);
  RowMatrix x(40, 4);
  for (auto& v : x.reshaped()) v = g(rng);
  const FeatureMatrix f(x);
  const auto pool = PoolState::from_labeled({0, 7, 13, 22}, 40);
  for (auto kind : {StrategyKind::kRandom, StrategyKind::kEntropy, StrategyKind::kMargin, StrategyKind::kBald,
                    StrategyKind::kCoreset, StrategyKind::kBadge, StrategyKind::kHal}) {
    QueryStrategy s;
    s.kind = kind;
    s.seed = 5;
    s.bald_passes = 10;
    s.hal.k_neighbors = 5;
    INFO(to_string(kind));
    CHECK(strategy_from_string(to_string(kind)) == kind);
    for (std::size_t b : {std::size_t{0}, std::size_t{1}, std::size_t{9}, std::size_t{36}}) {
      const auto q = run_query(s, params, f, pool, b);
      CHECK(q.indices.size() == b);
      CHECK(std::set<Index>(q.indices.begin(), q.indices.end()).size() == b);
      for (Index i : q.indices) CHECK(pool.is_unlabeled(i));
      CHECK(run_query(s, params, f, pool, b).indices == q.indices);
    }
    CHECK_THROWS_AS(run_query(s, params, f, pool, 37), ContractViolation);
  }
  CHECK_THROWS_AS(strategy_from_string("vaal"), ContractViolation);
}
