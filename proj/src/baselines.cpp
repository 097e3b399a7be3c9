#include "hssal/baselines.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "hssal/error.hpp"
#include "hssal/random.hpp"

namespace hssal::baselines {

namespace {

Eigen::Index ei(std::size_t v) { return static_cast<Eigen::Index>(v); }

void check_budget(const PoolState& pool, std::size_t b) {
  HSSAL_REQUIRE(b <= pool.unlabeled().size(), "budget " + std::to_string(b) + " exceeds unlabeled pool of " +
                                                  std::to_string(pool.unlabeled().size()));
}

/// Top-b unlabeled indices by `score`, descending or ascending, ties to the smaller index.
QuerySet top_by_score(const PoolState& pool, std::size_t b, const std::vector<double>& score, bool descending) {
  check_budget(pool, b);
  std::vector<Index> order = pool.unlabeled();
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index c) {
    return descending ? score[a] > score[c] : score[a] < score[c];
  });
  order.resize(b);
  QuerySet q;
  q.indices = std::move(order);
  return q;
}

std::span<const double> row_span(const RowMatrix& m, Eigen::Index r) {
  return {m.data() + r * m.cols(), static_cast<std::size_t>(m.cols())};
}

}  // namespace

std::string to_string(StrategyKind k) {
  switch (k) {
    case StrategyKind::kRandom:
      return "random";
    case StrategyKind::kEntropy:
      return "entropy";
    case StrategyKind::kMargin:
      return "margin";
    case StrategyKind::kBald:
      return "bald";
    case StrategyKind::kCoreset:
      return "coreset";
    case StrategyKind::kBadge:
      return "badge";
    case StrategyKind::kHal:
      return "hal";
  }
  return "hal";
}

StrategyKind strategy_from_string(const std::string& s) {
  for (auto k : {StrategyKind::kRandom, StrategyKind::kEntropy, StrategyKind::kMargin, StrategyKind::kBald,
                 StrategyKind::kCoreset, StrategyKind::kBadge, StrategyKind::kHal}) {
    if (to_string(k) == s) return k;
  }
  throw ContractViolation("unknown query strategy '" + s + "'");
}

double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

double margin(std::span<const double> p) {
  HSSAL_REQUIRE(p.size() >= 2, "margin needs at least two classes");
  double first = -std::numeric_limits<double>::infinity();
  double second = first;
  for (double v : p) {
    if (v > first) {
      second = first;
      first = v;
    } else if (v > second) {
      second = v;
    }
  }
  return first - second;
}

double mutual_information(const RowMatrix& passes) {
  HSSAL_REQUIRE(passes.rows() >= 1, "mutual information needs at least one pass");
  // Mean KL(p_t || p_mean), with the mean taken as p_0 plus the mean offset so
  // identical passes give exactly zero.
  const Eigen::RowVectorXd base = passes.row(0);
  const Eigen::RowVectorXd mean = base + (passes.rowwise() - base).colwise().mean();
  double mi = 0.0;
  for (Eigen::Index t = 0; t < passes.rows(); ++t) {
    for (Eigen::Index c = 0; c < passes.cols(); ++c) {
      const double p = passes(t, c);
      if (p > 0.0) mi += p * (std::log(p) - std::log(mean[c]));
    }
  }
  return std::max(0.0, mi / static_cast<double>(passes.rows()));
}

QuerySet entropy_query(const RowMatrix& probs, const PoolState& pool, std::size_t b) {
  HSSAL_REQUIRE(static_cast<std::size_t>(probs.rows()) >= pool.n_total(), "probability matrix does not cover the pool");
  std::vector<double> score(static_cast<std::size_t>(probs.rows()), 0.0);
  for (Index i : pool.unlabeled()) score[i] = entropy(row_span(probs, ei(i)));
  return top_by_score(pool, b, score, true);
}

QuerySet margin_query(const RowMatrix& probs, const PoolState& pool, std::size_t b) {
  HSSAL_REQUIRE(static_cast<std::size_t>(probs.rows()) >= pool.n_total(), "probability matrix does not cover the pool");
  std::vector<double> score(static_cast<std::size_t>(probs.rows()), 0.0);
  for (Index i : pool.unlabeled()) score[i] = margin(row_span(probs, ei(i)));
  return top_by_score(pool, b, score, false);
}

QuerySet bald_query(const model::ClassifierParams& params, const FeatureMatrix& features, const PoolState& pool,
                    std::size_t b, std::size_t t, std::uint64_t seed) {
  check_budget(pool, b);
  HSSAL_REQUIRE(t >= 1, "BALD needs at least one pass");
  std::vector<double> score(features.rows(), 0.0);
  for (Index i : pool.unlabeled()) {
    const RowMatrix passes = model::mc_dropout_predict(params, features.row(i), t, derive_seed(seed, {i}));
    score[i] = mutual_information(passes);
  }
  return top_by_score(pool, b, score, true);
}

double coverage_radius(const RowMatrix& points, std::span<const Index> centers) {
  double radius = 0.0;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Index c : centers) best = std::min(best, (points.row(i) - points.row(ei(c))).norm());
    radius = std::max(radius, best);
  }
  return radius;
}

QuerySet coreset_query(const FeatureMatrix& features, const PoolState& pool, std::size_t b) {
  check_budget(pool, b);
  HSSAL_REQUIRE(pool.n_total() <= features.rows(), "pool extends beyond the feature matrix");
  QuerySet q;
  if (b == 0) return q;
  const RowMatrix& x = features.matrix();
  const auto& unl = pool.unlabeled();
  std::vector<double> mind(unl.size(), std::numeric_limits<double>::infinity());
  auto absorb = [&](Eigen::RowVectorXd center) {
    for (std::size_t i = 0; i < unl.size(); ++i) mind[i] = std::min(mind[i], (x.row(ei(unl[i])) - center).squaredNorm());
  };
  std::vector<char> taken(unl.size(), 0);
  if (pool.labeled().empty()) {
    // No centers yet: start from the point farthest from the pool mean.
    Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(x.cols());
    for (Index i = 0; i < pool.n_total(); ++i) mean += x.row(ei(i));
    mean /= static_cast<double>(pool.n_total());
    std::size_t first = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < unl.size(); ++i) {
      const double d = (x.row(ei(unl[i])) - mean).squaredNorm();
      if (d > best) {
        best = d;
        first = i;
      }
    }
    taken[first] = 1;
    q.indices.push_back(unl[first]);
    absorb(x.row(ei(unl[first])));
  } else {
    for (Index l : pool.labeled()) absorb(x.row(ei(l)));
  }
  while (q.indices.size() < b) {
    std::size_t pick = unl.size();
    double best = -1.0;
    for (std::size_t i = 0; i < unl.size(); ++i) {
      if (!taken[i] && mind[i] > best) {
        best = mind[i];
        pick = i;
      }
    }
    taken[pick] = 1;
    q.indices.push_back(unl[pick]);
    absorb(x.row(ei(unl[pick])));
  }
  return q;
}

QuerySet badge_from_embeddings(const RowMatrix& embeddings, std::span<const Index> candidates, std::size_t b,
                               std::uint64_t seed, bool random_first) {
  HSSAL_REQUIRE(b <= candidates.size(), "budget exceeds the candidate set");
  QuerySet q;
  if (b == 0) return q;
  const std::size_t n = candidates.size();
  Rng rng(seed);
  std::vector<char> taken(n, 0);
  std::size_t first = 0;
  if (random_first) {
    first = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  } else {
    double best = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double nr = embeddings.row(ei(candidates[i])).squaredNorm();
      if (nr > best) {
        best = nr;
        first = i;
      }
    }
  }
  taken[first] = 1;
  q.indices.push_back(candidates[first]);
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) {
    d2[i] = (embeddings.row(ei(candidates[i])) - embeddings.row(ei(candidates[first]))).squaredNorm();
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  while (q.indices.size() < b) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!taken[i]) total += d2[i];
    }
    std::size_t pick = n;
    if (total > 0.0) {
      const double target = unit(rng) * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (taken[i] || d2[i] <= 0.0) continue;
        acc += d2[i];
        pick = i;
        if (acc >= target) break;
      }
    }
    if (pick == n) {
      std::vector<std::size_t> rest;
      for (std::size_t i = 0; i < n; ++i) {
        if (!taken[i]) rest.push_back(i);
      }
      pick = rest[std::uniform_int_distribution<std::size_t>(0, rest.size() - 1)(rng)];
    }
    taken[pick] = 1;
    q.indices.push_back(candidates[pick]);
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], (embeddings.row(ei(candidates[i])) - embeddings.row(ei(candidates[pick]))).squaredNorm());
    }
  }
  return q;
}

QuerySet badge_query(const model::ClassifierParams& params, const FeatureMatrix& features, const PoolState& pool,
                     std::size_t b, std::uint64_t seed, bool random_first) {
  check_budget(pool, b);
  const RowMatrix x = features.gather(pool.unlabeled());
  const RowMatrix emb = model::gradient_embeddings(params, x);
  std::vector<Index> local(pool.unlabeled().size());
  std::iota(local.begin(), local.end(), 0);
  QuerySet q = badge_from_embeddings(emb, local, b, seed, random_first);
  for (Index& i : q.indices) i = pool.unlabeled()[i];
  return q;
}

QuerySet random_query(const PoolState& pool, std::size_t b, std::uint64_t seed) {
  check_budget(pool, b);
  std::vector<Index> order = pool.unlabeled();
  Rng rng(seed);
  // Partial Fisher-Yates: the first b slots are a uniform sample without replacement.
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t j = std::uniform_int_distribution<std::size_t>(i, order.size() - 1)(rng);
    std::swap(order[i], order[j]);
  }
  order.resize(b);
  QuerySet q;
  q.indices = std::move(order);
  return q;
}

QuerySet run_query(const QueryStrategy& strategy, const model::ClassifierParams& params, const FeatureMatrix& features,
                   const PoolState& pool, std::size_t b) {
  const auto t0 = std::chrono::steady_clock::now();
  QuerySet q;
  switch (strategy.kind) {
    case StrategyKind::kRandom:
      q = random_query(pool, b, strategy.seed);
      break;
    case StrategyKind::kEntropy:
      q = entropy_query(model::predict_probs(params, features), pool, b);
      break;
    case StrategyKind::kMargin:
      q = margin_query(model::predict_probs(params, features), pool, b);
      break;
    case StrategyKind::kBald: {
      model::ClassifierParams p = params;
      if (strategy.bald_dropout >= 0.0) p.set_dropout_rate(strategy.bald_dropout);
      q = bald_query(p, features, pool, b, strategy.bald_passes, strategy.seed);
      break;
    }
    case StrategyKind::kCoreset:
      q = coreset_query(features, pool, b);
      break;
    case StrategyKind::kBadge:
      q = badge_query(params, features, pool, b, strategy.seed, strategy.badge_random_first);
      break;
    case StrategyKind::kHal: {
      const Eigen::VectorXd u = model::uncertainty_scores(params, features.matrix(), strategy.uncertainty_include_bias);
      hal::HalConfig cfg = strategy.hal;
      cfg.seed = strategy.seed;
      return hal::hal_query(features, {u.data(), static_cast<std::size_t>(u.size())}, pool, b, cfg);
    }
  }
  q.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return q;
}

}  // namespace hssal::baselines
