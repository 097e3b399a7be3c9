#include <chrono>
#include <cmath>
#include <numeric>

#include "hssal/error.hpp"
#include "hssal/harness.hpp"
#include "hssal/random.hpp"

namespace hssal::harness {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

enum StreamTag : std::uint64_t { kInitialPoolStream = 21, kRoundStream, kQueryStream };

}  // namespace

void ExperimentConfig::validate() const {
  HSSAL_REQUIRE(train_fraction > 0.0 && val_fraction >= 0.0 && test_fraction > 0.0, "split fractions out of range");
  HSSAL_REQUIRE(std::abs(train_fraction + val_fraction + test_fraction - 1.0) < 1e-9, "split fractions must sum to 1");
  HSSAL_REQUIRE(!ratios.empty(), "at least one labeling ratio is required");
  HSSAL_REQUIRE(!trial_seeds.empty(), "at least one trial seed is required");
  ssl.validate();
  strategy.hal.validate();
}

std::vector<Index> initial_labeled_set(std::size_t n_train, std::size_t count, std::uint64_t split_seed) {
  HSSAL_REQUIRE(count <= n_train, "initial labeled set larger than the training split");
  std::vector<Index> order(n_train);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(split_seed, {kInitialPoolStream}));
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(count);
  std::sort(order.begin(), order.end());
  return order;
}

std::uint64_t round_seed(std::uint64_t trial_seed, std::size_t round) {
  return derive_seed(trial_seed, {kRoundStream, round});
}

TrainedModel train_round(const FeatureMatrix& train_features, const LabelVector& train_labels, const PoolState& pool,
                         const ExperimentConfig& config, std::uint64_t seed) {
  ssl::SslConfig cfg = config.ssl;
  cfg.seed = seed;
  if (config.training == TrainingMode::kSupervised) cfg.lambda_st = 0.0;
  ssl::RoundOutput out = ssl::ssl_train_round(pool, train_features, train_labels, cfg);
  return TrainedModel{std::move(out.best_ema), std::move(out.final_params), out.best_val_oa};
}

MetricsRecord evaluate(const model::ClassifierParams& params, const FeatureMatrix& features, const LabelVector& labels) {
  const auto pred = model::argmax_rows(model::predict_probs(params, features));
  return compute_metrics(LabelVector(pred, labels.num_classes()), labels);
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
  const Dataset data = config.feature_path ? load_features(*config.feature_path) : gen_synthetic(config.synthetic);
  return run_experiment(config, data);
}

ExperimentResult run_experiment(const ExperimentConfig& config, const Dataset& data) {
  config.validate();
  HSSAL_REQUIRE(data.labels.size() == data.features.rows(), "dataset label count does not match features");

  ExperimentResult result;
  result.config_json = config_to_json(config);
  result.config_hash = fnv1a64(result.config_json);

  const Split split = stratified_split(data.labels, config.val_fraction, config.test_fraction, config.split_seed);
  HSSAL_REQUIRE(!split.train.empty() && !split.test.empty(), "split leaves an empty train or test set");
  const FeatureMatrix train_x(data.features.gather(split.train));
  const LabelVector train_y = data.labels.gather(split.train);
  const FeatureMatrix test_x(data.features.gather(split.test));
  const LabelVector test_y = data.labels.gather(split.test);

  const BudgetSchedule schedule = make_budget_schedule(config.ratios, split.train.size());
  if (schedule.initial_labeled == 0) {
    throw ScheduleError("first ratio yields an empty initial labeled set for " + std::to_string(split.train.size()) +
                        " training samples");
  }
  const std::vector<Index> initial = initial_labeled_set(split.train.size(), schedule.initial_labeled, config.split_seed);

  for (std::uint64_t trial_seed : config.trial_seeds) {
    TrialResult trial;
    trial.seed = trial_seed;
    trial.initial_labeled = initial;
    PoolState pool = PoolState::from_labeled(initial, split.train.size());
    std::vector<Index> pending;
    double pending_seconds = 0.0;
    std::optional<model::ClassifierParams> carried;

    for (std::size_t r = 0; r < config.ratios.size(); ++r) {
      const std::uint64_t seed = round_seed(trial_seed, r);
      if (pool.labeled().size() != schedule.cumulative_labeled(r)) {
        throw ContractViolation("round " + std::to_string(r + 1) + ": labeled pool has " +
                                std::to_string(pool.labeled().size()) + " samples, schedule expects " +
                                std::to_string(schedule.cumulative_labeled(r)));
      }
      RoundResult rr;
      rr.round = r;
      rr.ratio = config.ratios[r];
      rr.n_labeled = pool.labeled().size();
      rr.queried = std::move(pending);
      rr.seconds.query = pending_seconds;

      auto t0 = Clock::now();
      TrainedModel trained;
      if (config.warm_start && carried) {
        ssl::SslConfig cfg = config.ssl;
        cfg.seed = seed;
        if (config.training == TrainingMode::kSupervised) cfg.lambda_st = 0.0;
        auto out = ssl::ssl_train_round(pool, train_x, train_y, cfg, &*carried);
        trained = TrainedModel{std::move(out.best_ema), std::move(out.final_params), out.best_val_oa};
      } else {
        trained = train_round(train_x, train_y, pool, config, seed);
      }
      rr.seconds.train = seconds_since(t0);
      rr.best_val_oa = trained.best_val_oa;
      if (config.warm_start) carried = trained.params;

      t0 = Clock::now();
      const MetricsRecord m = evaluate(trained.ema.shadow, test_x, test_y);
      rr.seconds.eval = seconds_since(t0);
      rr.oa = m.oa;
      rr.aa = m.aa;
      rr.per_class_acc = m.per_class_acc;

      pending.clear();
      pending_seconds = 0.0;
      if (r + 1 < config.ratios.size()) {
        const std::size_t b = schedule.per_round_budgets[r];
        if (b > pool.unlabeled().size()) {
          throw ScheduleError("round " + std::to_string(r + 2) + ": budget " + std::to_string(b) +
                              " exceeds the unlabeled pool of " + std::to_string(pool.unlabeled().size()));
        }
        baselines::QueryStrategy strategy = config.strategy;
        strategy.seed = derive_seed(seed, {kQueryStream});
        t0 = Clock::now();
        const auto q = baselines::run_query(strategy, trained.ema.shadow, train_x, pool, b);
        pending_seconds = seconds_since(t0);
        if (q.indices.size() != b) {
          throw ContractViolation("round " + std::to_string(r + 2) + ": strategy returned " +
                                  std::to_string(q.indices.size()) + " indices for budget " + std::to_string(b));
        }
        pool = update_pools(pool, q.indices, train_y);
        pending = q.indices;
      }
      trial.rounds.push_back(std::move(rr));
      if (r + 1 == config.ratios.size()) result.final_model = model::Checkpoint{trained.params, trained.ema};
    }
    result.trials.push_back(std::move(trial));
  }
  return result;
}

std::vector<double> mean_oa_per_round(const ExperimentResult& r) {
  if (r.trials.empty()) return {};
  std::vector<double> out(r.trials.front().rounds.size(), 0.0);
  for (const auto& t : r.trials) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += t.rounds.at(i).oa;
  }
  for (double& v : out) v /= static_cast<double>(r.trials.size());
  return out;
}

}  // namespace hssal::harness
