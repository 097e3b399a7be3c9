#include "hssal/ssl.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "hssal/error.hpp"

namespace hssal::ssl {

namespace {

enum StreamTag : std::uint64_t {
  kInitStream = 1,
  kLabeledOrderStream,
  kUnlabeledOrderStream,
  kDropoutStream,
  kLabeledViewStream,
  kWeakViewStream,
  kStrongViewStream,
  kValidationStream,
};

void check_distribution(std::span<const double> p) {
  HSSAL_REQUIRE(!p.empty(), "empty probability row");
  double sum = 0.0;
  for (double v : p) {
    HSSAL_REQUIRE(std::isfinite(v) && v >= -1e-12, "probability row has a negative or non-finite entry");
    sum += v;
  }
  HSSAL_REQUIRE(std::abs(sum - 1.0) <= 1e-6, "probability row does not sum to one");
}

std::size_t argmax(std::span<const double> p) {
  return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
}

/// Cycles through a shuffled index list, reshuffling on each pass.
class IndexCycler {
 public:
  IndexCycler(std::vector<Index> items, std::uint64_t seed) : items_(std::move(items)), rng_(seed) { reshuffle(); }

  std::vector<Index> next(std::size_t count) {
    std::vector<Index> out;
    count = std::min(count, items_.size());
    out.reserve(count);
    while (out.size() < count) {
      if (pos_ == items_.size()) reshuffle();
      out.push_back(items_[pos_++]);
    }
    return out;
  }

 private:
  void reshuffle() {
    std::shuffle(items_.begin(), items_.end(), rng_);
    pos_ = 0;
  }

  std::vector<Index> items_;
  Rng rng_;
  std::size_t pos_ = 0;
};

double accuracy(const model::ClassifierParams& params, const FeatureMatrix& features, const LabelVector& oracle,
                std::span<const Index> indices) {
  if (indices.empty()) return 0.0;
  const RowMatrix x = features.gather(indices);
  const auto pred = model::argmax_rows(model::predict_probs(params, x));
  std::size_t hit = 0;
  for (std::size_t i = 0; i < indices.size(); ++i) hit += pred[i] == oracle[indices[i]] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(indices.size());
}

}  // namespace

std::string to_string(MaskVariant v) {
  switch (v) {
    case MaskVariant::kFixed:
      return "fixed";
    case MaskVariant::kClassAdaptive:
      return "class_adaptive";
    case MaskVariant::kSelfAdaptive:
      return "self_adaptive";
    case MaskVariant::kSoftGaussian:
      return "soft_gaussian";
  }
  return "fixed";
}

MaskVariant mask_variant_from_string(const std::string& s) {
  if (s == "fixed" || s == "fixmatch") return MaskVariant::kFixed;
  if (s == "class_adaptive" || s == "flexmatch") return MaskVariant::kClassAdaptive;
  if (s == "self_adaptive" || s == "freematch") return MaskVariant::kSelfAdaptive;
  if (s == "soft_gaussian" || s == "softmatch") return MaskVariant::kSoftGaussian;
  throw ContractViolation("unknown SSL mask variant '" + s + "'");
}

void SslConfig::validate() const {
  HSSAL_REQUIRE(tau > 0.0 && tau < 1.0, "tau must lie in (0, 1)");
  HSSAL_REQUIRE(lambda_st >= 0.0, "lambda_st must be nonnegative");
  HSSAL_REQUIRE(mask_momentum >= 0.0 && mask_momentum < 1.0, "mask momentum must lie in [0, 1)");
  HSSAL_REQUIRE(weak_sigma >= 0.0 && strong_sigma >= 0.0, "perturbation sigmas must be nonnegative");
  HSSAL_REQUIRE(weak_sigma <= strong_sigma, "weak perturbation must not exceed strong perturbation");
  HSSAL_REQUIRE(strong_drop >= 0.0 && strong_drop < 1.0, "strong_drop must lie in [0, 1)");
  HSSAL_REQUIRE(batch_size >= 1 && unlabeled_ratio >= 1, "batch size and unlabeled ratio must be positive");
  HSSAL_REQUIRE(hidden >= 1, "hidden width must be positive");
  HSSAL_REQUIRE(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
  HSSAL_REQUIRE(ema_alpha >= 0.0 && ema_alpha < 1.0, "EMA decay must lie in [0, 1)");
}

RowMatrix perturb(const RowMatrix& features, Perturbation mode, const SslConfig& config, std::uint64_t seed) {
  const double sigma = mode == Perturbation::kWeak ? config.weak_sigma : config.strong_sigma;
  HSSAL_REQUIRE(sigma >= 0.0, "perturbation sigma must be nonnegative");
  RowMatrix out = features;
  Rng rng(seed);
  if (sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, sigma);
    for (auto& v : out.reshaped<Eigen::RowMajor>()) v += noise(rng);
  }
  if (mode == Perturbation::kStrong && config.strong_drop > 0.0) {
    std::bernoulli_distribution drop(config.strong_drop);
    for (auto& v : out.reshaped<Eigen::RowMajor>()) {
      if (drop(rng)) v = 0.0;
    }
  }
  return out;
}

MaskState MaskState::initial(std::size_t num_classes) {
  HSSAL_REQUIRE(num_classes >= 2, "mask state needs at least two classes");
  MaskState s;
  s.num_classes = num_classes;
  const double uniform = 1.0 / static_cast<double>(num_classes);
  s.confident_counts.assign(num_classes, 0.0);
  s.global_threshold = uniform;
  s.class_mean_prob.assign(num_classes, uniform);
  s.conf_mean = uniform;
  s.conf_var = 1.0;
  return s;
}

std::vector<double> class_thresholds(const MaskState& state, const SslConfig& config) {
  const std::size_t c = state.num_classes;
  std::vector<double> t(c, config.tau);
  switch (config.variant) {
    case MaskVariant::kFixed:
    case MaskVariant::kSoftGaussian:
      break;
    case MaskVariant::kClassAdaptive: {
      const double mx = *std::max_element(state.confident_counts.begin(), state.confident_counts.end());
      if (mx > 0.0) {
        for (std::size_t k = 0; k < c; ++k) t[k] = config.tau * (state.confident_counts[k] / mx);
      }
      break;
    }
    case MaskVariant::kSelfAdaptive: {
      const double mx = *std::max_element(state.class_mean_prob.begin(), state.class_mean_prob.end());
      const double global = std::min(state.global_threshold, config.tau);
      for (std::size_t k = 0; k < c; ++k) t[k] = mx > 0.0 ? global * (state.class_mean_prob[k] / mx) : global;
      break;
    }
  }
  return t;
}

MaskDecision mask_weight(const MaskState& state, std::span<const double> probs_row, const SslConfig& config) {
  check_distribution(probs_row);
  HSSAL_REQUIRE(probs_row.size() == state.num_classes, "probability row length does not match mask state");
  const std::size_t best = argmax(probs_row);
  const double conf = probs_row[best];
  MaskDecision d;
  d.pseudo_label = static_cast<Label>(best);
  if (config.variant == MaskVariant::kSoftGaussian) {
    if (conf >= state.conf_mean) {
      d.weight = 1.0;
    } else {
      const double var = std::max(state.conf_var, 1e-12);
      const double diff = conf - state.conf_mean;
      d.weight = std::max(std::exp(-diff * diff / (2.0 * var)), std::numeric_limits<double>::min());
    }
    return d;
  }
  const std::vector<double> t = class_thresholds(state, config);
  d.weight = conf >= t[best] ? 1.0 : 0.0;
  return d;
}

MaskState update_mask_state(const MaskState& state, const RowMatrix& weak_probs, const SslConfig& config) {
  HSSAL_REQUIRE(static_cast<std::size_t>(weak_probs.cols()) == state.num_classes, "mask state class count mismatch");
  if (weak_probs.rows() == 0) return state;
  MaskState s = state;
  const double m = config.mask_momentum;
  const auto n = static_cast<double>(weak_probs.rows());
  const Eigen::VectorXd conf = weak_probs.rowwise().maxCoeff();
  switch (config.variant) {
    case MaskVariant::kFixed:
      break;
    case MaskVariant::kClassAdaptive: {
      std::vector<double> batch(s.num_classes, 0.0);
      for (Eigen::Index i = 0; i < weak_probs.rows(); ++i) {
        Eigen::Index k = 0;
        weak_probs.row(i).maxCoeff(&k);
        if (conf(i) >= config.tau) batch[static_cast<std::size_t>(k)] += 1.0;
      }
      for (std::size_t k = 0; k < s.num_classes; ++k) {
        s.confident_counts[k] = m * s.confident_counts[k] + (1.0 - m) * batch[k];
      }
      break;
    }
    case MaskVariant::kSelfAdaptive: {
      s.global_threshold = m * s.global_threshold + (1.0 - m) * conf.mean();
      const Eigen::RowVectorXd mean_p = weak_probs.colwise().mean();
      for (std::size_t k = 0; k < s.num_classes; ++k) {
        s.class_mean_prob[k] = m * s.class_mean_prob[k] + (1.0 - m) * mean_p(static_cast<Eigen::Index>(k));
      }
      break;
    }
    case MaskVariant::kSoftGaussian: {
      const double mu = conf.mean();
      const double var = n > 1.0 ? (conf.array() - mu).square().sum() / (n - 1.0) : 0.0;
      s.conf_mean = m * s.conf_mean + (1.0 - m) * mu;
      s.conf_var = m * s.conf_var + (1.0 - m) * var;
      break;
    }
  }
  return s;
}

SelfTrainingResult self_training_loss(const model::ClassifierParams& params, const RowMatrix& weak_view,
                                      const RowMatrix& strong_view, const model::EmaState& ema,
                                      const MaskState& state, const SslConfig& config, Rng* dropout_rng) {
  HSSAL_REQUIRE(weak_view.rows() >= 1, "empty unlabeled batch");
  HSSAL_REQUIRE(weak_view.rows() == strong_view.rows() && weak_view.cols() == strong_view.cols(),
                "weak and strong views differ in shape");
  const RowMatrix weak_probs = model::predict_probs(ema.shadow, weak_view);
  SelfTrainingResult out;
  out.state = update_mask_state(state, weak_probs, config);
  const auto n = static_cast<std::size_t>(weak_probs.rows());
  std::vector<Label> targets(n);
  std::vector<double> weights(n);
  double weight_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::RowVectorXd row = weak_probs.row(static_cast<Eigen::Index>(i));
    const MaskDecision d = mask_weight(out.state, std::span<const double>(row.data(), static_cast<std::size_t>(row.size())),
                                       config);
    targets[i] = d.pseudo_label;
    weights[i] = d.weight;
    weight_sum += d.weight;
  }
  out.mask_rate = weight_sum / static_cast<double>(n);
  if (weight_sum == 0.0) {
    out.grad = model::zeros_like(params);
    return out;
  }
  auto lg = model::weighted_cross_entropy(params, strong_view, targets, weights, dropout_rng);
  out.loss = lg.loss;
  out.grad = std::move(lg.grad);
  return out;
}

std::pair<std::vector<Index>, std::vector<Index>> split_validation(std::span<const Index> labeled,
                                                                   const LabelVector& oracle, std::uint64_t seed) {
  std::vector<Index> sorted(labeled.begin(), labeled.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n_val = sorted.size() / 8;
  if (n_val == 0) return {sorted, {}};

  Rng rng(seed);
  std::vector<std::vector<Index>> by_class(oracle.num_classes());
  for (Index i : sorted) by_class[oracle[i]].push_back(i);
  struct Candidate {
    double key;
    double tiebreak;
    Index index;
  };
  std::vector<Candidate> candidates;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    // The last member of each class always stays in training.
    for (std::size_t k = 0; k + 1 < members.size(); ++k) {
      candidates.push_back({(static_cast<double>(k) + 0.5) / static_cast<double>(members.size()), unit(rng), members[k]});
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    return a.key != b.key ? a.key < b.key : a.tiebreak < b.tiebreak;
  });
  std::vector<Index> val;
  for (std::size_t i = 0; i < std::min(n_val, candidates.size()); ++i) val.push_back(candidates[i].index);
  std::sort(val.begin(), val.end());
  std::vector<Index> train;
  std::set_difference(sorted.begin(), sorted.end(), val.begin(), val.end(), std::back_inserter(train));
  return {train, val};
}

RoundOutput ssl_train_round(const PoolState& pool, const FeatureMatrix& features, const LabelVector& oracle,
                            const SslConfig& config, const model::ClassifierParams* warm_start) {
  config.validate();
  HSSAL_REQUIRE(!pool.labeled().empty(), "SSL round needs a nonempty labeled pool");
  HSSAL_REQUIRE(pool.n_total() <= features.rows() && pool.n_total() <= oracle.size(),
                "pool extends beyond the feature matrix");

  RoundOutput out;
  std::tie(out.train_indices, out.val_indices) =
      split_validation(pool.labeled(), oracle, derive_seed(config.seed, {kValidationStream}));
  const std::vector<Index>& eval_indices = out.val_indices.empty() ? out.train_indices : out.val_indices;

  const model::HeadShape shape{features.dim(), config.hidden, oracle.num_classes()};
  model::ClassifierParams params =
      model::ClassifierParams::initialize(shape, config.dropout, derive_seed(config.seed, {kInitStream}));
  if (warm_start != nullptr) {
    HSSAL_REQUIRE(warm_start->shape() == shape, "warm-start parameters have the wrong shape");
    params = *warm_start;
  }
  model::EmaState ema{params, config.ema_alpha};
  out.best_ema = ema;
  out.best_val_oa = -1.0;

  const bool use_unlabeled = config.lambda_st > 0.0 && !pool.unlabeled().empty();
  MaskState mask = MaskState::initial(oracle.num_classes());
  model::AdamW opt(params.size(), config.optimizer);
  IndexCycler labeled_order(out.train_indices, derive_seed(config.seed, {kLabeledOrderStream}));
  std::optional<IndexCycler> unlabeled_order;
  if (use_unlabeled) unlabeled_order.emplace(pool.unlabeled(), derive_seed(config.seed, {kUnlabeledOrderStream}));
  Rng dropout_rng(derive_seed(config.seed, {kDropoutStream}));

  const std::size_t total = config.epochs * config.iters_per_epoch;
  std::size_t iter = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t step = 0; step < config.iters_per_epoch; ++step, ++iter) {
      TraceRow row;
      row.iter = iter;
      const std::vector<Index> lab = labeled_order.next(config.batch_size);
      const RowMatrix x_lab = perturb(features.gather(lab), Perturbation::kWeak, config,
                                      derive_seed(config.seed, {kLabeledViewStream, iter}));
      const std::vector<Label> y_lab = oracle.gather(lab).values();
      auto sup = model::supervised_loss(params, x_lab, y_lab, &dropout_rng);
      row.sup_loss = sup.loss;
      Eigen::VectorXd grad = std::move(sup.grad.flat());

      if (use_unlabeled) {
        const std::vector<Index> unl = unlabeled_order->next(config.batch_size * config.unlabeled_ratio);
        const RowMatrix x_unl = features.gather(unl);
        const RowMatrix weak = perturb(x_unl, Perturbation::kWeak, config, derive_seed(config.seed, {kWeakViewStream, iter}));
        const RowMatrix strong =
            perturb(x_unl, Perturbation::kStrong, config, derive_seed(config.seed, {kStrongViewStream, iter}));
        auto st = self_training_loss(params, weak, strong, ema, mask, config, &dropout_rng);
        mask = std::move(st.state);
        row.st_loss = st.loss;
        row.mask_rate = st.mask_rate;
        grad += config.lambda_st * st.grad.flat();
      }

      model::ClassifierParams g = model::zeros_like(params);
      g.flat() = std::move(grad);
      opt.step(params, g, model::poly_lr(config.optimizer.lr, iter, total));
      ema = model::ema_update(ema, params);
      out.trace.push_back(row);
    }
    const double val_oa = accuracy(ema.shadow, features, oracle, eval_indices);
    if (!out.trace.empty()) out.trace.back().val_oa = val_oa;
    if (val_oa >= out.best_val_oa) {
      out.best_val_oa = val_oa;
      out.best_ema = ema;
      out.best_epoch = epoch;
    }
  }
  if (out.best_val_oa < 0.0) out.best_val_oa = accuracy(ema.shadow, features, oracle, eval_indices);
  out.final_params = params;
  return out;
}

std::string trace_csv(const std::vector<TraceRow>& trace) {
  std::ostringstream os;
  os.precision(17);
  os << "iter,sup_loss,st_loss,mask_rate,val_oa\n";
  for (const auto& r : trace) {
    os << r.iter << ',' << r.sup_loss << ',' << r.st_loss << ',' << r.mask_rate << ',';
    if (r.val_oa) os << *r.val_oa;
    os << '\n';
  }
  return os.str();
}

}  // namespace hssal::ssl
