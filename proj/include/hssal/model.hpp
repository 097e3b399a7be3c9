#pragma once

// Classifier head over frozen embeddings:
//   layer norm -> D x H linear -> GELU -> dropout -> H x C linear -> softmax.
// All parameters live in one flat vector so optimizer, EMA, checkpointing and
// finite-difference checks can treat them uniformly; typed block views are
// provided on top.

#include <cstdint>
#include <optional>
#include <span>
#include <string>

#include <Eigen/Dense>

#include "hssal/core.hpp"
#include "hssal/random.hpp"

namespace hssal::model {

struct HeadShape {
  std::size_t dim = 384;
  std::size_t hidden = 128;
  std::size_t classes = 2;

  bool operator==(const HeadShape&) const = default;
};

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kDefaultDropout = 0.1;

using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

class ClassifierParams {
 public:
  ClassifierParams() = default;
  /// All-zero parameters (layer-norm scale included).
  ClassifierParams(HeadShape shape, double dropout_rate);

  /// PyTorch-style default init: layer-norm scale 1 / shift 0, linear layers
  /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  static ClassifierParams initialize(HeadShape shape, double dropout_rate, std::uint64_t seed);

  const HeadShape& shape() const noexcept { return shape_; }
  double dropout_rate() const noexcept { return dropout_rate_; }
  void set_dropout_rate(double rate);

  std::size_t size() const noexcept { return static_cast<std::size_t>(flat_.size()); }
  Eigen::VectorXd& flat() noexcept { return flat_; }
  const Eigen::VectorXd& flat() const noexcept { return flat_; }

  VecMap norm_scale();
  VecMap norm_shift();
  MatMap w1();
  VecMap b1();
  MatMap w2();
  VecMap b2();
  ConstVecMap norm_scale() const;
  ConstVecMap norm_shift() const;
  ConstMatMap w1() const;
  ConstVecMap b1() const;
  ConstMatMap w2() const;
  ConstVecMap b2() const;

  /// Offset of the final-layer weight block (w2 then b2 follow contiguously).
  std::size_t classifier_offset() const noexcept;

  bool all_finite() const { return flat_.allFinite(); }

 private:
  HeadShape shape_{};
  double dropout_rate_ = 0.0;
  Eigen::VectorXd flat_;
};

/// Zero-valued parameter vector with the layout of `like`; used for gradients.
ClassifierParams zeros_like(const ClassifierParams& like);

/// Intermediate activations of one forward pass over a batch.
struct ForwardPass {
  RowMatrix normalized;  ///< layer-norm output before affine, B x D
  RowMatrix pre;         ///< hidden pre-activation, B x H
  RowMatrix hidden;      ///< last-layer input after GELU and dropout, B x H
  RowMatrix keep_scale;  ///< dropout multipliers (0 or 1/(1-p)); empty when dropout is off
  RowMatrix logits;      ///< B x C
  RowMatrix probs;       ///< B x C
};

/// `rng == nullptr` disables dropout.
ForwardPass forward(const ClassifierParams& params, const RowMatrix& x, Rng* rng);

double gelu(double z);

/// N x C softmax probabilities. With a seed, dropout is sampled from it.
RowMatrix predict_probs(const ClassifierParams& params, const RowMatrix& features,
                        std::optional<std::uint64_t> dropout_seed = std::nullopt);
RowMatrix predict_probs(const ClassifierParams& params, const FeatureMatrix& features,
                        std::optional<std::uint64_t> dropout_seed = std::nullopt);

/// Row-wise argmax (ties to the smallest class).
std::vector<Label> argmax_rows(const RowMatrix& probs);

struct LossAndGradient {
  double loss = 0.0;
  ClassifierParams grad;
};

/// (1/B) * sum_i weights[i] * CE(p_i, targets[i]) and its gradient w.r.t.
/// every parameter block. Dropout is sampled from `rng` when non-null.
LossAndGradient weighted_cross_entropy(const ClassifierParams& params, const RowMatrix& x,
                                       std::span<const Label> targets, std::span<const double> weights,
                                       Rng* rng = nullptr);

/// Mean cross-entropy over the batch, dropout off unless `rng` is given.
LossAndGradient supervised_loss(const ClassifierParams& params, const RowMatrix& x, std::span<const Label> labels,
                                Rng* rng = nullptr);

struct EmaState {
  ClassifierParams shadow;
  double alpha = 0.99;
};

/// shadow <- alpha * shadow + (1 - alpha) * params.
EmaState ema_update(const EmaState& ema, const ClassifierParams& params);

/// Gradient norm of CE(p, argmax p) w.r.t. the final layer. Closed form:
/// ||p - e_yhat|| * sqrt(||h||^2 + 1) with the bias, ||p - e_yhat|| * ||h|| without.
double uncertainty_from(const Eigen::Ref<const Eigen::RowVectorXd>& probs,
                        const Eigen::Ref<const Eigen::RowVectorXd>& hidden, bool include_bias);

double gradient_norm_uncertainty(const ClassifierParams& params, const Eigen::Ref<const Eigen::RowVectorXd>& feature,
                                 bool include_bias = true);

/// Scores for every row of `features` (dropout off).
Eigen::VectorXd uncertainty_scores(const ClassifierParams& params, const RowMatrix& features,
                                   bool include_bias = true);

/// Flattened (p - e_yhat) (x) h, laid out like w2 (hidden-major).
Eigen::VectorXd gradient_embedding_from(const Eigen::Ref<const Eigen::RowVectorXd>& probs,
                                        const Eigen::Ref<const Eigen::RowVectorXd>& hidden);

Eigen::VectorXd gradient_embedding(const ClassifierParams& params, const Eigen::Ref<const Eigen::RowVectorXd>& feature);

/// One embedding per row of `features`, N x (H*C).
RowMatrix gradient_embeddings(const ClassifierParams& params, const RowMatrix& features);

/// `t` stochastic forward passes of a single feature vector.
RowMatrix mc_dropout_predict(const ClassifierParams& params, const Eigen::Ref<const Eigen::RowVectorXd>& feature,
                             std::size_t t, std::uint64_t seed);

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Adam moments with decoupled weight decay.
class AdamW {
 public:
  AdamW(std::size_t num_params, AdamWConfig config);

  /// One update with learning rate `lr` (already scheduled).
  void step(ClassifierParams& params, const ClassifierParams& grad, double lr);

  std::size_t steps() const noexcept { return t_; }

 private:
  AdamWConfig config_;
  Eigen::VectorXd m_;
  Eigen::VectorXd v_;
  std::size_t t_ = 0;
};

/// base_lr * (1 - iter / total)^0.9
double poly_lr(double base_lr, std::size_t iter, std::size_t total);

struct Checkpoint {
  ClassifierParams params;
  EmaState ema;
};

void save_checkpoint(const std::string& path, const ClassifierParams& params, const EmaState& ema);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace hssal::model
