#include "hssal/model.hpp"

#include <cmath>
#include <limits>

#include "binary_io.hpp"
#include "hssal/error.hpp"

namespace hssal::model {

namespace {

constexpr char kCheckpointMagic[] = "HSSC";
constexpr std::uint16_t kCheckpointVersion = 1;

std::size_t param_count(const HeadShape& s) {
  return 2 * s.dim + s.dim * s.hidden + s.hidden + s.hidden * s.classes + s.classes;
}

Eigen::Index idx(std::size_t v) { return static_cast<Eigen::Index>(v); }

struct Offsets {
  std::size_t scale, shift, w1, b1, w2, b2;
};

Offsets offsets(const HeadShape& s) {
  Offsets o{};
  o.scale = 0;
  o.shift = s.dim;
  o.w1 = 2 * s.dim;
  o.b1 = o.w1 + s.dim * s.hidden;
  o.w2 = o.b1 + s.hidden;
  o.b2 = o.w2 + s.hidden * s.classes;
  return o;
}

void check_features(const ClassifierParams& params, Eigen::Index cols) {
  HSSAL_REQUIRE(static_cast<std::size_t>(cols) == params.shape().dim,
                "feature dimension " + std::to_string(cols) + " does not match head dimension " +
                    std::to_string(params.shape().dim));
}

double gelu_grad(double z) {
  const double cdf = 0.5 * (1.0 + std::erf(z / std::sqrt(2.0)));
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI);
  return cdf + z * pdf;
}

}  // namespace

ClassifierParams::ClassifierParams(HeadShape shape, double dropout_rate)
    : shape_(shape), dropout_rate_(dropout_rate), flat_(Eigen::VectorXd::Zero(idx(param_count(shape)))) {
  HSSAL_REQUIRE(shape.dim >= 1 && shape.hidden >= 1 && shape.classes >= 2, "invalid head shape");
  set_dropout_rate(dropout_rate);
}

void ClassifierParams::set_dropout_rate(double rate) {
  HSSAL_REQUIRE(rate >= 0.0 && rate < 1.0, "dropout rate must lie in [0, 1)");
  dropout_rate_ = rate;
}

ClassifierParams ClassifierParams::initialize(HeadShape shape, double dropout_rate, std::uint64_t seed) {
  ClassifierParams p(shape, dropout_rate);
  Rng rng(seed);
  p.norm_scale().setOnes();
  const double a1 = 1.0 / std::sqrt(static_cast<double>(shape.dim));
  const double a2 = 1.0 / std::sqrt(static_cast<double>(shape.hidden));
  std::uniform_real_distribution<double> u1(-a1, a1);
  std::uniform_real_distribution<double> u2(-a2, a2);
  for (auto& v : p.w1().reshaped()) v = u1(rng);
  for (auto& v : p.b1()) v = u1(rng);
  for (auto& v : p.w2().reshaped()) v = u2(rng);
  for (auto& v : p.b2()) v = u2(rng);
  return p;
}

VecMap ClassifierParams::norm_scale() { return {flat_.data() + offsets(shape_).scale, idx(shape_.dim)}; }
VecMap ClassifierParams::norm_shift() { return {flat_.data() + offsets(shape_).shift, idx(shape_.dim)}; }
MatMap ClassifierParams::w1() { return {flat_.data() + offsets(shape_).w1, idx(shape_.dim), idx(shape_.hidden)}; }
VecMap ClassifierParams::b1() { return {flat_.data() + offsets(shape_).b1, idx(shape_.hidden)}; }
MatMap ClassifierParams::w2() { return {flat_.data() + offsets(shape_).w2, idx(shape_.hidden), idx(shape_.classes)}; }
VecMap ClassifierParams::b2() { return {flat_.data() + offsets(shape_).b2, idx(shape_.classes)}; }
ConstVecMap ClassifierParams::norm_scale() const { return {flat_.data() + offsets(shape_).scale, idx(shape_.dim)}; }
ConstVecMap ClassifierParams::norm_shift() const { return {flat_.data() + offsets(shape_).shift, idx(shape_.dim)}; }
ConstMatMap ClassifierParams::w1() const {
  return {flat_.data() + offsets(shape_).w1, idx(shape_.dim), idx(shape_.hidden)};
}
ConstVecMap ClassifierParams::b1() const { return {flat_.data() + offsets(shape_).b1, idx(shape_.hidden)}; }
ConstMatMap ClassifierParams::w2() const {
  return {flat_.data() + offsets(shape_).w2, idx(shape_.hidden), idx(shape_.classes)};
}
ConstVecMap ClassifierParams::b2() const { return {flat_.data() + offsets(shape_).b2, idx(shape_.classes)}; }

std::size_t ClassifierParams::classifier_offset() const noexcept { return offsets(shape_).w2; }

ClassifierParams zeros_like(const ClassifierParams& like) {
  return ClassifierParams(like.shape(), like.dropout_rate());
}

double gelu(double z) { return 0.5 * z * (1.0 + std::erf(z / std::sqrt(2.0))); }

ForwardPass forward(const ClassifierParams& params, const RowMatrix& x, Rng* rng) {
  check_features(params, x.cols());
  const Eigen::Index n = x.rows();
  ForwardPass f;
  f.normalized.resize(n, x.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().mean();
    f.normalized.row(i) = (x.row(i).array() - mean) / std::sqrt(var + kLayerNormEps);
  }
  RowMatrix y = (f.normalized.array().rowwise() * params.norm_scale().transpose().array()).rowwise() +
                params.norm_shift().transpose().array();
  f.pre = (y * params.w1()).rowwise() + params.b1().transpose();
  f.hidden = f.pre.unaryExpr([](double z) { return gelu(z); });
  const double p = params.dropout_rate();
  if (rng != nullptr && p > 0.0) {
    std::bernoulli_distribution keep(1.0 - p);
    f.keep_scale.resize(n, f.hidden.cols());
    const double scale = 1.0 / (1.0 - p);
    for (auto& v : f.keep_scale.reshaped<Eigen::RowMajor>()) v = keep(*rng) ? scale : 0.0;
    f.hidden.array() *= f.keep_scale.array();
  }
  f.logits = (f.hidden * params.w2()).rowwise() + params.b2().transpose();
  f.probs.resize(n, f.logits.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mx = f.logits.row(i).maxCoeff();
    f.probs.row(i) = (f.logits.row(i).array() - mx).exp();
    f.probs.row(i) /= f.probs.row(i).sum();
  }
  return f;
}

RowMatrix predict_probs(const ClassifierParams& params, const RowMatrix& features,
                        std::optional<std::uint64_t> dropout_seed) {
  if (dropout_seed) {
    Rng rng(*dropout_seed);
    return forward(params, features, &rng).probs;
  }
  return forward(params, features, nullptr).probs;
}

RowMatrix predict_probs(const ClassifierParams& params, const FeatureMatrix& features,
                        std::optional<std::uint64_t> dropout_seed) {
  return predict_probs(params, features.matrix(), dropout_seed);
}

std::vector<Label> argmax_rows(const RowMatrix& probs) {
  std::vector<Label> out(static_cast<std::size_t>(probs.rows()));
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    Eigen::Index best = 0;
    probs.row(i).maxCoeff(&best);
    out[static_cast<std::size_t>(i)] = static_cast<Label>(best);
  }
  return out;
}

LossAndGradient weighted_cross_entropy(const ClassifierParams& params, const RowMatrix& x,
                                       std::span<const Label> targets, std::span<const double> weights, Rng* rng) {
  const Eigen::Index n = x.rows();
  HSSAL_REQUIRE(n >= 1, "empty batch");
  HSSAL_REQUIRE(targets.size() == static_cast<std::size_t>(n) && weights.size() == targets.size(),
                "batch, target and weight lengths differ");
  const ForwardPass f = forward(params, x, rng);
  const std::size_t c = params.shape().classes;
  const double inv_n = 1.0 / static_cast<double>(n);

  LossAndGradient out{0.0, zeros_like(params)};
  RowMatrix dlogits = f.probs;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Label t = targets[static_cast<std::size_t>(i)];
    HSSAL_REQUIRE(t < c, "target class out of range");
    const double w = weights[static_cast<std::size_t>(i)];
    const double mx = f.logits.row(i).maxCoeff();
    const double lse = mx + std::log((f.logits.row(i).array() - mx).exp().sum());
    out.loss += w * (lse - f.logits(i, t)) * inv_n;
    dlogits(i, t) -= 1.0;
    dlogits.row(i) *= w * inv_n;
  }

  ClassifierParams& g = out.grad;
  g.w2() = f.hidden.transpose() * dlogits;
  g.b2() = dlogits.colwise().sum().transpose();
  RowMatrix dpre = dlogits * params.w2().transpose();
  if (f.keep_scale.size() > 0) dpre.array() *= f.keep_scale.array();
  dpre.array() *= f.pre.unaryExpr([](double z) { return gelu_grad(z); }).array();
  RowMatrix y = (f.normalized.array().rowwise() * params.norm_scale().transpose().array()).rowwise() +
                params.norm_shift().transpose().array();
  g.w1() = y.transpose() * dpre;
  g.b1() = dpre.colwise().sum().transpose();
  const RowMatrix dy = dpre * params.w1().transpose();
  g.norm_scale() = (dy.array() * f.normalized.array()).colwise().sum().transpose();
  g.norm_shift() = dy.colwise().sum().transpose();
  return out;
}

LossAndGradient supervised_loss(const ClassifierParams& params, const RowMatrix& x, std::span<const Label> labels,
                                Rng* rng) {
  const std::vector<double> ones(labels.size(), 1.0);
  return weighted_cross_entropy(params, x, labels, ones, rng);
}

EmaState ema_update(const EmaState& ema, const ClassifierParams& params) {
  HSSAL_REQUIRE(ema.shadow.shape() == params.shape(), "EMA shadow shape does not match parameters");
  HSSAL_REQUIRE(ema.alpha >= 0.0 && ema.alpha < 1.0, "EMA decay must lie in [0, 1)");
  EmaState out = ema;
  out.shadow.flat() = ema.alpha * ema.shadow.flat() + (1.0 - ema.alpha) * params.flat();
  return out;
}

double uncertainty_from(const Eigen::Ref<const Eigen::RowVectorXd>& probs,
                        const Eigen::Ref<const Eigen::RowVectorXd>& hidden, bool include_bias) {
  Eigen::Index yhat = 0;
  probs.maxCoeff(&yhat);
  Eigen::RowVectorXd r = probs;
  r(yhat) -= 1.0;
  const double h2 = hidden.squaredNorm() + (include_bias ? 1.0 : 0.0);
  return r.norm() * std::sqrt(h2);
}

double gradient_norm_uncertainty(const ClassifierParams& params, const Eigen::Ref<const Eigen::RowVectorXd>& feature,
                                 bool include_bias) {
  const RowMatrix x = feature;
  const ForwardPass f = forward(params, x, nullptr);
  return uncertainty_from(f.probs.row(0), f.hidden.row(0), include_bias);
}

Eigen::VectorXd uncertainty_scores(const ClassifierParams& params, const RowMatrix& features, bool include_bias) {
  const ForwardPass f = forward(params, features, nullptr);
  Eigen::VectorXd u(features.rows());
  for (Eigen::Index i = 0; i < features.rows(); ++i) u(i) = uncertainty_from(f.probs.row(i), f.hidden.row(i), include_bias);
  return u;
}

Eigen::VectorXd gradient_embedding_from(const Eigen::Ref<const Eigen::RowVectorXd>& probs,
                                        const Eigen::Ref<const Eigen::RowVectorXd>& hidden) {
  Eigen::Index yhat = 0;
  probs.maxCoeff(&yhat);
  Eigen::RowVectorXd r = probs;
  r(yhat) -= 1.0;
  const Eigen::Index c = r.size();
  Eigen::VectorXd out(hidden.size() * c);
  for (Eigen::Index h = 0; h < hidden.size(); ++h) out.segment(h * c, c) = hidden(h) * r.transpose();
  return out;
}

Eigen::VectorXd gradient_embedding(const ClassifierParams& params, const Eigen::Ref<const Eigen::RowVectorXd>& feature) {
  const RowMatrix x = feature;
  const ForwardPass f = forward(params, x, nullptr);
  return gradient_embedding_from(f.probs.row(0), f.hidden.row(0));
}

RowMatrix gradient_embeddings(const ClassifierParams& params, const RowMatrix& features) {
  const ForwardPass f = forward(params, features, nullptr);
  const auto& s = params.shape();
  RowMatrix out(features.rows(), idx(s.hidden * s.classes));
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    out.row(i) = gradient_embedding_from(f.probs.row(i), f.hidden.row(i)).transpose();
  }
  return out;
}

RowMatrix mc_dropout_predict(const ClassifierParams& params, const Eigen::Ref<const Eigen::RowVectorXd>& feature,
                             std::size_t t, std::uint64_t seed) {
  HSSAL_REQUIRE(t >= 1, "MC dropout needs at least one pass");
  const RowMatrix x = feature.replicate(idx(t), 1);
  Rng rng(seed);
  return forward(params, x, &rng).probs;
}

AdamW::AdamW(std::size_t num_params, AdamWConfig config)
    : config_(config), m_(Eigen::VectorXd::Zero(idx(num_params))), v_(Eigen::VectorXd::Zero(idx(num_params))) {}

void AdamW::step(ClassifierParams& params, const ClassifierParams& grad, double lr) {
  HSSAL_REQUIRE(params.size() == static_cast<std::size_t>(m_.size()) && grad.size() == params.size(),
                "optimizer state size mismatch");
  ++t_;
  const auto& g = grad.flat();
  m_ = config_.beta1 * m_ + (1.0 - config_.beta1) * g;
  v_ = config_.beta2 * v_ + (1.0 - config_.beta2) * g.cwiseAbs2();
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  auto& theta = params.flat();
  theta *= 1.0 - lr * config_.weight_decay;
  theta.array() -= lr * (m_.array() / bc1) / ((v_.array() / bc2).sqrt() + config_.eps);
}

double poly_lr(double base_lr, std::size_t iter, std::size_t total) {
  if (total == 0 || iter >= total) return 0.0;
  return base_lr * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(total), 0.9);
}

void save_checkpoint(const std::string& path, const ClassifierParams& params, const EmaState& ema) {
  HSSAL_REQUIRE(params.shape() == ema.shadow.shape(), "checkpoint shadow shape mismatch");
  io::ByteWriter w;
  w.raw(std::string_view(kCheckpointMagic, 4));
  w.uint<std::uint16_t>(kCheckpointVersion);
  w.uint<std::uint64_t>(params.shape().dim);
  w.uint<std::uint64_t>(params.shape().hidden);
  w.uint<std::uint64_t>(params.shape().classes);
  w.f32(static_cast<float>(params.dropout_rate()));
  w.f32(static_cast<float>(ema.alpha));
  for (double v : params.flat()) w.f32(static_cast<float>(v));
  for (double v : ema.shadow.flat()) w.f32(static_cast<float>(v));
  io::write_file(path, w.bytes());
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::vector<char> data = io::read_file(path);
  io::ByteReader r(data, path);
  if (r.raw(4) != std::string_view(kCheckpointMagic, 4)) {
    throw ParseError(ParseError::Kind::kBadMagic, path + ": not a checkpoint (bad magic)");
  }
  const auto version = r.uint<std::uint16_t>();
  if (version != kCheckpointVersion) {
    throw ParseError(ParseError::Kind::kBadVersion, path + ": unsupported checkpoint version " + std::to_string(version));
  }
  HeadShape shape;
  shape.dim = r.uint<std::uint64_t>();
  shape.hidden = r.uint<std::uint64_t>();
  shape.classes = r.uint<std::uint64_t>();
  if (shape.dim == 0 || shape.hidden == 0 || shape.classes < 2 || shape.dim > (1u << 24) ||
      shape.hidden > (1u << 24) || shape.classes > (1u << 24)) {
    throw ParseError(ParseError::Kind::kInvalidValue, path + ": implausible head shape");
  }
  const double dropout = r.f32();
  const double alpha = r.f32();
  if (!(dropout >= 0.0 && dropout < 1.0) || !(alpha >= 0.0 && alpha < 1.0)) {
    throw ParseError(ParseError::Kind::kInvalidValue, path + ": dropout or EMA decay out of range");
  }
  Checkpoint ck{ClassifierParams(shape, dropout), EmaState{ClassifierParams(shape, dropout), alpha}};
  r.need(2 * ck.params.size() * 4);
  for (auto& v : ck.params.flat()) v = r.f32();
  for (auto& v : ck.ema.shadow.flat()) v = r.f32();
  if (!ck.params.all_finite() || !ck.ema.shadow.all_finite()) {
    throw ParseError(ParseError::Kind::kInvalidValue, path + ": non-finite parameter value");
  }
  return ck;
}

}  // namespace hssal::model
