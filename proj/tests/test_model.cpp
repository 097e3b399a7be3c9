#include <cmath>
#include <filesystem>
#include <fstream>

#include <doctest.h>

#include "hssal/random.hpp"
#include "hssal/error.hpp"
#include "hssal/model.hpp"

using namespace hssal;
using namespace hssal::model;

namespace {

RowMatrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  RowMatrix m(r, c);
  for (auto& v : m.reshaped()) v = g(rng);
  return m;
}

// Default init plus a perturbation of the layer-norm affine so every block
// carries a nontrivial gradient.
ClassifierParams random_params(HeadShape shape, double dropout, std::uint64_t seed) {
  auto p = ClassifierParams::initialize(shape, dropout, seed);
  Rng rng(seed + 1000);
  std::normal_distribution<double> g(0.0, 0.3);
  for (Eigen::Index i = 0; i < p.flat().size(); ++i) p.flat()(i) += g(rng);
  return p;
}

struct Block {
  const char* name;
  std::size_t begin, end;
};

std::vector<Block> blocks(const HeadShape& s) {
  const std::size_t d = s.dim, h = s.hidden, c = s.classes;
  std::vector<Block> out;
  std::size_t at = 0;
  auto add = [&](const char* n, std::size_t len) {
    out.push_back({n, at, at + len});
    at += len;
  };
  add("norm_scale", d);
  add("norm_shift", d);
  add("w1", d * h);
  add("b1", h);
  add("w2", h * c);
  add("b2", c);
  return out;
}

// Central finite differences of f over every flat parameter.
template <typename F>
Eigen::VectorXd fd_gradient(const ClassifierParams& p, F&& f, double step = 1e-5) {
  ClassifierParams q = p;
  Eigen::VectorXd g(p.flat().size());
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    const double orig = q.flat()(i);
    q.flat()(i) = orig + step;
    const double up = f(q);
    q.flat()(i) = orig - step;
    const double down = f(q);
    q.flat()(i) = orig;
    g(i) = (up - down) / (2.0 * step);
  }
  return g;
}

double block_rel_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const Block& blk) {
  const auto n = static_cast<Eigen::Index>(blk.end - blk.begin);
  const auto sa = a.segment(static_cast<Eigen::Index>(blk.begin), n);
  const auto sb = b.segment(static_cast<Eigen::Index>(blk.begin), n);
  return (sa - sb).norm() / std::max(sb.norm(), 1e-8);
}

}  // namespace

TEST_CASE("zero parameters give a uniform prediction") {
  const ClassifierParams p({4, 3, 5}, 0.0);
  const auto probs = predict_probs(p, random_matrix(3, 4, 1));
  for (Eigen::Index i = 0; i < probs.size(); ++i) CHECK(probs.reshaped()(i) == doctest::Approx(0.2).epsilon(1e-15));
}

TEST_CASE("hand-set logits (2, 0)") {
  // LN output collapses to the shift for D=1; GELU(10) == 10 to double precision.
  ClassifierParams p({1, 1, 2}, 0.0);
  p.b1()(0) = 10.0;
  p.w2()(0, 0) = 0.2;
  const auto probs = predict_probs(p, RowMatrix::Constant(1, 1, 3.7));
  const double e2 = std::exp(2.0);
  CHECK(probs(0, 0) == doctest::Approx(e2 / (e2 + 1.0)).epsilon(1e-12));
  CHECK(probs(0, 1) == doctest::Approx(1.0 / (e2 + 1.0)).epsilon(1e-12));
  CHECK(probs(0, 0) == doctest::Approx(0.8808).epsilon(1e-4));
}

TEST_CASE("predictions are valid, deterministic distributions") {
  const auto p = random_params({6, 5, 4}, 0.1, 3);
  RowMatrix x = random_matrix(5, 6, 4);
  x.row(3) = x.row(1);
  const auto probs = predict_probs(p, x);
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    CHECK(probs.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(probs.row(i).minCoeff() >= 0.0);
  }
  CHECK(probs.row(3) == probs.row(1));
  CHECK(predict_probs(p, x) == probs);
  CHECK(predict_probs(p, x, 9) == predict_probs(p, x, 9));
  CHECK_THROWS_AS(predict_probs(p, random_matrix(2, 5, 1)), ContractViolation);
}

TEST_CASE("gelu uses the exact error-function form") {
  CHECK(gelu(0.0) == 0.0);
  CHECK(gelu(1.0) == doctest::Approx(0.5 * (1.0 + std::erf(1.0 / std::sqrt(2.0)))).epsilon(1e-15));
  CHECK(gelu(-1.0) == doctest::Approx(-0.15865525393145707).epsilon(1e-12));
}

TEST_CASE("supervised loss closed forms") {
  SUBCASE("uniform prediction over 21 classes") {
    const ClassifierParams p({3, 2, 21}, 0.0);
    const std::vector<Label> y{0, 7, 20};
    const auto r = supervised_loss(p, random_matrix(3, 3, 2), y);
    CHECK(r.loss == doctest::Approx(std::log(21.0)).epsilon(1e-12));
    CHECK(r.loss == doctest::Approx(3.0445).epsilon(1e-4));
  }
  SUBCASE("confident correct prediction") {
    ClassifierParams p({3, 2, 3}, 0.0);
    p.b2()(1) = 1000.0;
    const std::vector<Label> y{1, 1};
    CHECK(supervised_loss(p, random_matrix(2, 3, 5), y).loss == doctest::Approx(0.0).epsilon(1e-300));
  }
  SUBCASE("empty batch") {
    const ClassifierParams p({3, 2, 3}, 0.0);
    CHECK_THROWS_AS(supervised_loss(p, RowMatrix(0, 3), std::vector<Label>{}), ContractViolation);
  }
}

TEST_CASE("analytic gradients match finite differences on every block") {
  const HeadShape shape{5, 4, 3};
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    const auto p = random_params(shape, 0.3, trial);
    const RowMatrix x = random_matrix(4, 5, 100 + trial, 1.5);
    const std::vector<Label> y{static_cast<Label>(trial % 3), 0, 2, 1};
    const std::vector<double> w{1.0, 0.5, 0.0, 2.0};
    const bool with_dropout = trial % 2 == 1;
    auto loss_at = [&](const ClassifierParams& q) {
      Rng rng(trial);
      return weighted_cross_entropy(q, x, y, w, with_dropout ? &rng : nullptr).loss;
    };
    Rng rng(trial);
    const auto analytic = weighted_cross_entropy(p, x, y, w, with_dropout ? &rng : nullptr);
    const auto fd = fd_gradient(p, loss_at);
    for (const auto& blk : blocks(shape)) {
      INFO("trial " << trial << " block " << blk.name);
      CHECK(block_rel_error(analytic.grad.flat(), fd, blk) < 1e-4);
    }
  }
}

TEST_CASE("ema update") {
  SUBCASE("one step") {
    ClassifierParams shadow({2, 2, 2}, 0.0), params({2, 2, 2}, 0.0);
    params.flat().setOnes();
    const auto e = ema_update({shadow, 0.99}, params);
    for (Eigen::Index i = 0; i < e.shadow.flat().size(); ++i) CHECK(e.shadow.flat()(i) == 0.99 * 0.0 + (1.0 - 0.99) * 1.0);
  }
  SUBCASE("fixed point") {
    const auto p = random_params({3, 2, 2}, 0.1, 1);
    const auto e = ema_update({p, 0.9}, p);
    CHECK((e.shadow.flat() - p.flat()).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("geometric convergence") {
    ClassifierParams params({2, 2, 2}, 0.0);
    params.flat().setOnes();
    EmaState e{ClassifierParams({2, 2, 2}, 0.0), 0.99};
    double prev_err = 1.0;
    for (int k = 0; k < 100; ++k) {
      e = ema_update(e, params);
      const double err = 1.0 - e.shadow.flat()(0);
      CHECK(err / prev_err == doctest::Approx(0.99).epsilon(1e-9));
      prev_err = err;
    }
    CHECK(e.shadow.flat()(0) == doctest::Approx(1.0 - std::pow(0.99, 100)).epsilon(1e-12));
    CHECK(e.shadow.flat()(0) == doctest::Approx(0.6340).epsilon(1e-4));
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(ema_update({ClassifierParams({2, 2, 2}, 0.0), 0.9}, ClassifierParams({2, 3, 2}, 0.0)),
                    ContractViolation);
  }
}

TEST_CASE("gradient-norm uncertainty closed form vs finite differences") {
  const HeadShape shape{6, 5, 4};
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    const auto p = random_params(shape, 0.1, 500 + trial);
    const RowMatrix x = random_matrix(1, 6, 900 + trial, 2.0);
    const auto probs = predict_probs(p, x);
    const std::vector<Label> yhat = argmax_rows(probs);
    auto loss_at = [&](const ClassifierParams& q) { return supervised_loss(q, x, yhat).loss; };
    const auto fd = fd_gradient(p, loss_at);
    const auto off = static_cast<Eigen::Index>(p.classifier_offset());
    const double fd_with_bias = fd.tail(fd.size() - off).norm();
    const double fd_no_bias = fd.segment(off, static_cast<Eigen::Index>(shape.hidden * shape.classes)).norm();
    const double u = gradient_norm_uncertainty(p, x.row(0), true);
    const double u_nb = gradient_norm_uncertainty(p, x.row(0), false);
    CHECK(std::abs(u - fd_with_bias) <= 1e-4 * fd_with_bias);
    CHECK(std::abs(u_nb - fd_no_bias) <= 1e-4 * fd_no_bias);
    CHECK(u_nb == doctest::Approx(gradient_embedding(p, x.row(0)).norm()).epsilon(1e-10));
  }
}

TEST_CASE("gradient-norm uncertainty limits and invariances") {
  SUBCASE("confident sample") {
    ClassifierParams p({3, 2, 3}, 0.0);
    p.b2()(2) = 100.0;
    CHECK(gradient_norm_uncertainty(p, random_matrix(1, 3, 1).row(0)) < 1e-30);
  }
  SUBCASE("near-uniform two-class limit") {
    for (double eps : {1e-3, 1e-6, 1e-9}) {
      Eigen::RowVectorXd probs(2), h(1);
      probs << 0.5 + eps, 0.5 - eps;
      h << 1.0;
      CHECK(uncertainty_from(probs, h, false) == doctest::Approx(std::sqrt(0.5)).epsilon(2 * eps));
    }
  }
  SUBCASE("constant logit shift") {
    auto p = random_params({4, 3, 5}, 0.1, 8);
    const RowMatrix x = random_matrix(1, 4, 9);
    const double before = gradient_norm_uncertainty(p, x.row(0));
    p.b2().array() += 3.25;
    CHECK(gradient_norm_uncertainty(p, x.row(0)) == doctest::Approx(before).epsilon(1e-12));
  }
}

TEST_CASE("gradient embedding") {
  SUBCASE("hand example") {
    Eigen::RowVectorXd probs(2), h(1);
    probs << 0.9, 0.1;
    h << 2.0;
    const auto e = gradient_embedding_from(probs, h);
    REQUIRE(e.size() == 2);
    CHECK(e(0) == doctest::Approx(-0.2).epsilon(1e-15));
    CHECK(e(1) == doctest::Approx(0.2).epsilon(1e-15));
  }
  SUBCASE("one-hot gives zero") {
    Eigen::RowVectorXd probs(3), h(2);
    probs << 0.0, 1.0, 0.0;
    h << 1.5, -2.0;
    CHECK(gradient_embedding_from(probs, h).norm() == 0.0);
  }
  SUBCASE("norm identity and batch agreement") {
    const auto p = random_params({5, 4, 3}, 0.1, 21);
    const RowMatrix x = random_matrix(6, 5, 22);
    const auto all = gradient_embeddings(p, x);
    const auto f = forward(p, x, nullptr);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      Eigen::Index yhat = 0;
      f.probs.row(i).maxCoeff(&yhat);
      Eigen::RowVectorXd r = f.probs.row(i);
      r(yhat) -= 1.0;
      CHECK(all.row(i).norm() == doctest::Approx(r.norm() * f.hidden.row(i).norm()).epsilon(1e-12));
      CHECK((all.row(i).transpose() - gradient_embedding(p, x.row(i))).norm() < 1e-14);
    }
  }
}

TEST_CASE("MC dropout") {
  const RowMatrix x = random_matrix(1, 6, 31);
  SUBCASE("rate 0 gives identical deterministic rows") {
    const auto p = random_params({6, 8, 3}, 0.0, 30);
    const auto rows = mc_dropout_predict(p, x.row(0), 5, 1);
    const auto det = predict_probs(p, x);
    for (Eigen::Index i = 0; i < 5; ++i) CHECK((rows.row(i) - det.row(0)).norm() == 0.0);
  }
  SUBCASE("seeded reproducibility") {
    const auto p = random_params({6, 8, 3}, 0.3, 30);
    CHECK(mc_dropout_predict(p, x.row(0), 7, 4) == mc_dropout_predict(p, x.row(0), 7, 4));
    CHECK(mc_dropout_predict(p, x.row(0), 7, 4) != mc_dropout_predict(p, x.row(0), 7, 5));
  }
  SUBCASE("mean within three standard errors of a large-sample oracle") {
    const auto p = random_params({6, 8, 3}, 0.5, 32);
    const auto oracle = mc_dropout_predict(p, x.row(0), 100000, 999);
    const Eigen::RowVectorXd mu = oracle.colwise().mean();
    const Eigen::RowVectorXd sd = ((oracle.rowwise() - mu).cwiseAbs2().colwise().sum() / 99999.0).cwiseSqrt();
    const auto sample = mc_dropout_predict(p, x.row(0), 50, 17);
    const Eigen::RowVectorXd m = sample.colwise().mean();
    for (Eigen::Index c = 0; c < 3; ++c) CHECK(std::abs(m(c) - mu(c)) <= 3.0 * sd(c) / std::sqrt(50.0));
  }
  SUBCASE("zero passes") {
    const auto p = random_params({6, 8, 3}, 0.3, 30);
    CHECK_THROWS_AS(mc_dropout_predict(p, x.row(0), 0, 1), ContractViolation);
  }
}

TEST_CASE("AdamW first step and polynomial decay") {
  ClassifierParams p({2, 2, 2}, 0.0);
  p.flat().setConstant(2.0);
  ClassifierParams g = zeros_like(p);
  for (Eigen::Index i = 0; i < g.flat().size(); ++i) g.flat()(i) = (i % 2 == 0 ? 0.5 : -3.0);
  AdamW opt(p.size(), {});
  opt.step(p, g, 1e-3);
  for (Eigen::Index i = 0; i < p.flat().size(); ++i) {
    const double gi = g.flat()(i);
    const double expected = 2.0 * (1.0 - 1e-3 * 0.01) - 1e-3 * gi / (std::abs(gi) + 1e-8);
    CHECK(p.flat()(i) == doctest::Approx(expected).epsilon(1e-12));
  }
  CHECK(opt.steps() == 1);
  CHECK(poly_lr(1e-3, 0, 100) == 1e-3);
  CHECK(poly_lr(1e-3, 50, 100) == doctest::Approx(1e-3 * std::pow(0.5, 0.9)).epsilon(1e-15));
  CHECK(poly_lr(1e-3, 100, 100) == 0.0);
}

TEST_CASE("initialization bounds") {
  const auto p = ClassifierParams::initialize({16, 8, 4}, 0.1, 5);
  CHECK(p.norm_scale().isOnes());
  CHECK(p.norm_shift().isZero());
  CHECK(p.w1().cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(16.0));
  CHECK(p.w2().cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(8.0));
  CHECK(ClassifierParams::initialize({16, 8, 4}, 0.1, 5).flat() == p.flat());
}

TEST_CASE("checkpoint round trip and corruption") {
  const auto dir = std::filesystem::temp_directory_path() / "hssal_model_test";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "m.ckpt").string();
  const auto p = random_params({7, 5, 3}, 0.1, 40);
  const auto s = random_params({7, 5, 3}, 0.1, 41);
  save_checkpoint(path, p, {s, 0.99});
  const auto ck = load_checkpoint(path);
  CHECK(ck.params.shape() == p.shape());
  CHECK(ck.params.dropout_rate() == doctest::Approx(0.1).epsilon(1e-7));
  CHECK(ck.ema.alpha == doctest::Approx(0.99).epsilon(1e-7));
  for (Eigen::Index i = 0; i < p.flat().size(); ++i) {
    CHECK(ck.params.flat()(i) == static_cast<double>(static_cast<float>(p.flat()(i))));
    CHECK(ck.ema.shadow.flat()(i) == static_cast<double>(static_cast<float>(s.flat()(i))));
  }

  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 6);
  try {
    load_checkpoint(path);
    FAIL("expected truncation error");
  } catch (const ParseError& e) {
    CHECK(e.kind() == ParseError::Kind::kTruncated);
  }
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << "NOPE-not-a-checkpoint";
  }
  try {
    load_checkpoint(path);
    FAIL("expected bad magic");
  } catch (const ParseError& e) {
    CHECK(e.kind() == ParseError::Kind::kBadMagic);
  }
  std::filesystem::remove_all(dir);
}
