#include <algorithm>
#include <cmath>

#include "hssal/error.hpp"
#include "hssal/harness.hpp"
#include "hssal/random.hpp"

namespace hssal::harness {

Dataset gen_synthetic(const SyntheticSpec& spec) {
  HSSAL_REQUIRE(spec.classes >= 2, "synthetic data needs at least two classes");
  HSSAL_REQUIRE(spec.dim >= 2, "synthetic data needs at least two dimensions");
  HSSAL_REQUIRE(spec.per_class >= 1, "synthetic data needs at least one sample per class");
  HSSAL_REQUIRE(spec.mean_scale >= 0.0 && spec.cov_scale >= 0.0, "scales must be nonnegative");
  HSSAL_REQUIRE(spec.noise_rate >= 0.0 && spec.noise_rate <= 1.0, "noise rate must lie in [0, 1]");

  const auto d = static_cast<Eigen::Index>(spec.dim);
  Rng rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double map_scale = spec.cov_scale / std::sqrt(static_cast<double>(spec.dim));

  const std::size_t n = spec.classes * spec.per_class;
  RowMatrix x(static_cast<Eigen::Index>(n), d);
  std::vector<Label> labels(n);
  std::size_t row = 0;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    Eigen::RowVectorXd mean(d);
    for (auto& v : mean) v = spec.mean_scale * gauss(rng);
    RowMatrix map(d, d);
    for (auto& v : map.reshaped()) v = map_scale * gauss(rng);
    for (std::size_t i = 0; i < spec.per_class; ++i, ++row) {
      Eigen::RowVectorXd z(d);
      for (auto& v : z) v = gauss(rng);
      x.row(static_cast<Eigen::Index>(row)) = mean + z * map;
      labels[row] = static_cast<Label>(c);
    }
  }
  if (spec.noise_rate > 0.0) {
    Rng noise_rng(derive_seed(spec.seed, {1}));
    std::bernoulli_distribution flip(spec.noise_rate);
    std::uniform_int_distribution<std::size_t> cls(0, spec.classes - 1);
    for (auto& l : labels) {
      if (flip(noise_rng)) l = static_cast<Label>(cls(noise_rng));
    }
  }
  return {FeatureMatrix(std::move(x)), LabelVector(std::move(labels), spec.classes)};
}

Split stratified_split(const LabelVector& labels, double val_fraction, double test_fraction, std::uint64_t seed) {
  HSSAL_REQUIRE(val_fraction >= 0.0 && test_fraction >= 0.0 && val_fraction + test_fraction < 1.0,
                "split fractions must leave room for training");
  std::vector<std::vector<Index>> by_class(labels.num_classes());
  for (Index i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  Rng rng(seed);
  Split s;
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    const double nc = static_cast<double>(members.size());
    const std::size_t n_test = std::min(members.size(), round_half_up(nc * test_fraction));
    const std::size_t n_val = std::min(members.size() - n_test, round_half_up(nc * val_fraction));
    s.test.insert(s.test.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_test));
    s.val.insert(s.val.end(), members.begin() + static_cast<std::ptrdiff_t>(n_test),
                 members.begin() + static_cast<std::ptrdiff_t>(n_test + n_val));
    s.train.insert(s.train.end(), members.begin() + static_cast<std::ptrdiff_t>(n_test + n_val), members.end());
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.val.begin(), s.val.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

}  // namespace hssal::harness
