#include "hssal/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <tuple>

#include <Eigen/Eigenvalues>

#include "hssal/error.hpp"
#include "hssal/random.hpp"

namespace hssal::spectral {

namespace {

using Triplet = Eigen::Triplet<double>;

Eigen::Index ei(std::size_t v) { return static_cast<Eigen::Index>(v); }

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }

  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }

  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent_[std::max(a, b)] = std::min(a, b);
  }

 private:
  std::vector<std::size_t> parent_;
};

std::vector<std::size_t> components_of_pattern(const SparseMatrix& m) {
  const auto n = static_cast<std::size_t>(m.rows());
  UnionFind uf(n);
  for (Eigen::Index r = 0; r < m.outerSize(); ++r) {
    for (SparseMatrix::InnerIterator it(m, r); it; ++it) {
      if (it.col() != r && it.value() != 0.0) uf.unite(static_cast<std::size_t>(r), static_cast<std::size_t>(it.col()));
    }
  }
  std::vector<std::size_t> label(n);
  std::vector<std::size_t> remap(n, std::numeric_limits<std::size_t>::max());
  std::size_t next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t root = uf.find(i);
    if (remap[root] == std::numeric_limits<std::size_t>::max()) remap[root] = next++;
    label[i] = remap[root];
  }
  return label;
}

SparseGraph symmetrize(std::size_t n, std::vector<Triplet> directed) {
  std::vector<Triplet> both;
  both.reserve(directed.size() * 2);
  for (const auto& t : directed) {
    if (t.row() == t.col()) continue;
    both.emplace_back(t.row(), t.col(), t.value());
    both.emplace_back(t.col(), t.row(), t.value());
  }
  SparseGraph g;
  g.n = n;
  g.adjacency.resize(ei(n), ei(n));
  g.adjacency.setFromTriplets(both.begin(), both.end(), [](double a, double b) { return std::max(a, b); });
  g.adjacency.makeCompressed();
  return g;
}

/// Extracts the principal submatrix on `nodes` (sorted).
SparseMatrix submatrix(const SparseMatrix& m, const std::vector<Index>& nodes) {
  std::vector<std::size_t> local(static_cast<std::size_t>(m.rows()), std::numeric_limits<std::size_t>::max());
  for (std::size_t i = 0; i < nodes.size(); ++i) local[nodes[i]] = i;
  std::vector<Triplet> trips;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    for (SparseMatrix::InnerIterator it(m, ei(nodes[i])); it; ++it) {
      const std::size_t j = local[static_cast<std::size_t>(it.col())];
      if (j != std::numeric_limits<std::size_t>::max()) trips.emplace_back(ei(i), ei(j), it.value());
    }
  }
  SparseMatrix out(ei(nodes.size()), ei(nodes.size()));
  out.setFromTriplets(trips.begin(), trips.end());
  return out;
}

SpectralEmbedding dense_smallest(const SparseMatrix& m, std::size_t k) {
  const Eigen::MatrixXd dense = Eigen::MatrixXd(m);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(dense);
  if (solver.info() != Eigen::Success) throw NumericError("dense symmetric eigensolver failed", 0);
  SpectralEmbedding e;
  e.eigenvalues = solver.eigenvalues().head(ei(k));
  e.matrix = solver.eigenvectors().leftCols(ei(k));
  return e;
}

/// Orthogonalizes `w` against the first `cols` columns of `basis` (two passes)
/// and returns the accumulated projection coefficients.
Eigen::VectorXd orthogonalize(const Eigen::MatrixXd& basis, Eigen::Index cols, Eigen::VectorXd& w) {
  Eigen::VectorXd h = Eigen::VectorXd::Zero(cols);
  for (int pass = 0; pass < 2; ++pass) {
    const Eigen::VectorXd c = basis.leftCols(cols).transpose() * w;
    w.noalias() -= basis.leftCols(cols) * c;
    h += c;
  }
  return h;
}

}  // namespace

SparseGraph knn_graph(const RowMatrix& points, std::size_t k) {
  const auto n = static_cast<std::size_t>(points.rows());
  HSSAL_REQUIRE(n >= 2, "kNN graph needs at least two points");
  HSSAL_REQUIRE(k >= 1, "neighbor count must be positive");
  k = std::min(k, n - 1);

  const Eigen::VectorXd sq = points.rowwise().squaredNorm();
  const bool use_gram = n > 4096;
  constexpr std::size_t kBlock = 512;
  std::vector<Triplet> directed;
  directed.reserve(n * k);
  std::vector<std::pair<double, Index>> cand(n - 1);
  for (std::size_t start = 0; start < n; start += kBlock) {
    const std::size_t rows = std::min(kBlock, n - start);
    RowMatrix dist;
    if (use_gram) {
      dist = -2.0 * points.middleRows(ei(start), ei(rows)) * points.transpose();
      dist.colwise() += sq.segment(ei(start), ei(rows));
      dist.rowwise() += sq.transpose();
    }
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t i = start + r;
      std::size_t c = 0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        const double d = use_gram ? std::max(0.0, dist(ei(r), ei(j)))
                                  : (points.row(ei(i)) - points.row(ei(j))).squaredNorm();
        cand[c++] = {d, j};
      }
      std::nth_element(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k - 1), cand.end());
      for (std::size_t q = 0; q < k; ++q) directed.emplace_back(ei(i), ei(cand[q].second), 1.0);
    }
  }
  return symmetrize(n, std::move(directed));
}

SparseGraph graph_from_edges(std::size_t n, const std::vector<std::pair<Index, Index>>& edges) {
  std::vector<Triplet> trips;
  for (const auto& [a, b] : edges) {
    HSSAL_REQUIRE(a < n && b < n, "edge endpoint out of range");
    trips.emplace_back(ei(a), ei(b), 1.0);
  }
  return symmetrize(n, std::move(trips));
}

SparseMatrix normalized_laplacian(const SparseGraph& graph) {
  const auto n = static_cast<Eigen::Index>(graph.n);
  Eigen::VectorXd dinv(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double d = graph.adjacency.row(i).sum();
    dinv(i) = d > 0.0 ? 1.0 / std::sqrt(d) : 0.0;
  }
  std::vector<Triplet> trips;
  trips.reserve(static_cast<std::size_t>(graph.adjacency.nonZeros() + n));
  for (Eigen::Index i = 0; i < n; ++i) trips.emplace_back(i, i, 1.0);
  for (Eigen::Index r = 0; r < graph.adjacency.outerSize(); ++r) {
    for (SparseMatrix::InnerIterator it(graph.adjacency, r); it; ++it) {
      trips.emplace_back(r, it.col(), -it.value() * dinv(r) * dinv(it.col()));
    }
  }
  SparseMatrix l(n, n);
  l.setFromTriplets(trips.begin(), trips.end());
  l.makeCompressed();
  return l;
}

std::vector<std::size_t> connected_components(const SparseGraph& graph) {
  return components_of_pattern(graph.adjacency);
}

SpectralEmbedding lanczos_smallest(const SparseMatrix& matrix, std::size_t k, double upper,
                                   const EigenOptions& options) {
  const auto n = static_cast<std::size_t>(matrix.rows());
  HSSAL_REQUIRE(k >= 1 && k <= n, "requested eigenpair count out of range");
  // Largest eigenpairs of B = upper*I - M are the smallest of M.
  auto apply = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
    Eigen::VectorXd out = upper * v;
    out.noalias() -= matrix * v;
    return out;
  };

  const std::size_t m = std::min(n, std::max<std::size_t>(2 * k + 8, 24));
  const Eigen::Index mi = ei(m);
  Eigen::MatrixXd basis(ei(n), mi + 1);
  Eigen::MatrixXd proj = Eigen::MatrixXd::Zero(mi, mi);

  Rng rng(options.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto random_unit_orthogonal = [&](Eigen::Index cols) -> Eigen::VectorXd {
    for (int attempt = 0; attempt < 8; ++attempt) {
      Eigen::VectorXd v(ei(n));
      for (auto& x : v) x = gauss(rng);
      if (cols > 0) orthogonalize(basis, cols, v);
      const double nv = v.norm();
      if (nv > 1e-10) return v / nv;
    }
    throw NumericError("could not extend the Krylov basis", 0);
  };

  basis.col(0) = random_unit_orthogonal(0);
  std::size_t kept = 0;
  double beta = 0.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ritz;

  for (std::size_t cycle = 1; cycle <= options.max_iterations; ++cycle) {
    for (std::size_t j = kept; j < m; ++j) {
      const Eigen::Index jj = ei(j);
      Eigen::VectorXd w = apply(basis.col(jj));
      const Eigen::VectorXd h = orthogonalize(basis, jj + 1, w);
      proj.block(0, jj, jj + 1, 1) = h;
      proj.block(jj, 0, 1, jj + 1) = h.transpose();
      beta = w.norm();
      if (j + 1 == n) {
        beta = 0.0;
        break;
      }
      if (beta <= 1e-12 * std::max(1.0, upper)) {
        // Invariant subspace: continue from a fresh direction with zero coupling.
        beta = 0.0;
        basis.col(jj + 1) = random_unit_orthogonal(jj + 1);
      } else {
        basis.col(jj + 1) = w / beta;
      }
    }

    ritz.compute(proj);
    if (ritz.info() != Eigen::Success) throw NumericError("Ritz eigensolve failed", cycle);
    // Ritz values ascend; the wanted pairs are the last k.
    bool converged = true;
    for (std::size_t q = 0; q < k; ++q) {
      const Eigen::Index col = mi - 1 - ei(q);
      const double residual = std::abs(beta * ritz.eigenvectors()(mi - 1, col));
      if (residual > options.tol) {
        converged = false;
        break;
      }
    }
    if (converged || m == n) {
      SpectralEmbedding e;
      e.eigenvalues.resize(ei(k));
      e.matrix.resize(ei(n), ei(k));
      for (std::size_t q = 0; q < k; ++q) {
        const Eigen::Index col = mi - 1 - ei(q);
        e.eigenvalues(ei(q)) = upper - ritz.eigenvalues()(col);
        Eigen::VectorXd v = basis.leftCols(mi) * ritz.eigenvectors().col(col);
        e.matrix.col(ei(q)) = v / v.norm();
      }
      return e;
    }

    // Thick restart: keep the leading Ritz vectors plus the residual direction.
    kept = std::min(k + (m - k) / 2, m - 1);
    const Eigen::MatrixXd keep_vecs = ritz.eigenvectors().rightCols(ei(kept));
    const Eigen::MatrixXd new_basis = basis.leftCols(mi) * keep_vecs;
    const Eigen::VectorXd residual_dir = basis.col(mi);
    basis.leftCols(ei(kept)) = new_basis;
    basis.col(ei(kept)) = residual_dir;
    proj.setZero();
    proj.topLeftCorner(ei(kept), ei(kept)).diagonal() = ritz.eigenvalues().tail(ei(kept));
    if (beta == 0.0) basis.col(ei(kept)) = random_unit_orthogonal(ei(kept));
  }
  throw NumericError("Lanczos eigensolver did not converge to tolerance", options.max_iterations);
}

SpectralEmbedding spectral_embed(const SparseMatrix& laplacian, std::size_t k, const EigenOptions& options) {
  const auto n = static_cast<std::size_t>(laplacian.rows());
  HSSAL_REQUIRE(laplacian.rows() == laplacian.cols(), "Laplacian must be square");
  HSSAL_REQUIRE(k >= 1 && k <= n, "spectral embedding dimension out of range");

  const std::vector<std::size_t> comp = components_of_pattern(laplacian);
  const std::size_t n_comp = comp.empty() ? 0 : *std::max_element(comp.begin(), comp.end()) + 1;
  std::vector<std::vector<Index>> nodes(n_comp);
  for (std::size_t i = 0; i < n; ++i) nodes[comp[i]].push_back(i);

  struct Pair {
    double value;
    std::size_t component;
    std::size_t column;
  };
  std::vector<SpectralEmbedding> parts(n_comp);
  std::vector<Pair> pairs;
  for (std::size_t c = 0; c < n_comp; ++c) {
    const std::size_t nc = nodes[c].size();
    const std::size_t kc = std::min(k, nc);
    const SparseMatrix sub = submatrix(laplacian, nodes[c]);
    bool dense = nc <= 2;
    switch (options.method) {
      case EigenMethod::kDense:
        dense = true;
        break;
      case EigenMethod::kAuto:
        dense = dense || nc <= options.dense_limit || (2 * kc + 8 >= nc && nc <= 4096);
        break;
      case EigenMethod::kIterative:
        break;
    }
    if (dense) {
      parts[c] = dense_smallest(sub, kc);
    } else {
      EigenOptions sub_opts = options;
      sub_opts.seed = derive_seed(options.seed, {c});
      parts[c] = lanczos_smallest(sub, kc, 2.0, sub_opts);
    }
    for (std::size_t q = 0; q < kc; ++q) pairs.push_back({parts[c].eigenvalues(ei(q)), c, q});
  }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    return std::tie(a.value, a.component, a.column) < std::tie(b.value, b.component, b.column);
  });

  SpectralEmbedding out;
  out.eigenvalues.resize(ei(k));
  out.matrix = RowMatrix::Zero(ei(n), ei(k));
  for (std::size_t q = 0; q < k; ++q) {
    const Pair& p = pairs[q];
    out.eigenvalues(ei(q)) = p.value;
    const auto& nd = nodes[p.component];
    for (std::size_t i = 0; i < nd.size(); ++i) {
      out.matrix(ei(nd[i]), ei(q)) = parts[p.component].matrix(ei(i), ei(p.column));
    }
  }
  return out;
}

RowMatrix normalize_rows(const RowMatrix& m) {
  RowMatrix out = m;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double nr = out.row(i).norm();
    if (nr > 0.0) out.row(i) /= nr;
  }
  return out;
}

std::vector<std::vector<Index>> ClusterAssignment::members() const {
  std::vector<std::vector<Index>> out(k);
  for (std::size_t i = 0; i < assignment.size(); ++i) out[assignment[i]].push_back(i);
  return out;
}

namespace {

std::vector<std::size_t> assign_nearest(const RowMatrix& points, const RowMatrix& centroids) {
  std::vector<std::size_t> a(static_cast<std::size_t>(points.rows()));
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
      const double d = (points.row(i) - centroids.row(c)).squaredNorm();
      if (d < best) {
        best = d;
        arg = static_cast<std::size_t>(c);
      }
    }
    a[static_cast<std::size_t>(i)] = arg;
  }
  return a;
}

/// Moves the farthest-from-centroid point of a multi-member cluster into each
/// empty cluster, then recomputes all centroids as member means.
void repair_and_update(const RowMatrix& points, std::vector<std::size_t>& assign, RowMatrix& centroids) {
  const std::size_t k = static_cast<std::size_t>(centroids.rows());
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t c : assign) ++counts[c];
  for (std::size_t j = 0; j < k; ++j) {
    if (counts[j] != 0) continue;
    double far = -1.0;
    std::size_t pick = 0;
    for (std::size_t i = 0; i < assign.size(); ++i) {
      if (counts[assign[i]] < 2) continue;
      const double d = (points.row(ei(i)) - centroids.row(ei(assign[i]))).squaredNorm();
      if (d > far) {
        far = d;
        pick = i;
      }
    }
    if (far < 0.0) break;  // fewer points than clusters; cannot happen for k <= n
    --counts[assign[pick]];
    assign[pick] = j;
    counts[j] = 1;
    centroids.row(ei(j)) = points.row(ei(pick));
  }
  RowMatrix sums = RowMatrix::Zero(centroids.rows(), centroids.cols());
  for (std::size_t i = 0; i < assign.size(); ++i) sums.row(ei(assign[i])) += points.row(ei(i));
  for (std::size_t j = 0; j < k; ++j) {
    if (counts[j] > 0) centroids.row(ei(j)) = sums.row(ei(j)) / static_cast<double>(counts[j]);
  }
}

double objective(const RowMatrix& points, const std::vector<std::size_t>& assign, const RowMatrix& centroids) {
  double s = 0.0;
  for (std::size_t i = 0; i < assign.size(); ++i) s += (points.row(ei(i)) - centroids.row(ei(assign[i]))).squaredNorm();
  return s;
}

}  // namespace

KMeansResult kmeans(const RowMatrix& points, std::size_t k, std::uint64_t seed, std::size_t max_iterations) {
  const auto n = static_cast<std::size_t>(points.rows());
  HSSAL_REQUIRE(k >= 1, "k-means needs at least one cluster");
  HSSAL_REQUIRE(k <= n, "k-means cluster count exceeds point count");
  Rng rng(seed);

  // k-means++ seeding.
  std::vector<Index> centers;
  std::vector<char> chosen(n, 0);
  centers.push_back(std::uniform_int_distribution<std::size_t>(0, n - 1)(rng));
  chosen[centers[0]] = 1;
  Eigen::VectorXd d2(ei(n));
  for (std::size_t i = 0; i < n; ++i) d2(ei(i)) = (points.row(ei(i)) - points.row(ei(centers[0]))).squaredNorm();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  while (centers.size() < k) {
    const double total = d2.sum();
    std::size_t pick = n;
    if (total > 0.0) {
      const double target = unit(rng) * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (chosen[i] || d2(ei(i)) <= 0.0) continue;
        acc += d2(ei(i));
        pick = i;
        if (acc >= target) break;
      }
    }
    if (pick == n) {
      // Remaining points coincide with chosen centers: pick uniformly among the rest.
      std::vector<Index> rest;
      for (std::size_t i = 0; i < n; ++i) {
        if (!chosen[i]) rest.push_back(i);
      }
      pick = rest[std::uniform_int_distribution<std::size_t>(0, rest.size() - 1)(rng)];
    }
    centers.push_back(pick);
    chosen[pick] = 1;
    for (std::size_t i = 0; i < n; ++i) {
      d2(ei(i)) = std::min(d2(ei(i)), (points.row(ei(i)) - points.row(ei(pick))).squaredNorm());
    }
  }

  KMeansResult res;
  res.centroids.resize(ei(k), points.cols());
  for (std::size_t j = 0; j < k; ++j) res.centroids.row(ei(j)) = points.row(ei(centers[j]));
  std::vector<std::size_t> assign = assign_nearest(points, res.centroids);
  res.objective_trace.push_back(objective(points, assign, res.centroids));

  for (std::size_t it = 0; it < max_iterations; ++it) {
    repair_and_update(points, assign, res.centroids);
    std::vector<std::size_t> next = assign_nearest(points, res.centroids);
    res.objective_trace.push_back(objective(points, next, res.centroids));
    ++res.iterations;
    const bool stable = next == assign;
    assign = std::move(next);
    if (stable) break;
  }
  repair_and_update(points, assign, res.centroids);
  res.clusters.assignment = std::move(assign);
  res.clusters.k = k;
  return res;
}

double within_cluster_ss(const RowMatrix& points, const ClusterAssignment& a) {
  RowMatrix sums = RowMatrix::Zero(ei(a.k), points.cols());
  std::vector<std::size_t> counts(a.k, 0);
  for (std::size_t i = 0; i < a.assignment.size(); ++i) {
    sums.row(ei(a.assignment[i])) += points.row(ei(i));
    ++counts[a.assignment[i]];
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.assignment.size(); ++i) {
    const std::size_t c = a.assignment[i];
    s += (points.row(ei(i)) - sums.row(ei(c)) / static_cast<double>(counts[c])).squaredNorm();
  }
  return s;
}

ClusterAssignment spectral_cluster(const RowMatrix& points, std::size_t k_b, std::size_t k_neighbors,
                                   std::uint64_t seed, const SpectralOptions& options) {
  const auto n = static_cast<std::size_t>(points.rows());
  HSSAL_REQUIRE(n >= 2, "spectral clustering needs at least two points");
  HSSAL_REQUIRE(k_b >= 1 && k_b <= n - 1, "cluster count must lie in [1, N_b - 1]");
  const SparseGraph graph = knn_graph(points, k_neighbors);
  const SparseMatrix lap = normalized_laplacian(graph);
  EigenOptions eig = options.eigen;
  eig.seed = derive_seed(seed, {1});
  const SpectralEmbedding emb = spectral_embed(lap, k_b, eig);
  const RowMatrix rows = normalize_rows(emb.matrix);
  return kmeans(rows, k_b, derive_seed(seed, {2})).clusters;
}

}  // namespace hssal::spectral
