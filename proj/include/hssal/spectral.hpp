#pragma once

// Spectral clustering of one mini-batch: kNN graph, max-symmetrization,
// normalized Laplacian, smallest-eigenvector embedding, row normalization,
// k-means.

#include <cstdint>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "hssal/core.hpp"

namespace hssal::spectral {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Undirected graph; adjacency is symmetric with zero diagonal.
struct SparseGraph {
  std::size_t n = 0;
  SparseMatrix adjacency;
};

/// Directed kNN graph (Euclidean, self excluded, ties to the smaller index)
/// symmetrized by elementwise max. k is clipped to n - 1.
SparseGraph knn_graph(const RowMatrix& points, std::size_t k);

/// Builds a graph from an explicit edge list (weight 1), symmetrized.
SparseGraph graph_from_edges(std::size_t n, const std::vector<std::pair<Index, Index>>& edges);

/// I - D^{-1/2} A D^{-1/2}; isolated nodes get D^{-1/2} = 0, hence L_ii = 1.
SparseMatrix normalized_laplacian(const SparseGraph& graph);

/// Connected-component id per node (ids in order of first appearance).
std::vector<std::size_t> connected_components(const SparseGraph& graph);

struct SpectralEmbedding {
  RowMatrix matrix;             ///< N_b x K_b, columns are eigenvectors
  Eigen::VectorXd eigenvalues;  ///< ascending
};

enum class EigenMethod {
  kAuto,       ///< dense when a component has at most dense_limit nodes, Lanczos otherwise
  kDense,      ///< full dense eigendecomposition
  kIterative,  ///< thick-restart Lanczos on every component with more than 2 nodes
};

struct EigenOptions {
  EigenMethod method = EigenMethod::kAuto;
  std::size_t dense_limit = 256;
  double tol = 1e-8;
  std::size_t max_iterations = 5000;
  std::uint64_t seed = 0;
};

/// Smallest k eigenpairs of a symmetric matrix with spectrum in [0, 2].
/// The matrix is split into connected blocks first, so repeated zero
/// eigenvalues of disconnected graphs are resolved exactly.
/// Throws NumericError on non-convergence.
SpectralEmbedding spectral_embed(const SparseMatrix& laplacian, std::size_t k, const EigenOptions& options = {});

/// Thick-restart Lanczos for the k smallest eigenpairs of a symmetric
/// operator whose spectrum lies in [0, upper]. Exposed for testing.
SpectralEmbedding lanczos_smallest(const SparseMatrix& matrix, std::size_t k, double upper, const EigenOptions& options);

/// Scales each row to unit Euclidean norm; exact-zero rows stay zero.
RowMatrix normalize_rows(const RowMatrix& m);

struct ClusterAssignment {
  std::vector<std::size_t> assignment;
  std::size_t k = 0;

  std::vector<std::vector<Index>> members() const;
};

struct KMeansResult {
  ClusterAssignment clusters;
  RowMatrix centroids;
  /// Within-cluster sum of squares after seeding and after each Lloyd step.
  std::vector<double> objective_trace;
  std::size_t iterations = 0;
};

inline constexpr std::size_t kKMeansMaxIterations = 300;

/// k-means++ seeding followed by Lloyd iterations until the assignment stops
/// changing. Empty clusters are reseeded at the point farthest from its own
/// centroid (taken from a cluster with more than one member).
KMeansResult kmeans(const RowMatrix& points, std::size_t k, std::uint64_t seed,
                    std::size_t max_iterations = kKMeansMaxIterations);

/// Sum of squared distances of each point to its cluster centroid.
double within_cluster_ss(const RowMatrix& points, const ClusterAssignment& a);

struct SpectralOptions {
  EigenOptions eigen{};
};

ClusterAssignment spectral_cluster(const RowMatrix& points, std::size_t k_b, std::size_t k_neighbors,
                                   std::uint64_t seed, const SpectralOptions& options = {});

}  // namespace hssal::spectral
