#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <map>
#include <memory>
#include <unordered_map>
#include <vector>

#include "nngp/cov.hpp"
#include "nngp/geo.hpp"

namespace nngp::factors {

// Conditional factors at one location: w(v) | w_N ~ N(B w_N, F) with
// F held as its Cholesky factor plus log-determinant for density work.
struct NodeFactor {
  Eigen::MatrixXd B;  // q x |N|q
  Eigen::MatrixXd F;  // q x q
  Eigen::LLT<Eigen::MatrixXd> F_llt;
  double F_logdet = 0.0;

  void finalize();  // fills F_llt / F_logdet from F
};

// Per-node conditional factors over a neighbor DAG, tied to the
// cross-covariance they were built from. Immutable after construction.
struct NngpFactors {
  std::shared_ptr<const geo::NeighborDag> dag;
  cov::CrossCovariance cc;
  std::vector<NodeFactor> node;

  int k() const { return static_cast<int>(node.size()); }
  int q() const { return cc.q(); }
};

// nugget adds a constant to every diagonal covariance entry; used when the
// factored process is the response itself rather than the latent field.
NngpFactors compute_factors(std::shared_ptr<const geo::NeighborDag> dag,
                            const cov::CrossCovariance& cc, int threads = 1,
                            double nugget = 0.0);

// Factors of a location conditional on an arbitrary neighbor index list into
// the DAG-ordered reference set (used for queries and predictions).
NodeFactor factor_for(const geo::LocationSet& ref, const cov::CrossCovariance& cc,
                      const std::vector<int>& neighbors, const Eigen::Vector2d& point,
                      double nugget = 0.0);

struct QueryFactor {
  std::vector<int> neighbors;  // ordered reference positions
  NodeFactor f;
};

QueryFactor query_factors(const NngpFactors& f, const Eigen::Vector2d& u);

// Block-sparse symmetric representation of the NNGP precision, lower
// triangle only, keyed by (i, j) ordered positions with i >= j.
struct SparsePrecision {
  int k = 0;
  int q = 1;
  std::map<std::pair<int, int>, Eigen::MatrixXd> blocks;

  int offdiag_block_count() const;
  Eigen::MatrixXd dense() const;
  // Scalar lower-triangular sparse view for sparse Cholesky in natural order.
  Eigen::SparseMatrix<double> lower_sparse() const;
};

SparsePrecision assemble_precision(const NngpFactors& f);

double log_density(const NngpFactors& f, const Eigen::VectorXd& w_S);

// Sum over nodes of log det F_i (equals log det of the NNGP covariance).
double log_det_cov(const NngpFactors& f);

// Evaluates the induced process cross-covariance, memoizing reference-set
// blocks computed through the generative recursion.
class CovEvaluator {
 public:
  explicit CovEvaluator(const NngpFactors& f) : f_(&f) {}

  // Block of the reference-set covariance at ordered positions (i, j).
  Eigen::MatrixXd reference_block(int i, int j);
  // General two-location covariance; v not in S handled via query factors.
  Eigen::MatrixXd cov(const Eigen::Vector2d& v1, const Eigen::Vector2d& v2);

 private:
  const NngpFactors* f_;
  std::unordered_map<long long, Eigen::MatrixXd> memo_;
  // Returns the reference position if v coincides with a reference point.
  int reference_position(const Eigen::Vector2d& v) const;
};

Eigen::MatrixXd nngp_cov(const NngpFactors& f, const Eigen::Vector2d& v1,
                         const Eigen::Vector2d& v2);

// Dense materialization of the NNGP covariance over S (oracle scale only).
Eigen::MatrixXd dense_nngp_cov(const NngpFactors& f);

// KL(N(0, C~_S) || N(0, C_S)) against the parent process, oracle scale only.
double kl_divergence(const NngpFactors& f);

}  // namespace nngp::factors
