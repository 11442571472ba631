#include "nngp/factors.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "nngp/parallel.hpp"

namespace nngp::factors {

namespace {

Eigen::VectorXd gather(const Eigen::VectorXd& w, const std::vector<int>& idx, int q) {
  Eigen::VectorXd out(static_cast<int>(idx.size()) * q);
  for (size_t j = 0; j < idx.size(); ++j) out.segment(j * q, q) = w.segment(idx[j] * q, q);
  return out;
}

}  // namespace

void NodeFactor::finalize() {
  F_llt.compute(F);
  if (F_llt.info() != Eigen::Success) {
    throw std::runtime_error("conditional residual covariance not positive definite");
  }
  F_logdet = 2.0 * F_llt.matrixLLT().diagonal().array().log().sum();
}

NodeFactor factor_for(const geo::LocationSet& ref, const cov::CrossCovariance& cc,
                      const std::vector<int>& neighbors, const Eigen::Vector2d& point,
                      double nugget) {
  const int q = cc.q();
  const int nn = static_cast<int>(neighbors.size());
  NodeFactor nf;
  nf.F = cov::cross_cov(cc, point, point);
  nf.F.diagonal().array() += nugget;
  if (nn == 0) {
    nf.B.resize(q, 0);
    nf.finalize();
    return nf;
  }
  Eigen::MatrixXd C_N(nn * q, nn * q);
  Eigen::MatrixXd C_vN(q, nn * q);
  for (int a = 0; a < nn; ++a) {
    const Eigen::Vector2d pa = ref.point(neighbors[a]);
    C_vN.block(0, a * q, q, q) = cov::cross_cov(cc, point, pa);
    for (int b = a; b < nn; ++b) {
      const Eigen::MatrixXd blk = cov::cross_cov(cc, pa, ref.point(neighbors[b]));
      C_N.block(a * q, b * q, q, q) = blk;
      C_N.block(b * q, a * q, q, q) = blk.transpose();
    }
  }
  C_N.diagonal().array() += nugget;
  cov::add_jitter(C_N);
  Eigen::LLT<Eigen::MatrixXd> llt(C_N);
  if (llt.info() != Eigen::Success) {
    throw std::runtime_error("singular neighbor covariance (after jitter)");
  }
  Eigen::MatrixXd Bt = llt.solve(C_vN.transpose());
  Bt += llt.solve(C_vN.transpose() - C_N * Bt);  // one refinement step
  nf.B = Bt.transpose();
  nf.F -= nf.B * C_vN.transpose();
  // symmetrize against roundoff before the q x q Cholesky
  nf.F = 0.5 * (nf.F + nf.F.transpose()).eval();
  nf.finalize();
  return nf;
}

NngpFactors compute_factors(std::shared_ptr<const geo::NeighborDag> dag,
                            const cov::CrossCovariance& cc, int threads, double nugget) {
  cc.validate();
  NngpFactors f;
  f.dag = std::move(dag);
  f.cc = cc;
  const int k = f.dag->size();
  f.node.resize(k);
  try {
    parallel_for(k, threads, [&](int i) {
      try {
        f.node[i] = factor_for(f.dag->ordered, cc, f.dag->neighbors[i],
                               f.dag->ordered.point(i), nugget);
      } catch (const std::exception& e) {
        throw std::runtime_error("compute_factors: node " + std::to_string(i) + " (id " +
                                 std::to_string(f.dag->to_original[i]) + "): " + e.what());
      }
    });
  } catch (...) {
    throw;
  }
  return f;
}

QueryFactor query_factors(const NngpFactors& f, const Eigen::Vector2d& u) {
  QueryFactor qf;
  const int m = std::min(f.dag->m, f.k());
  qf.neighbors = geo::neighbors_for_query(f.dag->ordered, u, m);
  qf.f = factor_for(f.dag->ordered, f.cc, qf.neighbors, u);
  return qf;
}

int SparsePrecision::offdiag_block_count() const {
  int c = 0;
  for (const auto& [ij, blk] : blocks) {
    if (ij.first != ij.second) ++c;
  }
  return c;
}

Eigen::MatrixXd SparsePrecision::dense() const {
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(k * q, k * q);
  for (const auto& [ij, blk] : blocks) {
    M.block(ij.first * q, ij.second * q, q, q) = blk;
    if (ij.first != ij.second) {
      M.block(ij.second * q, ij.first * q, q, q) = blk.transpose();
    }
  }
  return M;
}

Eigen::SparseMatrix<double> SparsePrecision::lower_sparse() const {
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(blocks.size() * q * q);
  for (const auto& [ij, blk] : blocks) {
    for (int a = 0; a < q; ++a) {
      for (int b = 0; b < q; ++b) {
        const int row = ij.first * q + a, col = ij.second * q + b;
        if (row >= col) trips.emplace_back(row, col, blk(a, b));
      }
    }
  }
  Eigen::SparseMatrix<double> M(k * q, k * q);
  M.setFromTriplets(trips.begin(), trips.end());
  return M;
}

SparsePrecision assemble_precision(const NngpFactors& f) {
  const int q = f.q();
  SparsePrecision P;
  P.k = f.k();
  P.q = q;
  auto add = [&](int i, int j, const Eigen::MatrixXd& blk) {
    // keep lower triangle (i >= j) only
    std::pair<int, int> key = i >= j ? std::pair{i, j} : std::pair{j, i};
    Eigen::MatrixXd b = i >= j ? blk : Eigen::MatrixXd(blk.transpose());
    auto [it, inserted] = P.blocks.try_emplace(key, b);
    if (!inserted) it->second += b;
  };
  for (int l = 0; l < f.k(); ++l) {
    const auto& nbrs = f.dag->neighbors[l];
    const int nn = static_cast<int>(nbrs.size());
    const Eigen::MatrixXd Finv = f.node[l].F_llt.solve(Eigen::MatrixXd::Identity(q, q));
    // index set {l} union N(l); coefficient +I at l, -B slot at each neighbor
    add(l, l, Finv);
    for (int a = 0; a < nn; ++a) {
      const Eigen::MatrixXd Ba = f.node[l].B.block(0, a * q, q, q);
      add(l, nbrs[a], -Finv * Ba);
      for (int b = 0; b < nn; ++b) {
        const Eigen::MatrixXd Bb = f.node[l].B.block(0, b * q, q, q);
        if (nbrs[a] >= nbrs[b]) add(nbrs[a], nbrs[b], Ba.transpose() * Finv * Bb);
      }
    }
  }
  return P;
}

double log_density(const NngpFactors& f, const Eigen::VectorXd& w_S) {
  const int q = f.q();
  if (w_S.size() != static_cast<long>(f.k()) * q) {
    throw std::invalid_argument("log_density: w_S has wrong length");
  }
  double ll = 0.0;
  for (int i = 0; i < f.k(); ++i) {
    const auto& nf = f.node[i];
    Eigen::VectorXd r = w_S.segment(i * q, q);
    if (!f.dag->neighbors[i].empty()) {
      r -= nf.B * gather(w_S, f.dag->neighbors[i], q);
    }
    const Eigen::VectorXd z = nf.F_llt.matrixL().solve(r);
    ll += -0.5 * (q * std::log(2.0 * std::numbers::pi) + nf.F_logdet + z.squaredNorm());
  }
  return ll;
}

double log_det_cov(const NngpFactors& f) {
  double s = 0.0;
  for (const auto& nf : f.node) s += nf.F_logdet;
  return s;
}

int CovEvaluator::reference_position(const Eigen::Vector2d& v) const {
  for (int i = 0; i < f_->k(); ++i) {
    const Eigen::Vector2d p = f_->dag->ordered.point(i);
    if (p.x() == v.x() && p.y() == v.y()) return i;
  }
  return -1;
}

Eigen::MatrixXd CovEvaluator::reference_block(int i, int j) {
  const int q = f_->q();
  const bool flip = i < j;
  if (flip) std::swap(i, j);
  const long long key = static_cast<long long>(i) * f_->k() + j;
  auto it = memo_.find(key);
  if (it == memo_.end()) {
    const auto& nbrs = f_->dag->neighbors[i];
    Eigen::MatrixXd blk;
    if (i == j) {
      blk = f_->node[i].F;
      if (!nbrs.empty()) {
        // C~_ii = F_i + B_i C~_{N(i),N(i)} B_i'
        const int nn = static_cast<int>(nbrs.size());
        Eigen::MatrixXd CNN(nn * q, nn * q);
        for (int a = 0; a < nn; ++a) {
          for (int b = 0; b < nn; ++b) {
            CNN.block(a * q, b * q, q, q) = reference_block(nbrs[a], nbrs[b]);
          }
        }
        blk += f_->node[i].B * CNN * f_->node[i].B.transpose();
      }
    } else {
      // i > j: C~_ij = B_i C~_{N(i),j}
      blk = Eigen::MatrixXd::Zero(q, q);
      for (size_t a = 0; a < nbrs.size(); ++a) {
        blk += f_->node[i].B.block(0, a * q, q, q) * reference_block(nbrs[a], j);
      }
    }
    it = memo_.emplace(key, std::move(blk)).first;
  }
  return flip ? Eigen::MatrixXd(it->second.transpose()) : it->second;
}

Eigen::MatrixXd CovEvaluator::cov(const Eigen::Vector2d& v1, const Eigen::Vector2d& v2) {
  const int q = f_->q();
  const int p1 = reference_position(v1);
  const int p2 = reference_position(v2);
  if (p1 >= 0 && p2 >= 0) return reference_block(p1, p2);
  if (p1 >= 0) return Eigen::MatrixXd(cov(v2, v1).transpose());
  // v1 outside S
  const QueryFactor q1 = query_factors(*f_, v1);
  const int n1 = static_cast<int>(q1.neighbors.size());
  if (p2 >= 0) {
    Eigen::MatrixXd blk = Eigen::MatrixXd::Zero(q, q);
    for (int a = 0; a < n1; ++a) {
      blk += q1.f.B.block(0, a * q, q, q) * reference_block(q1.neighbors[a], p2);
    }
    return blk;
  }
  const QueryFactor q2 = query_factors(*f_, v2);
  const int n2 = static_cast<int>(q2.neighbors.size());
  Eigen::MatrixXd CNN(n1 * q, n2 * q);
  for (int a = 0; a < n1; ++a) {
    for (int b = 0; b < n2; ++b) {
      CNN.block(a * q, b * q, q, q) = reference_block(q1.neighbors[a], q2.neighbors[b]);
    }
  }
  Eigen::MatrixXd blk = q1.f.B * CNN * q2.f.B.transpose();
  if (v1.x() == v2.x() && v1.y() == v2.y()) blk += q1.f.F;
  return blk;
}

Eigen::MatrixXd nngp_cov(const NngpFactors& f, const Eigen::Vector2d& v1,
                         const Eigen::Vector2d& v2) {
  CovEvaluator ev(f);
  return ev.cov(v1, v2);
}

Eigen::MatrixXd dense_nngp_cov(const NngpFactors& f) {
  // C~ = B^-1 F B^-T with B unit lower triangular in DAG order
  const int q = f.q();
  const int n = f.k() * q;
  Eigen::MatrixXd B = Eigen::MatrixXd::Identity(n, n);
  Eigen::MatrixXd F = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < f.k(); ++i) {
    F.block(i * q, i * q, q, q) = f.node[i].F;
    const auto& nbrs = f.dag->neighbors[i];
    for (size_t a = 0; a < nbrs.size(); ++a) {
      B.block(i * q, nbrs[a] * q, q, q) = -f.node[i].B.block(0, a * q, q, q);
    }
  }
  const Eigen::MatrixXd Binv_F =
      B.triangularView<Eigen::Lower>().solve(F);
  return B.triangularView<Eigen::Lower>().solve(Binv_F.transpose()).transpose();
}

double kl_divergence(const NngpFactors& f) {
  const int n = f.k() * f.q();
  Eigen::MatrixXd C = cov::cov_matrix(f.cc, f.dag->ordered, f.dag->ordered);
  cov::add_jitter(C);
  Eigen::LLT<Eigen::MatrixXd> llt(C);
  if (llt.info() != Eigen::Success) {
    throw std::runtime_error("kl_divergence: parent covariance not PD after jitter");
  }
  const Eigen::MatrixXd Ct = dense_nngp_cov(f);
  const double logdet_C = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  const double logdet_Ct = log_det_cov(f);
  const double tr = llt.solve(Ct).trace();
  const double kl = 0.5 * (tr - n + logdet_C - logdet_Ct);
  return std::max(kl, 0.0);
}

}  // namespace nngp::factors
