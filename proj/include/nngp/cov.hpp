#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "nngp/geo.hpp"

namespace nngp::cov {

enum class KernelFamily { exponential, matern, damped_cosine };

KernelFamily parse_kernel_family(const std::string& name);
std::string to_string(KernelFamily f);

// Isotropic correlation kernel. phi is the decay (inverse distance units);
// nu is the matern smoothness; a is the damped-cosine range, valid on the
// plane only for a <= 1/phi.
struct Kernel {
  KernelFamily family = KernelFamily::exponential;
  double phi = 1.0;
  double nu = 0.5;
  double a = 1.0;

  void validate() const;
};

double correlation(const Kernel& kernel, double distance);

// q-variate coregionalization: C(s,t) = A diag(rho_b(||s-t||)) A' with A
// lower-triangular, positive diagonal. For q=1 this is sigma^2 rho with
// sigma^2 = A^2.
struct CrossCovariance {
  Eigen::MatrixXd A;            // q x q lower-triangular
  std::vector<Kernel> kernels;  // one per latent component

  int q() const { return static_cast<int>(A.rows()); }
  void validate() const;

  static CrossCovariance univariate(double sigma2, Kernel k);
};

Eigen::MatrixXd cross_cov(const CrossCovariance& cc, const Eigen::Vector2d& s,
                          const Eigen::Vector2d& t);

// Dense |A|q x |B|q block covariance matrix; block (i,j) = cross_cov(a_i, b_j).
Eigen::MatrixXd cov_matrix(const CrossCovariance& cc, const geo::LocationSet& locsA,
                           const geo::LocationSet& locsB);

// Jitter added to the diagonal before any Cholesky of a kernel matrix:
// 1e-10 * tr(C)/dim.
inline constexpr double kJitterRel = 1e-10;

void add_jitter(Eigen::MatrixXd& C);

// Full covariance parameter vector: the cross-covariance plus per-response
// noise variances tau_j^2.
struct ThetaParams {
  CrossCovariance cc;
  Eigen::VectorXd tau2;  // length l

  void validate() const;
};

}  // namespace nngp::cov
