#include "nngp/cov.hpp"

#include <cmath>
#include <stdexcept>

namespace nngp::cov {

KernelFamily parse_kernel_family(const std::string& name) {
  if (name == "exponential") return KernelFamily::exponential;
  if (name == "matern") return KernelFamily::matern;
  if (name == "damped_cosine") return KernelFamily::damped_cosine;
  throw std::invalid_argument("unknown kernel family: " + name);
}

std::string to_string(KernelFamily f) {
  switch (f) {
    case KernelFamily::exponential: return "exponential";
    case KernelFamily::matern: return "matern";
    case KernelFamily::damped_cosine: return "damped_cosine";
  }
  return "?";
}

void Kernel::validate() const {
  if (!(phi > 0.0)) throw std::invalid_argument("kernel: phi must be > 0");
  if (family == KernelFamily::matern && !(nu > 0.0)) {
    throw std::invalid_argument("kernel: matern nu must be > 0");
  }
  if (family == KernelFamily::damped_cosine) {
    if (!(a > 0.0)) throw std::invalid_argument("kernel: damped_cosine a must be > 0");
    if (a > 1.0 / phi) {
      throw std::invalid_argument("kernel: damped_cosine requires a <= 1/phi");
    }
  }
}

double correlation(const Kernel& kernel, double distance) {
  if (distance < 0.0) throw std::invalid_argument("correlation: distance < 0");
  switch (kernel.family) {
    case KernelFamily::exponential:
      return std::exp(-kernel.phi * distance);
    case KernelFamily::matern: {
      if (distance == 0.0) return 1.0;
      const double x = kernel.phi * distance;
      const double nu = kernel.nu;
      // K_nu underflows long before this threshold matters
      if (x > 700.0) return 0.0;
      return std::pow(2.0, 1.0 - nu) / std::tgamma(nu) * std::pow(x, nu) *
             std::cyl_bessel_k(nu, x);
    }
    case KernelFamily::damped_cosine:
      return std::exp(-distance / kernel.a) * std::cos(kernel.phi * distance);
  }
  return 0.0;
}

void CrossCovariance::validate() const {
  const int n = q();
  if (n < 1 || A.cols() != n) throw std::invalid_argument("cross_cov: A must be square");
  if (static_cast<int>(kernels.size()) != n) {
    throw std::invalid_argument("cross_cov: need one kernel per component");
  }
  for (int i = 0; i < n; ++i) {
    if (!(A(i, i) > 0.0)) throw std::invalid_argument("cross_cov: diag(A) must be > 0");
    for (int j = i + 1; j < n; ++j) {
      if (A(i, j) != 0.0) throw std::invalid_argument("cross_cov: A must be lower-triangular");
    }
  }
  for (const auto& k : kernels) k.validate();
}

CrossCovariance CrossCovariance::univariate(double sigma2, Kernel k) {
  if (!(sigma2 > 0.0)) throw std::invalid_argument("cross_cov: sigma2 must be > 0");
  CrossCovariance cc;
  cc.A = Eigen::MatrixXd::Constant(1, 1, std::sqrt(sigma2));
  cc.kernels = {k};
  return cc;
}

Eigen::MatrixXd cross_cov(const CrossCovariance& cc, const Eigen::Vector2d& s,
                          const Eigen::Vector2d& t) {
  const int n = cc.q();
  const double d = (s - t).norm();
  Eigen::VectorXd rho(n);
  for (int b = 0; b < n; ++b) rho(b) = correlation(cc.kernels[b], d);
  return cc.A * rho.asDiagonal() * cc.A.transpose();
}

Eigen::MatrixXd cov_matrix(const CrossCovariance& cc, const geo::LocationSet& locsA,
                           const geo::LocationSet& locsB) {
  const int q = cc.q();
  const int na = locsA.size(), nb = locsB.size();
  Eigen::MatrixXd C(na * q, nb * q);
  for (int i = 0; i < na; ++i) {
    for (int j = 0; j < nb; ++j) {
      C.block(i * q, j * q, q, q) = cross_cov(cc, locsA.point(i), locsB.point(j));
    }
  }
  return C;
}

void add_jitter(Eigen::MatrixXd& C) {
  const double eps = kJitterRel * C.trace() / static_cast<double>(C.rows());
  C.diagonal().array() += eps;
}

void ThetaParams::validate() const {
  cc.validate();
  if ((tau2.array() <= 0.0).any()) {
    throw std::invalid_argument("theta: noise variances must be > 0");
  }
}

}  // namespace nngp::cov
