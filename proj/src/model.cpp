#include "nngp/model.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace nngp::model {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

Mode parse_mode(const std::string& name) {
  if (name == "svi") return Mode::svi;
  if (name == "svc") return Mode::svc;
  if (name == "custom") return Mode::custom;
  throw std::invalid_argument("unknown model mode: " + name);
}

std::string to_string(Mode m) {
  switch (m) {
    case Mode::svi: return "svi";
    case Mode::svc: return "svc";
    case Mode::custom: return "custom";
  }
  return "?";
}

ValidationReport validate(const ModelSpec& spec, const PriorSpec& priors,
                          const SpatialData& data, int k, int m) {
  const int n = data.n();
  if (n < 1) throw std::invalid_argument("validate: empty data");
  if (data.X.rows() != static_cast<long>(n) * spec.l || data.X.cols() != spec.p) {
    throw std::invalid_argument("validate: X dimensions inconsistent with spec");
  }
  if (data.Z.rows() != static_cast<long>(n) * spec.l || data.Z.cols() != spec.q) {
    throw std::invalid_argument("validate: Z dimensions inconsistent with spec");
  }
  if (data.y.size() != static_cast<long>(n) * spec.l) {
    throw std::invalid_argument("validate: y length inconsistent with spec");
  }
  if (spec.mode == Mode::svi) {
    if (spec.q != spec.l) throw std::invalid_argument("validate: svi requires q = l");
    if (!data.Z.isOnes() && !(spec.l > 1)) {
      // svi with l = 1 means Z identically 1
      throw std::invalid_argument("validate: svi requires Z = 1");
    }
  }
  if (spec.mode == Mode::svc) {
    if (spec.q != spec.p) throw std::invalid_argument("validate: svc requires q = p");
    if (data.Z.rows() != data.X.rows() || data.Z.cols() != data.X.cols() ||
        (data.Z - data.X).cwiseAbs().maxCoeff() != 0.0) {
      throw std::invalid_argument("validate: svc requires Z = X");
    }
  }
  if (static_cast<int>(priors.tau2.size()) != spec.l) {
    throw std::invalid_argument("validate: need one tau2 prior per response");
  }
  for (const auto& t : priors.tau2) {
    if (!(t.shape > 0.0) || !(t.rate > 0.0)) {
      throw std::invalid_argument("validate: inverse-gamma hyperparameters must be > 0");
    }
  }
  if (!priors.beta_flat) {
    if (priors.beta_mean.size() != spec.p || priors.beta_cov.rows() != spec.p ||
        priors.beta_cov.cols() != spec.p) {
      throw std::invalid_argument("validate: beta prior dimensions mismatch");
    }
  }
  auto check_uniform = [](const UniformPrior& u, const char* what) {
    if (!(u.lo < u.hi)) {
      throw std::invalid_argument(std::string("validate: uniform prior lo >= hi for ") + what);
    }
  };
  for (const auto& u : priors.phi) check_uniform(u, "phi");
  for (const auto& u : priors.nu) {
    if (u) check_uniform(*u, "nu");
  }
  for (const auto& u : priors.wave_a) check_uniform(u, "a");
  if (spec.q > 1) {
    if (priors.iw_scale.rows() != spec.q || priors.iw_scale.cols() != spec.q) {
      throw std::invalid_argument("validate: inverse-Wishart scale must be q x q");
    }
    if (!(priors.iw_df > spec.q - 1)) {
      throw std::invalid_argument("validate: inverse-Wishart df must exceed q - 1");
    }
  }
  if (m < 1) throw std::invalid_argument("validate: m >= 1 required");
  return ValidationReport{n, k, m, spec.mode};
}

double log_inverse_gamma(double x, double shape, double rate) {
  if (!(x > 0.0)) return kNegInf;
  return shape * std::log(rate) - std::lgamma(shape) - (shape + 1.0) * std::log(x) -
         rate / x;
}

double log_inverse_wishart(const Eigen::MatrixXd& X, double df,
                           const Eigen::MatrixXd& scale) {
  const int q = static_cast<int>(X.rows());
  Eigen::LLT<Eigen::MatrixXd> llt(X);
  if (llt.info() != Eigen::Success) return kNegInf;
  const double logdet_X = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  const double logdet_S = std::log(scale.determinant());
  double lgamma_q = 0.25 * q * (q - 1) * std::log(std::numbers::pi);
  for (int j = 1; j <= q; ++j) lgamma_q += std::lgamma(0.5 * (df + 1 - j));
  return 0.5 * df * logdet_S - 0.5 * df * q * std::log(2.0) - lgamma_q -
         0.5 * (df + q + 1) * logdet_X - 0.5 * llt.solve(scale).trace();
}

double log_prior_theta(const cov::ThetaParams& theta, const PriorSpec& priors,
                       const cov::KernelFamily family) {
  const int q = theta.cc.q();
  double lp = 0.0;
  if (q == 1) {
    const double sigma2 = theta.cc.A(0, 0) * theta.cc.A(0, 0);
    lp += log_inverse_gamma(sigma2, priors.sigma2.shape, priors.sigma2.rate);
  } else {
    lp += log_inverse_wishart(theta.cc.A * theta.cc.A.transpose(), priors.iw_df,
                              priors.iw_scale);
  }
  for (int b = 0; b < q; ++b) {
    const auto& kern = theta.cc.kernels[b];
    const auto& up = priors.phi.at(b);
    if (kern.phi < up.lo || kern.phi > up.hi) return kNegInf;
    lp += -std::log(up.hi - up.lo);
    if (family == cov::KernelFamily::matern && priors.nu.at(b)) {
      const auto& un = *priors.nu[b];
      if (kern.nu < un.lo || kern.nu > un.hi) return kNegInf;
      lp += -std::log(un.hi - un.lo);
    }
    if (family == cov::KernelFamily::damped_cosine) {
      if (kern.a > 1.0 / kern.phi) return kNegInf;  // validity boundary
      if (b < static_cast<int>(priors.wave_a.size())) {
        // empty wave_a means a is held fixed: validity check only
        const auto& ua = priors.wave_a[b];
        if (kern.a < ua.lo || kern.a > ua.hi) return kNegInf;
        lp += -std::log(ua.hi - ua.lo);
      }
    }
  }
  return lp;
}

double log_prior(const ChainState& state, const PriorSpec& priors,
                 const cov::KernelFamily family) {
  double lp = log_prior_theta(state.theta, priors, family);
  if (lp == kNegInf) return kNegInf;
  for (int j = 0; j < state.tau2.size(); ++j) {
    lp += log_inverse_gamma(state.tau2(j), priors.tau2.at(j).shape, priors.tau2.at(j).rate);
  }
  if (!priors.beta_flat) {
    const Eigen::VectorXd r = state.beta - priors.beta_mean;
    Eigen::LLT<Eigen::MatrixXd> llt(priors.beta_cov);
    const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    const Eigen::VectorXd z = llt.matrixL().solve(r);
    lp += -0.5 * (state.beta.size() * std::log(2.0 * std::numbers::pi) + logdet +
                  z.squaredNorm());
  }
  return lp;
}

}  // namespace nngp::model
