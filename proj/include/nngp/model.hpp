#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "nngp/cov.hpp"
#include "nngp/geo.hpp"

namespace nngp::model {

enum class Mode { svi, svc, custom };

Mode parse_mode(const std::string& name);
std::string to_string(Mode m);

// Observed data with stacked per-location designs: rows i*l .. i*l+l-1 of X
// hold the l x p block X(t_i)', and likewise for Z (l x q blocks).
struct SpatialData {
  geo::LocationSet locs;
  Eigen::MatrixXd X;
  Eigen::MatrixXd Z;
  Eigen::VectorXd y;

  int n() const { return locs.size(); }
  int l() const { return n() > 0 ? static_cast<int>(X.rows()) / n() : 0; }
  int p() const { return static_cast<int>(X.cols()); }
  int q() const { return static_cast<int>(Z.cols()); }

  Eigen::MatrixXd Xt(int i) const { return X.middleRows(i * l(), l()); }
  Eigen::MatrixXd Zt(int i) const { return Z.middleRows(i * l(), l()); }
  Eigen::VectorXd yt(int i) const { return y.segment(i * l(), l()); }
};

struct ModelSpec {
  Mode mode = Mode::svi;
  int l = 1;
  int p = 1;
  int q = 1;
};

struct UniformPrior {
  double lo = 0.0;
  double hi = 1.0;
};

struct InverseGammaPrior {
  double shape = 2.0;
  double rate = 1.0;
};

// Priors for the hierarchical model. For q > 1 the process variance prior is
// inverse-Wishart on AA'; we use the convention where IW(df, Psi) has mean
// Psi / (df - q - 1).
struct PriorSpec {
  bool beta_flat = true;
  Eigen::VectorXd beta_mean;  // ignored when flat
  Eigen::MatrixXd beta_cov;
  std::vector<InverseGammaPrior> tau2;  // one per response component
  InverseGammaPrior sigma2;             // q = 1
  double iw_df = 3.0;                   // q > 1
  Eigen::MatrixXd iw_scale;
  std::vector<UniformPrior> phi;
  std::vector<std::optional<UniformPrior>> nu;  // nullopt = fixed
  std::vector<UniformPrior> wave_a;             // damped_cosine range, if used
};

struct ChainState {
  Eigen::VectorXd beta;
  Eigen::VectorXd tau2;
  cov::ThetaParams theta;
  Eigen::VectorXd w;  // (k + |U|) q, reference block first
};

struct ValidationReport {
  int n = 0;
  int k = 0;
  int m = 0;
  Mode mode = Mode::svi;
};

// Dimensional consistency, prior legality, location distinctness. Throws a
// named error on the first violated check.
ValidationReport validate(const ModelSpec& spec, const PriorSpec& priors,
                          const SpatialData& data, int k, int m);

// Log prior density of (beta, tau2, theta); -inf outside uniform supports.
double log_prior(const ChainState& state, const PriorSpec& priors,
                 const cov::KernelFamily family);

// Log density of the theta block only (cross-covariance + nothing else).
double log_prior_theta(const cov::ThetaParams& theta, const PriorSpec& priors,
                       const cov::KernelFamily family);

double log_inverse_gamma(double x, double shape, double rate);
double log_inverse_wishart(const Eigen::MatrixXd& X, double df,
                           const Eigen::MatrixXd& scale);

}  // namespace nngp::model
