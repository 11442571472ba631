#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>

#include "nngp/mcmc.hpp"
#include "nngp/model.hpp"

namespace nngp::simulate {

enum class LocationLaw { uniform, two_cluster, grid };

LocationLaw parse_location_law(const std::string& name);

// Synthetic-data recipe: y = X beta + Z w + eps with w a dense GP draw.
struct SimRecipe {
  int n = 100;
  double x0 = 0.0, y0 = 0.0, x1 = 1.0, y1 = 1.0;  // domain rectangle
  LocationLaw law = LocationLaw::uniform;
  int grid_nx = 0, grid_ny = 0;  // grid law; 0 = near-square layout
  cov::CrossCovariance cc;       // process truth
  Eigen::VectorXd beta;          // intercept first; p = beta.size() covariate design
  double tau2 = 0.1;
  model::Mode mode = model::Mode::svi;  // svi: Z = 1; svc: Z = X
  std::uint64_t seed = 0;
};

geo::LocationSet sample_locations(const SimRecipe& recipe, RngStream& rng);

// Dense GP draw over locs: N(0, C) via jittered Cholesky.
Eigen::VectorXd sample_gp(const cov::CrossCovariance& cc, const geo::LocationSet& locs,
                          std::uint64_t seed);

struct Dataset {
  model::SpatialData data;
  Eigen::VectorXd w_true;  // n q
};

Dataset gen_dataset(const SimRecipe& recipe);

// Dense full-GP reference sampler: conjugate beta, joint Metropolis on
// (theta, tau2) against the exactly marginalized likelihood N(y | X beta,
// D + Z C Z'). Refuses n beyond dense scale.
mcmc::PosteriorSamples oracle_posterior(const mcmc::FitProblem& prob,
                                        const mcmc::SamplerConfig& cfg);

inline constexpr int kOracleMaxN = 2000;

struct KrigeResult {
  Eigen::VectorXd mean;
  Eigen::VectorXd var;
  Eigen::MatrixXd cov;  // joint mode only
};

// Exact Gaussian conditional of y(u) given the data, at fixed parameters.
KrigeResult oracle_krige(const model::SpatialData& data, const cov::ThetaParams& theta,
                         const Eigen::VectorXd& beta, const geo::LocationSet& news,
                         const Eigen::MatrixXd& Xnew, bool joint);

}  // namespace nngp::simulate
