#pragma once

#include <Eigen/Dense>

#include "nngp/mcmc.hpp"

namespace nngp::predict {

// New locations with stacked designs, laid out like SpatialData rows.
struct PredictionRequest {
  geo::LocationSet locs;
  Eigen::MatrixXd X;  // (nnew l) x p
  Eigen::MatrixXd Z;  // (nnew l) x q
  bool include_mean = true;
  bool keep_draws = false;
  std::uint64_t seed = 0;
};

// Componentwise empirical summaries over posterior predictive draws; vectors
// are stacked per location like the data layout.
struct Prediction {
  Eigen::VectorXd q50, q025, q975, mean;
  Eigen::MatrixXd draws;  // keep_draws only: stored draws x (nnew l)
};

// One predictive draw per stored posterior draw: rebuild (B_t, F_t) under the
// draw's theta, draw w(t) | w_N, then y(t). Locations matching a latent slot
// reuse that slot's stored w.
Prediction predict(const mcmc::FitProblem& prob, const mcmc::PosteriorSamples& samples,
                   const PredictionRequest& req, int threads = 1);

}  // namespace nngp::predict
