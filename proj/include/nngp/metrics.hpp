#pragma once

#include <Eigen/Dense>
#include <string>

#include "nngp/mcmc.hpp"
#include "nngp/predict.hpp"

namespace nngp::metrics {

struct FitReport {
  double pD = 0.0;
  double DIC = 0.0;
  double G = 0.0;
  double P = 0.0;
  double D = 0.0;
  double rmspe = 0.0;
  double coverage = 0.0;  // percent
  double width = 0.0;
  double pmse = 0.0;
  double seconds = 0.0;

  std::string text() const;
  std::string csv_header() const;
  std::string csv_row(const std::string& run_id) const;
};

// Conditional-on-w deviance: D(beta, tau2, w) = -2 log N(y | X beta + Z w, D).
// pD = mean deviance - deviance at posterior means; DIC = mean deviance + pD.
std::pair<double, double> dic(const mcmc::FitProblem& prob,
                              const mcmc::PosteriorSamples& samples);

// G + P predictive loss from exact posterior-predictive replicate moments at the
// observed locations: G = sum (y - E[y_rep])^2, P = sum Var[y_rep].
struct Gpd {
  double G = 0.0, P = 0.0, D = 0.0;
};
Gpd gpd(const mcmc::FitProblem& prob, const mcmc::PosteriorSamples& samples);

struct HoldoutScores {
  double rmspe = 0.0;
  double coverage = 0.0;  // percent
  double width = 0.0;
  double pmse = 0.0;
};
HoldoutScores holdout_scores(const predict::Prediction& pred, const Eigen::VectorXd& truth);

}  // namespace nngp::metrics
