#pragma once

#include <Eigen/Dense>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "nngp/factors.hpp"
#include "nngp/model.hpp"
#include "nngp/rng.hpp"

namespace nngp::mcmc {

enum class Algorithm { sequential, block, response, marginal };

Algorithm parse_algorithm(const std::string& name);
std::string to_string(Algorithm a);

struct MetropolisConfig {
  double init_step = 0.2;
  int adapt_window = 50;       // Robbins-Monro cadence, burn-in only
  double target_lo = 0.25;
  double target_hi = 0.45;
  bool per_component = false;  // default: one joint block with adapted scale
};

struct SamplerConfig {
  Algorithm algorithm = Algorithm::sequential;
  int iterations = 1000;
  int burn_in = 200;
  int thin = 1;
  int chains = 1;
  std::uint64_t seed = 0;
  MetropolisConfig metropolis;
  int threads = 1;
  bool store_w = true;

  void validate() const;
};

// Everything a fit needs besides the sampler knobs. The reference set S
// defaults to the observed locations; when given, observed locations outside
// S are treated as query nodes with their own conditional factors.
struct FitProblem {
  model::ModelSpec spec;
  model::PriorSpec priors;
  model::SpatialData data;
  cov::KernelFamily family = cov::KernelFamily::exponential;
  double fixed_nu = 0.5;
  double fixed_a = 0.0;  // damped-cosine range when not sampled (0 = sample it)
  int m = 10;
  geo::OrderStrategy ordering = geo::OrderStrategy::by_coord_sum;
  geo::NeighborScheme scheme = geo::NeighborScheme::nearest;
  std::optional<geo::LocationSet> reference;
};

// Latent-field bookkeeping for one chain: the DAG over S, conditional factors
// under the current theta, query-node factors for observed locations outside
// S, and reverse dependency lists that include query dependents.
struct LatentField {
  std::shared_ptr<const geo::NeighborDag> dag;
  std::vector<int> data_slot;    // data index -> latent slot (< k ref, >= k query)
  std::vector<int> slot_data;    // latent slot -> data index, -1 if unobserved
  std::vector<int> query_data;   // query index -> data index
  std::vector<std::vector<int>> query_neighbors;  // fixed geometry, ref positions
  std::vector<std::vector<std::pair<int, int>>> query_reverse;  // ref -> (query, slot)
  Eigen::MatrixX2d data_points;  // query index -> coordinates
  double nugget = 0.0;           // response algorithm folds tau2 into the factors
  bool nugget_is_tau2 = false;

  factors::NngpFactors fac;
  std::vector<factors::NodeFactor> qfac;

  int k() const { return dag->size(); }
  int u() const { return static_cast<int>(query_data.size()); }
  int q() const { return fac.cc.q(); }
  Eigen::Vector2d query_point(int t) const { return data_points.row(t); }

  void rebuild(const cov::CrossCovariance& cc, int threads);
  // Bytes held by conditional factors; the audited O((n+k)m^2) footprint.
  std::size_t factor_bytes() const;
};

LatentField build_latent_field(const FitProblem& prob);

// log N(w | 0, C~) over reference and query nodes under the current factors.
double latent_log_density(const LatentField& lf, const Eigen::VectorXd& w);

// Bijection between ThetaParams (+ optionally tau2) and an unconstrained
// vector: log for variances/diagonals, scaled logit for uniform-bounded
// parameters. log_jacobian is log |d(natural)/d(unconstrained)| including the
// A -> AA' change of variables for q > 1.
class ThetaTransform {
 public:
  ThetaTransform(const model::ModelSpec& spec, const model::PriorSpec& priors,
                 cov::KernelFamily family, bool include_tau2, double fixed_nu,
                 double fixed_a, int l);

  int dim() const { return static_cast<int>(names_.size()); }
  const std::vector<std::string>& names() const { return names_; }

  Eigen::VectorXd to_unconstrained(const cov::ThetaParams& theta) const;
  cov::ThetaParams from_unconstrained(const Eigen::VectorXd& x) const;
  double log_jacobian(const Eigen::VectorXd& x) const;
  // log prior of theta in the natural parameterization (A-space for q > 1).
  double log_prior(const cov::ThetaParams& theta) const;
  // natural-scale values per entry (sigma2/A, phi, nu, a, tau2) and back.
  Eigen::VectorXd natural(const cov::ThetaParams& theta) const;
  cov::ThetaParams from_natural(const Eigen::VectorXd& v) const;
  bool includes_tau2() const { return include_tau2_; }

 private:
  struct Entry {
    enum Kind { log_diag_a, free_a, logit_phi, logit_nu, logit_a, log_tau2 } kind;
    int index;        // kernel/component index
    int row = 0, col = 0;  // for A entries
    double lo = 0.0, hi = 0.0;
  };
  std::vector<Entry> entries_;
  std::vector<std::string> names_;
  model::PriorSpec priors_;
  cov::KernelFamily family_;
  int q_ = 1, l_ = 1;
  bool include_tau2_ = false;
  double fixed_nu_ = 0.5, fixed_a_ = 0.0;
};

// Random-walk Metropolis state for the theta block.
struct MetropolisState {
  Eigen::VectorXd step;  // per-parameter scales
  long proposals = 0;
  long accepts = 0;
  long window_proposals = 0;
  long window_accepts = 0;
  int adapt_count = 0;

  void adapt(double target_lo, double target_hi);  // Robbins-Monro on the window
  double rate() const { return proposals ? double(accepts) / proposals : 0.0; }
};

// Individual conditional updates (exposed for oracle tests).
void update_beta(model::ChainState& st, const model::SpatialData& data,
                 const model::PriorSpec& priors, const LatentField& lf, RngStream& rng);
void update_tau2(model::ChainState& st, const model::SpatialData& data,
                 const model::PriorSpec& priors, const LatentField& lf, RngStream& rng);
bool update_theta(model::ChainState& st, LatentField& lf, const ThetaTransform& tr,
                  MetropolisState& ms, const MetropolisConfig& cfg, bool adapting,
                  RngStream& rng, int threads);
void update_w_reference(model::ChainState& st, const LatentField& lf,
                        const model::SpatialData& data, RngStream& rng);
void update_w_query(model::ChainState& st, const LatentField& lf,
                    const model::SpatialData& data, RngStream& rng, int threads);
void update_w_block(model::ChainState& st, const LatentField& lf,
                    const model::SpatialData& data, RngStream& rng);

struct PosteriorSamples {
  std::vector<std::string> names;   // parameter columns of draws
  Eigen::MatrixXd draws;            // stored draws (all chains stacked) x params
  Eigen::MatrixXd w_draws;          // optional latent draws, same row order
  std::vector<int> chain_of;        // chain index per stored row
  std::vector<double> accept_rate;  // theta acceptance per chain
  std::vector<double> sec_per_iter; // sampling time per iteration, per chain
  std::size_t factor_bytes = 0;     // audited factor footprint

  int column(const std::string& name) const;  // -1 if absent
  Eigen::VectorXd col(const std::string& name) const;
};

PosteriorSamples run_chain(const FitProblem& prob, const SamplerConfig& cfg);

// Empirical summaries with Monte Carlo error from batch means.
double quantile(Eigen::VectorXd draws, double p);
double mcse_mean(const Eigen::VectorXd& draws);
double mcse_median(const Eigen::VectorXd& draws);

}  // namespace nngp::mcmc
