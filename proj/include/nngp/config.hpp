#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nngp/mcmc.hpp"
#include "nngp/simulate.hpp"

namespace nngp::config {

// One structured config file drives every command; sections irrelevant to a
// command are simply unused. Schema-checked on load: unknown keys are errors.
struct RunConfig {
  std::string output_dir = "out";
  std::string run_id = "run";
  int threads = 0;  // 0 = all available cores
  bool verbose = false;

  struct Paths {
    std::string data;         // canonical data CSV
    std::string holdout;      // same schema; y_obs is the scoring truth
    std::string samples;      // fit output consumed by predict/metrics
    std::string predictions;  // predict output consumed by metrics
    std::string locations;    // prediction locations (canonical schema)
  } paths;

  model::Mode mode = model::Mode::svi;

  struct KernelConfig {
    cov::KernelFamily family = cov::KernelFamily::exponential;
    double sigma2 = 1.0;
    double phi = 1.0;
    double nu = 0.5;   // fixed value when nu has no prior
    double a = 0.0;    // fixed damped-cosine range when a has no prior
  } kernel;

  model::PriorSpec priors;

  struct NngpConfig {
    int m = 10;
    geo::NeighborScheme scheme = geo::NeighborScheme::nearest;
    geo::OrderStrategy ordering = geo::OrderStrategy::by_coord_sum;
    std::string reference = "observed";  // observed | grid | file
    int grid_nx = 0, grid_ny = 0;
    std::string reference_path;
  } nngp;

  mcmc::SamplerConfig sampler;

  struct SimulateConfig {
    int n = 100;
    simulate::LocationLaw law = simulate::LocationLaw::uniform;
    double domain[4] = {0.0, 0.0, 1.0, 1.0};  // x0 y0 x1 y1
    int grid_nx = 0, grid_ny = 0;
    Eigen::VectorXd beta;
    double tau2 = 0.1;
    std::uint64_t seed = 0;
  } sim;

  struct KlConfig {
    int n = 100;
    std::vector<int> m_values;
    std::uint64_t seed = 0;
  } kl;

  struct BenchConfig {
    std::vector<int> n_values;
    int m = 10;
    mcmc::Algorithm algorithm = mcmc::Algorithm::sequential;
    int iterations = 50;
  } bench;
};

// Parse + schema-check a JSON config file, then apply the two supported
// environment overrides (NNGP_OUTPUT_DIR, NNGP_THREADS). Throws
// std::invalid_argument on schema or value errors.
RunConfig load(const std::string& path);

// Reference-set resolution for a fit: empty optional means S = T.
std::optional<geo::LocationSet> resolve_reference(const RunConfig& cfg,
                                                  const geo::LocationSet& observed);

// Fit assembly shared by fit/bench/metrics: spec dimensions from the data,
// priors/kernel/nngp sections from the config.
mcmc::FitProblem make_problem(const RunConfig& cfg, const model::SpatialData& data);

}  // namespace nngp::config
