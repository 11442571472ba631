#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <vector>

#include "nngp/mcmc.hpp"
#include "nngp/model.hpp"

namespace nngp::csv {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shortest round-trip decimal representation; '.' decimal point always.
std::string format_number(double v);

// Generic numeric table. Header row is required on disk.
void write_table(const std::string& path, const std::vector<std::string>& header,
                 const Eigen::MatrixXd& rows);
Eigen::MatrixXd read_table(const std::string& path, std::vector<std::string>& header);

// Canonical data schema: id,x,y,<covariate columns>,y_obs.
struct DataFile {
  geo::LocationSet locs;
  Eigen::MatrixXd covariates;           // n x c, excludes the intercept
  Eigen::VectorXd y;
  std::vector<std::string> cov_names;   // x1..xc by default
};

DataFile read_data(const std::string& path);
void write_data(const std::string& path, const DataFile& d);

// X = [1 | covariates]; Z = 1 for svi, Z = X for svc.
model::SpatialData to_spatial_data(const DataFile& d, model::Mode mode);

// Samples schema: chain,<parameter columns>[,w0,w1,...].
void write_samples(const std::string& path, const mcmc::PosteriorSamples& s,
                   bool include_w);
mcmc::PosteriorSamples read_samples(const std::string& path);

}  // namespace nngp::csv
