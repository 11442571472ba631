#include "nngp/csv.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace nngp::csv {

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& s, const std::string& path) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw IoError(path + ": not a number: '" + s + "'");
  }
  return v;
}

std::vector<std::vector<std::string>> read_rows(const std::string& path,
                                                std::vector<std::string>& header) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError(path + ": missing header row");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  header = split_line(line);
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_line(line);
    if (fields.size() != header.size()) {
      throw IoError(path + ": row has " + std::to_string(fields.size()) +
                    " fields, header has " + std::to_string(header.size()));
    }
    rows.push_back(std::move(fields));
  }
  return rows;
}

}  // namespace

std::string format_number(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

void write_table(const std::string& path, const std::vector<std::string>& header,
                 const Eigen::MatrixXd& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (size_t j = 0; j < header.size(); ++j) {
    if (j) out << ',';
    out << header[j];
  }
  out << '\n';
  for (long i = 0; i < rows.rows(); ++i) {
    for (long j = 0; j < rows.cols(); ++j) {
      if (j) out << ',';
      out << format_number(rows(i, j));
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

Eigen::MatrixXd read_table(const std::string& path, std::vector<std::string>& header) {
  const auto rows = read_rows(path, header);
  Eigen::MatrixXd m(rows.size(), header.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    for (size_t j = 0; j < header.size(); ++j) m(i, j) = parse_number(rows[i][j], path);
  }
  return m;
}

DataFile read_data(const std::string& path) {
  std::vector<std::string> header;
  const Eigen::MatrixXd m = read_table(path, header);
  if (header.size() < 4 || header[0] != "id" || header[1] != "x" || header[2] != "y" ||
      header.back() != "y_obs") {
    throw IoError(path + ": expected header id,x,y,<covariates>,y_obs");
  }
  const int n = static_cast<int>(m.rows());
  const int c = static_cast<int>(header.size()) - 4;
  DataFile d;
  d.locs = geo::LocationSet(m.middleCols(1, 2));
  d.covariates = m.middleCols(3, c);
  d.y = m.col(3 + c);
  d.cov_names.assign(header.begin() + 3, header.end() - 1);
  for (int i = 0; i < n; ++i) {
    if (m(i, 0) != i) throw IoError(path + ": ids must run 0..n-1 in order");
  }
  return d;
}

void write_data(const std::string& path, const DataFile& d) {
  const int n = d.locs.size(), c = static_cast<int>(d.covariates.cols());
  std::vector<std::string> header = {"id", "x", "y"};
  for (int j = 0; j < c; ++j) {
    header.push_back(j < static_cast<int>(d.cov_names.size())
                         ? d.cov_names[j]
                         : "x" + std::to_string(j + 1));
  }
  header.push_back("y_obs");
  Eigen::MatrixXd m(n, 4 + c);
  for (int i = 0; i < n; ++i) m(i, 0) = i;
  m.middleCols(1, 2) = d.locs.coords();
  if (c > 0) m.middleCols(3, c) = d.covariates;
  m.col(3 + c) = d.y;
  write_table(path, header, m);
}

model::SpatialData to_spatial_data(const DataFile& d, model::Mode mode) {
  const int n = d.locs.size(), c = static_cast<int>(d.covariates.cols());
  model::SpatialData data;
  data.locs = d.locs;
  data.X.resize(n, 1 + c);
  data.X.col(0).setOnes();
  if (c > 0) data.X.rightCols(c) = d.covariates;
  data.Z = mode == model::Mode::svc ? data.X : Eigen::MatrixXd::Ones(n, 1);
  data.y = d.y;
  return data;
}

void write_samples(const std::string& path, const mcmc::PosteriorSamples& s,
                   bool include_w) {
  include_w = include_w && s.w_draws.rows() == s.draws.rows() && s.w_draws.cols() > 0;
  std::vector<std::string> header = {"chain"};
  header.insert(header.end(), s.names.begin(), s.names.end());
  if (include_w) {
    for (long j = 0; j < s.w_draws.cols(); ++j) header.push_back("w" + std::to_string(j));
  }
  const long G = s.draws.rows();
  Eigen::MatrixXd m(G, header.size());
  for (long g = 0; g < G; ++g) m(g, 0) = s.chain_of[g];
  m.middleCols(1, s.draws.cols()) = s.draws;
  if (include_w) m.rightCols(s.w_draws.cols()) = s.w_draws;
  write_table(path, header, m);
}

mcmc::PosteriorSamples read_samples(const std::string& path) {
  std::vector<std::string> header;
  const Eigen::MatrixXd m = read_table(path, header);
  if (header.empty() || header[0] != "chain") {
    throw IoError(path + ": expected samples header starting with 'chain'");
  }
  size_t wstart = header.size();
  while (wstart > 1 && header[wstart - 1].size() > 1 && header[wstart - 1][0] == 'w' &&
         header[wstart - 1].find_first_not_of("0123456789", 1) == std::string::npos) {
    --wstart;
  }
  mcmc::PosteriorSamples s;
  s.names.assign(header.begin() + 1, header.begin() + wstart);
  s.draws = m.middleCols(1, wstart - 1);
  if (wstart < header.size()) s.w_draws = m.rightCols(header.size() - wstart);
  s.chain_of.resize(m.rows());
  for (long g = 0; g < m.rows(); ++g) s.chain_of[g] = static_cast<int>(m(g, 0));
  return s;
}

}  // namespace nngp::csv
