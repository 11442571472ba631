#include "nngp/cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "nngp/csv.hpp"
#include "nngp/metrics.hpp"
#include "nngp/predict.hpp"

namespace fs = std::filesystem;

namespace nngp::cli {

namespace {

cov::CrossCovariance kernel_cc(const config::RunConfig& cfg, int q) {
  const config::RunConfig::KernelConfig& k = cfg.kernel;
  const cov::Kernel kern{k.family, k.phi, k.nu,
                         k.a > 0.0 ? k.a : 0.95 / k.phi};
  if (q == 1) return cov::CrossCovariance::univariate(k.sigma2, kern);
  cov::CrossCovariance cc;
  cc.A = std::sqrt(k.sigma2) * Eigen::MatrixXd::Identity(q, q);
  cc.kernels.assign(q, kern);
  return cc;
}

simulate::SimRecipe recipe_from(const config::RunConfig& cfg) {
  simulate::SimRecipe r;
  r.n = cfg.sim.n;
  r.x0 = cfg.sim.domain[0];
  r.y0 = cfg.sim.domain[1];
  r.x1 = cfg.sim.domain[2];
  r.y1 = cfg.sim.domain[3];
  r.law = cfg.sim.law;
  r.grid_nx = cfg.sim.grid_nx;
  r.grid_ny = cfg.sim.grid_ny;
  r.beta = cfg.sim.beta.size() > 0 ? cfg.sim.beta
                                   : Eigen::VectorXd(Eigen::Vector2d(1.0, 5.0));
  r.cc = kernel_cc(cfg, cfg.mode == model::Mode::svc
                            ? static_cast<int>(r.beta.size())
                            : 1);
  r.tau2 = cfg.sim.tau2;
  r.mode = cfg.mode;
  r.seed = cfg.sim.seed;
  return r;
}

model::SpatialData load_training(const config::RunConfig& cfg) {
  if (cfg.paths.data.empty()) {
    throw std::invalid_argument("config: paths.data is required for this command");
  }
  return csv::to_spatial_data(csv::read_data(cfg.paths.data), cfg.mode);
}

std::string samples_path(const config::RunConfig& cfg, const std::string& dir) {
  return cfg.paths.samples.empty() ? dir + "samples.csv" : cfg.paths.samples;
}

mcmc::SamplerConfig sampler_from(const config::RunConfig& cfg) {
  mcmc::SamplerConfig s = cfg.sampler;
  s.threads = cfg.threads;
  return s;
}

}  // namespace

std::string ensure_run_dir(const config::RunConfig& cfg) {
  const fs::path dir = fs::path(cfg.output_dir) / cfg.run_id;
  fs::create_directories(dir);  // throws filesystem_error when unwritable
  return dir.string() + "/";
}

void cmd_simulate(const config::RunConfig& cfg) {
  const std::string dir = ensure_run_dir(cfg);
  const auto recipe = recipe_from(cfg);
  const auto ds = simulate::gen_dataset(recipe);

  csv::DataFile d;
  d.locs = ds.data.locs;
  d.covariates = ds.data.X.rightCols(ds.data.p() - 1);
  d.y = ds.data.y;
  csv::write_data(dir + "data.csv", d);

  const int q = recipe.cc.q();
  std::vector<std::string> header = {"id", "x", "y"};
  for (int b = 0; b < q; ++b) header.push_back("w" + std::to_string(b + 1));
  Eigen::MatrixXd truth(recipe.n, 3 + q);
  for (int i = 0; i < recipe.n; ++i) truth(i, 0) = i;
  truth.middleCols(1, 2) = ds.data.locs.coords();
  for (int i = 0; i < recipe.n; ++i) {
    truth.row(i).tail(q) = ds.w_true.segment(i * q, q).transpose();
  }
  csv::write_table(dir + "truth.csv", header, truth);
  if (cfg.verbose) std::cout << "wrote " << dir << "data.csv (" << recipe.n << " rows)\n";
}

void cmd_fit(const config::RunConfig& cfg) {
  const std::string dir = ensure_run_dir(cfg);
  const auto data = load_training(cfg);
  const auto prob = config::make_problem(cfg, data);
  const auto scfg = sampler_from(cfg);

  const auto start = std::chrono::steady_clock::now();
  const auto samples = mcmc::run_chain(prob, scfg);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  csv::write_samples(dir + "samples.csv", samples, scfg.store_w);
  {
    std::vector<std::string> th = {"chain", "accept_rate", "sec_per_iter",
                                   "factor_bytes"};
    Eigen::MatrixXd t(scfg.chains, 4);
    for (int c = 0; c < scfg.chains; ++c) {
      t.row(c) << c, samples.accept_rate[c], samples.sec_per_iter[c],
          static_cast<double>(samples.factor_bytes);
    }
    csv::write_table(dir + "timing.csv", th, t);
  }

  metrics::FitReport report;
  report.seconds = seconds;
  if (samples.draws.rows() > 0 && samples.w_draws.rows() == samples.draws.rows()) {
    std::tie(report.pD, report.DIC) = metrics::dic(prob, samples);
    const auto g = metrics::gpd(prob, samples);
    report.G = g.G;
    report.P = g.P;
    report.D = g.D;
  }
  std::ofstream txt(dir + "report.txt");
  txt << report.text();
  std::ofstream rc(dir + "report.csv");
  rc << report.csv_header() << '\n' << report.csv_row(cfg.run_id) << '\n';
  if (cfg.verbose) {
    std::cout << "fit: " << samples.draws.rows() << " stored draws in " << seconds
              << " s\n";
  }
}

void cmd_predict(const config::RunConfig& cfg) {
  const std::string dir = ensure_run_dir(cfg);
  const auto data = load_training(cfg);
  const auto prob = config::make_problem(cfg, data);
  const auto samples = csv::read_samples(samples_path(cfg, dir));
  if (cfg.paths.locations.empty()) {
    throw std::invalid_argument("config: paths.locations is required for predict");
  }
  {
    std::vector<std::string> header;
    if (csv::read_table(cfg.paths.locations, header).rows() == 0) {
      csv::write_table(dir + "predictions.csv",
                       {"id", "x", "y", "q50", "q025", "q975", "mean"},
                       Eigen::MatrixXd(0, 7));
      return;
    }
  }
  const auto locfile = csv::read_data(cfg.paths.locations);
  const auto newdata = csv::to_spatial_data(locfile, cfg.mode);
  if (newdata.p() != prob.spec.p) {
    throw std::invalid_argument("predict: location covariates do not match the model");
  }

  predict::PredictionRequest req;
  req.locs = newdata.locs;
  req.X = newdata.X;
  req.Z = newdata.Z;
  req.seed = cfg.sampler.seed;
  const auto pred = predict::predict(prob, samples, req, cfg.threads);

  const int nnew = newdata.n();
  Eigen::MatrixXd out(nnew, 7);
  for (int i = 0; i < nnew; ++i) out(i, 0) = i;
  out.middleCols(1, 2) = newdata.locs.coords();
  out.col(3) = pred.q50;
  out.col(4) = pred.q025;
  out.col(5) = pred.q975;
  out.col(6) = pred.mean;
  csv::write_table(dir + "predictions.csv",
                   {"id", "x", "y", "q50", "q025", "q975", "mean"}, out);
  if (cfg.verbose) std::cout << "predicted " << nnew << " locations\n";
}

void cmd_metrics(const config::RunConfig& cfg) {
  const std::string dir = ensure_run_dir(cfg);
  metrics::FitReport report;

  if (!cfg.paths.data.empty()) {
    const auto data = load_training(cfg);
    const auto prob = config::make_problem(cfg, data);
    const auto samples = csv::read_samples(samples_path(cfg, dir));
    if (samples.w_draws.rows() == samples.draws.rows() && samples.draws.rows() > 0) {
      std::tie(report.pD, report.DIC) = metrics::dic(prob, samples);
      const auto g = metrics::gpd(prob, samples);
      report.G = g.G;
      report.P = g.P;
      report.D = g.D;
    }
  }
  if (!cfg.paths.predictions.empty()) {
    if (cfg.paths.holdout.empty()) {
      throw std::invalid_argument("config: paths.holdout is required to score predictions");
    }
    std::vector<std::string> header;
    const Eigen::MatrixXd p = csv::read_table(cfg.paths.predictions, header);
    if (header.size() < 6 || header[3] != "q50") {
      throw csv::IoError(cfg.paths.predictions + ": not a predictions file");
    }
    predict::Prediction pred;
    pred.q50 = p.col(3);
    pred.q025 = p.col(4);
    pred.q975 = p.col(5);
    const auto truth = csv::read_data(cfg.paths.holdout);
    const auto s = metrics::holdout_scores(pred, truth.y);
    report.rmspe = s.rmspe;
    report.coverage = s.coverage;
    report.width = s.width;
    report.pmse = s.pmse;
  }

  std::ofstream txt(dir + "report.txt");
  txt << report.text();
  std::ofstream rc(dir + "report.csv");
  rc << report.csv_header() << '\n' << report.csv_row(cfg.run_id) << '\n';
  if (cfg.verbose) std::cout << report.text();
}

void cmd_kl(const config::RunConfig& cfg) {
  const std::string dir = ensure_run_dir(cfg);
  config::RunConfig sim_cfg = cfg;
  sim_cfg.sim.n = cfg.kl.n;
  sim_cfg.sim.seed = cfg.kl.seed;
  auto recipe = recipe_from(sim_cfg);
  recipe.cc = kernel_cc(cfg, 1);  // KL curves are univariate diagnostics
  RngStream rng(recipe.seed, 0x6b6c);
  const auto locs = simulate::sample_locations(recipe, rng);

  std::vector<int> ms = cfg.kl.m_values;
  if (ms.empty()) {
    for (int m = 5; m <= 50; m += 5) ms.push_back(m);
  }
  const auto ordering = geo::order_locations(locs, cfg.nngp.ordering);

  std::ofstream out(dir + "kl.csv");
  if (!out) throw csv::IoError("cannot write " + dir + "kl.csv");
  out << "m,scheme,kl\n";
  for (const int m : ms) {
    if (m >= locs.size()) {
      throw std::invalid_argument("kl: m must be below the number of locations");
    }
    for (const auto scheme : {geo::NeighborScheme::nearest, geo::NeighborScheme::stein_alt}) {
      auto dag = std::make_shared<geo::NeighborDag>(
          geo::build_neighbor_dag(locs, ordering, m, scheme));
      const auto fac = factors::compute_factors(dag, recipe.cc, cfg.threads);
      out << m << ','
          << (scheme == geo::NeighborScheme::nearest ? "nearest" : "stein_alt") << ','
          << csv::format_number(factors::kl_divergence(fac)) << '\n';
    }
  }
  if (cfg.verbose) std::cout << "wrote " << dir << "kl.csv\n";
}

void cmd_bench(const config::RunConfig& cfg) {
  const std::string dir = ensure_run_dir(cfg);
  std::vector<int> ns = cfg.bench.n_values;
  if (ns.empty()) ns = {500, 1000, 2000, 4000};

  Eigen::MatrixXd rows(static_cast<int>(ns.size()), 3);
  std::ofstream out(dir + "bench.csv");
  if (!out) throw csv::IoError("cannot write " + dir + "bench.csv");
  out << "n,m,algorithm,sec_per_iter\n";
  for (size_t i = 0; i < ns.size(); ++i) {
    config::RunConfig sim_cfg = cfg;
    sim_cfg.sim.n = ns[i];
    sim_cfg.sim.seed = cfg.sim.seed + i;
    const auto ds = simulate::gen_dataset(recipe_from(sim_cfg));

    auto prob = config::make_problem(cfg, ds.data);
    prob.m = cfg.bench.m;
    mcmc::SamplerConfig scfg = sampler_from(cfg);
    scfg.algorithm = cfg.bench.algorithm;
    scfg.iterations = cfg.bench.iterations;
    scfg.burn_in = 0;
    scfg.chains = 1;
    scfg.store_w = false;
    const auto samples = mcmc::run_chain(prob, scfg);
    const double spi = samples.sec_per_iter[0];
    rows(static_cast<int>(i), 0) = ns[i];
    rows(static_cast<int>(i), 1) = spi;
    out << ns[i] << ',' << cfg.bench.m << ',' << mcmc::to_string(cfg.bench.algorithm)
        << ',' << csv::format_number(spi) << '\n';
    if (cfg.verbose) std::cout << "n=" << ns[i] << " sec_per_iter=" << spi << "\n";
  }

  // least-squares slope of log(sec_per_iter) on log(n)
  const Eigen::ArrayXd lx = rows.col(0).array().log();
  const Eigen::ArrayXd ly = rows.col(1).array().log();
  const double sxx = (lx - lx.mean()).square().sum();
  const double slope = sxx > 0 ? ((lx - lx.mean()) * (ly - ly.mean())).sum() / sxx : 0.0;
  std::ofstream sf(dir + "slope.txt");
  sf << csv::format_number(slope) << '\n';
  std::cout << "log-log slope: " << slope << "\n";
}

int run(int argc, char** argv) {
  CLI::App app{"nearest-neighbor Gaussian process toolkit"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::int64_t seed = -1;
  int threads = -1;
  bool verbose = false;
  app.add_option("--config", config_path, "config file path")->required();
  app.add_option("--seed", seed, "override every configured seed");
  app.add_option("--threads", threads, "override worker thread count");
  app.add_flag("--verbose", verbose, "progress output");

  const std::vector<std::pair<std::string, void (*)(const config::RunConfig&)>> cmds = {
      {"simulate", cmd_simulate}, {"fit", cmd_fit},   {"predict", cmd_predict},
      {"metrics", cmd_metrics},   {"kl", cmd_kl},     {"bench", cmd_bench}};
  for (const auto& [name, fn] : cmds) app.add_subcommand(name);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitValidation;
  }

  try {
    config::RunConfig cfg = config::load(config_path);
    if (seed >= 0) {
      cfg.sampler.seed = static_cast<std::uint64_t>(seed);
      cfg.sim.seed = static_cast<std::uint64_t>(seed);
      cfg.kl.seed = static_cast<std::uint64_t>(seed);
    }
    if (threads >= 1) cfg.threads = threads;
    if (verbose) cfg.verbose = true;
    for (const auto& [name, fn] : cmds) {
      if (app.get_subcommand(name)->parsed()) {
        fn(cfg);
        return kExitOk;
      }
    }
    return kExitValidation;  // unreachable with require_subcommand
  } catch (const csv::IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::invalid_argument& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
}

}  // namespace nngp::cli
