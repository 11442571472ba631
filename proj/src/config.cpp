#include "nngp/config.hpp"

#include <cstdlib>
#include <fstream>
#include <json.hpp>
#include <set>
#include <stdexcept>
#include <thread>

#include "nngp/csv.hpp"
#include "nngp/parallel.hpp"

using nlohmann::json;

namespace nngp {

int default_threads() {
  const unsigned n = std::thread::hardware_concurrency();
  return n > 0 ? static_cast<int>(n) : 1;
}

}  // namespace nngp

namespace nngp::config {

namespace {

void check_keys(const json& obj, const std::set<std::string>& allowed,
                const std::string& section) {
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) {
      throw std::invalid_argument("config: unknown key '" + key + "' in " + section);
    }
  }
}

template <typename T>
void get_to(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) obj.at(key).get_to(out);
}

std::pair<double, double> pair_of(const json& v, const std::string& name) {
  if (!v.is_array() || v.size() != 2) {
    throw std::invalid_argument("config: " + name + " must be a two-element array");
  }
  return {v[0].get<double>(), v[1].get<double>()};
}

void parse_priors(const json& j, model::PriorSpec& pr) {
  check_keys(j, {"beta", "sigma2", "tau2", "phi", "nu", "a", "iw_df", "iw_scale_diag"},
             "priors");
  if (j.contains("beta") && !(j["beta"].is_string() && j["beta"] == "flat")) {
    const json& b = j["beta"];
    check_keys(b, {"mean", "cov_diag"}, "priors.beta");
    pr.beta_flat = false;
    const auto mean = b.at("mean").get<std::vector<double>>();
    const auto var = b.at("cov_diag").get<std::vector<double>>();
    if (mean.size() != var.size()) {
      throw std::invalid_argument("config: priors.beta mean/cov_diag length mismatch");
    }
    pr.beta_mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), mean.size());
    pr.beta_cov = Eigen::VectorXd::Map(var.data(), var.size()).asDiagonal();
  }
  if (j.contains("sigma2")) {
    const auto [s, r] = pair_of(j["sigma2"], "priors.sigma2");
    pr.sigma2 = {s, r};
  }
  if (j.contains("tau2")) {
    const auto [s, r] = pair_of(j["tau2"], "priors.tau2");
    pr.tau2 = {{s, r}};
  }
  if (j.contains("phi")) {
    const auto [lo, hi] = pair_of(j["phi"], "priors.phi");
    pr.phi = {{lo, hi}};
  }
  if (j.contains("nu")) {
    const auto [lo, hi] = pair_of(j["nu"], "priors.nu");
    pr.nu = {model::UniformPrior{lo, hi}};
  }
  if (j.contains("a")) {
    const auto [lo, hi] = pair_of(j["a"], "priors.a");
    pr.wave_a = {{lo, hi}};
  }
  get_to(j, "iw_df", pr.iw_df);
  if (j.contains("iw_scale_diag")) {
    const auto d = j["iw_scale_diag"].get<std::vector<double>>();
    pr.iw_scale = Eigen::VectorXd::Map(d.data(), d.size()).asDiagonal();
  }
}

}  // namespace

RunConfig load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw csv::IoError("cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config: " + std::string(e.what()));
  }
  check_keys(j,
             {"output_dir", "run_id", "threads", "verbose", "paths", "model", "kernel",
              "priors", "nngp", "sampler", "simulate", "kl", "bench"},
             "top level");

  RunConfig cfg;
  // default priors sized for a univariate exponential fit; overridden below
  cfg.priors.tau2 = {{2.0, 0.1}};
  cfg.priors.sigma2 = {2.0, 1.0};
  cfg.priors.phi = {{3.0, 30.0}};
  cfg.priors.nu = {std::nullopt};

  get_to(j, "output_dir", cfg.output_dir);
  get_to(j, "run_id", cfg.run_id);
  get_to(j, "threads", cfg.threads);
  get_to(j, "verbose", cfg.verbose);

  if (j.contains("paths")) {
    const json& p = j["paths"];
    check_keys(p, {"data", "holdout", "samples", "predictions", "locations"}, "paths");
    get_to(p, "data", cfg.paths.data);
    get_to(p, "holdout", cfg.paths.holdout);
    get_to(p, "samples", cfg.paths.samples);
    get_to(p, "predictions", cfg.paths.predictions);
    get_to(p, "locations", cfg.paths.locations);
  }
  if (j.contains("model")) {
    const json& m = j["model"];
    check_keys(m, {"mode"}, "model");
    if (m.contains("mode")) cfg.mode = model::parse_mode(m["mode"].get<std::string>());
  }
  if (j.contains("kernel")) {
    const json& k = j["kernel"];
    check_keys(k, {"family", "sigma2", "phi", "nu", "a"}, "kernel");
    if (k.contains("family")) {
      cfg.kernel.family = cov::parse_kernel_family(k["family"].get<std::string>());
    }
    get_to(k, "sigma2", cfg.kernel.sigma2);
    get_to(k, "phi", cfg.kernel.phi);
    get_to(k, "nu", cfg.kernel.nu);
    get_to(k, "a", cfg.kernel.a);
  }
  if (j.contains("priors")) parse_priors(j["priors"], cfg.priors);
  if (j.contains("nngp")) {
    const json& n = j["nngp"];
    check_keys(n, {"m", "scheme", "ordering", "reference", "grid_nx", "grid_ny",
                   "reference_path"},
               "nngp");
    get_to(n, "m", cfg.nngp.m);
    if (n.contains("scheme")) {
      cfg.nngp.scheme = geo::parse_neighbor_scheme(n["scheme"].get<std::string>());
    }
    if (n.contains("ordering")) {
      cfg.nngp.ordering = geo::parse_order_strategy(n["ordering"].get<std::string>());
    }
    get_to(n, "reference", cfg.nngp.reference);
    if (cfg.nngp.reference != "observed" && cfg.nngp.reference != "grid" &&
        cfg.nngp.reference != "file") {
      throw std::invalid_argument("config: nngp.reference must be observed|grid|file");
    }
    get_to(n, "grid_nx", cfg.nngp.grid_nx);
    get_to(n, "grid_ny", cfg.nngp.grid_ny);
    get_to(n, "reference_path", cfg.nngp.reference_path);
  }
  if (j.contains("sampler")) {
    const json& s = j["sampler"];
    check_keys(s,
               {"algorithm", "iterations", "burn_in", "thin", "chains", "seed",
                "store_w", "step", "adapt_window", "per_component"},
               "sampler");
    if (s.contains("algorithm")) {
      cfg.sampler.algorithm = mcmc::parse_algorithm(s["algorithm"].get<std::string>());
    }
    get_to(s, "iterations", cfg.sampler.iterations);
    get_to(s, "burn_in", cfg.sampler.burn_in);
    get_to(s, "thin", cfg.sampler.thin);
    get_to(s, "chains", cfg.sampler.chains);
    get_to(s, "seed", cfg.sampler.seed);
    get_to(s, "store_w", cfg.sampler.store_w);
    get_to(s, "step", cfg.sampler.metropolis.init_step);
    get_to(s, "adapt_window", cfg.sampler.metropolis.adapt_window);
    get_to(s, "per_component", cfg.sampler.metropolis.per_component);
  }
  if (j.contains("simulate")) {
    const json& s = j["simulate"];
    check_keys(s, {"n", "law", "domain", "grid_nx", "grid_ny", "beta", "tau2", "seed"},
               "simulate");
    get_to(s, "n", cfg.sim.n);
    if (s.contains("law")) {
      cfg.sim.law = simulate::parse_location_law(s["law"].get<std::string>());
    }
    if (s.contains("domain")) {
      const auto d = s["domain"].get<std::vector<double>>();
      if (d.size() != 4) {
        throw std::invalid_argument("config: simulate.domain must be [x0,y0,x1,y1]");
      }
      for (int i = 0; i < 4; ++i) cfg.sim.domain[i] = d[i];
    }
    get_to(s, "grid_nx", cfg.sim.grid_nx);
    get_to(s, "grid_ny", cfg.sim.grid_ny);
    if (s.contains("beta")) {
      const auto b = s["beta"].get<std::vector<double>>();
      cfg.sim.beta = Eigen::Map<const Eigen::VectorXd>(b.data(), b.size());
    }
    get_to(s, "tau2", cfg.sim.tau2);
    get_to(s, "seed", cfg.sim.seed);
  }
  if (j.contains("kl")) {
    const json& k = j["kl"];
    check_keys(k, {"n", "m_values", "seed"}, "kl");
    get_to(k, "n", cfg.kl.n);
    get_to(k, "m_values", cfg.kl.m_values);
    get_to(k, "seed", cfg.kl.seed);
  }
  if (j.contains("bench")) {
    const json& b = j["bench"];
    check_keys(b, {"n_values", "m", "algorithm", "iterations"}, "bench");
    get_to(b, "n_values", cfg.bench.n_values);
    get_to(b, "m", cfg.bench.m);
    if (b.contains("algorithm")) {
      cfg.bench.algorithm = mcmc::parse_algorithm(b["algorithm"].get<std::string>());
    }
    get_to(b, "iterations", cfg.bench.iterations);
  }

  if (const char* e = std::getenv("NNGP_OUTPUT_DIR")) cfg.output_dir = e;
  if (const char* e = std::getenv("NNGP_THREADS")) {
    try {
      cfg.threads = std::stoi(e);
    } catch (const std::exception&) {
      throw std::invalid_argument("config: NNGP_THREADS must be an integer");
    }
  }
  if (cfg.threads < 0) throw std::invalid_argument("config: threads must be >= 0");
  if (cfg.threads == 0) cfg.threads = default_threads();
  return cfg;
}

std::optional<geo::LocationSet> resolve_reference(const RunConfig& cfg,
                                                  const geo::LocationSet& observed) {
  if (cfg.nngp.reference == "observed") return std::nullopt;
  if (cfg.nngp.reference == "file") {
    if (cfg.nngp.reference_path.empty()) {
      throw std::invalid_argument("config: nngp.reference=file needs reference_path");
    }
    return csv::read_data(cfg.nngp.reference_path).locs;
  }
  const int nx = cfg.nngp.grid_nx, ny = cfg.nngp.grid_ny;
  if (nx < 1 || ny < 1) {
    throw std::invalid_argument("config: nngp.reference=grid needs grid_nx, grid_ny");
  }
  const auto lo = observed.coords().colwise().minCoeff();
  const auto hi = observed.coords().colwise().maxCoeff();
  Eigen::MatrixX2d pts(nx * ny, 2);
  for (int ix = 0; ix < nx; ++ix) {
    for (int iy = 0; iy < ny; ++iy) {
      pts.row(ix * ny + iy) << lo(0) + (hi(0) - lo(0)) * (ix + 0.5) / nx,
          lo(1) + (hi(1) - lo(1)) * (iy + 0.5) / ny;
    }
  }
  return geo::LocationSet(pts);
}

mcmc::FitProblem make_problem(const RunConfig& cfg, const model::SpatialData& data) {
  mcmc::FitProblem prob;
  const int p = data.p();
  const int q = cfg.mode == model::Mode::svc ? p : 1;
  prob.spec = {cfg.mode, 1, p, q};
  prob.priors = cfg.priors;
  if (q > 1 && prob.priors.iw_scale.rows() != q) {
    prob.priors.iw_scale = Eigen::MatrixXd::Identity(q, q);
    prob.priors.iw_df = q + 2.0;
  }
  if (cfg.kernel.family != cov::KernelFamily::damped_cosine) prob.priors.wave_a.clear();
  prob.data = data;
  prob.family = cfg.kernel.family;
  prob.fixed_nu = cfg.kernel.nu;
  prob.fixed_a = prob.priors.wave_a.empty() ? cfg.kernel.a : 0.0;
  prob.m = cfg.nngp.m;
  prob.ordering = cfg.nngp.ordering;
  prob.scheme = cfg.nngp.scheme;
  prob.reference = resolve_reference(cfg, data.locs);
  return prob;
}

}  // namespace nngp::config
