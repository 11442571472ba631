#include "nngp/simulate.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace nngp::simulate {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}  // namespace

LocationLaw parse_location_law(const std::string& name) {
  if (name == "uniform") return LocationLaw::uniform;
  if (name == "two_cluster") return LocationLaw::two_cluster;
  if (name == "grid") return LocationLaw::grid;
  throw std::invalid_argument("unknown location law: " + name);
}

geo::LocationSet sample_locations(const SimRecipe& recipe, RngStream& rng) {
  Eigen::MatrixX2d c(recipe.n, 2);
  switch (recipe.law) {
    case LocationLaw::uniform:
      for (int i = 0; i < recipe.n; ++i) {
        c(i, 0) = rng.uniform(recipe.x0, recipe.x1);
        c(i, 1) = rng.uniform(recipe.y0, recipe.y1);
      }
      break;
    case LocationLaw::two_cluster: {
      // half in the left third of the rectangle, half in the right third
      const double wx = (recipe.x1 - recipe.x0) / 3.0;
      for (int i = 0; i < recipe.n; ++i) {
        const bool left = i < (recipe.n + 1) / 2;
        const double lo = left ? recipe.x0 : recipe.x1 - wx;
        c(i, 0) = rng.uniform(lo, lo + wx);
        c(i, 1) = rng.uniform(recipe.y0, recipe.y1);
      }
      break;
    }
    case LocationLaw::grid: {
      int nx = recipe.grid_nx, ny = recipe.grid_ny;
      if (nx <= 0 || ny <= 0) {
        nx = static_cast<int>(std::ceil(std::sqrt(double(recipe.n))));
        ny = (recipe.n + nx - 1) / nx;
      }
      if (nx * ny < recipe.n) throw std::invalid_argument("grid too small for n");
      int idx = 0;
      for (int j = 0; j < ny && idx < recipe.n; ++j) {
        for (int i = 0; i < nx && idx < recipe.n; ++i, ++idx) {
          c(idx, 0) = recipe.x0 + (i + 0.5) * (recipe.x1 - recipe.x0) / nx;
          c(idx, 1) = recipe.y0 + (j + 0.5) * (recipe.y1 - recipe.y0) / ny;
        }
      }
      break;
    }
  }
  return geo::LocationSet(c);
}

Eigen::VectorXd sample_gp(const cov::CrossCovariance& cc, const geo::LocationSet& locs,
                          std::uint64_t seed) {
  Eigen::MatrixXd C = cov::cov_matrix(cc, locs, locs);
  cov::add_jitter(C);
  Eigen::LLT<Eigen::MatrixXd> llt(C);
  if (llt.info() != Eigen::Success) {
    throw std::runtime_error(
        "sample_gp: covariance not positive definite after jitter (wave kernels "
        "lose validity at this scale)");
  }
  RngStream rng(seed, 0x6770);
  return llt.matrixL() * rng.normal_vector(static_cast<int>(C.rows()));
}

Dataset gen_dataset(const SimRecipe& recipe) {
  RngStream rng(recipe.seed, 0x7367);
  const int p = static_cast<int>(recipe.beta.size());
  const int q = recipe.cc.q();
  if (recipe.mode == model::Mode::svc && q != p) {
    throw std::invalid_argument("gen_dataset: svc needs q = p");
  }
  if (recipe.mode == model::Mode::svi && q != 1) {
    throw std::invalid_argument("gen_dataset: svi needs q = 1");
  }
  Dataset ds;
  ds.data.locs = sample_locations(recipe, rng);
  const int n = recipe.n;
  ds.data.X.setOnes(n, p);
  for (int i = 0; i < n; ++i) {
    for (int j = 1; j < p; ++j) ds.data.X(i, j) = rng.normal();
  }
  ds.data.Z = recipe.mode == model::Mode::svc ? ds.data.X
                                              : Eigen::MatrixXd::Ones(n, 1);
  ds.w_true = sample_gp(recipe.cc, ds.data.locs, rng.engine()());
  ds.data.y.resize(n);
  const double sd = std::sqrt(recipe.tau2);
  for (int i = 0; i < n; ++i) {
    ds.data.y(i) = ds.data.X.row(i).dot(recipe.beta) +
                   ds.data.Z.row(i).dot(ds.w_true.segment(i * q, q)) +
                   sd * rng.normal();
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Dense full-GP oracle sampler

namespace {

// Sigma_y = D + Zblk C Zblk' materialized densely, with its Cholesky.
struct DenseWork {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double logdet = 0.0;

  void build(const model::SpatialData& data, const cov::CrossCovariance& cc,
             const Eigen::VectorXd& tau2) {
    const int n = data.n(), l = data.l(), q = data.q();
    Eigen::MatrixXd C = cov::cov_matrix(cc, data.locs, data.locs);
    Eigen::MatrixXd S(n * l, n * l);
    for (int i = 0; i < n; ++i) {
      const Eigen::MatrixXd Zi = data.Zt(i);
      for (int j = 0; j < n; ++j) {
        S.block(i * l, j * l, l, l) =
            Zi * C.block(i * q, j * q, q, q) * data.Zt(j).transpose();
      }
    }
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < l; ++j) S(i * l + j, i * l + j) += tau2(j);
    }
    cov::add_jitter(S);
    llt.compute(S);
    if (llt.info() != Eigen::Success) {
      throw std::runtime_error("oracle_posterior: dense covariance factorization failed");
    }
    logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  }

  double loglik(const model::SpatialData& data, const Eigen::VectorXd& beta) const {
    const Eigen::VectorXd r = data.y - data.X * beta;
    const Eigen::VectorXd z = llt.matrixL().solve(r);
    return -0.5 * (r.size() * kLog2Pi + logdet + z.squaredNorm());
  }
};

}  // namespace

mcmc::PosteriorSamples oracle_posterior(const mcmc::FitProblem& prob,
                                        const mcmc::SamplerConfig& cfg) {
  cfg.validate();
  const int n = prob.data.n();
  if (n > kOracleMaxN) {
    throw std::invalid_argument(
        "oracle_posterior: n exceeds the dense-oracle cap (" +
        std::to_string(kOracleMaxN) + "); dense methods are infeasible at scale");
  }
  const int p = prob.spec.p, l = prob.spec.l, q = prob.spec.q;
  model::validate(prob.spec, prob.priors, prob.data, n, std::max(1, prob.m));

  mcmc::ThetaTransform tr(prob.spec, prob.priors, prob.family, true, prob.fixed_nu,
                          prob.fixed_a, l);
  mcmc::ThetaTransform report(prob.spec, prob.priors, prob.family, false,
                              prob.fixed_nu, prob.fixed_a, l);

  mcmc::PosteriorSamples out;
  for (int j = 0; j < p; ++j) out.names.push_back("beta" + std::to_string(j));
  for (int j = 0; j < l; ++j) {
    out.names.push_back(l > 1 ? "tau2_" + std::to_string(j + 1) : "tau2");
  }
  for (const auto& nm : report.names()) out.names.push_back(nm);

  const int stored_per_chain =
      cfg.iterations > cfg.burn_in
          ? (cfg.iterations - cfg.burn_in + cfg.thin - 1) / cfg.thin
          : 0;
  const int total = stored_per_chain * cfg.chains;
  out.draws.resize(total, static_cast<int>(out.names.size()));
  out.chain_of.resize(total);
  out.accept_rate.assign(cfg.chains, 0.0);
  out.sec_per_iter.assign(cfg.chains, 0.0);

  for (int c = 0; c < cfg.chains; ++c) {
    RngStream rng(cfg.seed, 0x0facULL * (c + 1));
    model::ChainState st;
    {
      Eigen::MatrixXd XtX = prob.data.X.transpose() * prob.data.X;
      XtX.diagonal().array() += 1e-8 * (1.0 + XtX.diagonal().maxCoeff());
      st.beta = XtX.ldlt().solve(prob.data.X.transpose() * prob.data.y);
      const Eigen::VectorXd res = prob.data.y - prob.data.X * st.beta;
      const double vres =
          std::max(res.squaredNorm() / std::max<int>(1, res.size() - 1), 1e-3);
      st.tau2 = Eigen::VectorXd::Constant(l, 0.5 * vres);
      st.theta.cc.A = std::sqrt(0.5 * vres) * Eigen::MatrixXd::Identity(q, q);
      st.theta.cc.kernels.assign(
          q, cov::Kernel{prob.family, 1.0, prob.fixed_nu,
                         prob.fixed_a > 0.0 ? prob.fixed_a : 1.0});
      for (int b = 0; b < q; ++b) {
        const auto& up = prob.priors.phi.at(b);
        st.theta.cc.kernels[b].phi = 0.5 * (up.lo + up.hi);
        if (prob.family == cov::KernelFamily::matern &&
            b < static_cast<int>(prob.priors.nu.size()) && prob.priors.nu[b]) {
          st.theta.cc.kernels[b].nu =
              0.5 * (prob.priors.nu[b]->lo + prob.priors.nu[b]->hi);
        }
        if (prob.family == cov::KernelFamily::damped_cosine && prob.fixed_a == 0.0) {
          const auto& ua = prob.priors.wave_a.at(b);
          st.theta.cc.kernels[b].a =
              std::min(0.5 * (ua.lo + ua.hi), 0.95 / st.theta.cc.kernels[b].phi);
        }
      }
      st.theta.tau2 = st.tau2;
    }

    mcmc::MetropolisState ms;
    ms.step = Eigen::VectorXd::Constant(tr.dim(), cfg.metropolis.init_step);

    DenseWork work;
    work.build(prob.data, st.theta.cc, st.tau2);

    int row = c * stored_per_chain;
    const auto t0 = std::chrono::steady_clock::now();
    for (int it = 0; it < cfg.iterations; ++it) {
      const bool adapting = it < cfg.burn_in;
      // conjugate beta against the marginalized dense likelihood
      {
        const int nl = n * l;
        Eigen::MatrixXd Wx(nl, p);
        for (int j = 0; j < p; ++j) {
          Wx.col(j) = work.llt.matrixL().solve(prob.data.X.col(j));
        }
        const Eigen::VectorXd Wy = work.llt.matrixL().solve(prob.data.y);
        Eigen::MatrixXd Vinv = Wx.transpose() * Wx;
        Eigen::VectorXd rhs = Wx.transpose() * Wy;
        if (!prob.priors.beta_flat) {
          Eigen::LLT<Eigen::MatrixXd> pl(prob.priors.beta_cov);
          Vinv += pl.solve(Eigen::MatrixXd::Identity(p, p));
          rhs += pl.solve(prob.priors.beta_mean);
        }
        Eigen::LLT<Eigen::MatrixXd> bl(Vinv);
        st.beta = bl.solve(rhs) + bl.matrixU().solve(rng.normal_vector(p));
      }
      // joint Metropolis on (theta, tau2)
      {
        ++ms.proposals;
        if (adapting) ++ms.window_proposals;
        const Eigen::VectorXd x = tr.to_unconstrained(st.theta);
        const double lp_cur = tr.log_prior(st.theta) +
                              work.loglik(prob.data, st.beta) + tr.log_jacobian(x);
        const Eigen::VectorXd xp =
            x + ms.step.cwiseProduct(rng.normal_vector(tr.dim()));
        const cov::ThetaParams prop = tr.from_unconstrained(xp);
        double lp_prop = tr.log_prior(prop);
        if (lp_prop > kNegInf) {
          DenseWork trial;
          trial.build(prob.data, prop.cc, prop.tau2);
          lp_prop += trial.loglik(prob.data, st.beta) + tr.log_jacobian(xp);
          if (std::log(rng.uniform()) < lp_prop - lp_cur) {
            st.theta = prop;
            st.tau2 = prop.tau2;
            work = std::move(trial);
            ++ms.accepts;
            if (adapting) ++ms.window_accepts;
          }
        }
      }
      if (adapting && (it + 1) % cfg.metropolis.adapt_window == 0) {
        ms.adapt(cfg.metropolis.target_lo, cfg.metropolis.target_hi);
      }
      if (it >= cfg.burn_in && (it - cfg.burn_in) % cfg.thin == 0) {
        int j = 0;
        for (int b = 0; b < p; ++b) out.draws(row, j++) = st.beta(b);
        for (int b = 0; b < l; ++b) out.draws(row, j++) = st.tau2(b);
        const Eigen::VectorXd nat = report.natural(st.theta);
        for (int b = 0; b < nat.size(); ++b) out.draws(row, j++) = nat(b);
        out.chain_of[row] = c;
        ++row;
      }
    }
    const auto t1 = std::chrono::steady_clock::now();
    out.sec_per_iter[c] =
        cfg.iterations > 0
            ? std::chrono::duration<double>(t1 - t0).count() / cfg.iterations
            : 0.0;
    out.accept_rate[c] = ms.rate();
  }
  return out;
}

KrigeResult oracle_krige(const model::SpatialData& data, const cov::ThetaParams& theta,
                         const Eigen::VectorXd& beta, const geo::LocationSet& news,
                         const Eigen::MatrixXd& Xnew, bool joint) {
  if (data.q() != 1 || data.l() != 1) {
    throw std::invalid_argument("oracle_krige: univariate models only");
  }
  const int n = data.n(), nn = news.size();
  const double tau2 = theta.tau2(0);
  Eigen::MatrixXd S = cov::cov_matrix(theta.cc, data.locs, data.locs);
  S.diagonal().array() += tau2;
  cov::add_jitter(S);
  Eigen::LLT<Eigen::MatrixXd> llt(S);
  if (llt.info() != Eigen::Success) {
    throw std::runtime_error("oracle_krige: dense factorization failed");
  }
  const Eigen::MatrixXd Cns = cov::cov_matrix(theta.cc, news, data.locs);
  const Eigen::VectorXd r = data.y - data.X * beta;
  const Eigen::MatrixXd Sl = llt.solve(Cns.transpose());

  KrigeResult out;
  out.mean = Xnew * beta + Cns * llt.solve(r);
  Eigen::MatrixXd Cnn = cov::cov_matrix(theta.cc, news, news);
  Cnn.diagonal().array() += tau2;
  if (joint) {
    out.cov = Cnn - Cns * Sl;
    out.var = out.cov.diagonal();
  } else {
    out.var.resize(nn);
    for (int i = 0; i < nn; ++i) out.var(i) = Cnn(i, i) - Cns.row(i).dot(Sl.col(i));
  }
  return out;
}

}  // namespace nngp::simulate
