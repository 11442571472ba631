#include "nngp/predict.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

#include "nngp/parallel.hpp"

namespace nngp::predict {

Prediction predict(const mcmc::FitProblem& prob, const mcmc::PosteriorSamples& samples,
                   const PredictionRequest& req, int threads) {
  const int l = prob.spec.l, p = prob.spec.p, q = prob.spec.q;
  const int nnew = req.locs.size();
  const int G = static_cast<int>(samples.draws.rows());
  if (req.X.rows() != static_cast<long>(nnew) * l || req.X.cols() != p ||
      req.Z.rows() != static_cast<long>(nnew) * l || req.Z.cols() != q) {
    throw std::invalid_argument("predict: design dimensions do not match the model");
  }
  if (G == 0) throw std::invalid_argument("predict: no stored draws");
  if (samples.w_draws.rows() != G) {
    throw std::invalid_argument(
        "predict: stored samples lack latent draws (response fits cannot predict w)");
  }

  mcmc::LatentField lf = mcmc::build_latent_field(prob);
  const int k = lf.k();

  // exact-match table over every latent slot (reference and query nodes)
  std::map<std::pair<double, double>, int> slot_of;
  for (int i = 0; i < k; ++i) {
    const Eigen::Vector2d s = lf.dag->ordered.point(i);
    slot_of[{s.x(), s.y()}] = i;
  }
  for (int t = 0; t < lf.u(); ++t) {
    const Eigen::Vector2d s = lf.query_point(t);
    slot_of[{s.x(), s.y()}] = k + t;
  }
  std::vector<int> match(nnew, -1);
  std::vector<std::vector<int>> nbrs(nnew);
  for (int j = 0; j < nnew; ++j) {
    const Eigen::Vector2d u = req.locs.point(j);
    auto it = slot_of.find({u.x(), u.y()});
    if (it != slot_of.end()) {
      match[j] = it->second;
    } else {
      nbrs[j] = geo::neighbors_for_query(lf.dag->ordered, u, std::min(prob.m, k));
    }
  }

  // per-draw parameters decoded once
  mcmc::ThetaTransform report(prob.spec, prob.priors, prob.family, false,
                              prob.fixed_nu, prob.fixed_a, l);
  std::vector<int> beta_col(p), tau_col(l), nat_col(report.dim());
  for (int j = 0; j < p; ++j) beta_col[j] = samples.column("beta" + std::to_string(j));
  for (int j = 0; j < l; ++j) {
    tau_col[j] = samples.column(l > 1 ? "tau2_" + std::to_string(j + 1) : "tau2");
  }
  for (int j = 0; j < report.dim(); ++j) nat_col[j] = samples.column(report.names()[j]);
  for (int c : beta_col) {
    if (c < 0) throw std::invalid_argument("predict: samples missing beta columns");
  }
  std::vector<cov::ThetaParams> thetas(G);
  Eigen::MatrixXd betas(G, p), tau2s(G, l);
  for (int g = 0; g < G; ++g) {
    for (int j = 0; j < p; ++j) betas(g, j) = samples.draws(g, beta_col[j]);
    for (int j = 0; j < l; ++j) tau2s(g, j) = samples.draws(g, tau_col[j]);
    Eigen::VectorXd nat(report.dim());
    for (int j = 0; j < report.dim(); ++j) nat(j) = samples.draws(g, nat_col[j]);
    thetas[g] = report.from_natural(nat);
  }

  Eigen::MatrixXd yrep(G, nnew * l);
  const RngStream base(req.seed, 0x70726564);
  parallel_for(nnew, threads, [&](int j) {
    RngStream rng = base.split(j);
    const Eigen::MatrixXd Xj = req.X.middleRows(j * l, l);
    const Eigen::MatrixXd Zj = req.Z.middleRows(j * l, l);
    for (int g = 0; g < G; ++g) {
      Eigen::VectorXd wt(q);
      if (match[j] >= 0) {
        wt = samples.w_draws.row(g).segment(match[j] * q, q);
      } else {
        const auto nf = factors::factor_for(lf.dag->ordered, thetas[g].cc, nbrs[j],
                                            req.locs.point(j));
        Eigen::VectorXd wn(static_cast<int>(nbrs[j].size()) * q);
        for (size_t a = 0; a < nbrs[j].size(); ++a) {
          wn.segment(a * q, q) = samples.w_draws.row(g).segment(nbrs[j][a] * q, q);
        }
        wt = nf.B * wn + nf.F_llt.matrixL() * rng.normal_vector(q);
      }
      Eigen::VectorXd y = Xj * betas.row(g).transpose() + Zj * wt;
      for (int r = 0; r < l; ++r) y(r) += std::sqrt(tau2s(g, r)) * rng.normal();
      yrep.row(g).segment(j * l, l) = y;
    }
  });

  Prediction out;
  const int dim = nnew * l;
  out.q50.resize(dim);
  out.q025.resize(dim);
  out.q975.resize(dim);
  if (req.include_mean) out.mean.resize(dim);
  for (int c = 0; c < dim; ++c) {
    out.q50(c) = mcmc::quantile(yrep.col(c), 0.5);
    out.q025(c) = mcmc::quantile(yrep.col(c), 0.025);
    out.q975(c) = mcmc::quantile(yrep.col(c), 0.975);
    if (req.include_mean) out.mean(c) = yrep.col(c).mean();
  }
  if (req.keep_draws) out.draws = std::move(yrep);
  return out;
}

}  // namespace nngp::predict
