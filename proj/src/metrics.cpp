#include "nngp/metrics.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace nngp::metrics {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

struct DecodedDraws {
  Eigen::MatrixXd betas;  // G x p
  Eigen::MatrixXd tau2s;  // G x l
};

DecodedDraws decode(const mcmc::FitProblem& prob, const mcmc::PosteriorSamples& s) {
  const int p = prob.spec.p, l = prob.spec.l;
  const int G = static_cast<int>(s.draws.rows());
  DecodedDraws d;
  d.betas.resize(G, p);
  d.tau2s.resize(G, l);
  for (int j = 0; j < p; ++j) {
    const int c = s.column("beta" + std::to_string(j));
    if (c < 0) throw std::invalid_argument("metrics: samples missing beta columns");
    d.betas.col(j) = s.draws.col(c);
  }
  for (int j = 0; j < l; ++j) {
    const int c = s.column(l > 1 ? "tau2_" + std::to_string(j + 1) : "tau2");
    if (c < 0) throw std::invalid_argument("metrics: samples missing tau2 columns");
    d.tau2s.col(j) = s.draws.col(c);
  }
  return d;
}

double deviance(const mcmc::FitProblem& prob, const mcmc::LatentField& lf,
                const Eigen::VectorXd& beta, const Eigen::VectorXd& tau2,
                const Eigen::VectorXd& w) {
  const auto& data = prob.data;
  const int n = data.n(), l = data.l(), q = prob.spec.q;
  double dev = 0.0;
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd wi = w.segment(lf.data_slot[i] * q, q);
    const Eigen::VectorXd r = data.yt(i) - data.Xt(i) * beta - data.Zt(i) * wi;
    for (int j = 0; j < l; ++j) {
      dev += kLog2Pi + std::log(tau2(j)) + r(j) * r(j) / tau2(j);
    }
  }
  return dev;
}

}  // namespace

std::pair<double, double> dic(const mcmc::FitProblem& prob,
                              const mcmc::PosteriorSamples& samples) {
  const int G = static_cast<int>(samples.draws.rows());
  if (G == 0) throw std::invalid_argument("dic: no stored draws");
  if (samples.w_draws.rows() != G) {
    throw std::invalid_argument("dic: conditional deviance needs stored latent draws");
  }
  mcmc::LatentField lf = mcmc::build_latent_field(prob);
  const auto d = decode(prob, samples);
  double mean_dev = 0.0;
  for (int g = 0; g < G; ++g) {
    mean_dev += deviance(prob, lf, d.betas.row(g), d.tau2s.row(g),
                         samples.w_draws.row(g));
  }
  mean_dev /= G;
  const double dev_at_mean =
      deviance(prob, lf, d.betas.colwise().mean(), d.tau2s.colwise().mean(),
               samples.w_draws.colwise().mean());
  const double pD = mean_dev - dev_at_mean;
  return {pD, mean_dev + pD};
}

Gpd gpd(const mcmc::FitProblem& prob, const mcmc::PosteriorSamples& samples) {
  const int G = static_cast<int>(samples.draws.rows());
  if (G == 0) throw std::invalid_argument("gpd: no stored draws");
  if (samples.w_draws.rows() != G) {
    throw std::invalid_argument("gpd: replicate moments need stored latent draws");
  }
  mcmc::LatentField lf = mcmc::build_latent_field(prob);
  const auto& data = prob.data;
  const int n = data.n(), l = data.l(), q = prob.spec.q;
  const auto d = decode(prob, samples);

  Gpd out;
  Eigen::VectorXd m(G);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < l; ++j) {
      double tbar = 0.0;
      for (int g = 0; g < G; ++g) {
        const Eigen::VectorXd wi =
            samples.w_draws.row(g).segment(lf.data_slot[i] * q, q);
        m(g) = (data.Xt(i) * d.betas.row(g).transpose() + data.Zt(i) * wi)(j);
        tbar += d.tau2s(g, j);
      }
      tbar /= G;
      const double mbar = m.mean();
      const double vm = G > 1 ? (m.array() - mbar).square().sum() / (G - 1) : 0.0;
      const double r = data.yt(i)(j) - mbar;
      out.G += r * r;
      out.P += vm + tbar;
    }
  }
  out.D = out.G + out.P;
  return out;
}

HoldoutScores holdout_scores(const predict::Prediction& pred, const Eigen::VectorXd& truth) {
  const int n = static_cast<int>(truth.size());
  if (pred.q50.size() != n) {
    throw std::invalid_argument("holdout_scores: prediction/truth length mismatch");
  }
  HoldoutScores s;
  if (n == 0) return s;
  int inside = 0;
  for (int i = 0; i < n; ++i) {
    const double e = truth(i) - pred.q50(i);
    s.rmspe += e * e;
    if (truth(i) >= pred.q025(i) && truth(i) <= pred.q975(i)) ++inside;
    s.width += pred.q975(i) - pred.q025(i);
  }
  s.pmse = s.rmspe / n;
  s.rmspe = std::sqrt(s.pmse);
  s.coverage = 100.0 * inside / n;
  s.width /= n;
  return s;
}

std::string FitReport::text() const {
  std::ostringstream os;
  os << "pD       " << pD << "\n"
     << "DIC      " << DIC << "\n"
     << "G        " << G << "\n"
     << "P        " << P << "\n"
     << "D        " << D << "\n"
     << "RMSPE    " << rmspe << "\n"
     << "coverage " << coverage << "%\n"
     << "width    " << width << "\n"
     << "PMSE     " << pmse << "\n"
     << "seconds  " << seconds << "\n";
  return os.str();
}

std::string FitReport::csv_header() const {
  return "run_id,pD,DIC,G,P,D,rmspe,coverage,width,pmse,seconds";
}

std::string FitReport::csv_row(const std::string& run_id) const {
  std::ostringstream os;
  os << run_id << ',' << pD << ',' << DIC << ',' << G << ',' << P << ',' << D << ','
     << rmspe << ',' << coverage << ',' << width << ',' << pmse << ',' << seconds;
  return os.str();
}

}  // namespace nngp::metrics
