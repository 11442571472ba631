#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "nngp/simulate.hpp"

using namespace nngp;
using namespace nngp::simulate;

namespace {

SimRecipe base_recipe() {
  SimRecipe r;
  r.n = 100;
  r.cc = cov::CrossCovariance::univariate(1.0, {cov::KernelFamily::exponential, 12.0});
  r.beta = Eigen::Vector2d(1.0, 5.0);
  r.tau2 = 0.1;
  r.seed = 42;
  return r;
}

}  // namespace

TEST_CASE("sample_gp: n=1 scalar draw and determinism") {
  Eigen::MatrixX2d c(1, 2);
  c << 0.3, 0.7;
  geo::LocationSet one(c);
  auto cc = cov::CrossCovariance::univariate(2.0, {cov::KernelFamily::exponential, 5.0});
  const Eigen::VectorXd w1 = sample_gp(cc, one, 7);
  const Eigen::VectorXd w2 = sample_gp(cc, one, 7);
  CHECK(w1.size() == 1);
  CHECK(w1(0) == w2(0));
  CHECK(std::isfinite(w1(0)));
  CHECK(sample_gp(cc, one, 8)(0) != w1(0));
}

TEST_CASE("sample_gp: sample covariance over 10^4 draws matches C, n=5") {
  RngStream rng(3);
  Eigen::MatrixX2d c(5, 2);
  for (int i = 0; i < 5; ++i) c.row(i) << rng.uniform(), rng.uniform();
  geo::LocationSet locs(c);
  auto cc = cov::CrossCovariance::univariate(1.5, {cov::KernelFamily::exponential, 4.0});
  const Eigen::MatrixXd C = cov::cov_matrix(cc, locs, locs);
  const int N = 10000;
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(5, 5);
  for (int t = 0; t < N; ++t) {
    const Eigen::VectorXd w = sample_gp(cc, locs, 1000 + t);
    S += w * w.transpose();
  }
  S /= N;
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 5; ++j) {
      const double se = std::sqrt((C(i, i) * C(j, j) + C(i, j) * C(i, j)) / N);
      CHECK(std::abs(S(i, j) - C(i, j)) < 3.0 * se);
    }
  }
}

TEST_CASE("gen_dataset: noiseless part is exactly X beta + Z w") {
  auto r = base_recipe();
  r.tau2 = 0.0;
  auto ds = gen_dataset(r);
  for (int i = 0; i < r.n; ++i) {
    const double mean = ds.data.X.row(i).dot(r.beta) + ds.w_true(i);
    CHECK(ds.data.y(i) == doctest::Approx(mean).epsilon(1e-12));
  }
}

TEST_CASE("gen_dataset: variance of y - X beta near sigma2 + tau2") {
  auto r = base_recipe();
  r.n = 2500;
  auto ds = gen_dataset(r);
  const Eigen::VectorXd res = ds.data.y - ds.data.X * r.beta;
  const double v = (res.array() - res.mean()).square().sum() / (r.n - 1);
  CHECK(v > 0.8);  // sigma2 + tau2 = 1.1, wide net for spatial correlation
  CHECK(v < 1.5);
}

TEST_CASE("gen_dataset: determinism and location laws") {
  auto r = base_recipe();
  auto a = gen_dataset(r);
  auto b = gen_dataset(r);
  CHECK((a.data.y - b.data.y).cwiseAbs().maxCoeff() == 0.0);

  r.law = LocationLaw::two_cluster;
  r.x1 = 3.0;
  auto ds = gen_dataset(r);
  for (int i = 0; i < r.n; ++i) {
    const double x = ds.data.locs.point(i).x();
    CHECK((x <= 1.0 || x >= 2.0));
  }

  r.law = LocationLaw::grid;
  r.grid_nx = 14;
  r.grid_ny = 7;
  r.n = 98;
  auto gs = gen_dataset(r);
  CHECK(gs.data.locs.size() == 98);
  CHECK(gs.data.locs.point(0).x() == doctest::Approx(3.0 / 28.0));
}

TEST_CASE("gen_dataset: svc mode ties Z to X") {
  SimRecipe r;
  r.n = 50;
  r.mode = model::Mode::svc;
  r.beta = Eigen::Vector2d(1.0, 2.0);
  r.cc.A.setZero(2, 2);
  r.cc.A << 1.0, 0.0, 0.3, 0.8;
  r.cc.kernels = {{cov::KernelFamily::exponential, 6.0},
                  {cov::KernelFamily::exponential, 12.0}};
  r.tau2 = 0.1;
  auto ds = gen_dataset(r);
  CHECK((ds.data.Z - ds.data.X).cwiseAbs().maxCoeff() == 0.0);
  CHECK(ds.w_true.size() == 100);
}

TEST_CASE("oracle_krige: exact interpolation at tau2 = 0 and marginal agreement") {
  auto r = base_recipe();
  r.n = 40;
  r.tau2 = 0.0;
  auto ds = gen_dataset(r);
  cov::ThetaParams theta;
  theta.cc = r.cc;
  theta.tau2 = Eigen::VectorXd::Zero(1);

  // kriging at an observed location reproduces it with zero variance
  Eigen::MatrixX2d nc(1, 2);
  nc.row(0) = ds.data.locs.point(3);
  geo::LocationSet news(nc);
  Eigen::MatrixXd Xn = ds.data.X.row(3);
  auto kr = oracle_krige(ds.data, theta, r.beta, news, Xn, false);
  CHECK(kr.mean(0) == doctest::Approx(ds.data.y(3)).epsilon(1e-6));
  CHECK(std::abs(kr.var(0)) < 1e-6);

  // independent-mode diagonal equals joint-mode diagonal
  RngStream rng(11);
  Eigen::MatrixX2d mc(6, 2);
  for (int i = 0; i < 6; ++i) mc.row(i) << rng.uniform(), rng.uniform();
  geo::LocationSet m6(mc);
  Eigen::MatrixXd Xm = Eigen::MatrixXd::Ones(6, 2);
  auto ind = oracle_krige(ds.data, theta, r.beta, m6, Xm, false);
  auto joint = oracle_krige(ds.data, theta, r.beta, m6, Xm, true);
  CHECK((ind.var - joint.var).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((ind.mean - joint.mean).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("oracle_posterior: shapes, support, reproducibility, scale guard") {
  auto r = base_recipe();
  r.n = 40;
  auto ds = gen_dataset(r);

  mcmc::FitProblem prob;
  prob.spec = {model::Mode::svi, 1, 2, 1};
  prob.priors.tau2 = {{2.0, 0.1}};
  prob.priors.sigma2 = {2.0, 1.0};
  prob.priors.phi = {{3.0, 30.0}};
  prob.priors.nu = {std::nullopt};
  prob.data = ds.data;

  mcmc::SamplerConfig cfg;
  cfg.iterations = 300;
  cfg.burn_in = 100;
  cfg.seed = 5;
  auto s1 = oracle_posterior(prob, cfg);
  CHECK(s1.draws.rows() == 200);
  CHECK(s1.names == std::vector<std::string>{"beta0", "beta1", "tau2", "sigma2", "phi"});
  CHECK(s1.col("sigma2").minCoeff() > 0.0);
  CHECK(s1.col("phi").minCoeff() >= 3.0);
  CHECK(s1.col("phi").maxCoeff() <= 30.0);
  CHECK(s1.accept_rate[0] > 0.0);
  CHECK(s1.accept_rate[0] < 1.0);

  auto s2 = oracle_posterior(prob, cfg);
  CHECK((s1.draws - s2.draws).cwiseAbs().maxCoeff() == 0.0);

  auto big = prob;
  Eigen::MatrixX2d c(kOracleMaxN + 1, 2);
  RngStream rng(1);
  for (int i = 0; i <= kOracleMaxN; ++i) c.row(i) << rng.uniform(), rng.uniform();
  big.data.locs = geo::LocationSet(c);
  big.data.X = Eigen::MatrixXd::Ones(kOracleMaxN + 1, 2);
  big.data.Z = Eigen::MatrixXd::Ones(kOracleMaxN + 1, 1);
  big.data.y = Eigen::VectorXd::Zero(kOracleMaxN + 1);
  CHECK_THROWS(oracle_posterior(big, cfg));
}
