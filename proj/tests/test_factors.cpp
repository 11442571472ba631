#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "nngp/factors.hpp"
#include "nngp/rng.hpp"

using namespace nngp;
using namespace nngp::factors;
using cov::CrossCovariance;
using cov::Kernel;
using cov::KernelFamily;
using geo::LocationSet;

namespace {

LocationSet random_locs(int n, RngStream& rng) {
  Eigen::MatrixX2d c(n, 2);
  for (int i = 0; i < n; ++i) c.row(i) << rng.uniform(), rng.uniform();
  return LocationSet(c);
}

std::shared_ptr<const geo::NeighborDag> make_dag(const LocationSet& locs, int m,
                                                 geo::NeighborScheme scheme =
                                                     geo::NeighborScheme::nearest) {
  auto ord = geo::order_locations(locs, geo::OrderStrategy::by_coord_sum);
  return std::make_shared<geo::NeighborDag>(geo::build_neighbor_dag(locs, ord, m, scheme));
}

double mvn_logpdf(const Eigen::VectorXd& w, const Eigen::MatrixXd& C) {
  Eigen::LLT<Eigen::MatrixXd> llt(C);
  REQUIRE(llt.info() == Eigen::Success);
  const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  const Eigen::VectorXd z = llt.matrixL().solve(w);
  return -0.5 * (w.size() * std::log(2.0 * std::numbers::pi) + logdet + z.squaredNorm());
}

CrossCovariance expo(double sigma2, double phi) {
  return CrossCovariance::univariate(sigma2, {KernelFamily::exponential, phi});
}

}  // namespace

TEST_CASE("first node is unconditioned: B empty, F = C(s1,s1)") {
  RngStream rng(1);
  auto locs = random_locs(6, rng);
  auto f = compute_factors(make_dag(locs, 3), expo(2.0, 5.0));
  CHECK(f.node[0].B.cols() == 0);
  CHECK(f.node[0].F(0, 0) == doctest::Approx(2.0));
}

TEST_CASE("two points: bivariate normal conditional") {
  Eigen::MatrixX2d c(2, 2);
  c << 0.0, 0.0, 0.3, 0.4;  // distance 0.5
  LocationSet locs(c);
  const double sigma2 = 1.7, phi = 2.0, rho = std::exp(-phi * 0.5);
  auto dag = std::make_shared<geo::NeighborDag>(
      geo::build_neighbor_dag(locs, geo::given_ordering(2), 1));
  auto f = compute_factors(dag, expo(sigma2, phi));
  CHECK(f.node[1].B(0, 0) == doctest::Approx(rho).epsilon(1e-8));
  CHECK(f.node[1].F(0, 0) == doctest::Approx(sigma2 * (1 - rho * rho)).epsilon(1e-8));
}

TEST_CASE("full conditioning recovers the sequential dense Cholesky, k=20") {
  RngStream rng(2);
  auto locs = random_locs(20, rng);
  auto dag = make_dag(locs, 19);
  auto cc = expo(1.3, 8.0);
  auto f = compute_factors(dag, cc);
  Eigen::MatrixXd C = cov::cov_matrix(cc, dag->ordered, dag->ordered);
  Eigen::LLT<Eigen::MatrixXd> llt(C);
  const Eigen::MatrixXd L = llt.matrixL();
  // F_i is the squared i-th Cholesky pivot when conditioning on all predecessors
  for (int i = 0; i < 20; ++i) {
    CHECK(f.node[i].F(0, 0) == doctest::Approx(L(i, i) * L(i, i)).epsilon(1e-7));
  }
}

TEST_CASE("multivariate factors: Schur domination and F_1 = C(s,s)") {
  RngStream rng(3);
  auto locs = random_locs(15, rng);
  CrossCovariance cc;
  cc.A.setZero(2, 2);
  cc.A << 1.1, 0.0, 0.5, 0.8;
  cc.kernels = {{KernelFamily::exponential, 4.0}, {KernelFamily::exponential, 9.0}};
  auto dag = make_dag(locs, 4);
  auto f = compute_factors(dag, cc);
  CHECK(f.node[0].F.isApprox(cc.A * cc.A.transpose(), 1e-12));
  for (int i = 0; i < f.k(); ++i) {
    const Eigen::MatrixXd gap = cov::cross_cov(cc, dag->ordered.point(i), dag->ordered.point(i)) -
                                f.node[i].F;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gap);
    CHECK(es.eigenvalues().minCoeff() > -1e-9);
  }
}

TEST_CASE("sparse precision closed form, k=2 m=1 q=1") {
  Eigen::MatrixX2d c(2, 2);
  c << 0.0, 0.0, 0.6, 0.0;
  LocationSet locs(c);
  auto dag = std::make_shared<geo::NeighborDag>(
      geo::build_neighbor_dag(locs, geo::given_ordering(2), 1));
  auto f = compute_factors(dag, expo(1.0, 3.0));
  auto P = assemble_precision(f);
  const double B2 = f.node[1].B(0, 0), F1 = f.node[0].F(0, 0), F2 = f.node[1].F(0, 0);
  Eigen::MatrixXd M = P.dense();
  CHECK(M(0, 0) == doctest::Approx(1.0 / F1 + B2 * B2 / F2).epsilon(1e-12));
  CHECK(M(1, 0) == doctest::Approx(-B2 / F2).epsilon(1e-12));
  CHECK(M(1, 1) == doctest::Approx(1.0 / F2).epsilon(1e-12));
}

TEST_CASE("sparse precision equals dense B'F^-1 B and respects the block bound") {
  RngStream rng(4);
  auto locs = random_locs(30, rng);
  auto dag = make_dag(locs, 5);
  auto f = compute_factors(dag, expo(1.0, 6.0));
  auto P = assemble_precision(f);

  // dense oracle: build B (unit lower triangular) and F, form B' F^-1 B
  const int k = f.k();
  Eigen::MatrixXd B = Eigen::MatrixXd::Identity(k, k);
  Eigen::VectorXd Fd(k);
  for (int i = 0; i < k; ++i) {
    Fd(i) = f.node[i].F(0, 0);
    const auto& nb = dag->neighbors[i];
    for (size_t a = 0; a < nb.size(); ++a) B(i, nb[a]) = -f.node[i].B(0, a);
  }
  const Eigen::MatrixXd expect = B.transpose() * Fd.cwiseInverse().asDiagonal() * B;
  CHECK((P.dense() - expect).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(P.offdiag_block_count() <= 30 * 5 * 6 / 2);

  // log det identity
  const double logdet_prec = [&] {
    Eigen::LLT<Eigen::MatrixXd> llt(P.dense());
    return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  }();
  CHECK(-logdet_prec == doctest::Approx(log_det_cov(f)).epsilon(1e-8));
}

TEST_CASE("precision block count bound at k=100 m=10") {
  RngStream rng(5);
  auto locs = random_locs(100, rng);
  auto f = compute_factors(make_dag(locs, 10), expo(1.0, 12.0));
  auto P = assemble_precision(f);
  CHECK(P.offdiag_block_count() <= 100 * 10 * 11 / 2);
}

TEST_CASE("log density of a single unconditioned node at the mode") {
  Eigen::MatrixX2d c(1, 2);
  c << 0.5, 0.5;
  LocationSet locs(c);
  auto dag = std::make_shared<geo::NeighborDag>(
      geo::build_neighbor_dag(locs, geo::given_ordering(1), 1));
  auto f = compute_factors(dag, expo(1.9, 3.0));
  Eigen::VectorXd w = Eigen::VectorXd::Zero(1);
  CHECK(log_density(f, w) ==
        doctest::Approx(-0.5 * std::log(2.0 * std::numbers::pi * 1.9)).epsilon(1e-12));
}

TEST_CASE("full conditioning: log density equals dense MVN, k=49") {
  // jittered grid keeps the parent covariance well conditioned, so both the
  // factor path and the dense oracle are accurate well past the tolerance
  RngStream rng(6);
  Eigen::MatrixX2d c(49, 2);
  int idx = 0;
  for (int i = 0; i < 7; ++i) {
    for (int j = 0; j < 7; ++j, ++idx) {
      c.row(idx) << (i + 0.25 + 0.5 * rng.uniform()) / 7.0,
          (j + 0.25 + 0.5 * rng.uniform()) / 7.0;
    }
  }
  LocationSet locs(c);
  auto dag = make_dag(locs, 48);
  auto cc = expo(1.0, 10.0);
  auto f = compute_factors(dag, cc);
  Eigen::MatrixXd C = cov::cov_matrix(cc, dag->ordered, dag->ordered);
  for (int t = 0; t < 5; ++t) {
    const Eigen::VectorXd w = rng.normal_vector(49);
    CHECK(std::abs(log_density(f, w) - mvn_logpdf(w, C)) < 1e-8);
  }
}

TEST_CASE("log density differences match the precision quadratic form") {
  RngStream rng(7);
  auto locs = random_locs(35, rng);
  auto f = compute_factors(make_dag(locs, 6), expo(1.2, 7.0));
  auto P = assemble_precision(f);
  const Eigen::MatrixXd M = P.dense();
  for (int t = 0; t < 5; ++t) {
    const Eigen::VectorXd w = rng.normal_vector(35);
    const double lhs = log_density(f, w) - log_density(f, Eigen::VectorXd::Zero(35));
    CHECK(lhs == doctest::Approx(-0.5 * w.dot(M * w)).epsilon(1e-9));
  }
}

TEST_CASE("query factors: bivariate conditional and continuity limit") {
  RngStream rng(8);
  auto locs = random_locs(12, rng);
  const double sigma2 = 1.0, phi = 4.0;
  auto dag0 = std::make_shared<geo::NeighborDag>(geo::build_neighbor_dag(
      locs, geo::order_locations(locs, geo::OrderStrategy::by_coord_sum), 1));
  auto f1 = compute_factors(dag0, expo(sigma2, phi));
  Eigen::Vector2d u(2.0, 2.0);  // outside the unit square
  auto qf = query_factors(f1, u);
  const double d = (dag0->ordered.point(qf.neighbors[0]) - u).norm();
  const double rho = std::exp(-phi * d);
  CHECK(qf.f.B(0, 0) == doctest::Approx(rho).epsilon(1e-8));
  CHECK(qf.f.F(0, 0) == doctest::Approx(sigma2 * (1 - rho * rho)).epsilon(1e-8));

  // u -> s_j: F -> 0 and B concentrates on s_j
  auto dag = make_dag(locs, 3);
  auto f = compute_factors(dag, expo(sigma2, phi));
  const Eigen::Vector2d sj = dag->ordered.point(5);
  auto near = query_factors(f, sj + Eigen::Vector2d(1e-7, 0.0));
  CHECK(near.f.F(0, 0) < 1e-4);
  for (size_t a = 0; a < near.neighbors.size(); ++a) {
    if (near.neighbors[a] == 5) CHECK(near.f.B(0, a) == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("query factors match the dense conditional oracle, 20 queries on k=100") {
  RngStream rng(9);
  auto locs = random_locs(100, rng);
  auto dag = make_dag(locs, 10);
  auto cc = expo(1.4, 9.0);
  auto f = compute_factors(dag, cc);
  for (int t = 0; t < 20; ++t) {
    Eigen::Vector2d u(rng.uniform(), rng.uniform());
    auto qf = query_factors(f, u);
    Eigen::MatrixX2d nc(qf.neighbors.size(), 2);
    for (size_t a = 0; a < qf.neighbors.size(); ++a) {
      nc.row(a) = dag->ordered.point(qf.neighbors[a]);
    }
    LocationSet nl(nc);
    Eigen::MatrixXd CN = cov::cov_matrix(cc, nl, nl);
    Eigen::MatrixX2d uc(1, 2);
    uc.row(0) = u;
    LocationSet ul(uc);
    Eigen::MatrixXd CuN = cov::cov_matrix(cc, ul, nl);
    const Eigen::MatrixXd Boracle = CuN * CN.inverse();
    const double Foracle = 1.4 - (Boracle * CuN.transpose())(0, 0);
    CHECK((qf.f.B - Boracle).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(qf.f.F(0, 0) == doctest::Approx(Foracle).epsilon(1e-6));
  }
}

TEST_CASE("nngp_cov: reference cases") {
  RngStream rng(10);
  auto locs = random_locs(25, rng);
  auto cc = expo(1.6, 6.0);
  auto dag = make_dag(locs, 24);
  auto f = compute_factors(dag, cc);
  // node 1 unconditioned
  const Eigen::Vector2d s0 = dag->ordered.point(0);
  CHECK(nngp_cov(f, s0, s0)(0, 0) == doctest::Approx(1.6).epsilon(1e-10));
  // full conditioning recovers the parent covariance for all reference pairs
  CovEvaluator ev(f);
  for (int i = 0; i < 25; ++i) {
    for (int j = 0; j <= i; ++j) {
      const double parent =
          cov::cross_cov(cc, dag->ordered.point(i), dag->ordered.point(j))(0, 0);
      CHECK(ev.reference_block(i, j)(0, 0) == doctest::Approx(parent).epsilon(1e-7));
    }
  }
}

TEST_CASE("nngp_cov: far-away query decorrelates") {
  RngStream rng(11);
  auto locs = random_locs(40, rng);
  auto cc = expo(1.0, 12.0);  // effective range 0.25
  auto f = compute_factors(make_dag(locs, 5), cc);
  Eigen::Vector2d far(50.0, 50.0);
  CHECK(std::abs(nngp_cov(f, far, locs.point(3))(0, 0)) < 1e-10);
  CHECK(nngp_cov(f, far, far)(0, 0) == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("nngp_cov is continuous away from equidistant boundaries") {
  RngStream rng(12);
  auto locs = random_locs(30, rng);
  auto f = compute_factors(make_dag(locs, 4), expo(1.0, 5.0));
  Eigen::Vector2d u(0.33371, 0.57123);
  const Eigen::Vector2d sj = locs.point(7);
  const double base = nngp_cov(f, u, sj)(0, 0);
  double h = 1e-3;
  for (int t = 0; t < 4; ++t, h *= 0.1) {
    const double v = nngp_cov(f, u + Eigen::Vector2d(h, h), sj)(0, 0);
    CHECK(std::abs(v - base) < 10.0 * h * 50.0 + 1e-9);
  }
}

TEST_CASE("marginalization: removing a zero-reverse-degree node") {
  RngStream rng(13);
  auto locs = random_locs(20, rng);
  auto dag = make_dag(locs, 4);
  auto cc = expo(1.1, 7.0);
  auto f = compute_factors(dag, cc);
  const int j = dag->size() - 1;  // last ordered node depends on nothing
  REQUIRE(dag->reverse[j].empty());

  // subgraph with node j dropped; neighbor lists are unchanged
  auto sub = std::make_shared<geo::NeighborDag>(*dag);
  sub->neighbors.pop_back();
  sub->reverse.pop_back();
  sub->to_original.pop_back();
  sub->ordered = geo::LocationSet(dag->ordered.coords().topRows(j));
  auto fsub = compute_factors(sub, cc);

  const Eigen::MatrixXd Ct = dense_nngp_cov(f);
  for (int t = 0; t < 5; ++t) {
    const Eigen::VectorXd w = rng.normal_vector(j);
    const double sub_ld = log_density(fsub, w);
    const double marg = mvn_logpdf(w, Ct.topLeftCorner(j, j));
    CHECK(std::abs(sub_ld - marg) < 1e-8);
  }
}

TEST_CASE("kl divergence: exact recovery at full conditioning and nonnegativity") {
  RngStream rng(14);
  auto locs = random_locs(30, rng);
  auto cc = expo(1.0, 8.0);
  CHECK(kl_divergence(compute_factors(make_dag(locs, 29), cc)) < 1e-8);
  const double kl5 = kl_divergence(compute_factors(make_dag(locs, 5), cc));
  const double kl2 = kl_divergence(compute_factors(make_dag(locs, 2), cc));
  CHECK(kl5 >= 0.0);
  CHECK(kl2 >= kl5);
}
