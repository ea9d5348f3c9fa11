#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "ips/basis.hpp"
#include "ips/selftest.hpp"

using namespace ips;

namespace {

SimConfig small(Family f, int N = 5, int M = 8, double dt = 1e-2) {
  SimConfig c;
  c.N = N;
  c.d = 2;
  c.M = M;
  c.T = 0.2;
  c.dt_fine = 1e-3;
  c.dt_obs = dt;
  c.spec = PotentialSpec::make(f, 2);
  c.threads = 1;
  return c;
}

Eigen::VectorXd random_theta(std::mt19937_64& g, std::size_t K) {
  std::normal_distribution<double> n;
  Eigen::VectorXd t(K);
  for (auto& v : t) v = n(g);
  return t;
}

// One |x|^2 element and one Gaussian bump.
BasisSet tiny_basis(double c = 0.9, double w = 0.4) {
  BasisSet b;
  b.v = {RadialTerm::power(2.0)};
  b.phi = {RadialTerm::gaussian(c, w)};
  return b;
}

struct Bump {
  double c, w;
  double value(double r) const { return std::exp(-(r - c) * (r - c) / (2 * w * w)); }
  double d1(double r) const { return -(r - c) / (w * w) * value(r); }
  double d2(double r) const {
    return ((r - c) * (r - c) / (w * w * w * w) - 1.0 / (w * w)) * value(r);
  }
  double lap(double r, int d) const { return d2(r) + (d - 1) / r * d1(r); }
};

SnapshotDataset two_particles(const std::vector<double>& X0, const std::vector<double>& X1,
                              double sigma, double dt) {
  SnapshotDataset ds;
  ds.header.M = 1;
  ds.header.L = 1;
  ds.header.N = 2;
  ds.header.d = 2;
  ds.header.dt = dt;
  ds.header.config.sigma = sigma;
  ds.header.config.N = 2;
  ds.data = X0;
  ds.data.insert(ds.data.end(), X1.begin(), X1.end());
  return ds;
}

}  // namespace

TEST_CASE("interaction columns are antisymmetric for a symmetric pair") {
  const std::vector<double> X{0.3, -0.2, -0.3, 0.2};
  const auto rv = regression_vectors(X, 2, 2, tiny_basis());
  CHECK(rv.F(0, 1) == doctest::Approx(-rv.F(2, 1)));
  CHECK(rv.F(1, 1) == doctest::Approx(-rv.F(3, 1)));
  CHECK(rv.F(0, 1) != 0.0);
}

TEST_CASE("energy entry of the interaction block for two particles") {
  const std::vector<double> X{0.5, 0.1, -0.4, 0.7};
  const Bump bump{0.9, 0.4};
  const double r = std::hypot(0.9, -0.6);
  const auto rv = regression_vectors(X, 2, 2, tiny_basis());
  CHECK(rv.h[1] == doctest::Approx(bump.value(r) / 4).epsilon(1e-14));
}

TEST_CASE("regression vectors match a brute-force double sum") {
  std::mt19937_64 g(1);
  std::normal_distribution<double> n;
  const auto basis = rbf_basis(4, 2.0, 2.5, 2);
  const int N = 5, d = 2;
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> X(N * d);
    for (auto& v : X) v = n(g);
    const auto rv = regression_vectors(X, N, d, basis);
    const std::size_t KV = basis.K_V();
    for (std::size_t k = 0; k < basis.K(); ++k) {
      const bool is_v = k < KV;
      const RadialTerm& t = is_v ? basis.v[k] : basis.phi[k - KV];
      double delta = 0, h = 0;
      for (int i = 0; i < N; ++i) {
        double F[2] = {0, 0};
        if (is_v) {
          const double r = std::hypot(X[i * 2], X[i * 2 + 1]);
          const auto j = t.jet(r);
          F[0] = j.d1 * X[i * 2] / r;
          F[1] = j.d1 * X[i * 2 + 1] / r;
          delta += (j.d2 + j.d1 / r) / N;
          h += j.value / N;
        } else {
          for (int jj = 0; jj < N; ++jj) {
            if (jj == i) continue;
            const double z0 = X[i * 2] - X[jj * 2], z1 = X[i * 2 + 1] - X[jj * 2 + 1];
            const double r = std::hypot(z0, z1);
            const auto j = t.jet(r);
            F[0] += j.d1 * z0 / r / N;
            F[1] += j.d1 * z1 / r / N;
            delta += (j.d2 + j.d1 / r) / (N * N);
            h += j.value / (2.0 * N * N);
          }
        }
        CHECK(std::abs(rv.F(i * 2, k) - F[0]) <= 1e-12 * (1 + std::abs(F[0])));
        CHECK(std::abs(rv.F(i * 2 + 1, k) - F[1]) <= 1e-12 * (1 + std::abs(F[1])));
      }
      CHECK(std::abs(rv.delta[k] - delta) <= 1e-12 * (1 + std::abs(delta)));
      CHECK(std::abs(rv.h[k] - h) <= 1e-12 * (1 + std::abs(h)));
    }
  }
}

TEST_CASE("interaction columns need two particles") {
  const std::vector<double> X{0.1, 0.2};
  CHECK_THROWS_AS(regression_vectors(X, 1, 2, tiny_basis()), Error);
}

TEST_CASE("hand-expanded normal system for one pair of two-particle snapshots") {
  const std::vector<double> X0{0.5, 0.1, -0.4, 0.7}, X1{0.45, 0.2, -0.3, 0.6};
  const double sigma = 0.8, dt = 0.05;
  const auto ds = two_particles(X0, X1, sigma, dt);
  const Bump bump{0.9, 0.4};
  auto sq = [](double a, double b) { return a * a + b * b; };

  // snapshot 0 quantities
  const double z0 = X0[0] - X0[2], z1 = X0[1] - X0[3], r = std::hypot(z0, z1);
  const double p1 = bump.d1(r);
  const double A00 = (4 * sq(X0[0], X0[1]) + 4 * sq(X0[2], X0[3])) / 2;
  const double A01 = p1 * r / 2;
  const double A11 = p1 * p1 / 4;
  const double delta0[2] = {4.0, bump.lap(r, 2) / 2};
  const double delta1_phi = bump.lap(std::hypot(X1[0] - X1[2], X1[1] - X1[3]), 2) / 2;
  const double h0[2] = {(sq(X0[0], X0[1]) + sq(X0[2], X0[3])) / 2, bump.value(r) / 4};
  const double h1[2] = {(sq(X1[0], X1[1]) + sq(X1[2], X1[3])) / 2,
                        bump.value(std::hypot(X1[0] - X1[2], X1[1] - X1[3])) / 4};

  const auto ns = assemble(ds, tiny_basis(), Quadrature::Riemann, 1);
  CHECK(ns.A(0, 0) == doctest::Approx(A00).epsilon(1e-13));
  CHECK(ns.A(0, 1) == doctest::Approx(A01).epsilon(1e-13));
  CHECK(ns.A(1, 0) == doctest::Approx(A01).epsilon(1e-13));
  CHECK(ns.A(1, 1) == doctest::Approx(A11).epsilon(1e-13));
  for (int k = 0; k < 2; ++k) {
    const double b = (0.5 * sigma * sigma * delta0[k] * dt - (h1[k] - h0[k])) / dt;
    CHECK(ns.b[k] == doctest::Approx(b).epsilon(1e-13));
  }

  // trapezoid: endpoint averages
  const double w0 = X1[0] - X1[2], w1 = X1[1] - X1[3], s = std::hypot(w0, w1);
  const double q1 = bump.d1(s);
  const auto nt = assemble(ds, tiny_basis(), Quadrature::Trapezoid, 1);
  const double T00 = 0.5 * (A00 + (4 * sq(X1[0], X1[1]) + 4 * sq(X1[2], X1[3])) / 2);
  const double T01 = 0.5 * (A01 + q1 * s / 2);
  const double T11 = 0.5 * (A11 + q1 * q1 / 4);
  CHECK(nt.A(0, 0) == doctest::Approx(T00).epsilon(1e-13));
  CHECK(nt.A(0, 1) == doctest::Approx(T01).epsilon(1e-13));
  CHECK(nt.A(1, 1) == doctest::Approx(T11).epsilon(1e-13));
  const double bt1 = (0.25 * sigma * sigma * (delta0[1] + delta1_phi) * dt - (h1[1] - h0[1])) / dt;
  CHECK(nt.b[1] == doctest::Approx(bt1).epsilon(1e-13));
}

TEST_CASE("hand-evaluated loss terms for one pair of two-particle snapshots") {
  const std::vector<double> X0{0.5, 0.1, -0.4, 0.7}, X1{0.45, 0.2, -0.3, 0.6};
  const double sigma = 0.8, dt = 0.05;
  const auto ds = two_particles(X0, X1, sigma, dt);
  const Bump bump{0.9, 0.4};
  const double a = 1.7, b = -0.6;  // V = a |x|^2, Phi = b bump
  Eigen::VectorXd theta(2);
  theta << a, b;

  auto terms = [&](const std::vector<double>& X, double& jdiss, double& jdiff, double& E) {
    const double z0 = X[0] - X[2], z1 = X[1] - X[3], r = std::hypot(z0, z1);
    const double gp = b * bump.d1(r) / r;  // grad Phi(z) = gp z
    const double f1[2] = {2 * a * X[0] + 0.5 * gp * z0, 2 * a * X[1] + 0.5 * gp * z1};
    const double f2[2] = {2 * a * X[2] - 0.5 * gp * z0, 2 * a * X[3] - 0.5 * gp * z1};
    jdiss = 0.5 * (f1[0] * f1[0] + f1[1] * f1[1] + f2[0] * f2[0] + f2[1] * f2[1]);
    jdiff = 4 * a + 0.25 * 2 * b * bump.lap(r, 2);
    E = 0.5 * a * (X[0] * X[0] + X[1] * X[1] + X[2] * X[2] + X[3] * X[3]) +
        (1.0 / 8) * 2 * b * bump.value(r);
  };
  double jd0, jf0, e0, jd1, jf1, e1;
  terms(X0, jd0, jf0, e0);
  terms(X1, jd1, jf1, e1);
  const double riemann = (0.5 * jd0 * dt - 0.5 * sigma * sigma * jf0 * dt + (e1 - e0)) / dt;
  CHECK(loss_direct(theta, ds, tiny_basis(), Quadrature::Riemann) ==
        doctest::Approx(riemann).epsilon(1e-13));
  const double trap = (0.25 * (jd0 + jd1) * dt - 0.25 * sigma * sigma * (jf0 + jf1) * dt +
                       (e1 - e0)) / dt;
  CHECK(loss_direct(theta, ds, tiny_basis(), Quadrature::Trapezoid) ==
        doctest::Approx(trap).epsilon(1e-13));
}

TEST_CASE("quadratic and direct losses agree") {
  std::mt19937_64 g(3);
  for (Family f : {Family::Reference, Family::Conditioning, Family::SmoothControl}) {
    const auto ds = simulate(small(f));
    for (const auto& basis : {oracle_basis(ds.header.config.spec).basis, rbf_basis(5, 2.5, 3.0, 2)}) {
      for (Quadrature q : {Quadrature::Riemann, Quadrature::Trapezoid}) {
        const auto ns = assemble(ds, basis, q, 1);
        for (int t = 0; t < 3; ++t) {
          const auto theta = random_theta(g, basis.K());
          const double direct = loss_direct(theta, ds, basis, q);
          CHECK(std::abs(loss_quadratic(theta, ns) - direct) <= 1e-10 * (1 + std::abs(direct)));
        }
      }
    }
  }
}

TEST_CASE("zero coefficients give zero loss") {
  const auto ds = simulate(small(Family::Reference));
  const auto basis = oracle_basis(ds.header.config.spec).basis;
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(4);
  CHECK(loss_direct(zero, ds, basis) == 0.0);
  CHECK(loss_quadratic(zero, assemble(ds, basis, Quadrature::Riemann, 1)) == 0.0);
}

TEST_CASE("pure Brownian data") {
  SimConfig c = small(Family::Anisotropic);
  auto& p = std::get<AnisotropicParams>(c.spec.params);
  p.a = {0.0, 0.0};
  p.amplitude = 0.0;
  const auto ds = simulate(c);
  const auto basis = oracle_basis(PotentialSpec::make(Family::Reference, 2)).basis;
  std::mt19937_64 g(7);
  const auto ns = assemble(ds, basis, Quadrature::Riemann, 1);
  for (int t = 0; t < 5; ++t) {
    const auto theta = random_theta(g, 4);
    const double direct = loss_direct(theta, ds, basis);
    CHECK(std::isfinite(direct));
    CHECK(std::abs(loss_quadratic(theta, ns) - direct) <= 1e-10 * (1 + std::abs(direct)));
  }
}

TEST_CASE("without noise b is the telescoped energy change") {
  SimConfig c = small(Family::Reference);
  c.sigma = 0.0;
  const auto ds = simulate(c);
  const auto basis = oracle_basis(c.spec).basis;
  const auto ns = assemble(ds, basis, Quadrature::Riemann, 1);
  Eigen::VectorXd expect = Eigen::VectorXd::Zero(4);
  for (std::size_t m = 0; m < ds.header.M; ++m) {
    expect -= regression_vectors(ds.snapshot(m, ds.header.L), 5, 2, basis).h;
    expect += regression_vectors(ds.snapshot(m, 0), 5, 2, basis).h;
  }
  expect /= static_cast<double>(ds.header.M) * ds.T();
  for (int k = 0; k < 4; ++k) CHECK(ns.b[k] == doctest::Approx(expect[k]).epsilon(1e-12));
}

TEST_CASE("normal matrix is symmetric positive semidefinite") {
  for (Family f : {Family::Reference, Family::Smoothness, Family::Conditioning, Family::Singularity,
                   Family::SmoothControl}) {
    const auto ds = simulate(small(f));
    for (const auto& basis : {oracle_basis(ds.header.config.spec).basis, rbf_basis(8, 2.5, 3.0, 2)}) {
      for (Quadrature q : {Quadrature::Riemann, Quadrature::Trapezoid}) {
        const auto ns = assemble(ds, basis, q, 2);
        const double scale = ns.A.norm();
        CHECK((ns.A - ns.A.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * scale);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(ns.A);
        CHECK(es.eigenvalues().minCoeff() >= -1e-10 * scale);
      }
    }
  }
}

TEST_CASE("assembly ignores particle labels and thread count exactly") {
  const auto ds = simulate(small(Family::Reference, 6, 12));
  const auto st = strip_labels(ds, 77);
  const auto basis = rbf_basis(6, 2.5, 3.0, 2);
  for (Quadrature q : {Quadrature::Riemann, Quadrature::Trapezoid}) {
    const auto a = assemble(ds, basis, q, 1);
    const auto b = assemble(st, basis, q, 3);
    CHECK(a.A == b.A);
    CHECK(a.b == b.b);
  }
}

TEST_CASE("fit on labeled and stripped data is identical") {
  const auto ds = simulate(small(Family::Reference, 6, 12));
  const auto basis = oracle_basis(ds.header.config.spec).basis;
  const auto a = fit_selftest(ds, basis, Quadrature::Riemann);
  const auto b = fit_selftest(strip_labels(ds, 1), basis, Quadrature::Riemann);
  CHECK(a.theta == b.theta);
  CHECK(a.lambda == b.lambda);
}

TEST_CASE("the loss is negative at the unregularized minimizer") {
  const auto ds = simulate(small(Family::Reference, 10, 20));
  const auto basis = oracle_basis(ds.header.config.spec).basis;
  for (Quadrature q : {Quadrature::Riemann, Quadrature::Trapezoid}) {
    const auto ns = assemble(ds, basis, q, 1);
    const Eigen::VectorXd theta = ns.A.ldlt().solve(ns.b);
    const double loss = loss_quadratic(theta, ns);
    CHECK(loss <= 0.0);
    CHECK(loss == doctest::Approx(-0.5 * ns.b.dot(theta)).epsilon(1e-10));
  }
}

TEST_CASE("scaling the interaction elements") {
  const auto ds = simulate(small(Family::Reference, 6, 10));
  BasisSet b1, b2;
  const double c = 3.0;
  b1.v = b2.v = {RadialTerm::power(1.0), RadialTerm::power(2.0)};
  b1.phi = {RadialTerm::power(2.0), RadialTerm::power(3.0)};
  b2.phi = {RadialTerm::power(2.0, c), RadialTerm::power(3.0, c)};
  const auto n1 = assemble(ds, b1, Quadrature::Riemann, 1);
  const auto n2 = assemble(ds, b2, Quadrature::Riemann, 1);
  for (int i = 0; i < 4; ++i) {
    const double si = i >= 2 ? c : 1.0;
    CHECK(n2.b[i] == doctest::Approx(si * n1.b[i]).epsilon(1e-12));
    for (int j = 0; j < 4; ++j) {
      const double sj = j >= 2 ? c : 1.0;
      CHECK(n2.A(i, j) == doctest::Approx(si * sj * n1.A(i, j)).epsilon(1e-12));
    }
  }
  RegConfig none;
  none.policy = RegPolicy::None;
  const auto f1 = solve_normal_system(n1, none, "t");
  const auto f2 = solve_normal_system(n2, none, "t");
  // same Phi: beta1 = c beta2
  for (int k = 2; k < 4; ++k) CHECK(f1.theta[k] == doctest::Approx(c * f2.theta[k]).epsilon(1e-8));
  for (int k = 0; k < 2; ++k) CHECK(f1.theta[k] == doctest::Approx(f2.theta[k]).epsilon(1e-8));
}

TEST_CASE("assembly errors") {
  const auto ds = simulate(small(Family::Reference));
  auto b3 = tiny_basis();
  b3.dim = 3;
  CHECK_THROWS_AS(assemble(ds, b3, Quadrature::Riemann, 1), Error);
  CHECK_THROWS_AS(quadrature_from_string("simpson"), Error);
  CHECK(quadrature_from_string("trapezoid") == Quadrature::Trapezoid);
}

TEST_CASE("martingale residual at the truth") {
  SimConfig c = small(Family::Reference, 10, 400, 1e-3);
  c.T = 0.5;
  const auto ds = simulate(c);
  const auto z = martingale_mean_check(ds, c.spec);
  REQUIRE(z.z.size() == 3);
  for (double v : z.z) CHECK(std::abs(v) < 4.0);
  const auto wrong = martingale_mean_check(ds, c.spec, 2.0);
  double worst = 0;
  for (double v : wrong.z) worst = std::max(worst, std::abs(v));
  CHECK(worst > 10.0);
}

TEST_CASE("martingale residual without noise is first-order quadrature error") {
  SimConfig c = small(Family::Reference, 6, 20, 1e-2);
  c.sigma = 0.0;
  c.T = 0.4;
  c.dt_fine = 1e-4;
  const auto coarse = simulate(c);
  c.dt_obs = 5e-3;
  const auto half = simulate(c);
  const auto r1 = martingale_mean_check(coarse, c.spec);
  const auto r2 = martingale_mean_check(half, c.spec);
  // same noise-free trajectories, so the residual halves with the interval
  for (std::size_t k = 0; k < r1.mean.size(); ++k) {
    const double ratio = r1.mean[k] / r2.mean[k];
    CHECK(ratio > 1.6);
    CHECK(ratio < 2.4);
  }
}
