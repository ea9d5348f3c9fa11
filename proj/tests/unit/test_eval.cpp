#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "doctest.h"
#include "ips/basis.hpp"
#include "ips/eval.hpp"
#include "ips/selftest.hpp"

using namespace ips;

namespace {

SnapshotDataset reference_data(int M = 40, double T = 0.2) {
  SimConfig c;
  c.M = M;
  c.T = T;
  c.dt_fine = 1e-3;
  c.dt_obs = 1e-2;
  c.threads = 1;
  return simulate(c);
}

// Eigenvalues as sign changes of det(A - x I) on a fine grid over the
// Gershgorin interval, refined by bisection.
std::vector<double> charpoly_roots(const Eigen::MatrixXd& A) {
  const Eigen::Index n = A.rows();
  double lo = INFINITY, hi = -INFINITY;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double r = A.row(i).cwiseAbs().sum() - std::abs(A(i, i));
    lo = std::min(lo, A(i, i) - r);
    hi = std::max(hi, A(i, i) + r);
  }
  auto p = [&](double x) { return (A - x * Eigen::MatrixXd::Identity(n, n)).determinant(); };
  std::vector<double> roots;
  const int steps = 200000;
  double a = lo - 1e-9, pa = p(a);
  for (int s = 1; s <= steps; ++s) {
    const double b = lo - 1e-9 + (hi - lo + 2e-9) * s / steps, pb = p(b);
    if ((pa < 0) != (pb < 0)) {
      double l = a, r = b, pl = pa;
      for (int it = 0; it < 200; ++it) {
        const double m = 0.5 * (l + r), pm = p(m);
        if ((pm < 0) == (pl < 0)) {
          l = m;
          pl = pm;
        } else {
          r = m;
        }
      }
      roots.push_back(0.5 * (l + r));
    }
    a = b;
    pa = pb;
  }
  return roots;
}

}  // namespace

TEST_CASE("kde of a repeated value peaks at the value") {
  const std::vector<double> s(100, 1.3);
  for (auto f : {kde, kde_direct}) {
    const auto g = f(s, 0.0, 3.0, 2001, 0.15);
    const auto it = std::max_element(g.density.begin(), g.density.end());
    CHECK(g.x[it - g.density.begin()] == doctest::Approx(1.3).epsilon(1e-3));
    CHECK(g.samples == 100);
  }
}

TEST_CASE("kde of standard normal samples") {
  std::mt19937_64 gen(1);
  std::normal_distribution<double> n;
  std::vector<double> s(100000);
  for (auto& v : s) v = n(gen);
  const auto g = kde(s, -6.0, 6.0);
  REQUIRE(g.x.size() == 2000);
  double sup = 0.0;
  for (std::size_t i = 0; i < g.x.size(); ++i) {
    const double pdf = std::exp(-0.5 * g.x[i] * g.x[i]) / std::sqrt(2 * std::numbers::pi);
    sup = std::max(sup, std::abs(g.density[i] - pdf));
  }
  CHECK(sup <= 0.02);
  CHECK(trapezoid(g.x, g.density) == doctest::Approx(1.0).epsilon(0.02));
  CHECK(g.bandwidth == doctest::Approx(0.15).epsilon(0.02));
  for (double v : g.density) CHECK(v >= 0.0);

  // binning is close to the exact kernel sum
  std::vector<double> few(s.begin(), s.begin() + 5000);
  const auto a = kde(few, -6.0, 6.0, 500), b = kde_direct(few, -6.0, 6.0, 500);
  for (std::size_t i = 0; i < a.x.size(); ++i) CHECK(std::abs(a.density[i] - b.density[i]) <= 1e-3);
}

TEST_CASE("kde errors") {
  const std::vector<double> s{1.0, 2.0};
  CHECK_THROWS_AS(kde(s, 1.0, 1.0), Error);
  CHECK_THROWS_AS(kde(s, 0.0, 1.0, 1), Error);
  CHECK_THROWS_AS(kde(std::vector<double>{}, 0.0, 1.0), Error);
}

TEST_CASE("trapezoid rule") {
  CHECK(trapezoid({0, 1, 3}, {1, 1, 1}) == doctest::Approx(3.0));
  CHECK(trapezoid({0, 1}, {0, 2}) == doctest::Approx(1.0));
}

TEST_CASE("radial samples") {
  SnapshotDataset ds;
  ds.header.M = 1;
  ds.header.L = 0;
  ds.header.N = 3;
  ds.header.d = 2;
  ds.data = {3, 4, 0, 0, 0, 1};
  auto v = radial_samples(ds, PotentialKind::V);
  std::sort(v.begin(), v.end());
  CHECK(v == std::vector<double>{0.0, 1.0, 5.0});
  auto p = radial_samples(ds, PotentialKind::Phi);
  std::sort(p.begin(), p.end());
  REQUIRE(p.size() == 3);
  CHECK(p[0] == doctest::Approx(1.0));
  CHECK(p[1] == doctest::Approx(std::sqrt(18.0)));
  CHECK(p[2] == doctest::Approx(5.0));
  CHECK(radial_samples(ds, PotentialKind::V, 2).size() == 2);
}

TEST_CASE("relative error: zero at the truth, homogeneous in scale") {
  const auto ds = reference_data();
  const auto spec = ds.header.config.spec;
  const auto ctx = make_eval_context(ds, spec);
  const auto o = oracle_basis(spec);
  Eigen::VectorXd theta = Eigen::Map<const Eigen::VectorXd>(o.theta_star.data(), o.theta_star.size());
  const auto e0 = gradient_errors(estimate_from_basis(o.basis, theta), ctx);
  CHECK(e0.V <= 1e-12);
  CHECK(e0.Phi <= 1e-12);
  for (double c : {1.1, 0.7}) {
    const auto e = gradient_errors(estimate_from_basis(o.basis, c * theta), ctx);
    CHECK(e.V == doctest::Approx(std::abs(c - 1)).epsilon(1e-10));
    CHECK(e.Phi == doctest::Approx(std::abs(c - 1)).epsilon(1e-10));
  }
  // Monte Carlo form has the same homogeneity
  const Eigen::MatrixXd pts = sample_points(ds, PotentialKind::V, 2000);
  const auto est = estimate_from_basis(o.basis, 1.1 * theta);
  CHECK(relative_error_mc(est.grad_V, spec, PotentialKind::V, pts) == doctest::Approx(0.1).epsilon(1e-10));
  CHECK(relative_error_mc(estimate_from_basis(o.basis, theta).grad_V, spec, PotentialKind::V, pts) <= 1e-12);
}

TEST_CASE("relative error needs a nonzero truth") {
  auto zero = PotentialSpec::make(Family::Anisotropic, 2);
  auto& p = std::get<AnisotropicParams>(zero.params);
  p.a = {0.0, 0.0};
  p.amplitude = 0.0;
  const Eigen::MatrixXd pts = Eigen::MatrixXd::Random(2, 10);
  GradientField g = [](const Eigen::MatrixXd& X) { return Eigen::MatrixXd::Zero(X.rows(), X.cols()); };
  CHECK_THROWS_AS(relative_error_mc(g, zero, PotentialKind::V, pts), Error);
  CHECK_THROWS_AS(relative_error_mc(g, zero, PotentialKind::Phi, pts), Error);
}

TEST_CASE("errors are invariant to relabeling") {
  const auto ds = reference_data();
  const auto spec = ds.header.config.spec;
  const auto a = make_eval_context(ds, spec), b = make_eval_context(strip_labels(ds, 9), spec);
  const auto o = oracle_basis(spec);
  Eigen::VectorXd theta = Eigen::Map<const Eigen::VectorXd>(o.theta_star.data(), o.theta_star.size());
  theta[0] *= 1.3;
  theta[3] *= 0.8;
  const auto est = estimate_from_basis(o.basis, theta);
  const auto ea = gradient_errors(est, a), eb = gradient_errors(est, b);
  CHECK(ea.V == doctest::Approx(eb.V).epsilon(1e-12));
  CHECK(ea.Phi == doctest::Approx(eb.Phi).epsilon(1e-12));
}

TEST_CASE("data density covers the data") {
  const auto ds = reference_data();
  for (auto kind : {PotentialKind::V, PotentialKind::Phi}) {
    const auto g = data_density(ds, kind);
    CHECK(g.x.size() == 2000);
    const double mass = trapezoid(g.x, g.density);
    CHECK(mass >= 0.95);
    CHECK(mass <= 1.05);
  }
}

TEST_CASE("block evaluation") {
  const auto pool = reference_data(12, 0.05);
  // a statistic that depends only on the block content
  auto fit = [](const SnapshotDataset& b) {
    double s = 0.0;
    for (double v : b.data) s += v * v;
    return BlockFit{{s, -s}, static_cast<double>(b.header.ensemble_offset)};
  };
  const auto one = block_evaluation(pool, 12, 1, fit);
  REQUIRE(one.err_V.size() == 1);
  CHECK(one.err_V[0] == fit(pool).err.V);
  CHECK(one.std_V == 0.0);

  const auto r = block_evaluation(pool, 4, 3, fit);
  CHECK(r.err_V.size() == 3);
  CHECK(r.lambda == std::vector<double>{0, 4, 8});
  CHECK(r.block_size == 4);
  CHECK(r.n_blocks == 3);
  // reversed block order, same mean and spread
  SnapshotDataset rev = pool;
  const std::size_t per = pool.data.size() / 3;
  for (int k = 0; k < 3; ++k)
    std::copy(pool.data.begin() + (2 - k) * per, pool.data.begin() + (3 - k) * per, rev.data.begin() + k * per);
  const auto q = block_evaluation(rev, 4, 3, fit);
  CHECK(q.mean_V == doctest::Approx(r.mean_V).epsilon(1e-14));
  CHECK(q.std_V == doctest::Approx(r.std_V).epsilon(1e-12));
  CHECK(q.err_V[0] == r.err_V[2]);

  CHECK_THROWS_AS(block_evaluation(pool, 5, 3, fit), Error);
  CHECK_THROWS_AS(block_evaluation(pool, 0, 3, fit), Error);
}

TEST_CASE("block spread shrinks with block size") {
  SimConfig c;
  c.N = 5;
  c.M = 2 * (50 + 100 + 200) * 5;
  c.T = 0.2;
  c.dt_fine = 1e-3;
  c.dt_obs = 1e-2;
  c.threads = 1;
  const auto pool = simulate(c);
  const auto ctx = make_eval_context(pool, c.spec, 1'000'000);
  const auto basis = oracle_basis(c.spec).basis;
  auto fit = [&](const SnapshotDataset& b) {
    RegConfig none;
    none.policy = RegPolicy::None;
    const auto f = solve_normal_system(assemble(b, basis, Quadrature::Riemann, 1), none, "lse");
    return BlockFit{gradient_errors(estimate_from_basis(basis, f.theta), ctx), f.lambda};
  };
  std::vector<double> sd;
  for (std::size_t B : {50, 100, 200}) sd.push_back(block_evaluation(pool, B, 10, fit).std_Phi);
  CHECK(sd[0] > sd[1]);
  CHECK(sd[1] > sd[2]);
}

TEST_CASE("condition diagnostics") {
  const auto id = condition_diagnostics(Eigen::MatrixXd::Identity(4, 4), 2);
  CHECK(id.kappa_full == 1.0);
  CHECK(id.kappa_VV == 1.0);
  CHECK(id.kappa_PhiPhi == 1.0);

  std::mt19937_64 g(3);
  std::normal_distribution<double> n;
  for (int K : {2, 3, 4}) {
    for (int t = 0; t < 5; ++t) {
      Eigen::MatrixXd B(K, K);
      for (int i = 0; i < B.size(); ++i) B.data()[i] = n(g);
      const Eigen::MatrixXd A = B * B.transpose() + 0.1 * Eigen::MatrixXd::Identity(K, K);
      const auto roots = charpoly_roots(A);
      REQUIRE(roots.size() == static_cast<std::size_t>(K));
      const auto c = condition_diagnostics(A, 1);
      CHECK(std::abs(c.lambda_min - roots.front()) <= 1e-8 * (1 + roots.back()));
      CHECK(std::abs(c.lambda_max - roots.back()) <= 1e-8 * (1 + roots.back()));
      CHECK(c.kappa_full == doctest::Approx(roots.back() / roots.front()).epsilon(1e-7));
      CHECK(c.kappa_VV == 1.0);
      const auto tail = charpoly_roots(A.bottomRightCorner(K - 1, K - 1));
      CHECK(c.kappa_PhiPhi == doctest::Approx(tail.back() / tail.front()).epsilon(1e-7));
    }
  }
  CHECK_THROWS_AS(condition_diagnostics(Eigen::MatrixXd::Identity(3, 3), 0), Error);
  CHECK_THROWS_AS(condition_diagnostics(Eigen::MatrixXd::Identity(3, 3), 3), Error);
}

TEST_CASE("gram matrices of power terms against direct moments") {
  const auto ds = reference_data(20, 0.1);
  BasisSet b;
  b.dim = 2;
  b.v = {RadialTerm::power(2.0), RadialTerm::power(4.0)};
  b.phi = {RadialTerm::power(2.0), RadialTerm::power(4.0)};
  const auto G = empirical_gram(ds, b, 1);
  // grad r^2 = 2x, grad r^4 = 4 r^2 x
  double m2 = 0, m4 = 0, m6 = 0, q2 = 0, q4 = 0, q6 = 0;
  std::size_t nv = 0, np = 0;
  const std::size_t N = ds.header.N;
  for (std::size_t m = 0; m < ds.header.M; ++m)
    for (std::size_t l = 0; l < ds.snapshots(); ++l) {
      const auto X = ds.snapshot(m, l);
      for (std::size_t i = 0; i < N; ++i) {
        const double r2 = X[2 * i] * X[2 * i] + X[2 * i + 1] * X[2 * i + 1];
        m2 += r2;
        m4 += r2 * r2;
        m6 += r2 * r2 * r2;
        ++nv;
        for (std::size_t j = 0; j < N; ++j) {
          if (j == i) continue;
          const double a = X[2 * i] - X[2 * j], c = X[2 * i + 1] - X[2 * j + 1], z2 = a * a + c * c;
          q2 += z2;
          q4 += z2 * z2;
          q6 += z2 * z2 * z2;
          ++np;
        }
      }
    }
  Eigen::Matrix2d EV, EP;
  EV << 4 * m2, 8 * m4, 8 * m4, 16 * m6;
  EP << 4 * q2, 8 * q4, 8 * q4, 16 * q6;
  EV /= static_cast<double>(nv);
  EP /= static_cast<double>(np);
  CHECK((G.G_V - EV).norm() <= 1e-10 * EV.norm());
  CHECK((G.G_Phi - EP).norm() <= 1e-10 * EP.norm());

  // rescaled single term is orthonormal in the data measure
  BasisSet unit;
  unit.dim = 2;
  unit.v = {RadialTerm::power(2.0, 1.0 / std::sqrt(EV(0, 0)))};
  unit.phi = {RadialTerm::power(2.0, 1.0 / std::sqrt(EP(0, 0)))};
  const auto U = empirical_gram(ds, unit, 1);
  CHECK(U.G_V(0, 0) == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(U.G_Phi(0, 0) == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("gram matrices of the reference oracle basis") {
  const auto ds = reference_data(20, 0.1);
  const auto G = empirical_gram(ds, oracle_basis(ds.header.config.spec).basis, 2);
  CHECK((G.G_V - G.G_V.transpose()).norm() <= 1e-12 * G.G_V.norm());
  CHECK((G.G_Phi - G.G_Phi.transpose()).norm() <= 1e-12 * G.G_Phi.norm());
  CHECK(G.lambda_min_V > 0.0);
  CHECK(G.lambda_min_Phi > 0.0);
  const auto G1 = empirical_gram(ds, oracle_basis(ds.header.config.spec).basis, 1);
  CHECK(G1.G_V == G.G_V);
}
