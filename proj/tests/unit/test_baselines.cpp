#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "doctest.h"
#include "ips/assignment.hpp"
#include "ips/baselines.hpp"
#include "ips/basis.hpp"

using namespace ips;

namespace {

Eigen::MatrixXd random_points(int n, int d, std::mt19937_64& g) {
  std::normal_distribution<double> nd;
  Eigen::MatrixXd X(n, d);
  for (int i = 0; i < X.size(); ++i) X.data()[i] = nd(g);
  return X;
}

// Row sums and column sums against 1/N.
double marginal_violation(const Eigen::MatrixXd& P) {
  const double n = static_cast<double>(P.rows());
  const double r = (P.rowwise().sum().array() - 1.0 / n).abs().maxCoeff();
  const double c = (P.colwise().sum().array() - 1.0 / n).abs().maxCoeff();
  return std::max(r, c);
}

std::vector<int> brute_force(const Eigen::MatrixXd& W, bool maximize) {
  const int n = static_cast<int>(W.rows());
  std::vector<int> p(n), best;
  std::iota(p.begin(), p.end(), 0);
  double best_v = maximize ? -INFINITY : INFINITY;
  do {
    double v = 0;
    for (int i = 0; i < n; ++i) v += W(i, p[i]);
    if (maximize ? v > best_v : v < best_v) {
      best_v = v;
      best = p;
    }
  } while (std::next_permutation(p.begin(), p.end()));
  return best;
}

double total(const Eigen::MatrixXd& W, const std::vector<int>& p) {
  double v = 0;
  for (std::size_t i = 0; i < p.size(); ++i) v += W(static_cast<Eigen::Index>(i), p[i]);
  return v;
}

SimConfig small(int N = 5, int M = 10) {
  SimConfig c;
  c.N = N;
  c.d = 2;
  c.M = M;
  c.T = 0.1;
  c.dt_fine = 1e-3;
  c.dt_obs = 1e-3;
  c.threads = 1;
  return c;
}

}  // namespace

TEST_CASE("labeled MLE is exact on noise-free Euler data") {
  for (Family f : {Family::Reference, Family::Conditioning, Family::SmoothControl}) {
    SimConfig c = small(6, 20);
    c.sigma = 0.0;
    c.spec = PotentialSpec::make(f, 2);
    const auto ds = simulate(c);
    const auto o = oracle_basis(c.spec);
    RegConfig none;
    none.policy = RegPolicy::None;
    const auto fit = labeled_mle(ds, o.basis, none);
    for (std::size_t k = 0; k < o.theta_star.size(); ++k)
      CHECK(std::abs(fit.theta[k] - o.theta_star[k]) <= 1e-8);
  }
}

TEST_CASE("labeled MLE rejects unlabeled data") {
  const auto ds = strip_labels(simulate(small()), 1);
  CHECK_THROWS_AS(labeled_mle(ds, oracle_basis(ds.header.config.spec).basis), Error);
}

TEST_CASE("MLE normal system equals a direct least-squares build") {
  const auto ds = simulate(small(4, 3));
  const auto basis = oracle_basis(ds.header.config.spec).basis;
  const auto ns = assemble_mle(ds, basis, 1);
  const std::size_t K = basis.K();
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(K, K);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(K);
  for (std::size_t m = 0; m < 3; ++m)
    for (std::size_t l = 0; l < ds.header.L; ++l) {
      const auto rv = regression_vectors(ds.snapshot(m, l), 4, 2, basis);
      Eigen::VectorXd y(8);
      for (int k = 0; k < 8; ++k)
        y[k] = -(ds.snapshot(m, l + 1)[k] - ds.snapshot(m, l)[k]) / ds.header.dt;
      A += rv.F.transpose() * rv.F;
      b += rv.F.transpose() * y;
    }
  const double s = 1.0 / (3.0 * ds.header.L * 4);
  CHECK((ns.A - s * A).norm() <= 1e-12 * A.norm() * s);
  CHECK((ns.b - s * b).norm() <= 1e-10 * (1 + b.norm() * s));
}

TEST_CASE("sinkhorn marginals") {
  std::mt19937_64 g(1);
  for (int t = 0; t < 20; ++t) {
    const int n = 3 + t % 8;
    const auto Xa = random_points(n, 2, g), Xb = random_points(n, 2, g);
    const auto C = squared_distance_cost(Xa, Xb);
    const auto cp = sinkhorn(Xa, Xb, 0.01 * median_offdiagonal(C));
    CHECK(cp.converged);
    CHECK(marginal_violation(cp.P) <= 1e-8);
    CHECK(cp.marginal_err == doctest::Approx(marginal_violation(cp.P)));
    CHECK(cp.P.minCoeff() >= 0.0);
  }
}

TEST_CASE("reported marginal error is the measured one when iterations run out") {
  std::mt19937_64 g(7);
  const auto Xa = random_points(8, 2, g), Xb = random_points(8, 2, g);
  const auto cp = sinkhorn(Xa, Xb, 1e-3 * median_offdiagonal(squared_distance_cost(Xa, Xb)), 5);
  CHECK(cp.marginal_err == doctest::Approx(marginal_violation(cp.P)));
  CHECK(cp.converged == (cp.marginal_err < 1e-8));
}

TEST_CASE("sinkhorn on identical clouds concentrates on the diagonal") {
  std::mt19937_64 g(2);
  const auto X = random_points(8, 2, g);
  const auto C = squared_distance_cost(X, X);
  const auto cp = sinkhorn(X, X, 1e-3 * median_offdiagonal(C));
  CHECK(cp.P.diagonal().sum() > 0.99);
  const auto p = coupling_to_assignment(cp.P);
  for (int i = 0; i < 8; ++i) CHECK(p[i] == i);
}

TEST_CASE("sinkhorn assignment equals the optimal assignment") {
  std::mt19937_64 g(3);
  for (int t = 0; t < 30; ++t) {
    const int n = 2 + t % 7;
    const auto Xa = random_points(n, 2, g), Xb = random_points(n, 2, g);
    const auto C = squared_distance_cost(Xa, Xb);
    const auto cp = sinkhorn_cost(C, 1e-3 * median_offdiagonal(C), 5000, 1e-8);
    CHECK(cp.converged);
    const auto p = coupling_to_assignment(cp.P);
    CHECK(total(C, p) == doctest::Approx(total(C, brute_force(C, false))).epsilon(1e-12));
  }
}

TEST_CASE("sinkhorn non-convergence is flagged, not thrown") {
  std::mt19937_64 g(4);
  const auto X = random_points(6, 2, g), Y = random_points(6, 2, g);
  const auto cp = sinkhorn(X, Y, 1e-6, 2, 1e-14);
  CHECK_FALSE(cp.converged);
  CHECK(cp.iters == 2);
  CHECK_THROWS_AS(sinkhorn(X, Y, 0.0), Error);
}

TEST_CASE("coupling to assignment") {
  const int n = 6;
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n) / n;
  auto p = coupling_to_assignment(I);
  for (int i = 0; i < n; ++i) CHECK(p[i] == i);
  Eigen::MatrixXd R = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) R(i, n - 1 - i) = 1.0 / n;
  p = coupling_to_assignment(R);
  for (int i = 0; i < n; ++i) CHECK(p[i] == n - 1 - i);

  // random doubly stochastic: a mixture of permutation matrices
  std::mt19937_64 g(5);
  std::uniform_real_distribution<double> u;
  for (int t = 0; t < 20; ++t) {
    Eigen::MatrixXd P = Eigen::MatrixXd::Zero(5, 5);
    std::vector<int> perm(5);
    std::iota(perm.begin(), perm.end(), 0);
    double wsum = 0;
    for (int k = 0; k < 4; ++k) {
      std::shuffle(perm.begin(), perm.end(), g);
      const double w = u(g);
      wsum += w;
      for (int i = 0; i < 5; ++i) P(i, perm[i]) += w;
    }
    P /= 5 * wsum;
    const auto a = coupling_to_assignment(P);
    std::vector<int> sorted = a;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 5; ++i) CHECK(sorted[i] == i);
    CHECK(total(P, a) == doctest::Approx(total(P, brute_force(P, true))).epsilon(1e-12));
  }
}

TEST_CASE("hungarian assignment against brute force") {
  std::mt19937_64 g(6);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int t = 0; t < 40; ++t) {
    const int n = 1 + t % 8;
    Eigen::MatrixXd C(n, n);
    for (int i = 0; i < C.size(); ++i) C.data()[i] = u(g);
    CHECK(total(C, min_cost_assignment(C)) == doctest::Approx(total(C, brute_force(C, false))));
    CHECK(total(C, max_weight_assignment(C)) == doctest::Approx(total(C, brute_force(C, true))));
  }
}

TEST_CASE("median of off-diagonal costs") {
  Eigen::MatrixXd C(3, 3);
  C << 0, 1, 2, 3, 0, 4, 5, 6, 0;
  CHECK(median_offdiagonal(C) == doctest::Approx(3.5));
}

TEST_CASE("one particle: matching is the identity") {
  SimConfig c = small(1, 10);
  const auto ds = simulate(c);
  double acc = 0, iters = 0;
  std::size_t bad = 0;
  const auto pseudo = sinkhorn_pseudo_trajectories(strip_labels(ds, 3), {}, 1, &acc, &iters, &bad);
  CHECK(pseudo.data == ds.data);
  CHECK(acc == 1.0);
  CHECK(bad == 0);
}

TEST_CASE("perfect matching reproduces labeled MLE exactly") {
  SimConfig c = small(6, 8);
  c.sigma = 0.0;
  const auto ds = simulate(c);
  const auto basis = oracle_basis(c.spec).basis;
  const auto st = strip_labels(ds, 11);
  const auto s = sinkhorn_mle(st, basis);
  REQUIRE(s.diagnostics.at("matching_accuracy") == 1.0);
  const auto a = labeled_mle(ds, basis);
  CHECK(a.theta == s.theta);
}

TEST_CASE("tiny steps: near-perfect matching, fit close to labeled MLE") {
  SimConfig c = small(10, 40);
  c.dt_fine = c.dt_obs = 1e-4;
  c.T = 0.02;
  const auto ds = simulate(c);
  const auto basis = oracle_basis(c.spec).basis;
  const auto s = sinkhorn_mle(strip_labels(ds, 2), basis);
  const auto a = labeled_mle(ds, basis);
  CHECK(s.diagnostics.at("matching_accuracy") >= 0.99);
  CHECK((s.theta - a.theta).norm() <= 0.05 * a.theta.norm());
}

TEST_CASE("noise-free tiny steps recover the trajectories") {
  SimConfig c = small(8, 5);
  c.sigma = 0.0;
  c.T = 0.05;
  const auto ds = simulate(c);
  double acc = 0, iters = 0;
  std::size_t bad = 0;
  const auto pseudo = sinkhorn_pseudo_trajectories(strip_labels(ds, 2), {}, 1, &acc, &iters, &bad);
  CHECK(acc == 1.0);
  CHECK(pseudo.header.labeled);
  // the same trajectories, up to one relabeling per ensemble
  for (std::size_t m = 0; m < 5; ++m) {
    for (std::size_t k = 0; k < 8; ++k) {
      auto first = pseudo.snapshot(m, 0).subspan(k * 2, 2);
      std::size_t i = 0;
      for (; i < 8; ++i)
        if (std::equal(first.begin(), first.end(), ds.snapshot(m, 0).begin() + i * 2)) break;
      REQUIRE(i < 8);
      bool same = true;
      for (std::size_t l = 0; l < pseudo.snapshots(); ++l) {
        auto a = pseudo.snapshot(m, l).subspan(k * 2, 2);
        auto b = ds.snapshot(m, l).subspan(i * 2, 2);
        same = same && std::equal(a.begin(), a.end(), b.begin());
      }
      CHECK(same);
    }
  }
}
