#include "ips/regularization.hpp"

#include <cmath>

#include "ips/common.hpp"

namespace ips {

Eigen::VectorXd tikhonov_solve(const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                               double lambda) {
  if (!(lambda > 0.0) || !std::isfinite(lambda))
    throw Error("tikhonov_solve: lambda must be positive and finite");
  if (A.rows() != A.cols() || A.rows() != b.size())
    throw Error("tikhonov_solve: dimension mismatch");
  Eigen::MatrixXd R = A;
  R.diagonal().array() += lambda;
  Eigen::LLT<Eigen::MatrixXd> llt(R);
  if (llt.info() != Eigen::Success)
    throw Error("tikhonov_solve: Cholesky factorization failed (A + lambda I not SPD)");
  return llt.solve(b);
}

std::vector<double> default_lambda_grid() {
  std::vector<double> g(60);
  for (int i = 0; i < 60; ++i) g[i] = std::pow(10.0, -10.0 + 11.0 * i / 59.0);
  return g;
}

LCurve lcurve(const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
              const std::vector<double>& grid) {
  if (grid.empty()) throw Error("lcurve: empty lambda grid");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
  const Eigen::VectorXd s = es.eigenvalues().cwiseMax(0.0);
  const Eigen::VectorXd beta = es.eigenvectors().transpose() * b;
  LCurve c;
  for (double lam : grid) {
    // P = rho^2, Q = eta^2 and their first/second derivatives in lambda.
    double P = 0, P1 = 0, P2 = 0, Q = 0, Q1 = 0, Q2 = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i) {
      const double b2 = beta[i] * beta[i];
      const double q = 1.0 / (s[i] + lam);
      const double f = lam * q, f1 = s[i] * q * q, f2 = -2.0 * s[i] * q * q * q;
      P += b2 * f * f;
      P1 += 2.0 * b2 * f * f1;
      P2 += 2.0 * b2 * (f1 * f1 + f * f2);
      Q += b2 * q * q;
      Q1 += -2.0 * b2 * q * q * q;
      Q2 += 6.0 * b2 * q * q * q * q;
    }
    // Derivatives in t = log lambda of x = log rho, y = log eta.
    const double Pt = lam * P1, Ptt = lam * P1 + lam * lam * P2;
    const double Qt = lam * Q1, Qtt = lam * Q1 + lam * lam * Q2;
    const double xt = 0.5 * Pt / P, xtt = 0.5 * (Ptt / P - Pt * Pt / (P * P));
    const double yt = 0.5 * Qt / Q, ytt = 0.5 * (Qtt / Q - Qt * Qt / (Q * Q));
    const double den = std::pow(xt * xt + yt * yt, 1.5);
    double kappa = den > 0.0 ? (xt * ytt - xtt * yt) / den : 0.0;
    if (!std::isfinite(kappa)) kappa = 0.0;
    c.lambda.push_back(lam);
    c.rho.push_back(std::sqrt(P));
    c.eta.push_back(std::sqrt(Q));
    c.kappa.push_back(kappa);
  }
  return c;
}

std::string to_string(RegPolicy p) {
  switch (p) {
    case RegPolicy::LCurve: return "lcurve";
    case RegPolicy::Fixed: return "fixed";
    case RegPolicy::None: return "none";
  }
  return "lcurve";
}

RegPolicy reg_policy_from_string(const std::string& s) {
  if (s == "lcurve") return RegPolicy::LCurve;
  if (s == "fixed") return RegPolicy::Fixed;
  if (s == "none") return RegPolicy::None;
  throw Error("unknown regularization policy '" + s + "' (expected lcurve, fixed or none)");
}

Regularized lcurve_select(const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                          const RegConfig& cfg) {
  const std::vector<double> grid = cfg.grid.empty() ? default_lambda_grid() : cfg.grid;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] > 0.0)) throw Error("lcurve: lambda grid must be positive");
    if (i > 0 && !(grid[i] > grid[i - 1])) throw Error("lcurve: lambda grid must be increasing");
  }
  const LCurve c = lcurve(A, b, grid);
  std::size_t best = 0;
  for (std::size_t i = 1; i < c.kappa.size(); ++i)
    if (c.kappa[i] > c.kappa[best]) best = i;
  Regularized r;
  r.curvature = c.kappa[best];
  if (r.curvature < cfg.flat_threshold) {
    r.lambda = cfg.fallback_lambda;
    r.fallback = true;
  } else {
    r.lambda = c.lambda[best];
  }
  r.theta = tikhonov_solve(A, b, r.lambda);
  return r;
}

Regularized regularized_solve(const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                              const RegConfig& cfg) {
  switch (cfg.policy) {
    case RegPolicy::LCurve: return lcurve_select(A, b, cfg);
    case RegPolicy::Fixed: {
      Regularized r;
      r.lambda = cfg.lambda;
      r.theta = tikhonov_solve(A, b, cfg.lambda);
      return r;
    }
    case RegPolicy::None: {
      Regularized r;
      Eigen::LLT<Eigen::MatrixXd> llt(A);
      if (llt.info() == Eigen::Success) {
        r.theta = llt.solve(b);
      } else {
        r.theta = A.completeOrthogonalDecomposition().solve(b);
      }
      return r;
    }
  }
  throw Error("unreachable regularization policy");
}

}  // namespace ips
