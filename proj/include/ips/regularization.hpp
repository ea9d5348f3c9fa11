#pragma once

// Tikhonov-regularized solves of symmetric PSD normal systems and L-curve
// selection of the regularization strength.

#include <string>
#include <vector>

#include <Eigen/Dense>

namespace ips {

/// Solves (A + lambda I) theta = b with a Cholesky factorization.
Eigen::VectorXd tikhonov_solve(const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                               double lambda);

/// 60 log-spaced values in [1e-10, 10].
std::vector<double> default_lambda_grid();

/// Sampled L-curve: rho = |A theta_l - b|, eta = |theta_l|, and the signed
/// curvature of (log rho, log eta) as a function of log lambda.
struct LCurve {
  std::vector<double> lambda, rho, eta, kappa;
};

LCurve lcurve(const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
              const std::vector<double>& grid);

enum class RegPolicy { LCurve, Fixed, None };

std::string to_string(RegPolicy p);
RegPolicy reg_policy_from_string(const std::string& s);

struct RegConfig {
  RegPolicy policy = RegPolicy::LCurve;
  double lambda = 1e-6;           // used by Fixed
  std::vector<double> grid;       // empty: default_lambda_grid()
  double fallback_lambda = 1e-6;  // flat L-curve
  double flat_threshold = 0.01;
};

struct Regularized {
  Eigen::VectorXd theta;
  double lambda = 0.0;
  double curvature = 0.0;  // maximum signed curvature on the grid (LCurve)
  bool fallback = false;
};

/// L-curve corner: the grid point of maximum curvature (ties to the smaller
/// lambda). When no point curves toward the corner by more than
/// `flat_threshold` the fallback lambda is used.
Regularized lcurve_select(const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                          const RegConfig& cfg = {});

/// Dispatches on cfg.policy. None solves A theta = b directly (minimum-norm
/// solution when A is singular).
Regularized regularized_solve(const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                              const RegConfig& cfg);

}  // namespace ips
