#pragma once

// Trajectory-free self-test loss for linearly parameterized potentials:
// regression vectors, normal-system assembly, direct loss evaluation,
// fitting, and the weak-form martingale diagnostic.

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ips/basis.hpp"
#include "ips/regularization.hpp"
#include "ips/simulate.hpp"

namespace ips {

enum class Quadrature { Riemann, Trapezoid };

std::string to_string(Quadrature q);
Quadrature quadrature_from_string(const std::string& s);

/// Per-configuration regression quantities. Row i*d + k of F is component k
/// of particle i's force design block F_i.
struct RegressionVectors {
  Eigen::MatrixXd F;      // (N d) x K
  Eigen::VectorXd delta;  // K
  Eigen::VectorXd h;      // K
};

RegressionVectors regression_vectors(std::span<const double> X, int N, int d,
                                     const BasisSet& basis);

struct NormalSystem {
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  Quadrature quadrature = Quadrature::Riemann;
  std::size_t M = 0, L = 0, N = 0, K_V = 0;
  double dt = 0.0;
  std::vector<std::string> labels;
};

/// Assembles A and b over all ensembles and snapshot pairs. Per-ensemble
/// partial sums are reduced pairwise in a fixed order, so the result does not
/// depend on the thread count.
NormalSystem assemble(const SnapshotDataset& ds, const BasisSet& basis, Quadrature q,
                      int threads = 0);

/// 1/2 theta^T A theta - b^T theta.
double loss_quadratic(const Eigen::VectorXd& theta, const NormalSystem& ns);

/// The self-test loss by direct summation of the dissipation, diffusion and
/// energy-change terms of V_alpha, Phi_beta.
double loss_direct(const Eigen::VectorXd& theta, const SnapshotDataset& ds,
                   const BasisSet& basis, Quadrature q = Quadrature::Riemann);

struct FitResult {
  std::string method;
  Eigen::VectorXd theta;
  double lambda = 0.0;
  double curvature = 0.0;
  bool lambda_fallback = false;
  double loss = 0.0;           // quadratic objective at theta
  double residual_norm = 0.0;  // |A theta - b|
  double cond_A = 0.0;
  std::map<std::string, double> diagnostics;
};

/// Condition number lambda_max / lambda_min of a symmetric matrix.
double condition_number(const Eigen::MatrixXd& A);

FitResult solve_normal_system(const NormalSystem& ns, const RegConfig& reg,
                              const std::string& method);

FitResult fit_selftest(const SnapshotDataset& ds, const BasisSet& basis, Quadrature q,
                       const RegConfig& reg = {}, int threads = 0,
                       NormalSystem* system = nullptr);

/// Weak-form residual of sum_i f(X^i)/N integrated over [0, T] per ensemble,
/// with drift from `spec` scaled by `drift_scale`; z = mean / standard error.
struct MartingaleCheck {
  std::vector<std::string> names;  // x1..xd, |x|^2
  std::vector<double> mean, stderr_, z;
};

MartingaleCheck martingale_mean_check(const SnapshotDataset& ds, const PotentialSpec& spec,
                                      double drift_scale = 1.0,
                                      Quadrature q = Quadrature::Riemann, int threads = 0);

}  // namespace ips
