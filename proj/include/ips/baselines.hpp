#pragma once

// Comparison estimators: least squares on labeled Euler velocities, and the
// same regression on pseudo-trajectories rebuilt by entropic OT matching.

#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "ips/basis.hpp"
#include "ips/selftest.hpp"
#include "ips/simulate.hpp"

namespace ips {

/// Normal system of the labeled velocity regression: A as in the Riemann
/// self-test system, b = (1 / (M L N)) sum F_i^T y_i with y_i = -dX_i / dt.
NormalSystem assemble_mle(const SnapshotDataset& ds, const BasisSet& basis, int threads = 0);

FitResult labeled_mle(const SnapshotDataset& ds, const BasisSet& basis,
                      const RegConfig& reg = {}, int threads = 0,
                      NormalSystem* system = nullptr);

struct Coupling {
  Eigen::MatrixXd P;
  double eps = 0.0;
  int iters = 0;
  double marginal_err = 0.0;
  bool converged = false;
};

/// Log-domain Sinkhorn on C_ij = |Xa_i - Xb_j|^2 with uniform marginals 1/N.
/// Xa, Xb are row-major [N, d].
Coupling sinkhorn(const Eigen::MatrixXd& Xa, const Eigen::MatrixXd& Xb, double eps,
                  int max_iters = 1000, double tol = 1e-8);
Coupling sinkhorn_cost(const Eigen::MatrixXd& C, double eps, int max_iters = 1000,
                       double tol = 1e-8);

/// Squared-distance cost matrix.
Eigen::MatrixXd squared_distance_cost(const Eigen::MatrixXd& Xa, const Eigen::MatrixXd& Xb);

/// Median of the off-diagonal entries of C.
double median_offdiagonal(const Eigen::MatrixXd& C);

/// Maximum-mass bijection: perm[i] = matched column of row i.
std::vector<int> coupling_to_assignment(const Eigen::MatrixXd& P);

struct SinkhornConfig {
  double eps_factor = 0.01;  // eps = factor * median off-diagonal cost
  double eps_floor = 1e-9;
  int max_iters = 1000;
  double tol = 1e-8;
};

/// Matches every consecutive snapshot pair, chains the matchings from l = 0
/// into pseudo-labels and fits labeled_mle. When the input carries a
/// permutation seed, diagnostics include the matching accuracy against the
/// regenerated true labels.
FitResult sinkhorn_mle(const SnapshotDataset& ds, const BasisSet& basis,
                       const SinkhornConfig& sk = {}, const RegConfig& reg = {},
                       int threads = 0, NormalSystem* system = nullptr);

/// Relabeled dataset from the chained matchings (exposed for tests).
SnapshotDataset sinkhorn_pseudo_trajectories(const SnapshotDataset& ds, const SinkhornConfig& sk,
                                             int threads, double* accuracy,
                                             double* mean_iters, std::size_t* unconverged);

}  // namespace ips
