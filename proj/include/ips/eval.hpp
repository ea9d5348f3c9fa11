#pragma once

// Evaluation metrics: KDE densities of particle norms and pair distances,
// relative L2(rho) gradient errors, block evaluation, conditioning and Gram
// diagnostics.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ips/basis.hpp"
#include "ips/models.hpp"
#include "ips/nn.hpp"
#include "ips/simulate.hpp"

namespace ips {

struct DensityGrid {
  std::vector<double> x, density;
  double bandwidth = 0.0;
  std::size_t samples = 0;
};

/// Gaussian KDE with h = bandwidth_factor * sample std on grid_n equispaced
/// points of [lo, hi]. Uses linear binning onto the grid (extended by 5h on
/// both sides) followed by a discrete Gaussian convolution.
DensityGrid kde(std::span<const double> samples, double lo, double hi, int grid_n = 2000,
                double bandwidth_factor = 0.15);
/// Exact kernel sum; O(samples * grid_n).
DensityGrid kde_direct(std::span<const double> samples, double lo, double hi, int grid_n = 2000,
                       double bandwidth_factor = 0.15);

double trapezoid(const std::vector<double>& x, const std::vector<double>& y);

/// Particle norms (V) or pair distances i < j (Phi); uniformly subsampled to
/// `cap` with a fixed seed when more exist.
std::vector<double> radial_samples(const SnapshotDataset& ds, PotentialKind kind,
                                   std::size_t cap = 10'000'000, std::uint64_t seed = 0x4B44ull);

/// KDE of radial_samples on the [0.5%, 99.5%] percentile range.
DensityGrid data_density(const SnapshotDataset& ds, PotentialKind kind,
                         std::size_t cap = 10'000'000, int grid_n = 2000);

/// Data-drawn particle positions (V) or pair displacements (Phi), [d, count].
Eigen::MatrixXd sample_points(const SnapshotDataset& ds, PotentialKind kind, std::size_t count,
                              std::uint64_t seed = 0x4D43ull);

using RadialDerivative = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
using GradientField = std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>;

/// sqrt( int |g' - g*'|^2 rho / int |g*'|^2 rho ) by the trapezoid rule.
double relative_error_radial(const RadialDerivative& est, const PotentialSpec& truth,
                             PotentialKind kind, const DensityGrid& rho);
/// Monte Carlo version over the given points.
double relative_error_mc(const GradientField& est, const PotentialSpec& truth, PotentialKind kind,
                         const Eigen::MatrixXd& points);

/// An estimated pair of potentials in the form the metrics need.
struct GradientEstimate {
  RadialDerivative radial_V, radial_Phi;  // empty for non-radial estimates
  GradientField grad_V, grad_Phi;
};

GradientEstimate estimate_from_basis(const BasisSet& basis, const Eigen::VectorXd& theta);
GradientEstimate estimate_from_nets(const MlpPotential<float>& V, const MlpPotential<float>& Phi);

/// Evaluation density shared by all fits of one experiment cell.
struct EvalContext {
  PotentialSpec truth;
  bool radial = true;
  DensityGrid rho_V, rho_Phi;
  Eigen::MatrixXd pts_V, pts_Phi;  // Monte Carlo points (non-radial)
};

EvalContext make_eval_context(const SnapshotDataset& ds, const PotentialSpec& truth,
                              std::size_t cap = 10'000'000, std::size_t mc_points = 100'000);

struct GradErrors {
  double V = 0.0, Phi = 0.0;
};

GradErrors gradient_errors(const GradientEstimate& est, const EvalContext& ctx);

struct ErrorReport {
  std::vector<double> err_V, err_Phi, lambda, wall_s;
  double mean_V = 0, std_V = 0, mean_Phi = 0, std_Phi = 0;
  std::size_t block_size = 0, n_blocks = 0;
};

struct BlockFit {
  GradErrors err;
  double lambda = 0.0;
};

/// Fits each of n_blocks non-overlapping ensemble blocks of the pool and
/// reports per-block errors with mean and sample std.
ErrorReport block_evaluation(const SnapshotDataset& pool, std::size_t block_size,
                             std::size_t n_blocks,
                             const std::function<BlockFit(const SnapshotDataset&)>& fit);

void summarize(ErrorReport& r);

struct ConditionDiagnostics {
  double kappa_full = 0, kappa_VV = 0, kappa_PhiPhi = 0, lambda_min = 0, lambda_max = 0;
};

ConditionDiagnostics condition_diagnostics(const Eigen::MatrixXd& A, std::size_t K_V);

struct GramResult {
  Eigen::MatrixXd G_V, G_Phi;
  double lambda_min_V = 0, lambda_min_Phi = 0;
};

/// Time-averaged Gram matrices of basis gradients over particles (G_V) and
/// ordered pairs i != j (G_Phi), all snapshots and ensembles.
GramResult empirical_gram(const SnapshotDataset& ds, const BasisSet& basis, int threads = 0);

}  // namespace ips
