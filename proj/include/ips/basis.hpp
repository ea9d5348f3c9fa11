#pragma once

// Radial basis dictionaries for the parametric estimators. Every element is a
// radial profile g(r) with closed-form g' and g''; V elements are evaluated at
// r = |x|, interaction elements at r = |x_i - x_j| (hence even).

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ips/models.hpp"
#include "ips/simulate.hpp"

namespace ips {

enum class TermKind {
  Power,                // scale * r^p
  Gaussian,             // exp(-(r - c)^2 / (2 w^2))
  SmoothedIndicator,    // (tanh((r - a)/eps) - tanh((r - b)/eps)) / 2
  Saturating,           // r / (r + 1)
  ClampedInversePower,  // (s / max(r, r_safe))^p
  Exponential,          // exp(-a (r - r0))
};

struct RadialTerm {
  TermKind kind = TermKind::Power;
  double p1 = 1.0, p2 = 1.0, p3 = 0.0;
  std::string label;

  static RadialTerm power(double p, double scale = 1.0);
  static RadialTerm gaussian(double c, double w);
  static RadialTerm indicator(double a, double b, double eps);
  static RadialTerm saturating();
  static RadialTerm clamped_inverse_power(double s, double p, double r_safe);
  static RadialTerm exponential(double a, double r0);

  RadialJet jet(double r) const;
  /// Radius used in the (d-1)/r factor of the Laplacian.
  double laplacian_radius(double r) const;
};

struct BasisSet {
  std::vector<RadialTerm> v;
  std::vector<RadialTerm> phi;
  int dim = 2;

  std::size_t K_V() const { return v.size(); }
  std::size_t K_Phi() const { return phi.size(); }
  std::size_t K() const { return v.size() + phi.size(); }
  std::vector<std::string> labels() const;
};

void validate(const BasisSet& b);

/// Value, spatial gradient and Laplacian of sum_k c_k g_k(|x|).
double basis_value(std::span<const RadialTerm> terms, std::span<const double> coef,
                   std::span<const double> x);
void basis_grad(std::span<const RadialTerm> terms, std::span<const double> coef,
                std::span<const double> x, std::span<double> out);
double basis_laplacian(std::span<const RadialTerm> terms, std::span<const double> coef,
                       std::span<const double> x);
/// Radial derivative sum_k c_k g_k'(r).
double basis_radial_derivative(std::span<const RadialTerm> terms,
                               std::span<const double> coef, double r);

struct OracleBasis {
  BasisSet basis;
  std::vector<double> theta_star;  // (alpha*, beta*)
  double v_offset = 0.0;           // V = alpha*^T psi + v_offset
  double phi_offset = 0.0;         // Phi = beta*^T phi + phi_offset
};

/// Scale of the |x| element of the Reference and Smoothness V blocks.
/// With scale 1 the truth is theta* = (alpha_1 / 2, alpha_2, ...).
inline constexpr double kAbsScale = 1.0;

/// Exact finite basis of a radial family. Anisotropic and truncated LJ have none.
OracleBasis oracle_basis(const PotentialSpec& spec, double abs_scale = kAbsScale);

/// K Gaussian RBFs per block on [0.01, r_max] with width 1.5 r_max / K.
BasisSet rbf_basis(std::size_t K_per_block, double r_max_V, double r_max_Phi, int dim);

struct PercentileRadii {
  double r_max_V = 0.0;
  double r_max_Phi = 0.0;
};

/// q-th percentile (linear interpolation, q in [0, 100]) of particle norms and
/// of pairwise distances. Pair distances are subsampled uniformly to
/// `max_pairs` with a fixed seed when more exist.
PercentileRadii percentile_rmax(const SnapshotDataset& ds, double q,
                                std::size_t max_pairs = 10'000'000);

/// Linear-interpolation percentile of v (sorted in place).
double percentile(std::vector<double>& v, double q);

}  // namespace ips
