#pragma once

// Closed-form ground-truth potentials V (confining) and Phi (interaction) for
// the benchmark families. All derivatives are hand-derived.

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "ips/common.hpp"

namespace ips {

enum class Family {
  Reference,
  Smoothness,
  Conditioning,
  Singularity,
  SmoothControl,
  Anisotropic
};

enum class PotentialKind { V, Phi };

// V = a1/2 |x| + a2 |x|^2,  Phi = sum_k b_k exp(-(r - c_k)^2 / (2 w_k^2)).
struct ReferenceParams {
  std::array<double, 2> alpha{-1.0, 2.0};
  std::array<double, 2> beta{-3.0, 2.0};
  std::array<double, 2> centers{0.75, 1.5};
  std::array<double, 2> widths{0.125, 0.25};
};

// Reference V; Phi = b1 1e[lo1, hi1](r) + b2 1e[lo2, hi2](r) with tanh-smoothed
// indicators of width PotentialSpec::smoothing_eps.
struct SmoothnessParams {
  std::array<double, 2> alpha{-1.0, 2.0};
  std::array<double, 2> beta{-3.0, 2.0};
  std::array<double, 2> lo{0.5, 1.0};
  std::array<double, 2> hi{1.0, 2.0};
};

// V = (|x|^2 - 1)^2 / 4 - 1/4,  Phi = -gamma r / (r + 1).
struct ConditioningParams {
  double gamma = 0.5;
};

// V = k/2 |x|^2,  Phi = 4 eps [(s/r)^12 - (s/r)^6] evaluated at max(r, r_safe).
struct SingularityParams {
  double k = 2.0;
  double epsilon = 0.5;
  double sigma = 0.5;
  bool cut = false;  // zero Phi beyond r_cut when set
  double r_cut = 2.5;
};

// Double-well V as in Conditioning; Morse Phi = D[(1 - e^{-a(r-r0)})^2 - (1 - e^{a r0})^2].
struct SmoothControlParams {
  double D = 0.5;
  double a = 2.0;
  double r0 = 0.8;
};

// V = sum_k a_k x_k^2,  Phi = A exp(-1/2 sum_k z_k^2 / s_k^2).
struct AnisotropicParams {
  std::vector<double> a{1.0, 4.0};
  double amplitude = 2.0;
  std::vector<double> s{0.5, 1.5};
};

using FamilyParams =
    std::variant<ReferenceParams, SmoothnessParams, ConditioningParams,
                 SingularityParams, SmoothControlParams, AnisotropicParams>;

struct PotentialSpec {
  FamilyParams params{ReferenceParams{}};
  int dim = 2;
  double r_safe = 0.35;          // only used by Singularity
  double smoothing_eps = 0.05;   // only used by Smoothness

  Family family() const { return static_cast<Family>(params.index()); }

  /// Spec with the default benchmark parameters of `f`.
  static PotentialSpec make(Family f, int dim = 2);
};

/// Value and first/second derivatives of a radial profile g at r.
struct RadialJet {
  double value = 0.0;
  double d1 = 0.0;
  double d2 = 0.0;
};

std::string to_string(Family f);
Family family_from_string(std::string_view name);
std::string to_string(PotentialKind k);

/// Throws ips::Error on non-finite parameters, dim < 1, or a dimension
/// mismatch in Anisotropic parameters.
void validate(const PotentialSpec& spec);

bool is_radial(const PotentialSpec& spec);

/// Radial profile of V (argument |x|) or Phi (argument |z|). Radial families only.
RadialJet radial_jet(const PotentialSpec& spec, PotentialKind kind, double r);

/// g'(r) only; the simulator hot path.
double radial_derivative(const PotentialSpec& spec, PotentialKind kind, double r);

double potential_value(const PotentialSpec& spec, PotentialKind kind, double r);
double potential_value(const PotentialSpec& spec, PotentialKind kind,
                       std::span<const double> x);
void potential_grad(const PotentialSpec& spec, PotentialKind kind,
                    std::span<const double> x, std::span<double> out);
std::vector<double> potential_grad(const PotentialSpec& spec, PotentialKind kind,
                                   std::span<const double> x);
double potential_laplacian(const PotentialSpec& spec, PotentialKind kind,
                           std::span<const double> x);

/// Spatial gradient/Laplacian of the radial function g(|x|) given its jet at
/// r = |x|. At x = 0 the gradient is the zero vector; the Laplacian is the
/// limit d g''(0) when g'(0) = 0 and an error otherwise. `r_eff` replaces r in
/// the (d-1)/r factor (clamped profiles).
double radial_laplacian(const RadialJet& jet, double r_eff, int dim);
void radial_gradient(const RadialJet& jet, std::span<const double> x, double r,
                     std::span<double> out);

}  // namespace ips
