#include "ips/models.hpp"

#include <cmath>
#include <string>

namespace ips {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw Error(std::string("non-finite ") + what);
}

// g(r) = a1/2 r + a2 r^2
RadialJet linear_quadratic(const std::array<double, 2>& alpha, double r) {
  return {0.5 * alpha[0] * r + alpha[1] * r * r, 0.5 * alpha[0] + 2.0 * alpha[1] * r,
          2.0 * alpha[1]};
}

// g(r) = (r^2 - 1)^2 / 4 - 1/4
RadialJet double_well(double r) {
  const double r2 = r * r;
  return {0.25 * (r2 - 1.0) * (r2 - 1.0) - 0.25, r * (r2 - 1.0), 3.0 * r2 - 1.0};
}

RadialJet gaussian_sum(const ReferenceParams& p, double r) {
  RadialJet j;
  for (int k = 0; k < 2; ++k) {
    const double w2 = p.widths[k] * p.widths[k];
    const double u = r - p.centers[k];
    const double e = std::exp(-u * u / (2.0 * w2));
    j.value += p.beta[k] * e;
    j.d1 += p.beta[k] * (-u / w2) * e;
    j.d2 += p.beta[k] * (u * u / (w2 * w2) - 1.0 / w2) * e;
  }
  return j;
}

// 1e[a,b](r) = (tanh((r-a)/eps) - tanh((r-b)/eps)) / 2
RadialJet smoothed_indicator(double a, double b, double eps, double r) {
  const double ta = std::tanh((r - a) / eps);
  const double tb = std::tanh((r - b) / eps);
  const double sa = 1.0 - ta * ta;
  const double sb = 1.0 - tb * tb;
  return {0.5 * (ta - tb), 0.5 * (sa - sb) / eps,
          0.5 * (-2.0 * ta * sa + 2.0 * tb * sb) / (eps * eps)};
}

RadialJet lennard_jones(const SingularityParams& p, double r) {
  const double s6 = std::pow(p.sigma / r, 6);
  const double s12 = s6 * s6;
  const double c = 4.0 * p.epsilon;
  return {c * (s12 - s6), c * (-12.0 * s12 + 6.0 * s6) / r,
          c * (156.0 * s12 - 42.0 * s6) / (r * r)};
}

RadialJet morse(const SmoothControlParams& p, double r) {
  const double u = std::exp(-p.a * (r - p.r0));
  const double c = 1.0 - std::exp(p.a * p.r0);
  return {p.D * ((1.0 - u) * (1.0 - u) - c * c), 2.0 * p.a * p.D * u * (1.0 - u),
          2.0 * p.a * p.a * p.D * u * (2.0 * u - 1.0)};
}

// Clamped argument for a radial family (Singularity only).
double effective_radius(const PotentialSpec& spec, PotentialKind kind, double r) {
  if (kind == PotentialKind::Phi && spec.family() == Family::Singularity)
    return std::max(r, spec.r_safe);
  return r;
}

}  // namespace

PotentialSpec PotentialSpec::make(Family f, int dim) {
  PotentialSpec s;
  s.dim = dim;
  switch (f) {
    case Family::Reference: s.params = ReferenceParams{}; break;
    case Family::Smoothness: s.params = SmoothnessParams{}; break;
    case Family::Conditioning: s.params = ConditioningParams{}; break;
    case Family::Singularity: s.params = SingularityParams{}; break;
    case Family::SmoothControl: s.params = SmoothControlParams{}; break;
    case Family::Anisotropic: {
      AnisotropicParams p;
      if (dim != 2) {
        p.a.assign(dim, 1.0);
        p.s.assign(dim, 1.0);
      }
      s.params = p;
      break;
    }
  }
  return s;
}

std::string to_string(Family f) {
  switch (f) {
    case Family::Reference: return "reference";
    case Family::Smoothness: return "smoothness";
    case Family::Conditioning: return "conditioning";
    case Family::Singularity: return "singularity";
    case Family::SmoothControl: return "smooth_control";
    case Family::Anisotropic: return "anisotropic";
  }
  return "unknown";
}

Family family_from_string(std::string_view name) {
  for (int i = 0; i <= static_cast<int>(Family::Anisotropic); ++i) {
    const auto f = static_cast<Family>(i);
    if (to_string(f) == name) return f;
  }
  throw Error("unknown model family '" + std::string(name) + "'");
}

std::string to_string(PotentialKind k) { return k == PotentialKind::V ? "V" : "Phi"; }

void validate(const PotentialSpec& spec) {
  if (spec.dim < 1) throw Error("model dim must be >= 1");
  require_finite(spec.r_safe, "r_safe");
  require_finite(spec.smoothing_eps, "smoothing_eps");
  if (spec.smoothing_eps <= 0.0) throw Error("smoothing_eps must be > 0");
  if (spec.r_safe <= 0.0) throw Error("r_safe must be > 0");
  std::visit(
      Overloaded{
          [](const ReferenceParams& p) {
            for (int k = 0; k < 2; ++k) {
              require_finite(p.alpha[k], "alpha");
              require_finite(p.beta[k], "beta");
              require_finite(p.centers[k], "centers");
              require_finite(p.widths[k], "widths");
              if (p.widths[k] <= 0.0) throw Error("Gaussian widths must be > 0");
            }
          },
          [](const SmoothnessParams& p) {
            for (int k = 0; k < 2; ++k) {
              require_finite(p.alpha[k], "alpha");
              require_finite(p.beta[k], "beta");
              require_finite(p.lo[k], "lo");
              require_finite(p.hi[k], "hi");
            }
          },
          [](const ConditioningParams& p) { require_finite(p.gamma, "gamma"); },
          [](const SingularityParams& p) {
            require_finite(p.k, "k");
            require_finite(p.epsilon, "epsilon");
            require_finite(p.sigma, "sigma");
            require_finite(p.r_cut, "r_cut");
          },
          [](const SmoothControlParams& p) {
            require_finite(p.D, "D");
            require_finite(p.a, "a");
            require_finite(p.r0, "r0");
          },
          [&](const AnisotropicParams& p) {
            if (p.a.size() != static_cast<std::size_t>(spec.dim) ||
                p.s.size() != static_cast<std::size_t>(spec.dim))
              throw Error("anisotropic parameter length must equal dim");
            for (double v : p.a) require_finite(v, "a");
            for (double v : p.s) {
              require_finite(v, "s");
              if (v <= 0.0) throw Error("anisotropic widths must be > 0");
            }
            require_finite(p.amplitude, "amplitude");
          }},
      spec.params);
}

bool is_radial(const PotentialSpec& spec) { return spec.family() != Family::Anisotropic; }

RadialJet radial_jet(const PotentialSpec& spec, PotentialKind kind, double r) {
  require_finite(r, "radius");
  const bool v = kind == PotentialKind::V;
  return std::visit(
      Overloaded{
          [&](const ReferenceParams& p) {
            return v ? linear_quadratic(p.alpha, r) : gaussian_sum(p, r);
          },
          [&](const SmoothnessParams& p) {
            if (v) return linear_quadratic(p.alpha, r);
            const double e = spec.smoothing_eps;
            const RadialJet a = smoothed_indicator(p.lo[0], p.hi[0], e, r);
            const RadialJet b = smoothed_indicator(p.lo[1], p.hi[1], e, r);
            return RadialJet{p.beta[0] * a.value + p.beta[1] * b.value,
                             p.beta[0] * a.d1 + p.beta[1] * b.d1,
                             p.beta[0] * a.d2 + p.beta[1] * b.d2};
          },
          [&](const ConditioningParams& p) {
            if (v) return double_well(r);
            const double q = r + 1.0;
            return RadialJet{-p.gamma * r / q, -p.gamma / (q * q),
                             2.0 * p.gamma / (q * q * q)};
          },
          [&](const SingularityParams& p) {
            if (v) return RadialJet{0.5 * p.k * r * r, p.k * r, p.k};
            if (p.cut && r > p.r_cut) return RadialJet{};
            return lennard_jones(p, std::max(r, spec.r_safe));
          },
          [&](const SmoothControlParams& p) { return v ? double_well(r) : morse(p, r); },
          [&](const AnisotropicParams&) -> RadialJet {
            throw Error("anisotropic model has no radial profile");
          }},
      spec.params);
}

double radial_derivative(const PotentialSpec& spec, PotentialKind kind, double r) {
  if (kind == PotentialKind::Phi) {
    if (const auto* p = std::get_if<ReferenceParams>(&spec.params)) {
      double d1 = 0.0;
      for (int k = 0; k < 2; ++k) {
        const double w2 = p->widths[k] * p->widths[k];
        const double u = r - p->centers[k];
        d1 += p->beta[k] * (-u / w2) * std::exp(-u * u / (2.0 * w2));
      }
      return d1;
    }
  }
  return radial_jet(spec, kind, r).d1;
}

double potential_value(const PotentialSpec& spec, PotentialKind kind, double r) {
  return radial_jet(spec, kind, r).value;
}

double radial_laplacian(const RadialJet& jet, double r_eff, int dim) {
  if (r_eff > 0.0) return jet.d2 + (dim - 1) / r_eff * jet.d1;
  if (jet.d1 == 0.0 || dim == 1) return dim * jet.d2;
  throw Error("Laplacian of a radial function with g'(0) != 0 is singular at the origin");
}

void radial_gradient(const RadialJet& jet, std::span<const double> x, double r,
                     std::span<double> out) {
  if (r == 0.0) {
    for (auto& o : out) o = 0.0;
    return;
  }
  const double s = jet.d1 / r;
  for (std::size_t k = 0; k < x.size(); ++k) out[k] = s * x[k];
}

double potential_value(const PotentialSpec& spec, PotentialKind kind,
                       std::span<const double> x) {
  for (double v : x) require_finite(v, "coordinate");
  if (const auto* p = std::get_if<AnisotropicParams>(&spec.params)) {
    if (kind == PotentialKind::V) {
      double s = 0.0;
      for (std::size_t k = 0; k < x.size(); ++k) s += p->a[k] * x[k] * x[k];
      return s;
    }
    double q = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) q += x[k] * x[k] / (p->s[k] * p->s[k]);
    return p->amplitude * std::exp(-0.5 * q);
  }
  return radial_jet(spec, kind, std::sqrt(norm2(x))).value;
}

void potential_grad(const PotentialSpec& spec, PotentialKind kind,
                    std::span<const double> x, std::span<double> out) {
  for (double v : x) require_finite(v, "coordinate");
  if (const auto* p = std::get_if<AnisotropicParams>(&spec.params)) {
    if (kind == PotentialKind::V) {
      for (std::size_t k = 0; k < x.size(); ++k) out[k] = 2.0 * p->a[k] * x[k];
      return;
    }
    const double phi = potential_value(spec, kind, x);
    for (std::size_t k = 0; k < x.size(); ++k) out[k] = -x[k] / (p->s[k] * p->s[k]) * phi;
    return;
  }
  const double r = std::sqrt(norm2(x));
  radial_gradient(radial_jet(spec, kind, r), x, r, out);
}

std::vector<double> potential_grad(const PotentialSpec& spec, PotentialKind kind,
                                   std::span<const double> x) {
  std::vector<double> g(x.size());
  potential_grad(spec, kind, x, g);
  return g;
}

double potential_laplacian(const PotentialSpec& spec, PotentialKind kind,
                           std::span<const double> x) {
  for (double v : x) require_finite(v, "coordinate");
  if (const auto* p = std::get_if<AnisotropicParams>(&spec.params)) {
    if (kind == PotentialKind::V) {
      double s = 0.0;
      for (double a : p->a) s += 2.0 * a;
      return s;
    }
    const double phi = potential_value(spec, kind, x);
    double s = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double s2 = p->s[k] * p->s[k];
      s += x[k] * x[k] / (s2 * s2) - 1.0 / s2;
    }
    return phi * s;
  }
  const double r = std::sqrt(norm2(x));
  return radial_laplacian(radial_jet(spec, kind, r), effective_radius(spec, kind, r),
                          spec.dim);
}

}  // namespace ips
