#include "ips/basis.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ips/rng.hpp"

namespace ips {
namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

RadialTerm RadialTerm::power(double p, double scale) {
  std::string l = scale == 1.0 ? "" : fmt(scale) + "*";
  return {TermKind::Power, p, scale, 0.0, l + "r^" + fmt(p)};
}

RadialTerm RadialTerm::gaussian(double c, double w) {
  return {TermKind::Gaussian, c, w, 0.0, "gauss(c=" + fmt(c) + ",w=" + fmt(w) + ")"};
}

RadialTerm RadialTerm::indicator(double a, double b, double eps) {
  return {TermKind::SmoothedIndicator, a, b, eps,
          "ind[" + fmt(a) + "," + fmt(b) + "](eps=" + fmt(eps) + ")"};
}

RadialTerm RadialTerm::saturating() { return {TermKind::Saturating, 0.0, 0.0, 0.0, "r/(r+1)"}; }

RadialTerm RadialTerm::clamped_inverse_power(double s, double p, double r_safe) {
  return {TermKind::ClampedInversePower, s, p, r_safe,
          "(" + fmt(s) + "/max(r," + fmt(r_safe) + "))^" + fmt(p)};
}

RadialTerm RadialTerm::exponential(double a, double r0) {
  return {TermKind::Exponential, a, r0, 0.0, "exp(-" + fmt(a) + "(r-" + fmt(r0) + "))"};
}

RadialJet RadialTerm::jet(double r) const {
  switch (kind) {
    case TermKind::Power: {
      const double p = p1, s = p2;
      if (p == 1.0) return {s * r, s, 0.0};
      if (p == 2.0) return {s * r * r, 2.0 * s * r, 2.0 * s};
      const double v = std::pow(r, p);
      const double d1 = r > 0.0 ? s * p * v / r : (p > 1.0 ? 0.0 : s * p * std::pow(r, p - 1));
      const double d2 = r > 0.0 ? s * p * (p - 1.0) * v / (r * r)
                                : (p > 2.0 ? 0.0 : s * p * (p - 1.0) * std::pow(r, p - 2));
      return {s * v, d1, d2};
    }
    case TermKind::Gaussian: {
      const double w2 = p2 * p2;
      const double u = r - p1;
      const double e = std::exp(-u * u / (2.0 * w2));
      return {e, -u / w2 * e, (u * u / (w2 * w2) - 1.0 / w2) * e};
    }
    case TermKind::SmoothedIndicator: {
      const double ta = std::tanh((r - p1) / p3);
      const double tb = std::tanh((r - p2) / p3);
      const double sa = 1.0 - ta * ta, sb = 1.0 - tb * tb;
      return {0.5 * (ta - tb), 0.5 * (sa - sb) / p3, (tb * sb - ta * sa) / (p3 * p3)};
    }
    case TermKind::Saturating: {
      const double q = r + 1.0;
      return {r / q, 1.0 / (q * q), -2.0 / (q * q * q)};
    }
    case TermKind::ClampedInversePower: {
      const double rc = std::max(r, p3);
      const double v = std::pow(p1 / rc, p2);
      return {v, -p2 / rc * v, p2 * (p2 + 1.0) / (rc * rc) * v};
    }
    case TermKind::Exponential: {
      const double u = std::exp(-p1 * (r - p2));
      return {u, -p1 * u, p1 * p1 * u};
    }
  }
  return {};
}

double RadialTerm::laplacian_radius(double r) const {
  return kind == TermKind::ClampedInversePower ? std::max(r, p3) : r;
}

std::vector<std::string> BasisSet::labels() const {
  std::vector<std::string> out;
  for (const auto& t : v) out.push_back("V:" + t.label);
  for (const auto& t : phi) out.push_back("Phi:" + t.label);
  return out;
}

void validate(const BasisSet& b) {
  if (b.dim < 1) throw Error("basis dim must be >= 1");
  if (b.v.empty()) throw Error("basis needs at least one V element");
  if (b.phi.empty()) throw Error("basis needs at least one Phi element");
  for (const auto* blk : {&b.v, &b.phi})
    for (const auto& t : *blk) {
      if (!std::isfinite(t.p1) || !std::isfinite(t.p2) || !std::isfinite(t.p3))
        throw Error("non-finite basis parameter in " + t.label);
      if (t.kind == TermKind::Gaussian && t.p2 <= 0.0) throw Error("RBF width must be > 0");
      if (t.kind == TermKind::SmoothedIndicator && t.p3 <= 0.0)
        throw Error("indicator width must be > 0");
      if (t.kind == TermKind::ClampedInversePower && t.p3 <= 0.0)
        throw Error("clamp radius must be > 0");
    }
}

double basis_value(std::span<const RadialTerm> terms, std::span<const double> coef,
                   std::span<const double> x) {
  const double r = std::sqrt(norm2(x));
  double s = 0.0;
  for (std::size_t k = 0; k < terms.size(); ++k) s += coef[k] * terms[k].jet(r).value;
  return s;
}

double basis_radial_derivative(std::span<const RadialTerm> terms,
                               std::span<const double> coef, double r) {
  double s = 0.0;
  for (std::size_t k = 0; k < terms.size(); ++k) s += coef[k] * terms[k].jet(r).d1;
  return s;
}

void basis_grad(std::span<const RadialTerm> terms, std::span<const double> coef,
                std::span<const double> x, std::span<double> out) {
  const double r = std::sqrt(norm2(x));
  RadialJet j{0.0, basis_radial_derivative(terms, coef, r), 0.0};
  radial_gradient(j, x, r, out);
}

double basis_laplacian(std::span<const RadialTerm> terms, std::span<const double> coef,
                       std::span<const double> x) {
  const double r = std::sqrt(norm2(x));
  double s = 0.0;
  for (std::size_t k = 0; k < terms.size(); ++k) {
    if (coef[k] == 0.0) continue;
    s += coef[k] * radial_laplacian(terms[k].jet(r), terms[k].laplacian_radius(r),
                                    static_cast<int>(x.size()));
  }
  return s;
}

OracleBasis oracle_basis(const PotentialSpec& spec, double abs_scale) {
  OracleBasis o;
  o.basis.dim = spec.dim;
  auto& v = o.basis.v;
  auto& phi = o.basis.phi;
  auto& th = o.theta_star;
  switch (spec.family()) {
    case Family::Reference: {
      const auto& p = std::get<ReferenceParams>(spec.params);
      v = {RadialTerm::power(1.0, abs_scale), RadialTerm::power(2.0)};
      th = {0.5 * p.alpha[0] / abs_scale, p.alpha[1]};
      for (int k = 0; k < 2; ++k) {
        phi.push_back(RadialTerm::gaussian(p.centers[k], p.widths[k]));
        th.push_back(p.beta[k]);
      }
      break;
    }
    case Family::Smoothness: {
      const auto& p = std::get<SmoothnessParams>(spec.params);
      v = {RadialTerm::power(1.0, abs_scale), RadialTerm::power(2.0)};
      th = {0.5 * p.alpha[0] / abs_scale, p.alpha[1]};
      for (int k = 0; k < 2; ++k) {
        phi.push_back(RadialTerm::indicator(p.lo[k], p.hi[k], spec.smoothing_eps));
        th.push_back(p.beta[k]);
      }
      break;
    }
    case Family::Conditioning: {
      const auto& p = std::get<ConditioningParams>(spec.params);
      v = {RadialTerm::power(4.0), RadialTerm::power(2.0)};
      phi = {RadialTerm::saturating()};
      th = {0.25, -0.5, -p.gamma};
      break;
    }
    case Family::Singularity: {
      const auto& p = std::get<SingularityParams>(spec.params);
      if (p.cut) throw Error("truncated Lennard-Jones has no oracle basis");
      v = {RadialTerm::power(2.0)};
      phi = {RadialTerm::clamped_inverse_power(p.sigma, 12.0, spec.r_safe),
             RadialTerm::clamped_inverse_power(p.sigma, 6.0, spec.r_safe)};
      th = {0.5 * p.k, 4.0 * p.epsilon, -4.0 * p.epsilon};
      break;
    }
    case Family::SmoothControl: {
      const auto& p = std::get<SmoothControlParams>(spec.params);
      v = {RadialTerm::power(4.0), RadialTerm::power(2.0)};
      phi = {RadialTerm::exponential(p.a, p.r0), RadialTerm::exponential(2.0 * p.a, p.r0)};
      th = {0.25, -0.5, -2.0 * p.D, p.D};
      const double c = 1.0 - std::exp(p.a * p.r0);
      o.phi_offset = p.D * (1.0 - c * c);
      break;
    }
    case Family::Anisotropic:
      throw Error("anisotropic model has no oracle basis (use the nn method)");
  }
  return o;
}

BasisSet rbf_basis(std::size_t K, double r_max_V, double r_max_Phi, int dim) {
  if (K < 2) throw Error("rbf K_per_block must be >= 2");
  for (double rm : {r_max_V, r_max_Phi})
    if (!(rm > 0.01) || !std::isfinite(rm)) throw Error("rbf r_max must exceed 0.01");
  BasisSet b;
  b.dim = dim;
  auto fill = [K](std::vector<RadialTerm>& out, double rm) {
    const double w = 1.5 * rm / static_cast<double>(K);
    for (std::size_t k = 0; k < K; ++k) {
      const double c = 0.01 + (rm - 0.01) * static_cast<double>(k) / static_cast<double>(K - 1);
      out.push_back(RadialTerm::gaussian(c, w));
    }
  };
  fill(b.v, r_max_V);
  fill(b.phi, r_max_Phi);
  return b;
}

double percentile(std::vector<double>& v, double q) {
  if (v.empty()) throw Error("percentile of an empty sample");
  if (!(q >= 0.0 && q <= 100.0)) throw Error("percentile q must lie in [0, 100]");
  std::sort(v.begin(), v.end());
  const double pos = q / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double f = pos - static_cast<double>(lo);
  return v[lo] + f * (v[hi] - v[lo]);
}

PercentileRadii percentile_rmax(const SnapshotDataset& ds, double q, std::size_t max_pairs) {
  const auto& h = ds.header;
  const std::size_t S = h.M * ds.snapshots();
  if (S == 0 || h.N == 0) throw Error("percentile_rmax: empty dataset");
  const std::size_t d = h.d, N = h.N;
  auto dist = [&](std::size_t s, std::size_t i, std::size_t j) {
    const double* x = ds.data.data() + s * N * d;
    double a = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      const double z = x[i * d + k] - (j < N ? x[j * d + k] : 0.0);
      a += z * z;
    }
    return std::sqrt(a);
  };
  Rng rng(0x5EEDull, 7);
  std::vector<double> norms;
  const std::size_t total_pts = S * N;
  if (total_pts <= max_pairs) {
    norms.reserve(total_pts);
    for (std::size_t s = 0; s < S; ++s)
      for (std::size_t i = 0; i < N; ++i) norms.push_back(dist(s, i, N));
  } else {
    norms.reserve(max_pairs);
    for (std::size_t c = 0; c < max_pairs; ++c) norms.push_back(dist(rng.below(S), rng.below(N), N));
  }
  PercentileRadii out;
  out.r_max_V = percentile(norms, q);
  if (N < 2) return out;
  std::vector<double> pd;
  const std::size_t per = N * (N - 1) / 2;
  if (S * per <= max_pairs) {
    pd.reserve(S * per);
    for (std::size_t s = 0; s < S; ++s)
      for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = i + 1; j < N; ++j) pd.push_back(dist(s, i, j));
  } else {
    pd.reserve(max_pairs);
    for (std::size_t c = 0; c < max_pairs; ++c) {
      const std::size_t s = rng.below(S);
      const std::size_t i = rng.below(N);
      std::size_t j = rng.below(N - 1);
      if (j >= i) ++j;
      pd.push_back(dist(s, i, j));
    }
  }
  out.r_max_Phi = percentile(pd, q);
  return out;
}

}  // namespace ips
