#include "ips/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ips {
namespace {

struct Partial {
  Eigen::MatrixXd A;
  Eigen::VectorXd D;  // quadrature-weighted sum of delta
  Eigen::VectorXd H;  // h_L - h_0
};

void add_into(Partial& a, const Partial& b) {
  a.A += b.A;
  a.D += b.D;
  a.H += b.H;
}

// Fixed-shape pairwise tree reduction; independent of how partials were computed.
Partial pairwise_sum(std::vector<Partial>& parts) {
  for (std::size_t width = 1; width < parts.size(); width *= 2)
    for (std::size_t i = 0; i + width < parts.size(); i += 2 * width)
      add_into(parts[i], parts[i + width]);
  return parts.front();
}

double trapezoid_weight(std::size_t l, std::size_t L) { return (l == 0 || l == L) ? 0.5 : 1.0; }

}  // namespace

std::string to_string(Quadrature q) { return q == Quadrature::Riemann ? "riemann" : "trapezoid"; }

Quadrature quadrature_from_string(const std::string& s) {
  if (s == "riemann") return Quadrature::Riemann;
  if (s == "trapezoid") return Quadrature::Trapezoid;
  throw Error("unknown quadrature '" + s + "' (expected riemann or trapezoid)");
}

RegressionVectors regression_vectors(std::span<const double> X, int N, int d,
                                     const BasisSet& basis) {
  const std::size_t KV = basis.K_V(), K = basis.K();
  if (basis.K_Phi() > 0 && N < 2)
    throw Error("regression_vectors: interaction columns need N >= 2");
  if (X.size() != static_cast<std::size_t>(N) * d) throw Error("regression_vectors: shape mismatch");
  RegressionVectors rv;
  rv.F.setZero(N * d, K);
  rv.delta.setZero(K);
  rv.h.setZero(K);
  const double inv_n = 1.0 / N, inv_n2 = inv_n * inv_n;
  for (int i = 0; i < N; ++i) {
    const double* x = X.data() + i * d;
    const double r = std::sqrt(norm2({x, static_cast<std::size_t>(d)}));
    for (std::size_t k = 0; k < KV; ++k) {
      const RadialTerm& t = basis.v[k];
      const RadialJet j = t.jet(r);
      if (r > 0.0)
        for (int c = 0; c < d; ++c) rv.F(i * d + c, k) = j.d1 / r * x[c];
      rv.delta[k] += inv_n * radial_laplacian(j, t.laplacian_radius(r), d);
      rv.h[k] += inv_n * j.value;
    }
  }
  std::vector<double> z(d);
  for (int i = 0; i < N; ++i) {
    for (int jj = i + 1; jj < N; ++jj) {
      for (int c = 0; c < d; ++c) z[c] = X[i * d + c] - X[jj * d + c];
      const double r = std::sqrt(norm2(z));
      for (std::size_t k = 0; k < basis.K_Phi(); ++k) {
        const RadialTerm& t = basis.phi[k];
        const RadialJet j = t.jet(r);
        const std::size_t col = KV + k;
        if (r > 0.0) {
          const double s = inv_n * j.d1 / r;
          for (int c = 0; c < d; ++c) {
            rv.F(i * d + c, col) += s * z[c];
            rv.F(jj * d + c, col) -= s * z[c];
          }
        }
        // Both orderings (i, j) and (j, i) contribute equally.
        rv.delta[col] += 2.0 * inv_n2 * radial_laplacian(j, t.laplacian_radius(r), d);
        rv.h[col] += inv_n2 * j.value;
      }
    }
  }
  return rv;
}

namespace {

// Particles sorted lexicographically by coordinates, so sums over particles run
// in the same order whatever the labeling.
void canonical_order(std::span<const double> X, int N, int d, std::vector<double>& out) {
  std::vector<int> idx(N);
  for (int i = 0; i < N; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    return std::lexicographical_compare(X.begin() + a * d, X.begin() + (a + 1) * d, X.begin() + b * d,
                                        X.begin() + (b + 1) * d);
  });
  for (int i = 0; i < N; ++i) std::copy_n(X.begin() + idx[i] * d, d, out.begin() + i * d);
}

}  // namespace

NormalSystem assemble(const SnapshotDataset& ds, const BasisSet& basis, Quadrature q,
                      int threads) {
  validate(basis);
  const auto& h = ds.header;
  if (static_cast<std::size_t>(basis.dim) != h.d) throw Error("assemble: basis dim != data dim");
  if (h.L < 1) throw Error("assemble: need at least one snapshot pair");
  if (h.M < 1) throw Error("assemble: empty dataset");
  const std::size_t K = basis.K();
  const int N = static_cast<int>(h.N), d = static_cast<int>(h.d);
  std::vector<Partial> parts(h.M);
  parallel_for(h.M, threads > 0 ? threads : default_threads(), [&](std::size_t m) {
    Partial p{Eigen::MatrixXd::Zero(K, K), Eigen::VectorXd::Zero(K), Eigen::VectorXd::Zero(K)};
    std::vector<double> X(ds.snapshot_size());
    for (std::size_t l = 0; l <= h.L; ++l) {
      canonical_order(ds.snapshot(m, l), N, d, X);
      const RegressionVectors rv = regression_vectors(X, N, d, basis);
      double w = 0.0;
      if (q == Quadrature::Riemann) w = l < h.L ? 1.0 : 0.0;
      else w = trapezoid_weight(l, h.L);
      if (w != 0.0) {
        p.A.selfadjointView<Eigen::Lower>().rankUpdate(rv.F.transpose(), w);
        p.D += w * rv.delta;
      }
      if (l == 0) p.H -= rv.h;
      if (l == h.L) p.H += rv.h;
    }
    p.A = p.A.selfadjointView<Eigen::Lower>();
    parts[m] = std::move(p);
  });
  Partial total = pairwise_sum(parts);
  NormalSystem ns;
  ns.quadrature = q;
  ns.M = h.M;
  ns.L = h.L;
  ns.N = h.N;
  ns.K_V = basis.K_V();
  ns.dt = h.dt;
  ns.labels = basis.labels();
  const double M = static_cast<double>(h.M), L = static_cast<double>(h.L);
  const double T = L * h.dt;
  const double sigma = ds.sigma();
  ns.A = total.A / (M * L * N);
  ns.b = (0.5 * sigma * sigma * h.dt * total.D - total.H) / (M * T);
  if (!ns.A.allFinite() || !ns.b.allFinite())
    throw Error("assemble: non-finite accumulation (check basis domain and data)");
  return ns;
}

double loss_quadratic(const Eigen::VectorXd& theta, const NormalSystem& ns) {
  return 0.5 * theta.dot(ns.A * theta) - ns.b.dot(theta);
}

double loss_direct(const Eigen::VectorXd& theta, const SnapshotDataset& ds,
                   const BasisSet& basis, Quadrature q) {
  const auto& h = ds.header;
  const std::size_t N = h.N, d = h.d, KV = basis.K_V();
  const std::span<const double> alpha(theta.data(), KV);
  const std::span<const double> beta(theta.data() + KV, basis.K_Phi());
  const std::span<const RadialTerm> vt(basis.v), pt(basis.phi);
  const double sigma = ds.sigma(), dt = h.dt;

  struct Terms {
    double jdiss, jdiff, energy;
  };
  auto terms = [&](std::span<const double> X) {
    Terms t{0.0, 0.0, 0.0};
    std::vector<double> force(d), g(d), z(d);
    double pair_lap = 0.0, pair_val = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      auto xi = X.subspan(i * d, d);
      basis_grad(vt, alpha, xi, force);
      t.jdiff += basis_laplacian(vt, alpha, xi) / N;
      t.energy += basis_value(vt, alpha, xi) / N;
      for (std::size_t j = 0; j < N; ++j) {
        if (j == i) continue;
        for (std::size_t c = 0; c < d; ++c) z[c] = X[i * d + c] - X[j * d + c];
        basis_grad(pt, beta, z, g);
        for (std::size_t c = 0; c < d; ++c) force[c] += g[c] / N;
        pair_lap += basis_laplacian(pt, beta, z);
        pair_val += basis_value(pt, beta, z);
      }
      t.jdiss += norm2(force) / N;
    }
    t.jdiff += pair_lap / double(N * N);
    t.energy += pair_val / double(2 * N * N);
    return t;
  };

  double total = 0.0;
  for (std::size_t m = 0; m < h.M; ++m) {
    Terms prev = terms(ds.snapshot(m, 0));
    for (std::size_t l = 0; l < h.L; ++l) {
      const Terms next = terms(ds.snapshot(m, l + 1));
      double jdiss = prev.jdiss, jdiff = prev.jdiff;
      if (q == Quadrature::Trapezoid) {
        jdiss = 0.5 * (prev.jdiss + next.jdiss);
        jdiff = 0.5 * (prev.jdiff + next.jdiff);
      }
      total += 0.5 * jdiss * dt - 0.5 * sigma * sigma * jdiff * dt + (next.energy - prev.energy);
      prev = next;
    }
  }
  return total / (static_cast<double>(h.M) * ds.T());
}

double condition_number(const Eigen::MatrixXd& A) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().maxCoeff();
  if (!(lo > 0.0)) return std::numeric_limits<double>::infinity();
  return hi / lo;
}

FitResult solve_normal_system(const NormalSystem& ns, const RegConfig& reg,
                              const std::string& method) {
  const Regularized r = regularized_solve(ns.A, ns.b, reg);
  FitResult f;
  f.method = method;
  f.theta = r.theta;
  f.lambda = r.lambda;
  f.curvature = r.curvature;
  f.lambda_fallback = r.fallback;
  f.loss = loss_quadratic(r.theta, ns);
  f.residual_norm = (ns.A * r.theta - ns.b).norm();
  f.cond_A = condition_number(ns.A);
  if (!f.theta.allFinite()) throw Error(method + ": non-finite coefficients");
  return f;
}

FitResult fit_selftest(const SnapshotDataset& ds, const BasisSet& basis, Quadrature q,
                       const RegConfig& reg, int threads, NormalSystem* system) {
  NormalSystem ns = assemble(ds, basis, q, threads);
  FitResult f = solve_normal_system(ns, reg, "selftest-lse");
  if (system) *system = std::move(ns);
  return f;
}

MartingaleCheck martingale_mean_check(const SnapshotDataset& ds, const PotentialSpec& spec,
                                      double drift_scale, Quadrature q, int threads) {
  const auto& h = ds.header;
  const int N = static_cast<int>(h.N), d = static_cast<int>(h.d);
  const std::size_t F = h.d + 1;  // coordinates and |x|^2
  const double s2 = ds.sigma() * ds.sigma();
  std::vector<double> R(h.M * F, 0.0);
  parallel_for(h.M, threads > 0 ? threads : default_threads(), [&](std::size_t m) {
    std::vector<double> b(h.N * h.d);
    auto mean_f = [&](std::span<const double> X, std::vector<double>& out) {
      std::fill(out.begin(), out.end(), 0.0);
      for (int i = 0; i < N; ++i) {
        for (int c = 0; c < d; ++c) out[c] += X[i * d + c] / N;
        out[d] += norm2(X.subspan(i * d, d)) / N;
      }
    };
    auto generator = [&](std::span<const double> X, std::vector<double>& out) {
      drift(spec, N, d, X, b);
      std::fill(out.begin(), out.end(), 0.0);
      for (int i = 0; i < N; ++i) {
        double xb = 0.0;
        for (int c = 0; c < d; ++c) {
          out[c] += drift_scale * b[i * d + c] / N;
          xb += X[i * d + c] * b[i * d + c];
        }
        out[d] += (2.0 * drift_scale * xb + 0.5 * s2 * 2.0 * d) / N;
      }
    };
    std::vector<double> f0(F), f1(F), g(F);
    mean_f(ds.snapshot(m, 0), f0);
    mean_f(ds.snapshot(m, h.L), f1);
    double* r = R.data() + m * F;
    for (std::size_t k = 0; k < F; ++k) r[k] = f1[k] - f0[k];
    for (std::size_t l = 0; l <= h.L; ++l) {
      double w = q == Quadrature::Riemann ? (l < h.L ? 1.0 : 0.0) : trapezoid_weight(l, h.L);
      if (w == 0.0) continue;
      generator(ds.snapshot(m, l), g);
      for (std::size_t k = 0; k < F; ++k) r[k] -= w * g[k] * h.dt;
    }
  });
  MartingaleCheck out;
  for (int c = 0; c < d; ++c) out.names.push_back("x" + std::to_string(c + 1));
  out.names.push_back("|x|^2");
  const double M = static_cast<double>(h.M);
  for (std::size_t k = 0; k < F; ++k) {
    double mu = 0.0;
    for (std::size_t m = 0; m < h.M; ++m) mu += R[m * F + k];
    mu /= M;
    double var = 0.0;
    for (std::size_t m = 0; m < h.M; ++m) var += (R[m * F + k] - mu) * (R[m * F + k] - mu);
    var /= std::max(1.0, M - 1.0);
    const double se = std::sqrt(var / M);
    out.mean.push_back(mu);
    out.stderr_.push_back(se);
    out.z.push_back(se > 0.0 ? mu / se : (mu == 0.0 ? 0.0 : std::copysign(INFINITY, mu)));
  }
  return out;
}

}  // namespace ips
