#include "ips/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <memory>
#include <numbers>

#include "ips/rng.hpp"

namespace ips {
namespace {

double sample_std(std::span<const double> s) {
  double mu = 0.0;
  for (double v : s) mu += v;
  mu /= static_cast<double>(s.size());
  double var = 0.0;
  for (double v : s) var += (v - mu) * (v - mu);
  return std::sqrt(var / std::max<double>(1.0, static_cast<double>(s.size()) - 1.0));
}

std::vector<double> grid(double lo, double hi, int n) {
  if (n < 2) throw Error("kde: grid needs at least 2 points");
  if (!(hi > lo)) throw Error("kde: empty grid range");
  std::vector<double> x(n);
  for (int i = 0; i < n; ++i) x[i] = lo + (hi - lo) * i / (n - 1);
  return x;
}

double bandwidth(std::span<const double> s, double factor) {
  if (s.empty()) throw Error("kde: no samples");
  const double scale = std::max(1.0, std::abs(s[0]));
  double h = factor * sample_std(s);
  // identical samples leave only rounding in the std
  if (!(h > 1e-12 * scale)) h = 1e-3 * scale;
  return h;
}

}  // namespace

DensityGrid kde_direct(std::span<const double> samples, double lo, double hi, int n,
                       double factor) {
  DensityGrid g;
  g.x = grid(lo, hi, n);
  g.bandwidth = bandwidth(samples, factor);
  g.samples = samples.size();
  g.density.assign(n, 0.0);
  const double c = 1.0 / (samples.size() * g.bandwidth * std::sqrt(2.0 * std::numbers::pi));
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (double v : samples) {
      const double u = (g.x[i] - v) / g.bandwidth;
      s += std::exp(-0.5 * u * u);
    }
    g.density[i] = c * s;
  }
  return g;
}

DensityGrid kde(std::span<const double> samples, double lo, double hi, int n, double factor) {
  DensityGrid g;
  g.x = grid(lo, hi, n);
  const double h = bandwidth(samples, factor);
  g.bandwidth = h;
  g.samples = samples.size();
  const double dx = (hi - lo) / (n - 1);
  const long pad = static_cast<long>(std::ceil(5.0 * h / dx));
  const long total = n + 2 * pad;
  const double x0 = lo - pad * dx;
  std::vector<double> bins(total, 0.0);
  for (double v : samples) {
    const double pos = (v - x0) / dx;
    if (!(pos >= 0.0) || pos > total - 1) continue;
    const long k = std::min(static_cast<long>(pos), total - 2);
    const double f = pos - k;
    bins[k] += 1.0 - f;
    bins[k + 1] += f;
  }
  const long half = std::min(pad, total);
  std::vector<double> ker(2 * half + 1);
  for (long j = -half; j <= half; ++j) {
    const double u = j * dx / h;
    ker[j + half] = std::exp(-0.5 * u * u);
  }
  const double c = 1.0 / (samples.size() * h * std::sqrt(2.0 * std::numbers::pi));
  g.density.assign(n, 0.0);
  for (int i = 0; i < n; ++i) {
    const long center = i + pad;
    double s = 0.0;
    for (long j = -half; j <= half; ++j) {
      const long k = center + j;
      if (k >= 0 && k < total) s += bins[k] * ker[j + half];
    }
    g.density[i] = c * s;
  }
  return g;
}

double trapezoid(const std::vector<double>& x, const std::vector<double>& y) {
  double s = 0.0;
  for (std::size_t i = 1; i < x.size(); ++i) s += 0.5 * (x[i] - x[i - 1]) * (y[i] + y[i - 1]);
  return s;
}

std::vector<double> radial_samples(const SnapshotDataset& ds, PotentialKind kind, std::size_t cap,
                                   std::uint64_t seed) {
  const auto& h = ds.header;
  const std::size_t S = h.M * ds.snapshots(), N = h.N, d = h.d;
  auto norm = [&](std::size_t s, std::size_t i, std::size_t j) {
    const double* x = ds.data.data() + s * N * d;
    double a = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      const double z = x[i * d + k] - (j < N ? x[j * d + k] : 0.0);
      a += z * z;
    }
    return std::sqrt(a);
  };
  std::vector<double> out;
  Rng rng(seed);
  if (kind == PotentialKind::V) {
    if (S * N <= cap) {
      out.reserve(S * N);
      for (std::size_t s = 0; s < S; ++s)
        for (std::size_t i = 0; i < N; ++i) out.push_back(norm(s, i, N));
    } else {
      out.reserve(cap);
      for (std::size_t c = 0; c < cap; ++c) out.push_back(norm(rng.below(S), rng.below(N), N));
    }
    return out;
  }
  if (N < 2) throw Error("pair distances need N >= 2");
  const std::size_t per = N * (N - 1) / 2;
  if (S * per <= cap) {
    out.reserve(S * per);
    for (std::size_t s = 0; s < S; ++s)
      for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = i + 1; j < N; ++j) out.push_back(norm(s, i, j));
  } else {
    out.reserve(cap);
    for (std::size_t c = 0; c < cap; ++c) {
      const std::size_t i = rng.below(N);
      std::size_t j = rng.below(N - 1);
      if (j >= i) ++j;
      out.push_back(norm(rng.below(S), i, j));
    }
  }
  return out;
}

DensityGrid data_density(const SnapshotDataset& ds, PotentialKind kind, std::size_t cap,
                         int grid_n) {
  std::vector<double> s = radial_samples(ds, kind, cap);
  std::vector<double> sorted = s;
  const double lo = percentile(sorted, 0.5);
  const double hi = percentile(sorted, 99.5);
  return kde(s, lo, hi, grid_n);
}

Eigen::MatrixXd sample_points(const SnapshotDataset& ds, PotentialKind kind, std::size_t count,
                              std::uint64_t seed) {
  const auto& h = ds.header;
  const std::size_t S = h.M * ds.snapshots(), N = h.N, d = h.d;
  Eigen::MatrixXd P(d, count);
  Rng rng(seed);
  for (std::size_t c = 0; c < count; ++c) {
    const double* x = ds.data.data() + rng.below(S) * N * d;
    const std::size_t i = rng.below(N);
    if (kind == PotentialKind::V) {
      for (std::size_t k = 0; k < d; ++k) P(k, c) = x[i * d + k];
    } else {
      if (N < 2) throw Error("pair displacements need N >= 2");
      std::size_t j = rng.below(N - 1);
      if (j >= i) ++j;
      for (std::size_t k = 0; k < d; ++k) P(k, c) = x[i * d + k] - x[j * d + k];
    }
  }
  return P;
}

double relative_error_radial(const RadialDerivative& est, const PotentialSpec& truth,
                             PotentialKind kind, const DensityGrid& rho) {
  const Eigen::VectorXd r = Eigen::Map<const Eigen::VectorXd>(rho.x.data(), rho.x.size());
  const Eigen::VectorXd g = est(r);
  std::vector<double> num(rho.x.size()), den(rho.x.size());
  for (std::size_t i = 0; i < rho.x.size(); ++i) {
    const double t = radial_derivative(truth, kind, rho.x[i]);
    num[i] = (g[i] - t) * (g[i] - t) * rho.density[i];
    den[i] = t * t * rho.density[i];
  }
  const double D = trapezoid(rho.x, den);
  if (!(D > 0.0)) throw Error("relative gradient error: true gradient vanishes on the density support");
  return std::sqrt(trapezoid(rho.x, num) / D);
}

double relative_error_mc(const GradientField& est, const PotentialSpec& truth, PotentialKind kind,
                         const Eigen::MatrixXd& points) {
  const Eigen::MatrixXd G = est(points);
  double num = 0.0, den = 0.0;
  std::vector<double> t(points.rows());
  for (Eigen::Index c = 0; c < points.cols(); ++c) {
    const Eigen::VectorXd x = points.col(c);
    potential_grad(truth, kind, std::span<const double>(x.data(), x.size()), t);
    for (Eigen::Index k = 0; k < points.rows(); ++k) {
      num += (G(k, c) - t[k]) * (G(k, c) - t[k]);
      den += t[k] * t[k];
    }
  }
  if (!(den > 0.0)) throw Error("relative gradient error: true gradient vanishes on the sample");
  return std::sqrt(num / den);
}

GradientEstimate estimate_from_basis(const BasisSet& basis, const Eigen::VectorXd& theta) {
  GradientEstimate e;
  const std::vector<double> a(theta.data(), theta.data() + basis.K_V());
  const std::vector<double> b(theta.data() + basis.K_V(), theta.data() + basis.K());
  auto radial = [](std::vector<RadialTerm> terms, std::vector<double> coef) -> RadialDerivative {
    return [terms, coef](const Eigen::VectorXd& r) {
      Eigen::VectorXd out(r.size());
      for (Eigen::Index i = 0; i < r.size(); ++i) out[i] = basis_radial_derivative(terms, coef, r[i]);
      return out;
    };
  };
  auto field = [](RadialDerivative rd) -> GradientField {
    return [rd](const Eigen::MatrixXd& X) {
      const Eigen::VectorXd r = X.colwise().norm().transpose();
      const Eigen::VectorXd g = rd(r);
      Eigen::MatrixXd G(X.rows(), X.cols());
      for (Eigen::Index c = 0; c < X.cols(); ++c)
        G.col(c) = r[c] > 0.0 ? Eigen::VectorXd(g[c] / r[c] * X.col(c))
                              : Eigen::VectorXd::Zero(X.rows());
      return G;
    };
  };
  e.radial_V = radial(basis.v, a);
  e.radial_Phi = radial(basis.phi, b);
  e.grad_V = field(e.radial_V);
  e.grad_Phi = field(e.radial_Phi);
  return e;
}

GradientEstimate estimate_from_nets(const MlpPotential<float>& V, const MlpPotential<float>& Phi) {
  GradientEstimate e;
  const auto Vd = std::make_shared<MlpPotential<double>>();
  const auto Pd = std::make_shared<MlpPotential<double>>();
  Vd->net = V.net.cast<double>();
  Vd->mode = V.mode;
  Vd->dim = V.dim;
  Pd->net = Phi.net.cast<double>();
  Pd->mode = Phi.mode;
  Pd->dim = Phi.dim;
  if (V.radial()) e.radial_V = [Vd](const Eigen::VectorXd& r) { return mlp_radial_derivative(*Vd, r); };
  if (Phi.radial())
    e.radial_Phi = [Pd](const Eigen::VectorXd& r) { return mlp_radial_derivative(*Pd, r); };
  e.grad_V = [Vd](const Eigen::MatrixXd& X) { return mlp_gradients(*Vd, X); };
  e.grad_Phi = [Pd](const Eigen::MatrixXd& X) { return mlp_gradients(*Pd, X); };
  return e;
}

EvalContext make_eval_context(const SnapshotDataset& ds, const PotentialSpec& truth,
                              std::size_t cap, std::size_t mc_points) {
  EvalContext c;
  c.truth = truth;
  c.radial = is_radial(truth);
  if (c.radial) {
    c.rho_V = data_density(ds, PotentialKind::V, cap);
    c.rho_Phi = data_density(ds, PotentialKind::Phi, cap);
  } else {
    c.pts_V = sample_points(ds, PotentialKind::V, mc_points);
    c.pts_Phi = sample_points(ds, PotentialKind::Phi, mc_points);
  }
  return c;
}

GradErrors gradient_errors(const GradientEstimate& est, const EvalContext& ctx) {
  GradErrors e;
  if (ctx.radial && est.radial_V && est.radial_Phi) {
    e.V = relative_error_radial(est.radial_V, ctx.truth, PotentialKind::V, ctx.rho_V);
    e.Phi = relative_error_radial(est.radial_Phi, ctx.truth, PotentialKind::Phi, ctx.rho_Phi);
    return e;
  }
  if (ctx.pts_V.size() == 0) throw Error("gradient_errors: context has no Monte Carlo points");
  e.V = relative_error_mc(est.grad_V, ctx.truth, PotentialKind::V, ctx.pts_V);
  e.Phi = relative_error_mc(est.grad_Phi, ctx.truth, PotentialKind::Phi, ctx.pts_Phi);
  return e;
}

void summarize(ErrorReport& r) {
  auto ms = [](const std::vector<double>& v, double& mean, double& sd) {
    if (v.empty()) return;
    mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    sd = v.size() > 1 ? sample_std(v) : 0.0;
  };
  ms(r.err_V, r.mean_V, r.std_V);
  ms(r.err_Phi, r.mean_Phi, r.std_Phi);
}

ErrorReport block_evaluation(const SnapshotDataset& pool, std::size_t block_size,
                             std::size_t n_blocks,
                             const std::function<BlockFit(const SnapshotDataset&)>& fit) {
  if (block_size == 0 || n_blocks == 0) throw Error("block_evaluation: empty block layout");
  if (block_size * n_blocks > pool.header.M)
    throw Error("block_evaluation: pool has " + std::to_string(pool.header.M) + " ensembles, need " +
                std::to_string(block_size * n_blocks));
  ErrorReport r;
  r.block_size = block_size;
  r.n_blocks = n_blocks;
  for (std::size_t k = 0; k < n_blocks; ++k) {
    const auto t0 = std::chrono::steady_clock::now();
    const BlockFit f = fit(slice_ensembles(pool, k * block_size, block_size));
    r.err_V.push_back(f.err.V);
    r.err_Phi.push_back(f.err.Phi);
    r.lambda.push_back(f.lambda);
    r.wall_s.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  summarize(r);
  return r;
}

ConditionDiagnostics condition_diagnostics(const Eigen::MatrixXd& A, std::size_t K_V) {
  if (K_V == 0 || static_cast<Eigen::Index>(K_V) >= A.rows())
    throw Error("condition_diagnostics: K_V must split A into two nonempty blocks");
  auto eig = [](const Eigen::MatrixXd& B) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(B, Eigen::EigenvaluesOnly);
    return es.eigenvalues();
  };
  auto kappa = [](const Eigen::VectorXd& e) {
    return e.minCoeff() > 0.0 ? e.maxCoeff() / e.minCoeff() : INFINITY;
  };
  const Eigen::Index kv = static_cast<Eigen::Index>(K_V), kp = A.rows() - kv;
  const Eigen::VectorXd full = eig(A);
  ConditionDiagnostics c;
  c.kappa_full = kappa(full);
  c.kappa_VV = kappa(eig(A.topLeftCorner(kv, kv)));
  c.kappa_PhiPhi = kappa(eig(A.bottomRightCorner(kp, kp)));
  c.lambda_min = full.minCoeff();
  c.lambda_max = full.maxCoeff();
  return c;
}

GramResult empirical_gram(const SnapshotDataset& ds, const BasisSet& basis, int threads) {
  const auto& h = ds.header;
  const std::size_t KV = basis.K_V(), KP = basis.K_Phi(), N = h.N, d = h.d;
  std::vector<Eigen::MatrixXd> gv(h.M, Eigen::MatrixXd::Zero(KV, KV)),
      gp(h.M, Eigen::MatrixXd::Zero(KP, KP));
  parallel_for(h.M, threads > 0 ? threads : default_threads(), [&](std::size_t m) {
    Eigen::MatrixXd Dv(d, KV), Dp(d, KP);
    for (std::size_t l = 0; l < ds.snapshots(); ++l) {
      const auto X = ds.snapshot(m, l);
      for (std::size_t i = 0; i < N; ++i) {
        const double* x = X.data() + i * d;
        double r = 0.0;
        for (std::size_t k = 0; k < d; ++k) r += x[k] * x[k];
        r = std::sqrt(r);
        for (std::size_t k = 0; k < KV; ++k) {
          const double s = r > 0.0 ? basis.v[k].jet(r).d1 / r : 0.0;
          for (std::size_t c = 0; c < d; ++c) Dv(c, k) = s * x[c];
        }
        gv[m] += Dv.transpose() * Dv;
        for (std::size_t j = 0; j < N; ++j) {
          if (j == i) continue;
          double rz = 0.0;
          for (std::size_t c = 0; c < d; ++c) rz += (x[c] - X[j * d + c]) * (x[c] - X[j * d + c]);
          rz = std::sqrt(rz);
          for (std::size_t k = 0; k < KP; ++k) {
            const double s = rz > 0.0 ? basis.phi[k].jet(rz).d1 / rz : 0.0;
            for (std::size_t c = 0; c < d; ++c) Dp(c, k) = s * (x[c] - X[j * d + c]);
          }
          gp[m] += Dp.transpose() * Dp;
        }
      }
    }
  });
  GramResult g;
  g.G_V = Eigen::MatrixXd::Zero(KV, KV);
  g.G_Phi = Eigen::MatrixXd::Zero(KP, KP);
  for (std::size_t m = 0; m < h.M; ++m) {
    g.G_V += gv[m];
    g.G_Phi += gp[m];
  }
  const double S = static_cast<double>(h.M * ds.snapshots());
  g.G_V /= S * N;
  if (N > 1) g.G_Phi /= S * N * (N - 1);
  g.lambda_min_V = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(g.G_V).eigenvalues().minCoeff();
  g.lambda_min_Phi = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(g.G_Phi).eigenvalues().minCoeff();
  return g;
}

}  // namespace ips
