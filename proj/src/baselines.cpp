#include "ips/baselines.hpp"

#include <algorithm>
#include <cmath>

#include "ips/assignment.hpp"

namespace ips {
namespace {

struct MlePartial {
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
};

double logsumexp(const double* v, int n, int stride) {
  double mx = -INFINITY;
  for (int k = 0; k < n; ++k) mx = std::max(mx, v[k * stride]);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (int k = 0; k < n; ++k) s += std::exp(v[k * stride] - mx);
  return mx + std::log(s);
}

}  // namespace

NormalSystem assemble_mle(const SnapshotDataset& ds, const BasisSet& basis, int threads) {
  validate(basis);
  const auto& h = ds.header;
  if (!h.labeled) throw Error("labeled_mle: dataset is unlabeled (particle identities destroyed)");
  if (h.L < 1 || h.M < 1) throw Error("labeled_mle: need at least one snapshot pair");
  if (static_cast<std::size_t>(basis.dim) != h.d) throw Error("labeled_mle: basis dim != data dim");
  const std::size_t K = basis.K(), nd = h.N * h.d;
  const int N = static_cast<int>(h.N), d = static_cast<int>(h.d);
  std::vector<MlePartial> parts(h.M);
  parallel_for(h.M, threads > 0 ? threads : default_threads(), [&](std::size_t m) {
    MlePartial p{Eigen::MatrixXd::Zero(K, K), Eigen::VectorXd::Zero(K)};
    Eigen::VectorXd y(nd);
    std::vector<double> x0(nd), x1(nd);
    std::vector<int> idx(N);
    for (std::size_t l = 0; l < h.L; ++l) {
      // Trajectories sorted by their position at l, so the sums do not depend on
      // how the particles are numbered.
      const auto s0 = ds.snapshot(m, l), s1 = ds.snapshot(m, l + 1);
      for (int i = 0; i < N; ++i) idx[i] = i;
      std::sort(idx.begin(), idx.end(), [&](int a, int b) {
        return std::lexicographical_compare(s0.begin() + a * d, s0.begin() + (a + 1) * d,
                                            s0.begin() + b * d, s0.begin() + (b + 1) * d);
      });
      for (int i = 0; i < N; ++i) {
        std::copy_n(s0.begin() + idx[i] * d, d, x0.begin() + i * d);
        std::copy_n(s1.begin() + idx[i] * d, d, x1.begin() + i * d);
      }
      const RegressionVectors rv = regression_vectors(x0, N, d, basis);
      for (std::size_t k = 0; k < nd; ++k) y[k] = -(x1[k] - x0[k]) / h.dt;
      p.A.selfadjointView<Eigen::Lower>().rankUpdate(rv.F.transpose());
      p.b += rv.F.transpose() * y;
    }
    p.A = p.A.selfadjointView<Eigen::Lower>();
    parts[m] = std::move(p);
  });
  for (std::size_t w = 1; w < parts.size(); w *= 2)
    for (std::size_t i = 0; i + w < parts.size(); i += 2 * w) {
      parts[i].A += parts[i + w].A;
      parts[i].b += parts[i + w].b;
    }
  NormalSystem ns;
  ns.quadrature = Quadrature::Riemann;
  ns.M = h.M;
  ns.L = h.L;
  ns.N = h.N;
  ns.K_V = basis.K_V();
  ns.dt = h.dt;
  ns.labels = basis.labels();
  const double scale = 1.0 / (static_cast<double>(h.M) * h.L * h.N);
  ns.A = parts.front().A * scale;
  ns.b = parts.front().b * scale;
  if (!ns.A.allFinite() || !ns.b.allFinite()) throw Error("labeled_mle: non-finite accumulation");
  return ns;
}

FitResult labeled_mle(const SnapshotDataset& ds, const BasisSet& basis, const RegConfig& reg,
                      int threads, NormalSystem* system) {
  NormalSystem ns = assemble_mle(ds, basis, threads);
  FitResult f = solve_normal_system(ns, reg, "labeled-mle");
  if (system) *system = std::move(ns);
  return f;
}

Eigen::MatrixXd squared_distance_cost(const Eigen::MatrixXd& Xa, const Eigen::MatrixXd& Xb) {
  const Eigen::Index n = Xa.rows(), m = Xb.rows();
  Eigen::MatrixXd C(n, m);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j) C(i, j) = (Xa.row(i) - Xb.row(j)).squaredNorm();
  return C;
}

double median_offdiagonal(const Eigen::MatrixXd& C) {
  std::vector<double> v;
  for (Eigen::Index i = 0; i < C.rows(); ++i)
    for (Eigen::Index j = 0; j < C.cols(); ++j)
      if (i != j) v.push_back(C(i, j));
  if (v.empty()) return 0.0;
  auto mid = v.begin() + v.size() / 2;
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2 == 1) return *mid;
  const double hi = *mid;
  const double lo = *std::max_element(v.begin(), mid);
  return 0.5 * (lo + hi);
}

namespace {

Eigen::MatrixXd plan(const Eigen::MatrixXd& C, const Eigen::VectorXd& f, const Eigen::VectorXd& g,
                     double eps) {
  const Eigen::Index n = C.rows();
  Eigen::MatrixXd P(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i) P(i, j) = std::exp((f[i] + g[j] - C(i, j)) / eps);
  return P;
}

double marginal_error(const Eigen::MatrixXd& P) {
  const double a = 1.0 / static_cast<double>(P.rows());
  const double rows = (P.rowwise().sum().array() - a).abs().maxCoeff();
  const double cols = (P.colwise().sum().array() - a).abs().maxCoeff();
  return std::max(rows, cols);
}

// Newton step on the dual potentials with g_{n-1} held fixed (the dual is
// invariant under f + c, g - c). Returns false if the system is singular.
bool newton_step(const Eigen::MatrixXd& P, double eps, Eigen::VectorXd& df, Eigen::VectorXd& dg) {
  const Eigen::Index n = P.rows(), m = 2 * n - 1;
  const double a = 1.0 / static_cast<double>(n);
  const Eigen::VectorXd r = P.rowwise().sum(), c = P.colwise().sum().transpose();
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(m, m);
  Eigen::VectorXd rhs(m);
  H.topLeftCorner(n, n) = r.asDiagonal();
  H.topRightCorner(n, n - 1) = P.leftCols(n - 1);
  H.bottomLeftCorner(n - 1, n) = P.leftCols(n - 1).transpose();
  H.bottomRightCorner(n - 1, n - 1) = c.head(n - 1).asDiagonal();
  rhs.head(n) = (a - r.array()).matrix() * eps;
  rhs.tail(n - 1) = (a - c.head(n - 1).array()).matrix() * eps;
  // Blocks of the plan that are numerically disconnected make H singular; a
  // small shift keeps the factorization definite.
  H.diagonal().array() += 1e-12 * a;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
  if (ldlt.info() != Eigen::Success) return false;
  const Eigen::VectorXd x = ldlt.solve(rhs);
  if (!x.allFinite()) return false;
  df = x.head(n);
  dg = Eigen::VectorXd::Zero(n);
  dg.head(n - 1) = x.tail(n - 1);
  return true;
}

}  // namespace

Coupling sinkhorn_cost(const Eigen::MatrixXd& C, double eps, int max_iters, double tol) {
  if (!(eps > 0.0) || !std::isfinite(eps)) throw Error("sinkhorn: eps must be > 0");
  const int n = static_cast<int>(C.rows());
  if (C.cols() != n || n == 0) throw Error("sinkhorn: cost must be square and nonempty");
  const double log_mass = -std::log(static_cast<double>(n));
  // Column-major scratch: S(i, j) = (g_j - C_ij) / eps for the f-update and
  // (f_i - C_ij) / eps for the g-update.
  Eigen::VectorXd f = Eigen::VectorXd::Zero(n), g = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd df, dg;
  Eigen::MatrixXd S(n, n);
  Coupling out;
  out.eps = eps;
  double err = INFINITY;
  int it = 0;
  while (it < max_iters) {
    ++it;
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) S(i, j) = (g[j] - C(i, j)) / eps;
    for (int i = 0; i < n; ++i) f[i] = eps * (log_mass - logsumexp(&S(i, 0), n, n));
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < n; ++i) S(i, j) = (f[i] - C(i, j)) / eps;
      g[j] = eps * (log_mass - logsumexp(&S(0, j), n, 1));
    }
    Eigen::MatrixXd P = plan(C, f, g, eps);
    err = marginal_error(P);
    if (err < tol) break;
    // Near a nearly-permutation coupling the scaling iteration contracts very
    // slowly; polish with Newton steps, kept only when they reduce the error.
    if (n > 1 && it >= 10 && err < 1e-2 && it < max_iters) {
      if (!newton_step(P, eps, df, dg)) continue;
      ++it;
      for (double step = 1.0; step > 1e-3; step *= 0.5) {
        const Eigen::VectorXd f1 = f + step * df, g1 = g + step * dg;
        const double e1 = marginal_error(plan(C, f1, g1, eps));
        if (std::isfinite(e1) && e1 < err) {
          f = f1;
          g = g1;
          err = e1;
          break;
        }
      }
      if (err < tol) break;
    }
  }
  out.iters = it;
  out.P = plan(C, f, g, eps);
  out.marginal_err = marginal_error(out.P);
  out.converged = out.marginal_err < tol;
  return out;
}

Coupling sinkhorn(const Eigen::MatrixXd& Xa, const Eigen::MatrixXd& Xb, double eps,
                  int max_iters, double tol) {
  return sinkhorn_cost(squared_distance_cost(Xa, Xb), eps, max_iters, tol);
}

std::vector<int> coupling_to_assignment(const Eigen::MatrixXd& P) {
  return max_weight_assignment(P);
}

SnapshotDataset sinkhorn_pseudo_trajectories(const SnapshotDataset& ds, const SinkhornConfig& sk,
                                             int threads, double* accuracy,
                                             double* mean_iters, std::size_t* unconverged) {
  const auto& h = ds.header;
  const std::size_t N = h.N, d = h.d;
  SnapshotDataset out = ds;
  out.header.labeled = true;
  std::vector<double> acc(h.M, 0.0), iters(h.M, 0.0);
  std::vector<std::size_t> bad(h.M, 0);
  const bool audit = h.permutation_seed.has_value();
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  parallel_for(h.M, threads > 0 ? threads : default_threads(), [&](std::size_t m) {
    std::vector<std::vector<std::size_t>> truth;
    if (audit)
      truth = snapshot_permutations(*h.permutation_seed, h.ensemble_offset + m, ds.snapshots(), N);
    std::vector<std::size_t> pos(N);  // slot in snapshot l of pseudo-particle k
    for (std::size_t k = 0; k < N; ++k) pos[k] = k;
    std::size_t correct = 0;
    for (std::size_t l = 0;; ++l) {
      auto src = ds.snapshot(m, l);
      auto dst = out.snapshot(m, l);
      for (std::size_t k = 0; k < N; ++k)
        std::copy_n(src.begin() + pos[k] * d, d, dst.begin() + k * d);
      if (l == h.L) break;
      const Eigen::Map<const RowMat> Xa(ds.snapshot(m, l).data(), N, d);
      const Eigen::Map<const RowMat> Xb(ds.snapshot(m, l + 1).data(), N, d);
      const Eigen::MatrixXd C = squared_distance_cost(Xa, Xb);
      const double eps = std::max(sk.eps_floor, sk.eps_factor * median_offdiagonal(C));
      const Coupling cp = sinkhorn_cost(C, eps, sk.max_iters, sk.tol);
      iters[m] += cp.iters;
      if (!cp.converged) ++bad[m];
      const std::vector<int> pi = coupling_to_assignment(cp.P);
      if (audit)
        for (std::size_t p = 0; p < N; ++p)
          if (truth[l][p] == truth[l + 1][pi[p]]) ++correct;
      for (std::size_t k = 0; k < N; ++k) pos[k] = static_cast<std::size_t>(pi[pos[k]]);
    }
    acc[m] = static_cast<double>(correct) / static_cast<double>(N * h.L);
  });
  double a = 0.0, it = 0.0;
  std::size_t b = 0;
  for (std::size_t m = 0; m < h.M; ++m) {
    a += acc[m];
    it += iters[m];
    b += bad[m];
  }
  if (accuracy) *accuracy = audit ? a / h.M : NAN;
  if (mean_iters) *mean_iters = it / (static_cast<double>(h.M) * h.L);
  if (unconverged) *unconverged = b;
  return out;
}

FitResult sinkhorn_mle(const SnapshotDataset& ds, const BasisSet& basis, const SinkhornConfig& sk,
                       const RegConfig& reg, int threads, NormalSystem* system) {
  double acc = NAN, iters = 0.0;
  std::size_t bad = 0;
  const SnapshotDataset pseudo = sinkhorn_pseudo_trajectories(ds, sk, threads, &acc, &iters, &bad);
  NormalSystem ns = assemble_mle(pseudo, basis, threads);
  FitResult f = solve_normal_system(ns, reg, "sinkhorn-mle");
  if (system) *system = std::move(ns);
  if (!std::isnan(acc)) f.diagnostics["matching_accuracy"] = acc;
  f.diagnostics["sinkhorn_mean_iters"] = iters;
  f.diagnostics["sinkhorn_unconverged"] = static_cast<double>(bad);
  return f;
}

}  // namespace ips
