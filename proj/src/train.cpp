#include "ips/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "ips/rng.hpp"
#include "ips/serialize.hpp"

namespace ips {
namespace {

constexpr std::size_t kChunk = 32;  // pairs per forward/backward sweep

// Network inputs for a set of configurations: one column per particle (V) and
// per particle pair i < j (Phi); even vector nets get a second block with -z.
template <class S>
struct Inputs {
  Mat<S> v;    // [d or 1, C N]
  Mat<S> phi;  // [d or 1, C Np] or [d, 2 C Np]
  std::vector<double> rv, rphi;  // radii (radial modes)
};

template <class S>
Inputs<S> gather(const MlpPotential<S>& V, const MlpPotential<S>& Phi,
                 const std::vector<std::span<const double>>& configs, int N, int d) {
  const Eigen::Index C = static_cast<Eigen::Index>(configs.size());
  const Eigen::Index Np = N * (N - 1) / 2;
  Inputs<S> in;
  in.v.resize(V.radial() ? 1 : d, C * N);
  if (V.radial()) in.rv.resize(C * N);
  const bool even = Phi.mode == NetMode::VectorPhiEven;
  in.phi.resize(Phi.radial() ? 1 : d, (even ? 2 : 1) * C * Np);
  if (Phi.radial()) in.rphi.resize(C * Np);
  for (Eigen::Index c = 0; c < C; ++c) {
    const auto& X = configs[c];
    for (int i = 0; i < N; ++i) {
      const Eigen::Index col = c * N + i;
      if (V.radial()) {
        const double r = std::sqrt(norm2(X.subspan(i * d, d)));
        in.rv[col] = r;
        in.v(0, col) = static_cast<S>(r);
      } else {
        for (int k = 0; k < d; ++k) in.v(k, col) = static_cast<S>(X[i * d + k]);
      }
    }
    Eigen::Index p = c * Np;
    for (int i = 0; i < N; ++i)
      for (int j = i + 1; j < N; ++j, ++p) {
        if (Phi.radial()) {
          double r2 = 0.0;
          for (int k = 0; k < d; ++k) {
            const double z = X[i * d + k] - X[j * d + k];
            r2 += z * z;
          }
          in.rphi[p] = std::sqrt(r2);
          in.phi(0, p) = static_cast<S>(in.rphi[p]);
        } else {
          for (int k = 0; k < d; ++k) {
            const double z = X[i * d + k] - X[j * d + k];
            in.phi(k, p) = static_cast<S>(z);
            if (even) in.phi(k, p + C * Np) = static_cast<S>(-z);
          }
        }
      }
  }
  return in;
}

// Spatial value / gradient / Laplacian of each V point or Phi pair, from a tape.
struct SpatialFields {
  std::vector<double> value, lap;
  Eigen::MatrixXd grad;  // [d, count]
};

template <class S>
SpatialFields spatial(const MlpPotential<S>& pot, const Tape<S>& t, const Mat<S>& X,
               const std::vector<double>& radii, Eigen::Index count, int d, bool jets,
               const std::span<const std::span<const double>>* configs = nullptr, int N = 0,
               bool is_phi = false) {
  SpatialFields f;
  f.value.resize(count);
  const bool even = pot.mode == NetMode::VectorPhiEven;
  for (Eigen::Index p = 0; p < count; ++p)
    f.value[p] = even ? 0.5 * (double(t.value[p]) + double(t.value[p + count])) : double(t.value[p]);
  if (!jets) return f;
  f.lap.resize(count);
  f.grad.resize(d, count);
  const Eigen::Index Np = N * (N - 1) / 2;
  for (Eigen::Index p = 0; p < count; ++p) {
    if (pot.radial()) {
      const double re = std::max(radii[p], kRadialFloor);
      const double g1 = t.d1(0, p), g2 = t.d2(0, p);
      f.lap[p] = g2 + (d - 1) / re * g1;
      // Direction x / r from the double-precision source coordinates.
      const auto& cfg = (*configs)[is_phi ? p / Np : p / N];
      if (!is_phi) {
        const int i = static_cast<int>(p % N);
        for (int k = 0; k < d; ++k) f.grad(k, p) = g1 * cfg[i * d + k] / re;
      } else {
        // Recover (i, j) of pair index within a configuration.
        Eigen::Index q = p % Np;
        int i = 0;
        while (q >= N - 1 - i) {
          q -= N - 1 - i;
          ++i;
        }
        const int j = i + 1 + static_cast<int>(q);
        for (int k = 0; k < d; ++k) f.grad(k, p) = g1 * (cfg[i * d + k] - cfg[j * d + k]) / re;
      }
    } else if (even) {
      double lap = 0.0;
      for (int k = 0; k < d; ++k) {
        f.grad(k, p) = 0.5 * (double(t.d1(k, p)) - double(t.d1(k, p + count)));
        lap += 0.5 * (double(t.d2(k, p)) + double(t.d2(k, p + count)));
      }
      f.lap[p] = lap;
    } else {
      double lap = 0.0;
      for (int k = 0; k < d; ++k) {
        f.grad(k, p) = t.d1(k, p);
        lap += t.d2(k, p);
      }
      f.lap[p] = lap;
    }
  }
  (void)X;
  return f;
}

// Adjoints of spatial quantities -> adjoints of network outputs, then backprop.
template <class S>
void pull_back(const MlpPotential<S>& pot, const Tape<S>& t, const std::vector<double>& radii,
               const std::vector<double>& val_adj, const Eigen::MatrixXd* grad_adj,
               const std::vector<double>* lap_adj, const Eigen::MatrixXd* dirs, int d,
               Params<S>& g) {
  const Eigen::Index count = static_cast<Eigen::Index>(val_adj.size());
  const bool even = pot.mode == NetMode::VectorPhiEven;
  const Eigen::Index cols = even ? 2 * count : count;
  const int in = pot.net.input_dim();
  Vec<S> va(cols);
  Mat<S> d1, d2;
  const bool jets = grad_adj != nullptr;
  if (jets) {
    d1.resize(in, cols);
    d2.resize(in, cols);
  }
  for (Eigen::Index p = 0; p < count; ++p) {
    if (even) {
      va[p] = va[p + count] = static_cast<S>(0.5 * val_adj[p]);
      if (jets)
        for (int k = 0; k < in; ++k) {
          d1(k, p) = static_cast<S>(0.5 * (*grad_adj)(k, p));
          d1(k, p + count) = static_cast<S>(-0.5 * (*grad_adj)(k, p));
          d2(k, p) = d2(k, p + count) = static_cast<S>(0.5 * (*lap_adj)[p]);
        }
    } else if (pot.radial()) {
      va[p] = static_cast<S>(val_adj[p]);
      if (jets) {
        const double re = std::max(radii[p], kRadialFloor);
        double gd = 0.0;
        for (int k = 0; k < d; ++k) gd += (*grad_adj)(k, p) * (*dirs)(k, p) / re;
        d1(0, p) = static_cast<S>(gd + (*lap_adj)[p] * (d - 1) / re);
        d2(0, p) = static_cast<S>((*lap_adj)[p]);
      }
    } else {
      va[p] = static_cast<S>(val_adj[p]);
      if (jets)
        for (int k = 0; k < in; ++k) {
          d1(k, p) = static_cast<S>((*grad_adj)(k, p));
          d2(k, p) = static_cast<S>((*lap_adj)[p]);
        }
    }
  }
  pot.net.backward(t, va, d1, d2, g);
}

template <class S>
double chunk_loss(const MlpPotential<S>& V, const MlpPotential<S>& Phi, const SnapshotDataset& ds,
                  std::span<const PairRef> pairs, double w, bool telescoped, Params<S>* gV,
                  Params<S>* gPhi) {
  const int N = static_cast<int>(ds.header.N), d = static_cast<int>(ds.header.d);
  const double dt = ds.header.dt, s2 = ds.sigma() * ds.sigma();
  const Eigen::Index C = static_cast<Eigen::Index>(pairs.size());
  const Eigen::Index Np = N * (N - 1) / 2;
  const bool grads = gV != nullptr;
  // c0 carries the jets; the energy change is E(c1) - E(lo) scaled by ew.
  // Pairs: lo = c0, c1 = next snapshot. Telescoped: lo = X_0, c1 = X_L, ew = 1/L.
  const double ew = telescoped ? 1.0 / static_cast<double>(ds.header.L) : 1.0;
  std::vector<std::span<const double>> c0(C), c1(C), cl(telescoped ? C : 0);
  for (Eigen::Index c = 0; c < C; ++c) {
    c0[c] = ds.snapshot(pairs[c].m, pairs[c].l);
    c1[c] = ds.snapshot(pairs[c].m, telescoped ? ds.header.L : pairs[c].l + 1);
    if (telescoped) cl[c] = ds.snapshot(pairs[c].m, 0);
  }
  const std::span<const std::span<const double>> s0(c0);
  const Inputs<S> in0 = gather(V, Phi, c0, N, d);
  const Inputs<S> in1 = gather(V, Phi, c1, N, d);
  Inputs<S> inl;
  if (telescoped) inl = gather(V, Phi, cl, N, d);
  Tape<S> tv0, tp0, tv1, tp1, tvl, tpl;
  V.net.forward(in0.v, true, tv0);
  V.net.forward(in1.v, false, tv1);
  if (telescoped) V.net.forward(inl.v, false, tvl);
  const bool interact = N >= 2;
  if (interact) {
    Phi.net.forward(in0.phi, true, tp0);
    Phi.net.forward(in1.phi, false, tp1);
    if (telescoped) Phi.net.forward(inl.phi, false, tpl);
  }
  const SpatialFields fv0 = spatial(V, tv0, in0.v, in0.rv, C * N, d, true, &s0, N, false);
  const SpatialFields fv1 = spatial(V, tv1, in1.v, in1.rv, C * N, d, false);
  SpatialFields fvl, fp0, fp1, fpl;
  if (telescoped) fvl = spatial(V, tvl, inl.v, inl.rv, C * N, d, false);
  if (interact) {
    fp0 = spatial(Phi, tp0, in0.phi, in0.rphi, C * Np, d, true, &s0, N, true);
    fp1 = spatial(Phi, tp1, in1.phi, in1.rphi, C * Np, d, false);
    if (telescoped) fpl = spatial(Phi, tpl, inl.phi, inl.rphi, C * Np, d, false);
  }
  const SpatialFields& fvlo = telescoped ? fvl : fv0;
  const SpatialFields& fplo = telescoped ? fpl : fp0;

  const double inv_n = 1.0 / N, inv_n2 = inv_n * inv_n;
  std::vector<double> av0(C * N), av1(C * N), alv(C * N), ap0(C * Np), ap1(C * Np), alp(C * Np);
  Eigen::MatrixXd agv(d, C * N), agp(d, C * Np), dirv, dirp;
  if (grads) {
    if (V.radial()) {
      dirv.resize(d, C * N);
      for (Eigen::Index c = 0; c < C; ++c)
        for (int i = 0; i < N; ++i)
          for (int k = 0; k < d; ++k) dirv(k, c * N + i) = c0[c][i * d + k];
    }
    if (Phi.radial() && interact) {
      dirp.resize(d, C * Np);
      for (Eigen::Index c = 0; c < C; ++c) {
        Eigen::Index p = c * Np;
        for (int i = 0; i < N; ++i)
          for (int j = i + 1; j < N; ++j, ++p)
            for (int k = 0; k < d; ++k) dirp(k, p) = c0[c][i * d + k] - c0[c][j * d + k];
      }
    }
  }
  double total = 0.0;
  Eigen::MatrixXd u(d, N);
  for (Eigen::Index c = 0; c < C; ++c) {
    double jdiff = 0.0, e0 = 0.0, e1 = 0.0;
    for (int i = 0; i < N; ++i) {
      const Eigen::Index q = c * N + i;
      u.col(i) = fv0.grad.col(q);
      jdiff += inv_n * fv0.lap[q];
      e0 += inv_n * fvlo.value[q];
      e1 += inv_n * fv1.value[q];
    }
    if (interact) {
      Eigen::Index p = c * Np;
      for (int i = 0; i < N; ++i)
        for (int j = i + 1; j < N; ++j, ++p) {
          u.col(i) += inv_n * fp0.grad.col(p);
          u.col(j) -= inv_n * fp0.grad.col(p);
          jdiff += 2.0 * inv_n2 * fp0.lap[p];
          e0 += inv_n2 * fplo.value[p];
          e1 += inv_n2 * fp1.value[p];
        }
    }
    const double jdiss = inv_n * u.squaredNorm();
    total += 0.5 * jdiss * dt - 0.5 * s2 * jdiff * dt + ew * (e1 - e0);
    if (!grads) continue;
    for (int i = 0; i < N; ++i) {
      const Eigen::Index q = c * N + i;
      agv.col(q) = w * dt * inv_n * u.col(i);
      alv[q] = -w * 0.5 * s2 * dt * inv_n;
      av0[q] = -w * ew * inv_n;
      av1[q] = w * ew * inv_n;
    }
    if (interact) {
      Eigen::Index p = c * Np;
      for (int i = 0; i < N; ++i)
        for (int j = i + 1; j < N; ++j, ++p) {
          agp.col(p) = w * dt * inv_n2 * (u.col(i) - u.col(j));
          alp[p] = -w * s2 * dt * inv_n2;
          ap0[p] = -w * ew * inv_n2;
          ap1[p] = w * ew * inv_n2;
        }
    }
  }
  if (grads) {
    const std::vector<double> zv(telescoped ? C * N : 0, 0.0), zp(telescoped ? C * Np : 0, 0.0);
    pull_back(V, tv0, in0.rv, telescoped ? zv : av0, &agv, &alv, V.radial() ? &dirv : nullptr, d,
              *gV);
    pull_back<S>(V, tv1, in1.rv, av1, nullptr, nullptr, nullptr, d, *gV);
    if (telescoped) pull_back<S>(V, tvl, inl.rv, av0, nullptr, nullptr, nullptr, d, *gV);
    if (interact) {
      pull_back(Phi, tp0, in0.rphi, telescoped ? zp : ap0, &agp, &alp,
                Phi.radial() ? &dirp : nullptr, d, *gPhi);
      pull_back<S>(Phi, tp1, in1.rphi, ap1, nullptr, nullptr, nullptr, d, *gPhi);
      if (telescoped) pull_back<S>(Phi, tpl, inl.rphi, ap0, nullptr, nullptr, nullptr, d, *gPhi);
    }
  }
  return w * total;
}
}  // namespace

template <class S>
double selftest_nn_loss(const MlpPotential<S>& V, const MlpPotential<S>& Phi,
                        const SnapshotDataset& ds, std::span<const PairRef> pairs,
                        Params<S>* gV, Params<S>* gPhi, int threads,
                        const std::string& batch_id, LossEstimator estimator) {
  if (pairs.empty()) throw Error("selftest_nn_loss: empty batch");
  if (V.dim != static_cast<int>(ds.header.d) || Phi.dim != static_cast<int>(ds.header.d))
    throw Error("selftest_nn_loss: network dimension does not match data");
  if ((gV == nullptr) != (gPhi == nullptr))
    throw Error("selftest_nn_loss: request gradients for both networks or neither");
  for (const auto& p : pairs)
    if (p.m >= ds.header.M || p.l >= ds.header.L) throw Error("selftest_nn_loss: pair out of range");
  const double w = 1.0 / static_cast<double>(pairs.size());
  const std::size_t chunks = (pairs.size() + kChunk - 1) / kChunk;
  std::vector<double> losses(chunks, 0.0);
  std::vector<Params<S>> cgV(gV ? chunks : 0), cgP(gV ? chunks : 0);
  parallel_for(chunks, threads > 0 ? threads : 1, [&](std::size_t c) {
    const std::size_t lo = c * kChunk, hi = std::min(pairs.size(), lo + kChunk);
    Params<S>* a = nullptr;
    Params<S>* b = nullptr;
    if (gV) {
      cgV[c].set_zero_like(V.net.params());
      cgP[c].set_zero_like(Phi.net.params());
      a = &cgV[c];
      b = &cgP[c];
    }
    losses[c] = chunk_loss(V, Phi, ds, pairs.subspan(lo, hi - lo), w,
                           estimator == LossEstimator::Telescoped, a, b);
  });
  double total = 0.0;
  for (std::size_t c = 0; c < chunks; ++c) {
    total += losses[c];
    if (gV) {
      if (gV->W.empty()) gV->set_zero_like(V.net.params());
      if (gPhi->W.empty()) gPhi->set_zero_like(Phi.net.params());
      gV->add(cgV[c]);
      gPhi->add(cgP[c]);
    }
  }
  if (!std::isfinite(total))
    throw Error("non-finite self-test loss" + (batch_id.empty() ? "" : " in batch " + batch_id));
  return total;
}

template double selftest_nn_loss(const MlpPotential<float>&, const MlpPotential<float>&,
                                 const SnapshotDataset&, std::span<const PairRef>, Params<float>*,
                                 Params<float>*, int, const std::string&,
                                 LossEstimator);
template double selftest_nn_loss(const MlpPotential<double>&, const MlpPotential<double>&,
                                 const SnapshotDataset&, std::span<const PairRef>, Params<double>*,
                                 Params<double>*, int, const std::string&,
                                 LossEstimator);

std::string to_string(LossEstimator e) {
  return e == LossEstimator::Pairs ? "pairs" : "telescoped";
}

LossEstimator loss_estimator_from_string(const std::string& s) {
  if (s == "pairs") return LossEstimator::Pairs;
  if (s == "telescoped") return LossEstimator::Telescoped;
  throw Error("unknown loss estimator '" + s + "' (expected pairs or telescoped)");
}

void validate(const TrainConfig& c) {
  auto fail = [](const std::string& f, const std::string& m) { throw Error("train." + f + ": " + m); };
  if (!(c.lr_V > 0.0)) fail("lr_V", "must be > 0");
  if (!(c.lr_Phi > 0.0)) fail("lr_Phi", "must be > 0");
  if (c.epochs_max < 1) fail("epochs_max", "must be >= 1");
  if (!(c.eta_min_ratio >= 0.0 && c.eta_min_ratio <= 1.0)) fail("eta_min_ratio", "must lie in [0, 1]");
  if (!(c.clip_norm > 0.0)) fail("clip_norm", "must be > 0");
  if (c.batch_size < 1) fail("batch_size", "must be >= 1");
  if (c.eval_every < 1) fail("eval_every", "must be >= 1");
  if (c.patience < 1) fail("patience", "must be >= 1");
  if (!(c.val_fraction > 0.0 && c.val_fraction < 1.0)) fail("val_fraction", "must lie in (0, 1)");
  if (c.hidden.empty()) fail("hidden", "need at least one hidden layer");
}

double cosine_rate(double eta0, double ratio, int epoch, int horizon) {
  const double lo = ratio * eta0;
  const double t = std::min(1.0, static_cast<double>(epoch) / horizon);
  return lo + 0.5 * (eta0 - lo) * (1.0 + std::cos(std::numbers::pi * t));
}

template <class S>
double clip_gradient(Params<S>& g, double c) {
  const double n = std::sqrt(g.squared_norm());
  if (n > c) g.scale(static_cast<S>(c / n));
  return n;
}

template double clip_gradient(Params<float>&, double);
template double clip_gradient(Params<double>&, double);

template <class S>
void Adam::step(Params<S>& p, const Params<S>& g, double lr) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const std::size_t L = p.W.size();
  if (m_.empty()) {
    m_.resize(2 * L);
    v_.resize(2 * L);
    for (std::size_t l = 0; l < L; ++l) {
      m_[2 * l].assign(p.W[l].size(), 0.0);
      v_[2 * l].assign(p.W[l].size(), 0.0);
      m_[2 * l + 1].assign(p.b[l].size(), 0.0);
      v_[2 * l + 1].assign(p.b[l].size(), 0.0);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  auto upd = [&](S* x, const S* gr, std::vector<double>& m, std::vector<double>& v) {
    for (std::size_t k = 0; k < m.size(); ++k) {
      const double gk = gr[k];
      m[k] = b1 * m[k] + (1.0 - b1) * gk;
      v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
      x[k] -= static_cast<S>(lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps));
    }
  };
  for (std::size_t l = 0; l < L; ++l) {
    upd(p.W[l].data(), g.W[l].data(), m_[2 * l], v_[2 * l]);
    upd(p.b[l].data(), g.b[l].data(), m_[2 * l + 1], v_[2 * l + 1]);
  }
}

template void Adam::step(Params<float>&, const Params<float>&, double);
template void Adam::step(Params<double>&, const Params<double>&, double);

TrainResult train(const SnapshotDataset& ds, const TrainConfig& cfg,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  validate(cfg);
  const auto& h = ds.header;
  if (h.M < 2) throw Error("train: need at least 2 ensembles (training + validation)");
  if (h.L < 1) throw Error("train: need at least one snapshot pair");
  const int d = static_cast<int>(h.d);
  const int threads = cfg.threads > 0 ? cfg.threads : default_threads();

  TrainResult res;
  res.V = MlpPotential<float>::make(cfg.radial ? NetMode::RadialV : NetMode::VectorV, d,
                                    cfg.activation, stream_seed(cfg.seed, 1), cfg.hidden);
  res.Phi = MlpPotential<float>::make(cfg.radial ? NetMode::RadialPhi : NetMode::VectorPhiEven, d,
                                      cfg.activation, stream_seed(cfg.seed, 2), cfg.hidden);

  std::size_t n_val = static_cast<std::size_t>(std::llround(cfg.val_fraction * h.M));
  n_val = std::clamp<std::size_t>(n_val, 1, h.M - 1);
  const std::size_t n_train = h.M - n_val;
  std::vector<PairRef> train_pairs, val_pairs;
  for (std::size_t m = 0; m < h.M; ++m)
    for (std::size_t l = 0; l < h.L; ++l) (m < n_train ? train_pairs : val_pairs).push_back({m, l});
  Rng rng(cfg.seed, 3);
  if (cfg.val_pairs_max > 0 && val_pairs.size() > cfg.val_pairs_max) {
    for (std::size_t i = val_pairs.size(); i > 1; --i) std::swap(val_pairs[i - 1], val_pairs[rng.below(i)]);
    val_pairs.resize(cfg.val_pairs_max);
  }

  auto val_loss = [&]() {
    double s = 0.0;
    const std::size_t B = 4096;
    for (std::size_t lo = 0; lo < val_pairs.size(); lo += B) {
      const std::size_t n = std::min(B, val_pairs.size() - lo);
      s += static_cast<double>(n) *
           selftest_nn_loss<float>(res.V, res.Phi, ds, std::span(val_pairs).subspan(lo, n), nullptr,
                                   nullptr, threads, "validation", cfg.estimator);
    }
    return s / static_cast<double>(val_pairs.size());
  };

  Adam adamV, adamP;
  MlpPotential<float> bestV = res.V, bestP = res.Phi;
  double best = INFINITY;
  int bad = 0;
  for (int e = 0; e < cfg.epochs_max; ++e) {
    const double lrV = cosine_rate(cfg.lr_V, cfg.eta_min_ratio, e, cfg.epochs_max);
    const double lrP = cosine_rate(cfg.lr_Phi, cfg.eta_min_ratio, e, cfg.epochs_max);
    for (std::size_t i = train_pairs.size(); i > 1; --i)
      std::swap(train_pairs[i - 1], train_pairs[rng.below(i)]);
    const std::size_t n_pairs =
        cfg.pairs_per_epoch > 0 ? std::min(cfg.pairs_per_epoch, train_pairs.size()) : train_pairs.size();
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t lo = 0; lo < n_pairs; lo += cfg.batch_size, ++batches) {
      const std::size_t n = std::min<std::size_t>(cfg.batch_size, n_pairs - lo);
      Params<float> gV, gP;
      const std::string id = std::to_string(e) + ":" + std::to_string(batches);
      const double loss = selftest_nn_loss<float>(res.V, res.Phi, ds,
                                                  std::span(train_pairs).subspan(lo, n), &gV, &gP,
                                                  threads, id, cfg.estimator);
      if (!(std::abs(loss) <= cfg.divergence_threshold))
        throw Error("training diverged at epoch " + std::to_string(e) + ", batch " +
                    std::to_string(batches) + " (loss " + std::to_string(loss) + ")");
      clip_gradient(gV, cfg.clip_norm);
      clip_gradient(gP, cfg.clip_norm);
      adamV.step(res.V.net.params(), gV, lrV);
      adamP.step(res.Phi.net.params(), gP, lrP);
      loss_sum += loss;
    }
    EpochRecord rec{e, loss_sum / std::max<std::size_t>(1, batches), lrV, lrP, NAN};
    const bool last = e + 1 == cfg.epochs_max;
    if ((e + 1) % cfg.eval_every == 0 || last) {
      rec.val_loss = val_loss();
      if (rec.val_loss < best) {
        best = rec.val_loss;
        bestV = res.V;
        bestP = res.Phi;
        res.best_epoch = e;
        bad = 0;
      } else if (++bad >= cfg.patience) {
        res.history.push_back(rec);
        if (on_epoch) on_epoch(rec);
        res.early_stopped = true;
        break;
      }
    }
    res.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  res.V = bestV;
  res.Phi = bestP;
  res.best_val_loss = best;
  return res;
}

std::string history_csv(const std::vector<EpochRecord>& h) {
  std::ostringstream os;
  os.precision(10);
  os << "epoch,loss,lr_V,lr_Phi,val_loss\n";
  for (const auto& r : h) {
    os << r.epoch << ',' << r.loss << ',' << r.lr_V << ',' << r.lr_Phi << ',';
    if (!std::isnan(r.val_loss)) os << r.val_loss;
    os << '\n';
  }
  return os.str();
}

namespace {

constexpr char kCkptMagic[8] = {'I', 'P', 'S', 'M', 'L', 'P', '\0', '\0'};

Json net_header(const MlpPotential<float>& p) {
  return Json{{"mode", to_string(p.mode)},
              {"dim", p.dim},
              {"activation", to_string(p.net.activation())},
              {"widths", p.net.widths()}};
}

void append_weights(std::string& out, const MlpPotential<float>& p) {
  for (std::size_t l = 0; l < p.net.params().W.size(); ++l) {
    const auto& W = p.net.params().W[l];
    for (Eigen::Index i = 0; i < W.rows(); ++i)
      for (Eigen::Index j = 0; j < W.cols(); ++j) {
        const double v = W(i, j);
        out.append(reinterpret_cast<const char*>(&v), 8);
      }
    for (Eigen::Index i = 0; i < p.net.params().b[l].size(); ++i) {
      const double v = p.net.params().b[l][i];
      out.append(reinterpret_cast<const char*>(&v), 8);
    }
  }
}

MlpPotential<float> net_from_header(const Json& j, const std::string& path) {
  Fields f(j, path);
  std::string mode, act;
  int dim = 0;
  std::vector<int> widths;
  if (!f.get("mode", mode) || !f.get("dim", dim) || !f.get("activation", act) ||
      !f.get("widths", widths))
    throw Error(path + ": incomplete network header");
  f.done();
  if (widths.size() < 3) throw Error(path + ".widths: need input, hidden and output widths");
  std::vector<int> hidden(widths.begin() + 1, widths.end() - 1);
  auto p = MlpPotential<float>::make(net_mode_from_string(mode), dim, activation_from_string(act), 0,
                                     hidden);
  if (p.net.widths() != widths) throw Error(path + ".widths: inconsistent with mode and dim");
  return p;
}

}  // namespace

void write_checkpoint(const std::string& path, const MlpPotential<float>& V,
                      const MlpPotential<float>& Phi, const std::string& extra_json) {
  Json h{{"format", "ips-mlp"}, {"version", 1}, {"V", net_header(V)}, {"Phi", net_header(Phi)},
         {"meta", Json::parse(extra_json)}};
  const std::string text = h.dump();
  std::string bytes(kCkptMagic, 8);
  const std::uint64_t n = text.size();
  bytes.append(reinterpret_cast<const char*>(&n), 8);
  bytes += text;
  append_weights(bytes, V);
  append_weights(bytes, Phi);
  write_file_atomic(path, bytes);
}

void read_checkpoint(const std::string& path, MlpPotential<float>& V, MlpPotential<float>& Phi) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCkptMagic, 8) != 0)
    throw Error(path + ": not an ips checkpoint");
  std::uint64_t n = 0;
  if (!in.read(reinterpret_cast<char*>(&n), 8) || n == 0 || n > (1u << 24))
    throw Error(path + ": corrupt header length");
  std::string text(n, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(n))) throw Error(path + ": truncated header");
  const Json h = Json::parse(text);
  if (h.value("format", "") != "ips-mlp") throw Error(path + ": wrong checkpoint format");
  V = net_from_header(h.at("V"), "checkpoint.V");
  Phi = net_from_header(h.at("Phi"), "checkpoint.Phi");
  for (auto* p : {&V, &Phi})
    for (std::size_t l = 0; l < p->net.params().W.size(); ++l) {
      auto& W = p->net.params().W[l];
      auto& b = p->net.params().b[l];
      double v;
      for (Eigen::Index i = 0; i < W.rows(); ++i)
        for (Eigen::Index j = 0; j < W.cols(); ++j) {
          if (!in.read(reinterpret_cast<char*>(&v), 8)) throw Error(path + ": truncated weights");
          W(i, j) = static_cast<float>(v);
        }
      for (Eigen::Index i = 0; i < b.size(); ++i) {
        if (!in.read(reinterpret_cast<char*>(&v), 8)) throw Error(path + ": truncated weights");
        b[i] = static_cast<float>(v);
      }
    }
}

}  // namespace ips
