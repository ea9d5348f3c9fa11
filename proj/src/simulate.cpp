#include "ips/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "ips/rng.hpp"

namespace ips {
namespace {

constexpr double kBlowUp = 1e6;

int checked_ratio(double num, double den, const char* what) {
  const double q = num / den;
  const double r = std::round(q);
  if (r < 1.0 || std::abs(q - r) > 1e-9 * r) throw Error(std::string(what));
  return static_cast<int>(r);
}

}  // namespace

std::string to_string(Protocol p) { return p == Protocol::Gap ? "gap" : "zero_gap"; }

Protocol protocol_from_string(std::string_view s) {
  if (s == "gap") return Protocol::Gap;
  if (s == "zero_gap" || s == "zero-gap") return Protocol::ZeroGap;
  throw Error("unknown protocol '" + std::string(s) + "' (expected gap or zero_gap)");
}

int SimConfig::L() const {
  return checked_ratio(T, dt_obs, "T must be a positive integer multiple of dt_obs");
}

int SimConfig::stride() const {
  if (protocol == Protocol::ZeroGap) return 1;
  return checked_ratio(dt_obs, dt_fine, "dt_obs must be an integer multiple of dt_fine");
}

void validate(const SimConfig& c) {
  auto fail = [](const std::string& field, const std::string& msg) {
    throw Error("sim." + field + ": " + msg);
  };
  if (c.N < 1) fail("N", "must be >= 1");
  if (c.d < 1) fail("d", "must be >= 1");
  if (c.M < 1) fail("M", "must be >= 1");
  if (!(c.T > 0.0) || !std::isfinite(c.T)) fail("T", "must be positive and finite");
  if (!(c.sigma >= 0.0) || !std::isfinite(c.sigma)) fail("sigma", "must be >= 0");
  if (!(c.dt_obs > 0.0)) fail("dt_obs", "must be > 0");
  if (!(c.dt_fine > 0.0)) fail("dt_fine", "must be > 0");
  if (!(c.init_std >= 0.0) || !std::isfinite(c.init_std)) fail("init_std", "must be >= 0");
  if (c.spec.dim != c.d) fail("model.dim", "must equal d");
  try {
    c.L();
  } catch (const Error& e) {
    fail("dt_obs", e.what());
  }
  if (c.protocol == Protocol::ZeroGap) {
    if (std::abs(c.dt_fine - c.dt_obs) > 1e-12 * c.dt_obs)
      fail("dt_fine", "zero_gap protocol requires dt_fine == dt_obs");
  } else {
    try {
      c.stride();
    } catch (const Error& e) {
      fail("dt_fine", e.what());
    }
  }
  try {
    validate(c.spec);
  } catch (const Error& e) {
    fail("model", e.what());
  }
}

void drift(const PotentialSpec& spec, int N, int d, std::span<const double> x,
           std::span<double> out) {
  thread_local std::vector<double> gbuf, zbuf;
  gbuf.resize(d);
  zbuf.resize(d);
  std::span<double> g(gbuf), z(zbuf);
  for (int i = 0; i < N; ++i) {
    potential_grad(spec, PotentialKind::V, x.subspan(i * d, d), g);
    for (int k = 0; k < d; ++k) out[i * d + k] = -g[k];
  }
  if (N < 2) return;
  const double inv_n = 1.0 / N;
  const bool radial = is_radial(spec);
  for (int i = 0; i < N; ++i) {
    for (int j = i + 1; j < N; ++j) {
      for (int k = 0; k < d; ++k) z[k] = x[i * d + k] - x[j * d + k];
      if (radial) {
        const double r = std::sqrt(norm2(z));
        if (r == 0.0) continue;
        const double s = radial_derivative(spec, PotentialKind::Phi, r) / r;
        for (int k = 0; k < d; ++k) g[k] = s * z[k];
      } else {
        potential_grad(spec, PotentialKind::Phi, z, g);
      }
      // grad Phi is odd, so the (j, i) term is the negative of the (i, j) term.
      for (int k = 0; k < d; ++k) {
        out[i * d + k] -= inv_n * g[k];
        out[j * d + k] += inv_n * g[k];
      }
    }
  }
}

void euler_step(const PotentialSpec& spec, int N, int d, double sigma, double dt,
                std::span<double> x, std::span<const double> noise,
                std::span<double> drift_scratch) {
  drift(spec, N, d, x, drift_scratch);
  const double sq = sigma * std::sqrt(dt);
  for (std::size_t k = 0; k < x.size(); ++k)
    x[k] += drift_scratch[k] * dt + sq * noise[k];
}

SnapshotDataset simulate(const SimConfig& cfg) {
  validate(cfg);
  const int L = cfg.L();
  const int stride = cfg.stride();
  const double dt = cfg.protocol == Protocol::ZeroGap ? cfg.dt_obs : cfg.dt_fine;

  SnapshotDataset ds;
  auto& h = ds.header;
  h.config = cfg;
  h.M = cfg.M;
  h.L = L;
  h.N = cfg.N;
  h.d = cfg.d;
  h.dt = cfg.dt_obs;
  h.labeled = true;
  ds.data.assign(h.M * (h.L + 1) * h.N * h.d, 0.0);

  const std::size_t nd = h.N * h.d;
  const int threads = cfg.threads > 0 ? cfg.threads : default_threads();
  parallel_for(h.M, threads, [&](std::size_t m) {
    Rng rng(cfg.seed, m);
    std::vector<double> x(nd), noise(nd), scratch(nd);
    for (auto& v : x) v = cfg.init_std * rng.normal();
    std::copy(x.begin(), x.end(), ds.snapshot(m, 0).begin());
    for (int l = 0; l < L; ++l) {
      for (int s = 0; s < stride; ++s) {
        for (auto& v : noise) v = rng.normal();
        euler_step(cfg.spec, cfg.N, cfg.d, cfg.sigma, dt, x, noise, scratch);
        for (double v : x) {
          if (!(std::abs(v) <= kBlowUp))
            throw Error("simulation blew up at ensemble " + std::to_string(m) + ", fine step " +
                        std::to_string(static_cast<long long>(l) * stride + s + 1));
        }
      }
      std::copy(x.begin(), x.end(), ds.snapshot(m, l + 1).begin());
    }
  });
  return ds;
}

std::vector<std::vector<std::size_t>> snapshot_permutations(std::uint64_t seed,
                                                            std::size_t m,
                                                            std::size_t snapshots,
                                                            std::size_t N) {
  Rng rng(seed, m);
  std::vector<std::vector<std::size_t>> perms(snapshots, std::vector<std::size_t>(N));
  for (auto& p : perms) {
    std::iota(p.begin(), p.end(), std::size_t{0});
    for (std::size_t i = N; i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
  }
  return perms;
}

SnapshotDataset strip_labels(const SnapshotDataset& ds, std::uint64_t seed) {
  SnapshotDataset out = ds;
  out.header.labeled = false;
  out.header.permutation_seed = seed;
  const std::size_t d = ds.header.d;
  const std::size_t N = ds.header.N;
  for (std::size_t m = 0; m < ds.header.M; ++m) {
    const auto perms =
        snapshot_permutations(seed, ds.header.ensemble_offset + m, ds.snapshots(), N);
    for (std::size_t l = 0; l < ds.snapshots(); ++l) {
      auto src = ds.snapshot(m, l);
      auto dst = out.snapshot(m, l);
      for (std::size_t p = 0; p < N; ++p)
        std::copy_n(src.begin() + perms[l][p] * d, d, dst.begin() + p * d);
    }
  }
  return out;
}

SnapshotDataset slice_ensembles(const SnapshotDataset& ds, std::size_t begin,
                                std::size_t count) {
  if (begin + count > ds.header.M) throw Error("ensemble slice out of range");
  SnapshotDataset out;
  out.header = ds.header;
  out.header.M = count;
  out.header.config.M = static_cast<int>(count);
  out.header.ensemble_offset = ds.header.ensemble_offset + begin;
  const std::size_t per = ds.snapshots() * ds.snapshot_size();
  out.data.assign(ds.data.begin() + begin * per, ds.data.begin() + (begin + count) * per);
  return out;
}

SnapshotDataset stride_snapshots(const SnapshotDataset& ds, std::size_t s) {
  if (s < 1 || ds.header.L % s != 0)
    throw Error("snapshot stride must divide L (" + std::to_string(ds.header.L) + ")");
  SnapshotDataset out;
  out.header = ds.header;
  out.header.L = ds.header.L / s;
  out.header.dt = ds.header.dt * static_cast<double>(s);
  out.header.config.dt_obs = out.header.dt;
  out.data.resize(out.header.M * out.snapshots() * out.snapshot_size());
  for (std::size_t m = 0; m < out.header.M; ++m)
    for (std::size_t l = 0; l < out.snapshots(); ++l) {
      auto src = ds.snapshot(m, l * s);
      std::copy(src.begin(), src.end(), out.snapshot(m, l).begin());
    }
  return out;
}

}  // namespace ips
