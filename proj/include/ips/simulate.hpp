#pragma once

// Euler-Maruyama ensembles, snapshot recording, label destruction, dataset I/O.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ips/models.hpp"

namespace ips {

enum class Protocol { Gap, ZeroGap };

std::string to_string(Protocol p);
Protocol protocol_from_string(std::string_view s);

struct SimConfig {
  int N = 10;
  int d = 2;
  int M = 100;
  double T = 1.0;
  double sigma = 1.0;
  double dt_fine = 1e-3;
  double dt_obs = 1e-2;
  Protocol protocol = Protocol::Gap;
  std::uint64_t seed = 42;
  double init_std = 0.5;
  PotentialSpec spec;
  int threads = 0;  // 0: default_threads()

  /// Number of observation intervals T / dt_obs.
  int L() const;
  /// Fine steps per observation interval.
  int stride() const;
};

/// Throws ips::Error naming the offending field.
void validate(const SimConfig& cfg);

inline constexpr int kDatasetVersion = 1;

struct DatasetHeader {
  SimConfig config;
  std::size_t M = 0, L = 0, N = 0, d = 0;  // data shape is [M, L+1, N, d]
  double dt = 0.0;                         // observation interval of this array
  bool labeled = true;
  std::optional<std::uint64_t> permutation_seed;
  std::size_t ensemble_offset = 0;  // index of the first ensemble in the source pool
  std::map<std::string, std::string> inputs;  // provenance: source name -> sha256
  int version = kDatasetVersion;
};

struct SnapshotDataset {
  DatasetHeader header;
  std::vector<double> data;

  std::size_t snapshot_size() const { return header.N * header.d; }
  std::size_t snapshots() const { return header.L + 1; }
  std::size_t index(std::size_t m, std::size_t l) const {
    return (m * snapshots() + l) * snapshot_size();
  }
  /// Configuration [N, d] row-major at ensemble m, snapshot l.
  std::span<const double> snapshot(std::size_t m, std::size_t l) const {
    return {data.data() + index(m, l), snapshot_size()};
  }
  std::span<double> snapshot(std::size_t m, std::size_t l) {
    return {data.data() + index(m, l), snapshot_size()};
  }
  double sigma() const { return header.config.sigma; }
  double T() const { return header.dt * static_cast<double>(header.L); }
};

/// Simulates the labeled ensemble. Ensemble m uses the substream (seed, m), so
/// the first M' ensembles do not depend on M.
SnapshotDataset simulate(const SimConfig& cfg);

/// One fine-step Euler-Maruyama update of a single configuration in place;
/// `noise` is a standard-normal vector of length N*d.
void euler_step(const PotentialSpec& spec, int N, int d, double sigma, double dt,
                std::span<double> x, std::span<const double> noise,
                std::span<double> drift_scratch);

/// Drift b_i = -grad V(x_i) - (1/N) sum_{j != i} grad Phi(x_i - x_j).
void drift(const PotentialSpec& spec, int N, int d, std::span<const double> x,
           std::span<double> out);

/// Permutations used by strip_labels for ensemble m (pool index): entry
/// [l][p] is the original particle index placed in slot p of snapshot l.
std::vector<std::vector<std::size_t>> snapshot_permutations(std::uint64_t seed,
                                                            std::size_t m,
                                                            std::size_t snapshots,
                                                            std::size_t N);

/// Independent uniform permutation of the particle axis for every (m, l).
SnapshotDataset strip_labels(const SnapshotDataset& ds, std::uint64_t seed);

/// Ensembles [begin, begin+count).
SnapshotDataset slice_ensembles(const SnapshotDataset& ds, std::size_t begin,
                                std::size_t count);
/// Every s-th snapshot; dt scales by s. Requires L divisible by s.
SnapshotDataset stride_snapshots(const SnapshotDataset& ds, std::size_t s);

/// Binary layout: 8-byte magic "IPSDATA\0", uint64 LE header length n, n bytes
/// of UTF-8 JSON header, raw LE float64 array [M, L+1, N, d].
void write_dataset(const SnapshotDataset& ds, const std::string& path);
SnapshotDataset read_dataset(const std::string& path);
DatasetHeader read_dataset_header(const std::string& path);

}  // namespace ips
