#pragma once

// Deterministic per-stream random numbers. Each stream is an mt19937_64
// seeded from a SplitMix64 hash of (seed, stream index); normals come from
// the Box-Muller transform on 53-bit uniforms.

#include <cstdint>
#include <random>

namespace ips {

std::uint64_t splitmix64(std::uint64_t x);

/// Seed of substream `index` of master seed `seed`.
std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t index);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}
  Rng(std::uint64_t seed, std::uint64_t index) : eng_(stream_seed(seed, index)) {}

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  std::uint64_t bits() { return eng_(); }

 private:
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace ips
