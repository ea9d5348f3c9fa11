#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "ips/serialize.hpp"
#include "ips/simulate.hpp"

using namespace ips;
namespace fs = std::filesystem;

namespace {

PotentialSpec zero_potentials(int d) {
  auto s = PotentialSpec::make(Family::Anisotropic, 2);
  auto& p = std::get<AnisotropicParams>(s.params);
  p.a.assign(d, 0.0);
  p.s.assign(d, 1.0);
  p.amplitude = 0.0;
  s.dim = d;
  return s;
}

SimConfig small_config() {
  SimConfig c;
  c.N = 4;
  c.d = 2;
  c.M = 6;
  c.T = 0.1;
  c.dt_fine = 1e-3;
  c.dt_obs = 1e-2;
  c.spec = PotentialSpec::make(Family::Reference, 2);
  c.threads = 2;
  return c;
}

std::string temp_path(const std::string& name) {
  auto dir = fs::temp_directory_path() / "ips_test_simulate";
  fs::create_directories(dir);
  return (dir / name).string();
}

std::vector<std::vector<double>> rows(const SnapshotDataset& ds, std::size_t m, std::size_t l) {
  auto s = ds.snapshot(m, l);
  std::vector<std::vector<double>> r;
  for (std::size_t i = 0; i < ds.header.N; ++i)
    r.emplace_back(s.begin() + i * ds.header.d, s.begin() + (i + 1) * ds.header.d);
  std::sort(r.begin(), r.end());
  return r;
}

}  // namespace

TEST_CASE("no drift and no noise keeps every snapshot at the initial state") {
  SimConfig c = small_config();
  c.sigma = 0.0;
  c.spec = zero_potentials(2);
  const auto ds = simulate(c);
  for (std::size_t m = 0; m < ds.header.M; ++m)
    for (std::size_t l = 1; l < ds.snapshots(); ++l) {
      auto a = ds.snapshot(m, 0), b = ds.snapshot(m, l);
      CHECK(std::equal(a.begin(), a.end(), b.begin()));
    }
}

TEST_CASE("Ornstein-Uhlenbeck moments") {
  // N = 1, V = |x|^2 / 2, so dX = -X dt + dW
  SimConfig c;
  c.N = 1;
  c.d = 2;
  c.M = 10000;
  c.T = 1.0;
  c.dt_fine = 1e-3;
  c.dt_obs = 0.5;
  c.sigma = 1.0;
  c.init_std = 0.5;
  c.spec = zero_potentials(2);
  std::get<AnisotropicParams>(c.spec.params).a = {0.5, 0.5};
  const auto ds = simulate(c);
  const double kappa = 1.0, T = 1.0;
  const double var_true = std::exp(-2 * kappa * T) * 0.25 +
                          (1 - std::exp(-2 * kappa * T)) / (2 * kappa);
  for (int k = 0; k < 2; ++k) {
    double s = 0, s2 = 0;
    for (std::size_t m = 0; m < ds.header.M; ++m) {
      const double v = ds.snapshot(m, ds.header.L)[k];
      s += v;
      s2 += v * v;
    }
    const double n = static_cast<double>(ds.header.M);
    const double mean = s / n;
    const double var = s2 / n - mean * mean;
    CHECK(std::abs(mean) <= 3 * std::sqrt(var / n));
    CHECK(std::abs(var / var_true - 1) <= 0.05);
  }
}

TEST_CASE("snapshot count and shape") {
  SimConfig c = small_config();
  c.T = 1.0;
  c.M = 2;
  const auto ds = simulate(c);
  CHECK(ds.snapshots() == 101);
  CHECK(ds.header.L == 100);
  CHECK(ds.data.size() == 2 * 101 * 4 * 2);
  CHECK(ds.header.labeled);
  CHECK(ds.header.dt == doctest::Approx(1e-2));
}

TEST_CASE("config validation names the field") {
  auto expect_field = [](SimConfig c, const std::string& field) {
    try {
      validate(c);
      FAIL("expected a validation error for " << field);
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find(field) != std::string::npos);
    }
  };
  SimConfig c = small_config();
  c.dt_obs = 1.5e-3;  // not a multiple of dt_fine
  expect_field(c, "dt_obs");
  c = small_config();
  c.protocol = Protocol::ZeroGap;  // dt_obs != dt_fine
  expect_field(c, "dt_obs");
  c = small_config();
  c.T = 0.105;
  expect_field(c, "T");
  c = small_config();
  c.sigma = -1;
  expect_field(c, "sigma");
  c = small_config();
  c.N = 0;
  expect_field(c, "N");
}

TEST_CASE("simulation is deterministic and prefix consistent") {
  SimConfig c = small_config();
  const auto a = simulate(c);
  c.threads = 1;
  const auto b = simulate(c);
  CHECK(a.data == b.data);
  c.M = 3;
  const auto prefix = simulate(c);
  const auto sliced = slice_ensembles(a, 0, 3);
  CHECK(prefix.data == sliced.data);
}

TEST_CASE("striding a fine recording equals recording at the coarse interval") {
  SimConfig c = small_config();
  c.dt_obs = c.dt_fine;
  const auto fine = simulate(c);
  for (std::size_t s : {2u, 5u, 10u}) {
    SimConfig cc = small_config();
    cc.dt_obs = c.dt_fine * static_cast<double>(s);
    const auto coarse = simulate(cc);
    const auto strided = stride_snapshots(fine, s);
    CHECK(strided.header.L == coarse.header.L);
    CHECK(strided.header.dt == doctest::Approx(coarse.header.dt));
    CHECK(strided.data == coarse.data);
  }
  CHECK_THROWS_AS(stride_snapshots(fine, 3), Error);
}

TEST_CASE("zero-gap protocol steps at the observation interval") {
  SimConfig c = small_config();
  c.protocol = Protocol::ZeroGap;
  c.dt_fine = c.dt_obs = 1e-2;
  const auto z = simulate(c);
  SimConfig g = c;
  g.protocol = Protocol::Gap;
  const auto gap = simulate(g);
  CHECK(z.data == gap.data);
  CHECK(z.header.L == 10);
}

TEST_CASE("blow-up aborts with the ensemble and step") {
  SimConfig c = small_config();
  c.spec = zero_potentials(2);
  std::get<AnisotropicParams>(c.spec.params).a = {-2000.0, -2000.0};
  try {
    simulate(c);
    FAIL("expected blow-up");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("ensemble") != std::string::npos);
    CHECK(msg.find("step") != std::string::npos);
  }
}

TEST_CASE("strip_labels permutes rows only") {
  const auto ds = simulate(small_config());
  const auto st = strip_labels(ds, 99);
  CHECK_FALSE(st.header.labeled);
  REQUIRE(st.header.permutation_seed.has_value());
  CHECK(*st.header.permutation_seed == 99);
  bool any_moved = false;
  for (std::size_t m = 0; m < ds.header.M; ++m)
    for (std::size_t l = 0; l < ds.snapshots(); ++l) {
      CHECK(rows(ds, m, l) == rows(st, m, l));
      for (int k = 0; k < 2; ++k) {
        double ma = 0, mb = 0, ca = 0, cb = 0;
        for (std::size_t i = 0; i < 4; ++i) {
          ma += ds.snapshot(m, l)[i * 2 + k];
          mb += st.snapshot(m, l)[i * 2 + k];
          ca += ds.snapshot(m, l)[i * 2] * ds.snapshot(m, l)[i * 2 + k];
          cb += st.snapshot(m, l)[i * 2] * st.snapshot(m, l)[i * 2 + k];
        }
        CHECK(ma == doctest::Approx(mb).epsilon(1e-14));
        CHECK(ca == doctest::Approx(cb).epsilon(1e-14));
      }
      auto a = ds.snapshot(m, l), b = st.snapshot(m, l);
      if (!std::equal(a.begin(), a.end(), b.begin())) any_moved = true;
    }
  CHECK(any_moved);
}

TEST_CASE("strip_labels with one particle is the identity") {
  SimConfig c = small_config();
  c.N = 1;
  const auto ds = simulate(c);
  const auto st = strip_labels(ds, 5);
  CHECK(ds.data == st.data);
}

TEST_CASE("permutations are uniform") {
  const std::size_t N = 10, snaps = 50, ensembles = 200;
  std::vector<double> count(N * N, 0.0);
  for (std::size_t m = 0; m < ensembles; ++m)
    for (const auto& p : snapshot_permutations(1234, m, snaps, N))
      for (std::size_t slot = 0; slot < N; ++slot) count[p[slot] * N + slot] += 1;
  const double trials = static_cast<double>(snaps * ensembles);
  const double band = 4.0 / std::sqrt(trials * N);
  for (double c : count) CHECK(std::abs(c / trials - 1.0 / N) <= band);
}

TEST_CASE("stripping a slice matches slicing the stripped pool") {
  const auto ds = simulate(small_config());
  const auto a = strip_labels(slice_ensembles(ds, 2, 3), 17);
  const auto b = slice_ensembles(strip_labels(ds, 17), 2, 3);
  CHECK(a.data == b.data);
}

TEST_CASE("dataset round trip") {
  auto ds = strip_labels(simulate(small_config()), 3);
  ds.header.inputs["source"] = std::string(64, 'a');
  const auto path = temp_path("roundtrip.ipsd");
  write_dataset(ds, path);
  const auto back = read_dataset(path);
  CHECK(back.data == ds.data);
  CHECK(back.header.M == ds.header.M);
  CHECK(back.header.L == ds.header.L);
  CHECK(back.header.N == ds.header.N);
  CHECK(back.header.labeled == false);
  CHECK(back.header.permutation_seed == ds.header.permutation_seed);
  CHECK(back.header.inputs == ds.header.inputs);
  CHECK(back.header.config.spec.family() == Family::Reference);
  CHECK(to_json(back.header) == to_json(ds.header));

  const auto h = read_dataset_header(path);
  CHECK(h.M == ds.header.M);
  CHECK(h.dt == ds.header.dt);
}

TEST_CASE("header read does not touch the payload") {
  const auto ds = simulate(small_config());
  const auto path = temp_path("header_only.ipsd");
  write_dataset(ds, path);
  // drop the payload: the header is still readable, the full read is not
  fs::resize_file(path, fs::file_size(path) - 8 * ds.data.size());
  CHECK(read_dataset_header(path).M == ds.header.M);
  CHECK_THROWS_AS(read_dataset(path), Error);
}

TEST_CASE("corrupted files are rejected") {
  const auto ds = simulate(small_config());
  const auto path = temp_path("corrupt.ipsd");
  write_dataset(ds, path);
  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  auto write_bytes = [&](const std::string& b) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(b.data(), static_cast<std::streamsize>(b.size()));
  };

  SUBCASE("length field") {
    auto b = bytes;
    const std::uint64_t huge = 1ull << 40;
    std::memcpy(b.data() + 8, &huge, 8);
    write_bytes(b);
    CHECK_THROWS_WITH_AS(read_dataset(path), doctest::Contains("header length"), Error);
  }
  SUBCASE("length field pointing inside the header") {
    auto b = bytes;
    const std::uint64_t small = 10;
    std::memcpy(b.data() + 8, &small, 8);
    write_bytes(b);
    CHECK_THROWS_AS(read_dataset(path), Error);
  }
  SUBCASE("magic") {
    auto b = bytes;
    b[0] = 'X';
    write_bytes(b);
    CHECK_THROWS_WITH_AS(read_dataset(path), doctest::Contains("magic"), Error);
  }
  SUBCASE("truncated payload") {
    write_bytes(bytes.substr(0, bytes.size() - 4));
    CHECK_THROWS_AS(read_dataset(path), Error);
  }
  SUBCASE("version") {
    auto j = to_json(ds.header);
    j["version"] = kDatasetVersion + 1;
    const std::string text = j.dump();
    std::string b = bytes.substr(0, 8);
    const std::uint64_t n = text.size();
    b.append(reinterpret_cast<const char*>(&n), 8);
    b += text;
    b.append(reinterpret_cast<const char*>(ds.data.data()), ds.data.size() * 8);
    write_bytes(b);
    CHECK_THROWS_WITH_AS(read_dataset(path), doctest::Contains("version"), Error);
  }
  SUBCASE("shape mismatch") {
    auto h = ds.header;
    h.M += 1;
    const std::string text = to_json(h).dump();
    std::string b = bytes.substr(0, 8);
    const std::uint64_t n = text.size();
    b.append(reinterpret_cast<const char*>(&n), 8);
    b += text;
    b.append(reinterpret_cast<const char*>(ds.data.data()), ds.data.size() * 8);
    write_bytes(b);
    CHECK_THROWS_WITH_AS(read_dataset(path), doctest::Contains("payload"), Error);
  }
}
