#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "ips/serialize.hpp"
#include "ips/simulate.hpp"

namespace ips {
namespace {

constexpr char kMagic[8] = {'I', 'P', 'S', 'D', 'A', 'T', 'A', '\0'};
constexpr std::uint64_t kMaxHeader = 1 << 24;

static_assert(std::endian::native == std::endian::little,
              "dataset I/O assumes a little-endian host");

void put_u64(std::string& s, std::uint64_t v) {
  char b[8];
  std::memcpy(b, &v, 8);
  s.append(b, 8);
}

struct Framed {
  DatasetHeader header;
  std::uint64_t payload_offset = 0;
};

Framed read_frame(std::ifstream& in, const std::string& path) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw Error(path + ": not an ips dataset (bad magic)");
  std::uint64_t n = 0;
  if (!in.read(reinterpret_cast<char*>(&n), 8)) throw Error(path + ": truncated header length");
  if (n == 0 || n > kMaxHeader) throw Error(path + ": corrupt header length " + std::to_string(n));
  std::string text(n, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(n)))
    throw Error(path + ": truncated header (declared " + std::to_string(n) + " bytes)");
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(path + ": header parse error: " + e.what());
  }
  return {header_from_json(j), 16 + n};
}

}  // namespace

void write_dataset(const SnapshotDataset& ds, const std::string& path) {
  const auto& h = ds.header;
  if (ds.data.size() != h.M * (h.L + 1) * h.N * h.d)
    throw Error("dataset shape does not match its header");
  const std::string text = to_json(h).dump();
  std::string bytes(kMagic, 8);
  put_u64(bytes, text.size());
  bytes += text;
  const auto* raw = reinterpret_cast<const char*>(ds.data.data());
  bytes.append(raw, ds.data.size() * sizeof(double));
  write_file_atomic(path, bytes);
}

DatasetHeader read_dataset_header(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  return read_frame(in, path).header;
}

SnapshotDataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw Error("cannot open " + path);
  const auto size = static_cast<std::uint64_t>(in.tellg());
  in.seekg(0);
  Framed f = read_frame(in, path);
  SnapshotDataset ds;
  ds.header = f.header;
  const std::uint64_t count = f.header.M * (f.header.L + 1) * f.header.N * f.header.d;
  if (size - f.payload_offset != count * sizeof(double))
    throw Error(path + ": payload has " + std::to_string(size - f.payload_offset) +
                " bytes, header shape needs " + std::to_string(count * sizeof(double)));
  ds.data.resize(count);
  in.read(reinterpret_cast<char*>(ds.data.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) throw Error(path + ": truncated payload");
  for (double v : ds.data)
    if (!std::isfinite(v)) throw Error(path + ": non-finite entry in payload");
  return ds;
}

}  // namespace ips
