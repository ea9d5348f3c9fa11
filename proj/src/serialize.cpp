#include "ips/serialize.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace ips {
namespace {

std::string to_hex(const unsigned char* md, unsigned len) {
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

}  // namespace

Fields::Fields(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
  if (!j.is_object()) throw Error((path_.empty() ? "config" : path_) + ": expected an object");
}

const Json* Fields::object(const char* key) {
  auto it = j_.find(key);
  if (it == j_.end()) return nullptr;
  seen_.insert(key);
  if (!it->is_object()) throw Error(field(key) + ": expected an object");
  return &*it;
}

std::string Fields::field(const std::string& key) const {
  return path_.empty() ? key : path_ + "." + key;
}

void Fields::done() const {
  for (auto it = j_.begin(); it != j_.end(); ++it)
    if (!seen_.count(it.key())) throw Error(field(it.key()) + ": unknown key");
}

Json to_json(const PotentialSpec& spec) {
  Json p = Json::object();
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, ReferenceParams>) {
          p["alpha"] = v.alpha;
          p["beta"] = v.beta;
          p["centers"] = v.centers;
          p["widths"] = v.widths;
        } else if constexpr (std::is_same_v<T, SmoothnessParams>) {
          p["alpha"] = v.alpha;
          p["beta"] = v.beta;
          p["lo"] = v.lo;
          p["hi"] = v.hi;
        } else if constexpr (std::is_same_v<T, ConditioningParams>) {
          p["gamma"] = v.gamma;
        } else if constexpr (std::is_same_v<T, SingularityParams>) {
          p["k"] = v.k;
          p["epsilon"] = v.epsilon;
          p["sigma"] = v.sigma;
          p["lj_cut"] = v.cut;
          p["r_cut"] = v.r_cut;
        } else if constexpr (std::is_same_v<T, SmoothControlParams>) {
          p["D"] = v.D;
          p["a"] = v.a;
          p["r0"] = v.r0;
        } else {
          p["a"] = v.a;
          p["amplitude"] = v.amplitude;
          p["s"] = v.s;
        }
      },
      spec.params);
  return Json{{"family", to_string(spec.family())},
              {"dim", spec.dim},
              {"r_safe", spec.r_safe},
              {"smoothing_eps", spec.smoothing_eps},
              {"params", p}};
}

PotentialSpec potential_from_json(const Json& j, const std::string& path,
                                  const PotentialSpec& base) {
  Fields f(j, path);
  PotentialSpec spec = base;
  std::string fam;
  if (f.get("family", fam)) {
    Family fm;
    try {
      fm = family_from_string(fam);
    } catch (const Error& e) {
      throw Error(f.field("family") + ": " + e.what());
    }
    if (fm != base.family()) spec.params = PotentialSpec::make(fm, base.dim).params;
  }
  if (f.get("dim", spec.dim) && spec.family() == Family::Anisotropic &&
      !j.contains("params")) {
    spec.params = PotentialSpec::make(Family::Anisotropic, spec.dim).params;
  }
  f.get("r_safe", spec.r_safe);
  f.get("smoothing_eps", spec.smoothing_eps);
  if (const Json* pj = f.object("params")) {
    Fields p(*pj, f.field("params"));
    std::visit(
        [&](auto& v) {
          using T = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<T, ReferenceParams>) {
            p.get("alpha", v.alpha);
            p.get("beta", v.beta);
            p.get("centers", v.centers);
            p.get("widths", v.widths);
          } else if constexpr (std::is_same_v<T, SmoothnessParams>) {
            p.get("alpha", v.alpha);
            p.get("beta", v.beta);
            p.get("lo", v.lo);
            p.get("hi", v.hi);
          } else if constexpr (std::is_same_v<T, ConditioningParams>) {
            p.get("gamma", v.gamma);
          } else if constexpr (std::is_same_v<T, SingularityParams>) {
            p.get("k", v.k);
            p.get("epsilon", v.epsilon);
            p.get("sigma", v.sigma);
            p.get("lj_cut", v.cut);
            p.get("r_cut", v.r_cut);
          } else if constexpr (std::is_same_v<T, SmoothControlParams>) {
            p.get("D", v.D);
            p.get("a", v.a);
            p.get("r0", v.r0);
          } else {
            p.get("a", v.a);
            p.get("amplitude", v.amplitude);
            p.get("s", v.s);
          }
        },
        spec.params);
    p.done();
  }
  f.done();
  try {
    validate(spec);
  } catch (const Error& e) {
    throw Error((path.empty() ? std::string("model") : path) + ": " + e.what());
  }
  return spec;
}

Json to_json(const SimConfig& c) {
  return Json{{"N", c.N},
              {"d", c.d},
              {"M", c.M},
              {"T", c.T},
              {"sigma", c.sigma},
              {"dt_fine", c.dt_fine},
              {"dt_obs", c.dt_obs},
              {"protocol", to_string(c.protocol)},
              {"seed", c.seed},
              {"init_std", c.init_std},
              {"model", to_json(c.spec)}};
}

SimConfig sim_config_from_json(const Json& j, const std::string& path,
                               const SimConfig& base) {
  Fields f(j, path);
  SimConfig c = base;
  f.get("N", c.N);
  f.get("d", c.d);
  f.get("M", c.M);
  f.get("T", c.T);
  f.get("sigma", c.sigma);
  f.get("dt_fine", c.dt_fine);
  f.get("dt_obs", c.dt_obs);
  std::string proto;
  if (f.get("protocol", proto)) {
    try {
      c.protocol = protocol_from_string(proto);
    } catch (const Error& e) {
      throw Error(f.field("protocol") + ": " + e.what());
    }
  }
  f.get("seed", c.seed);
  f.get("init_std", c.init_std);
  f.get("threads", c.threads);
  PotentialSpec spec_base = c.spec;
  spec_base.dim = c.d;
  if (spec_base.family() == Family::Anisotropic && base.d != c.d)
    spec_base = PotentialSpec::make(Family::Anisotropic, c.d);
  c.spec = spec_base;
  if (const Json* m = f.object("model")) c.spec = potential_from_json(*m, f.field("model"), spec_base);
  f.done();
  if (c.spec.dim != c.d)
    throw Error(f.field("model.dim") + ": must equal d (" + std::to_string(c.d) + ")");
  return c;
}

Json to_json(const DatasetHeader& h) {
  Json j{{"format", "ips-snapshots"},
         {"version", h.version},
         {"shape", {h.M, h.L + 1, h.N, h.d}},
         {"dt", h.dt},
         {"labeled", h.labeled},
         {"ensemble_offset", h.ensemble_offset},
         {"config", to_json(h.config)},
         {"inputs", h.inputs}};
  if (h.permutation_seed) j["permutation_seed"] = *h.permutation_seed;
  else j["permutation_seed"] = nullptr;
  return j;
}

DatasetHeader header_from_json(const Json& j) {
  Fields f(j, "header");
  DatasetHeader h;
  std::string format;
  if (!f.get("format", format) || format != "ips-snapshots")
    throw Error("header.format: not an ips snapshot file");
  if (!f.get("version", h.version)) throw Error("header.version: missing");
  if (h.version != kDatasetVersion)
    throw Error("header.version: unsupported format version " + std::to_string(h.version));
  auto it = j.find("shape");
  if (it == j.end() || !it->is_array() || it->size() != 4)
    throw Error("header.shape: expected [M, L+1, N, d]");
  f.mark("shape");
  const auto shape = it->get<std::array<std::size_t, 4>>();
  if (shape[1] < 1) throw Error("header.shape: need at least one snapshot");
  h.M = shape[0];
  h.L = shape[1] - 1;
  h.N = shape[2];
  h.d = shape[3];
  if (!f.get("dt", h.dt)) throw Error("header.dt: missing");
  f.get("labeled", h.labeled);
  f.get("ensemble_offset", h.ensemble_offset);
  auto ps = j.find("permutation_seed");
  if (ps != j.end()) {
    f.mark("permutation_seed");
    if (!ps->is_null()) h.permutation_seed = ps->get<std::uint64_t>();
  }
  if (const Json* c = f.object("config")) h.config = sim_config_from_json(*c, "header.config");
  if (const Json* in = f.object("inputs")) {
    for (auto it = in->begin(); it != in->end(); ++it) {
      if (!it->is_string()) throw Error("header.inputs." + it.key() + ": expected a string");
      h.inputs[it.key()] = it->get<std::string>();
    }
  }
  f.done();
  return h;
}

std::string sha256_hex(const void* data, std::size_t n) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data, n, md, &len, EVP_sha256(), nullptr) != 1)
    throw Error("SHA-256 computation failed");
  return to_hex(md, len);
}

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 20);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  return to_hex(md, len);
}

void write_file_atomic(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
      out.close();
      std::filesystem::remove(tmp);
      throw Error("write failed: " + tmp);
    }
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace ips
