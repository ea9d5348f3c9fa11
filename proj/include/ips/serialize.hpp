#pragma once

// JSON encodings of configs and headers, strict readers with field-path
// errors, and SHA-256 content hashes.

#include <array>
#include <cstddef>
#include <set>
#include <string>
#include <type_traits>

#include "json.hpp"
#include "ips/common.hpp"
#include "ips/models.hpp"
#include "ips/simulate.hpp"

namespace ips {

using Json = nlohmann::ordered_json;

/// Reads keys out of a JSON object, remembers which were consumed, and
/// rejects leftovers in done(). Errors carry the dotted field path.
class Fields {
 public:
  Fields(const Json& j, std::string path);

  template <class T>
  bool get(const char* key, T& out) {
    auto it = j_.find(key);
    if (it == j_.end()) return false;
    seen_.insert(key);
    bool ok = true;
    if constexpr (std::is_same_v<T, bool>) ok = it->is_boolean();
    else if constexpr (std::is_integral_v<T>) ok = it->is_number_integer();
    else if constexpr (std::is_floating_point_v<T>) ok = it->is_number();
    else if constexpr (std::is_same_v<T, std::string>) ok = it->is_string();
    if (!ok) throw Error(field(key) + ": expected " + type_name<T>() + ", got " + it->dump());
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception&) {
      throw Error(field(key) + ": expected " + type_name<T>() + ", got " +
                  it->dump());
    }
    return true;
  }

  template <std::size_t K>
  bool get(const char* key, std::array<double, K>& out) {
    auto it = j_.find(key);
    if (it == j_.end()) return false;
    seen_.insert(key);
    if (!it->is_array() || it->size() != K)
      throw Error(field(key) + ": expected an array of " + std::to_string(K) +
                  " numbers");
    for (std::size_t k = 0; k < K; ++k) {
      if (!(*it)[k].is_number()) throw Error(field(key) + ": expected numbers");
      out[k] = (*it)[k].template get<double>();
    }
    return true;
  }

  /// Sub-object, or nullptr when absent.
  const Json* object(const char* key);
  void mark(const char* key) { seen_.insert(key); }
  std::string field(const std::string& key) const;
  const std::string& path() const { return path_; }
  void done() const;

 private:
  template <class T>
  static const char* type_name() {
    if constexpr (std::is_same_v<T, bool>) return "a boolean";
    else if constexpr (std::is_same_v<T, std::string>) return "a string";
    else if constexpr (std::is_integral_v<T>) return "an integer";
    else if constexpr (std::is_floating_point_v<T>) return "a number";
    else return "a value of the declared type";
  }

  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

Json to_json(const PotentialSpec& spec);
/// `base` supplies defaults for absent fields; a changed family resets params.
PotentialSpec potential_from_json(const Json& j, const std::string& path,
                                  const PotentialSpec& base = {});

Json to_json(const SimConfig& cfg);
SimConfig sim_config_from_json(const Json& j, const std::string& path,
                               const SimConfig& base = {});

Json to_json(const DatasetHeader& h);
DatasetHeader header_from_json(const Json& j);

std::string sha256_hex(const void* data, std::size_t n);
std::string sha256_file(const std::string& path);

/// Writes to path.tmp then renames, so readers never see partial files.
void write_file_atomic(const std::string& path, const std::string& bytes);

}  // namespace ips
