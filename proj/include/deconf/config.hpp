#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "deconf/common.hpp"

namespace deconf::cli {

// Flat namespaced key=value configuration. Environment variables of the form
// DECONF_<SECTION>_<KEY> override file values (the first underscore maps to
// the section dot, e.g. DECONF_SIM_GAMMA_THETA -> sim.gamma_theta).
class RunConfig {
 public:
  RunConfig() = default;

  static RunConfig from_file(const std::filesystem::path& path);
  static RunConfig from_string(const std::string& text,
                               const std::string& origin = "<string>");

  void apply_env_overrides();

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  void set(const std::string& key, const std::string& value) {
    values_[key] = value;
  }

  std::string get_str(const std::string& key, const std::string& dflt) const;
  double get_double(const std::string& key, double dflt) const;
  std::int64_t get_int(const std::string& key, std::int64_t dflt) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t dflt) const;
  bool get_bool(const std::string& key, bool dflt) const;
  std::vector<double> get_double_list(const std::string& key,
                                      const std::vector<double>& dflt) const;
  std::vector<std::uint64_t> get_u64_list(
      const std::string& key, const std::vector<std::uint64_t>& dflt) const;
  std::vector<std::size_t> get_size_list(
      const std::string& key, const std::vector<std::size_t>& dflt) const;

  // Canonical "key=value" lines, sorted by key.
  std::string canonical() const;
  // FNV-1a 64 over the canonical form, hex encoded.
  std::string hash() const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace deconf::cli
