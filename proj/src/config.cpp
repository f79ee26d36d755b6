#include "deconf/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

extern char** environ;

namespace deconf::cli {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0;
  std::size_t b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_string(ss.str(), path.string());
}

RunConfig RunConfig::from_string(const std::string& text,
                                 const std::string& origin) {
  RunConfig cfg;
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": expected key=value, got '" + line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    }
    cfg.values_[key] = value;
  }
  return cfg;
}

void RunConfig::apply_env_overrides() {
  for (char** env = environ; env && *env; ++env) {
    const std::string entry(*env);
    if (entry.rfind("DECONF_", 0) != 0) continue;
    const std::size_t eq = entry.find('=');
    if (eq == std::string::npos) continue;
    std::string key = entry.substr(7, eq - 7);
    std::transform(key.begin(), key.end(), key.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    const std::size_t us = key.find('_');
    if (us != std::string::npos) key[us] = '.';
    if (key.empty()) continue;
    values_[key] = entry.substr(eq + 1);
  }
}

std::string RunConfig::get_str(const std::string& key,
                               const std::string& dflt) const {
  const auto it = values_.find(key);
  return it == values_.end() ? dflt : it->second;
}

double RunConfig::get_double(const std::string& key, double dflt) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return dflt;
  const std::string& s = it->second;
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ConfigError("field '" + key + "': expected a number, got '" + s + "'");
  }
  return v;
}

std::int64_t RunConfig::get_int(const std::string& key,
                                std::int64_t dflt) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return dflt;
  const std::string& s = it->second;
  std::int64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ConfigError("field '" + key + "': expected an integer, got '" + s +
                      "'");
  }
  return v;
}

std::uint64_t RunConfig::get_u64(const std::string& key,
                                 std::uint64_t dflt) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return dflt;
  const std::string& s = it->second;
  std::uint64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ConfigError("field '" + key + "': expected an unsigned integer, got '" +
                      s + "'");
  }
  return v;
}

bool RunConfig::get_bool(const std::string& key, bool dflt) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return dflt;
  const std::string& s = it->second;
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError("field '" + key + "': expected a boolean, got '" + s + "'");
}

std::vector<double> RunConfig::get_double_list(
    const std::string& key, const std::vector<double>& dflt) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return dflt;
  std::vector<double> out;
  for (const auto& item : split_list(it->second)) {
    double v = 0.0;
    const auto res = std::from_chars(item.data(), item.data() + item.size(), v);
    if (res.ec != std::errc() || res.ptr != item.data() + item.size()) {
      throw ConfigError("field '" + key + "': bad list element '" + item + "'");
    }
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("field '" + key + "': empty list");
  return out;
}

std::vector<std::uint64_t> RunConfig::get_u64_list(
    const std::string& key, const std::vector<std::uint64_t>& dflt) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return dflt;
  std::vector<std::uint64_t> out;
  for (const auto& item : split_list(it->second)) {
    std::uint64_t v = 0;
    const auto res = std::from_chars(item.data(), item.data() + item.size(), v);
    if (res.ec != std::errc() || res.ptr != item.data() + item.size()) {
      throw ConfigError("field '" + key + "': bad list element '" + item + "'");
    }
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("field '" + key + "': empty list");
  return out;
}

std::vector<std::size_t> RunConfig::get_size_list(
    const std::string& key, const std::vector<std::size_t>& dflt) const {
  std::vector<std::uint64_t> dflt64(dflt.begin(), dflt.end());
  const auto v = get_u64_list(key, dflt64);
  return std::vector<std::size_t>(v.begin(), v.end());
}

std::string RunConfig::canonical() const {
  std::string out;
  for (const auto& [k, v] : values_) {
    out += k;
    out += '=';
    out += v;
    out += '\n';
  }
  return out;
}

std::string RunConfig::hash() const {
  const std::string text = canonical();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace deconf::cli
