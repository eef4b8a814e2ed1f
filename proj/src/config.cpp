#include "qbi/config.hpp"

#include <charconv>
#include <limits>
#include <fstream>
#include <sstream>

namespace qbi {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  throw ConfigError(key + ": expected " + expected + ", got '" + value + "'");
}

}  // namespace

ConfigMap ConfigMap::parse(std::istream& in, const std::string& source) {
  ConfigMap cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key=value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
    if (cfg.entries_.count(key)) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": duplicate key " + key);
    }
    cfg.entries_[key] = value;
  }
  return cfg;
}

ConfigMap ConfigMap::parse_string(const std::string& text) {
  std::istringstream in(text);
  return parse(in);
}

ConfigMap ConfigMap::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  return parse(in, path);
}

void ConfigMap::set(const std::string& key, const std::string& value) { entries_[key] = value; }

bool ConfigMap::has(const std::string& key) const { return entries_.count(key) > 0; }

std::optional<std::string> ConfigMap::get(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  used_.insert(key);
  return it->second;
}

std::string ConfigMap::get_string(const std::string& key, const std::string& fallback) const {
  return get(key).value_or(fallback);
}

std::string ConfigMap::require_string(const std::string& key) const {
  auto v = get(key);
  if (!v || v->empty()) throw ConfigError(key + ": required key is missing");
  return *v;
}

double ConfigMap::get_double(const std::string& key, double fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  if (*v == "inf") return std::numeric_limits<double>::infinity();
  double out = 0.0;
  const auto* end = v->data() + v->size();
  const auto [ptr, ec] = std::from_chars(v->data(), end, out);
  if (ec != std::errc() || ptr != end) bad_value(key, *v, "a number");
  return out;
}

long long ConfigMap::get_int(const std::string& key, long long fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  long long out = 0;
  const auto* end = v->data() + v->size();
  const auto [ptr, ec] = std::from_chars(v->data(), end, out);
  if (ec != std::errc() || ptr != end) bad_value(key, *v, "an integer");
  return out;
}

std::uint64_t ConfigMap::get_uint(const std::string& key, std::uint64_t fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  std::uint64_t out = 0;
  const auto* end = v->data() + v->size();
  const auto [ptr, ec] = std::from_chars(v->data(), end, out);
  if (ec != std::errc() || ptr != end) bad_value(key, *v, "a non-negative integer");
  return out;
}

bool ConfigMap::get_bool(const std::string& key, bool fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "no") return false;
  bad_value(key, *v, "true or false");
}

std::vector<double> ConfigMap::get_doubles(const std::string& key) const {
  std::vector<double> out;
  const auto v = get(key);
  if (!v) return out;
  std::stringstream ss(*v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    double x = 0.0;
    const auto* end = item.data() + item.size();
    const auto [ptr, ec] = std::from_chars(item.data(), end, x);
    if (item.empty() || ec != std::errc() || ptr != end) bad_value(key, *v, "a comma-separated list of numbers");
    out.push_back(x);
  }
  return out;
}

std::vector<std::string> ConfigMap::unused_keys() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : entries_) {
    if (!used_.count(k)) out.push_back(k);
  }
  return out;
}

std::string ConfigMap::serialize() const {
  std::ostringstream os;
  for (const auto& [k, v] : entries_) os << k << " = " << v << "\n";
  return os.str();
}

}  // namespace qbi
