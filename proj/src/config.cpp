#include "vdiff/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace vdiff {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

Config Config::parse_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  return parse_string(buf.str(), path);
}

Config Config::parse_string(const std::string& text, const std::string& origin) {
  Config c;
  c.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::string t = trim(line);
    if (t.empty()) continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(origin + ":" + std::to_string(lineno) +
                               ": expected `key = value`, got `" + t + "`");
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (key.empty())
      throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": empty key");
    if (c.values_.count(key))
      throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": duplicate key `" +
                               key + "`");
    c.values_[key] = value;
  }
  return c;
}

bool Config::has(const std::string& key) const { return values_.count(key) != 0; }

std::string Config::get_string(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end())
    throw std::runtime_error(origin_ + ": missing required key `" + key + "`");
  consumed_.insert(key);
  return it->second;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  consumed_.insert(key);
  return it->second;
}

long Config::get_long(const std::string& key) const {
  std::string v = get_string(key);
  size_t pos = 0;
  long out = std::stol(v, &pos);
  if (pos != v.size()) throw std::runtime_error(origin_ + ": key `" + key + "`: not an integer: " + v);
  return out;
}

long Config::get_long(const std::string& key, long fallback) const {
  if (!has(key)) return fallback;
  return get_long(key);
}

double Config::get_double(const std::string& key) const {
  std::string v = get_string(key);
  size_t pos = 0;
  double out = std::stod(v, &pos);
  if (pos != v.size()) throw std::runtime_error(origin_ + ": key `" + key + "`: not a number: " + v);
  return out;
}

double Config::get_double(const std::string& key, double fallback) const {
  if (!has(key)) return fallback;
  return get_double(key);
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) const {
  if (!has(key)) return fallback;
  std::string v = get_string(key);
  size_t pos = 0;
  unsigned long long out = std::stoull(v, &pos);
  if (pos != v.size()) throw std::runtime_error(origin_ + ": key `" + key + "`: not an integer: " + v);
  return static_cast<std::uint64_t>(out);
}

std::vector<long> Config::get_long_list(const std::string& key,
                                        const std::vector<long>& fallback) const {
  if (!has(key)) return fallback;
  std::string v = get_string(key);
  std::vector<long> out;
  std::istringstream in(v);
  std::string item;
  while (std::getline(in, item, ',')) {
    std::string t = item;
    size_t a = t.find_first_not_of(" \t");
    size_t b = t.find_last_not_of(" \t");
    if (a == std::string::npos)
      throw std::runtime_error(origin_ + ": key `" + key + "`: empty list element");
    t = t.substr(a, b - a + 1);
    size_t pos = 0;
    out.push_back(std::stol(t, &pos));
    if (pos != t.size())
      throw std::runtime_error(origin_ + ": key `" + key + "`: bad list element: " + t);
  }
  if (out.empty()) throw std::runtime_error(origin_ + ": key `" + key + "`: empty list");
  return out;
}

void Config::set(const std::string& key, const std::string& value) { values_[key] = value; }

void Config::check_all_consumed() const {
  std::string unknown;
  for (const auto& [k, v] : values_) {
    if (!consumed_.count(k)) {
      if (!unknown.empty()) unknown += ", ";
      unknown += k;
    }
  }
  if (!unknown.empty())
    throw std::runtime_error(origin_ + ": unknown keys: " + unknown);
}

}  // namespace vdiff
