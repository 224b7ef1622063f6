#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace vdiff {

// Flat `key = value` config files: UTF-8 text, one pair per line, `#` starts
// a comment, blank lines ignored. Consumers read the keys they understand and
// then call check_all_consumed(), which rejects anything left over — unknown
// keys are errors, not silent no-ops.
class Config {
 public:
  static Config parse_file(const std::string& path);
  static Config parse_string(const std::string& text, const std::string& origin = "<string>");

  bool has(const std::string& key) const;

  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  long get_long(const std::string& key) const;
  long get_long(const std::string& key, long fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  std::vector<long> get_long_list(const std::string& key, const std::vector<long>& fallback) const;

  // Overrides / programmatic construction.
  void set(const std::string& key, const std::string& value);

  void check_all_consumed() const;
  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> consumed_;
  std::string origin_;
};

}  // namespace vdiff
