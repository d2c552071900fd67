#pragma once

#include <map>
#include <string>
#include <vector>

namespace deptest::harness {

/// Flat key=value configuration with [section] headers; a key inside
/// [section] is addressed as "section.key". Lines starting with '#' or ';'
/// are comments.
class Config {
 public:
  Config() = default;
  static Config load(const std::string& path);

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string str(const std::string& key, const std::string& fallback = "") const;
  double num(const std::string& key, double fallback) const;
  long long integer(const std::string& key, long long fallback) const;
  bool flag(const std::string& key, bool fallback) const;
  std::vector<int> int_list(const std::string& key) const;          // comma separated
  std::vector<std::string> str_list(const std::string& key) const;  // comma separated

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace deptest::harness
