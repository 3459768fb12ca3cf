#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

namespace deeplung {

/// `key = value` lines; `#` starts a comment; lists are comma separated.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(const std::string& text);
  static KeyValueConfig load(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& raw(const std::string& key) const;

  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_doubles(const std::string& key, std::vector<double> fallback) const;
  std::vector<int> get_ints(const std::string& key, std::vector<int> fallback) const;
  std::string get_string(const std::string& key, std::string fallback) const;

  /// Throws UsageError naming the first key not in `known`.
  void check_known(const std::set<std::string>& known) const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

/// Shortest text that parses back to the same double.
std::string format_double(double v);
std::string format_list(const std::vector<double>& v);
std::string format_list(const std::vector<int>& v);

}  // namespace deeplung
