#include "deeplung/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "deeplung/errors.hpp"

namespace deeplung {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ParseError("config key " + key + ": not a number '" + v + "'");
  return out;
}

int to_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  int out = 0;
  try {
    out = std::stoi(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ParseError("config key " + key + ": not an integer '" + v + "'");
  return out;
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(const std::string& text) {
  KeyValueConfig cfg;
  std::istringstream lines(text);
  std::string line;
  int lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ParseError("config line " + std::to_string(lineno) + ": empty key");
    cfg.values_[key] = trim(line.substr(eq + 1));
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

const std::string& KeyValueConfig::raw(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ParseError("config key " + key + " missing");
  return it->second;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  return has(key) ? to_double(key, raw(key)) : fallback;
}

int KeyValueConfig::get_int(const std::string& key, int fallback) const {
  return has(key) ? to_int(key, raw(key)) : fallback;
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string& v = raw(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ParseError("config key " + key + ": expected true/false");
}

std::vector<double> KeyValueConfig::get_doubles(const std::string& key, std::vector<double> fallback) const {
  if (!has(key)) return fallback;
  std::vector<double> out;
  for (const auto& item : split_list(raw(key))) out.push_back(to_double(key, item));
  return out;
}

std::vector<int> KeyValueConfig::get_ints(const std::string& key, std::vector<int> fallback) const {
  if (!has(key)) return fallback;
  std::vector<int> out;
  for (const auto& item : split_list(raw(key))) out.push_back(to_int(key, item));
  return out;
}

std::string KeyValueConfig::get_string(const std::string& key, std::string fallback) const {
  return has(key) ? raw(key) : fallback;
}

void KeyValueConfig::check_known(const std::set<std::string>& known) const {
  for (const auto& [k, v] : values_) {
    if (!known.count(k)) throw UsageError("unknown config key " + k);
  }
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string format_list(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + format_double(v[i]);
  return out;
}

std::string format_list(const std::vector<int>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? ", " : "") << v[i];
  return os.str();
}

}  // namespace deeplung
