#include "deeplung/csv.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "deeplung/errors.hpp"

namespace deeplung {

namespace {

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

std::optional<std::size_t> CsvTable::find_column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  return std::nullopt;
}

std::size_t CsvTable::column(const std::string& name) const {
  if (auto c = find_column(name)) return *c;
  throw ParseError("CSV is missing column " + name);
}

double CsvTable::number(std::size_t row, std::size_t col) const {
  const std::string& s = rows.at(row).at(col);
  double v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ParseError("CSV row " + std::to_string(row + 2) + " column " + header.at(col) + ": not a number '" + s + "'");
  }
  return v;
}

CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream lines(text);
  std::string line;
  bool first = true;
  while (std::getline(lines, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_row(line);
    if (first) {
      t.header = std::move(cells);
      first = false;
      continue;
    }
    if (cells.size() != t.header.size()) {
      throw ParseError("CSV row " + std::to_string(t.rows.size() + 2) + " has " + std::to_string(cells.size()) +
                       " cells, header has " + std::to_string(t.header.size()));
    }
    t.rows.push_back(std::move(cells));
  }
  if (first) throw ParseError("CSV has no header row");
  return t;
}

CsvTable read_csv(const std::string& path) { return parse_csv(read_text_file(path)); }

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot open " + path + " for writing");
  out << text;
}

std::string format_number(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace deeplung
