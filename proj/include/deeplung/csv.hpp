#pragma once

#include <optional>
#include <string>
#include <vector>

namespace deeplung {

/// Plain comma separated table with a header row. No quoting.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::optional<std::size_t> find_column(const std::string& name) const;
  /// Throws ParseError naming the missing column.
  std::size_t column(const std::string& name) const;
  double number(std::size_t row, std::size_t col) const;
};

CsvTable parse_csv(const std::string& text);
CsvTable read_csv(const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

/// Shortest round-trip decimal form.
std::string format_number(double v);

}  // namespace deeplung
