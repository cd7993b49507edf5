#pragma once

#include <string>
#include <vector>

namespace nkpc::harness {

/// Shortest text with 17 significant digits (round-trips every double).
std::string format_double(double v);

using CsvRow = std::vector<std::string>;

struct CsvTable {
  CsvRow header;
  std::vector<CsvRow> rows;

  std::string to_string() const;
  void write(const std::string& path) const;
};

/// Splits CSV text into header and rows. Fields never contain commas or quotes.
CsvTable parse_csv(const std::string& text);
double parse_double(const std::string& field);

}  // namespace nkpc::harness
