#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace emitterlab::csv {

/// Numeric CSV table: one header row, comma separated, '.' decimal point.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  /// Index of a header column; throws FormatError when absent.
  std::size_t column(std::string_view name) const;
  bool has_column(std::string_view name) const;
  std::vector<double> values(std::string_view name) const;
};

Table read(std::istream& in);
Table read_file(const std::filesystem::path& path);

/// Shortest round-trippable-at-12-digits text for a double.
std::string format_number(double value);

}  // namespace emitterlab::csv
