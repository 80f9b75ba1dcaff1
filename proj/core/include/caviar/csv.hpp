#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace caviar::csv {

/// A parsed CSV file: a header row plus string cells.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const;  // throws ValidationError if missing
  bool has_column(std::string_view name) const;
};

/// Comma-separated, RFC-4180 quoting, UTF-8, '.' decimal point. Blank lines are skipped.
Table read(const std::filesystem::path& path);
Table parse(std::istream& in, std::string_view source = "<stream>");

std::vector<std::string> split_line(std::string_view line);
std::string escape(std::string_view cell);
void write_row(std::ostream& out, const std::vector<std::string>& cells);

/// Strict decimal parse of a whole cell; throws ValidationError naming `where` on failure.
double parse_double(std::string_view cell, std::string_view where);

/// Shortest round-trip decimal representation.
std::string format_double(double value);

}  // namespace caviar::csv
