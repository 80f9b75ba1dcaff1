#include "caviar/csv.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

#include "caviar/domain.hpp"

namespace caviar::csv {

std::size_t Table::column(std::string_view name) const {
  auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) {
    throw ValidationError("CSV column '" + std::string(name) + "' not found");
  }
  return static_cast<std::size_t>(it - header.begin());
}

bool Table::has_column(std::string_view name) const {
  return std::find(header.begin(), header.end(), name) != header.end();
}

std::vector<std::string> split_line(std::string_view line) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (quoted) {
    throw ValidationError("unterminated quoted CSV field");
  }
  cells.push_back(std::move(cur));
  return cells;
}

Table parse(std::istream& in, std::string_view source) {
  Table t;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (lineno == 1 && line.starts_with("\xEF\xBB\xBF")) {
      line.erase(0, 3);
    }
    if (line.empty()) {
      continue;
    }
    // An odd quote count means a quoted field continues on the next physical line.
    std::string next;
    while (std::count(line.begin(), line.end(), '"') % 2 == 1 && std::getline(in, next)) {
      ++lineno;
      if (!next.empty() && next.back() == '\r') {
        next.pop_back();
      }
      line += '\n';
      line += next;
    }
    auto cells = split_line(line);
    if (!have_header) {
      t.header = std::move(cells);
      have_header = true;
      continue;
    }
    if (cells.size() != t.header.size()) {
      throw ValidationError(std::string(source) + ":" + std::to_string(lineno) + ": expected " +
                            std::to_string(t.header.size()) + " fields, found " + std::to_string(cells.size()));
    }
    t.rows.push_back(std::move(cells));
  }
  if (!have_header) {
    throw ValidationError(std::string(source) + ": missing CSV header");
  }
  return t;
}

Table read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ValidationError("cannot open '" + path.string() + "'");
  }
  return parse(in, path.string());
}

std::string escape(std::string_view cell) {
  if (cell.find_first_of(",\"\n\r") == std::string_view::npos) {
    return std::string(cell);
  }
  std::string out = "\"";
  for (char c : cell) {
    if (c == '"') {
      out += "\"\"";
    } else {
      out.push_back(c);
    }
  }
  out.push_back('"');
  return out;
}

void write_row(std::ostream& out, const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i > 0) {
      out << ',';
    }
    out << escape(cells[i]);
  }
  out << '\n';
}

double parse_double(std::string_view cell, std::string_view where) {
  while (!cell.empty() && cell.front() == ' ') cell.remove_prefix(1);
  while (!cell.empty() && cell.back() == ' ') cell.remove_suffix(1);
  if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
  if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size()) {
    throw ValidationError("cannot parse '" + std::string(cell) + "' as a number (" + std::string(where) + ")");
  }
  return value;
}

std::string format_double(double value) {
  if (std::isnan(value)) {
    return "NA";
  }
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

}  // namespace caviar::csv
