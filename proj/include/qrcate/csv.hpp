#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "qrcate/dataset.hpp"
#include "qrcate/error.hpp"

namespace qrcate {

/// Header row plus string cells; column lookup by name.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::optional<std::size_t> find(std::string_view name) const {
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (header[c] == name) return c;
    }
    return std::nullopt;
  }

  std::size_t column(std::string_view name) const {
    if (auto c = find(name)) return *c;
    throw MissingColumnError(std::string(name));
  }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cell.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cell.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(std::move(cell));
      cell.clear();
    } else {
      cell.push_back(c);
    }
  }
  cells.push_back(std::move(cell));
  return cells;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::optional<double> parse_double(std::string_view text) {
  text = trim(text);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) return std::nullopt;
  return value;
}

inline std::string format_double(double v) {
  char buffer[32];
  auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof buffer, v, std::chars_format::general, 17);
  (void)ec;
  return std::string(buffer, ptr);
}

}  // namespace detail

inline CsvTable parse_csv(std::istream& in) {
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) return table;
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  for (auto& h : detail::split_csv_line(line)) table.header.emplace_back(detail::trim(h));
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    auto cells = detail::split_csv_line(line);
    if (cells.size() != table.header.size()) {
      throw DataError("dimension", "row " + std::to_string(table.rows.size() + 1) + " has " +
                                       std::to_string(cells.size()) + " cells, expected " +
                                       std::to_string(table.header.size()),
                      static_cast<std::ptrdiff_t>(table.rows.size()));
    }
    table.rows.push_back(std::move(cells));
  }
  return table;
}

inline CsvTable read_csv_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FileError(path);
  return parse_csv(in);
}

/// Column mapping from a CSV file to a Dataset.
///
/// Numeric covariates come first in the listed order, followed by one
/// indicator column per category of each categorical covariate. Categories
/// are ordered lexicographically and no reference level is dropped.
struct CsvSchema {
  std::vector<std::string> x;
  std::vector<std::string> categorical;
  std::optional<std::string> s;
  int s_constant = 1;
  std::string a = "a";
  std::string y = "y";
  std::optional<std::string> e;
  double e_constant = 0.5;
};

inline double numeric_cell(const CsvTable& table, std::size_t row, std::size_t col) {
  const std::string& cell = table.rows[row][col];
  if (auto v = detail::parse_double(cell)) return *v;
  throw ParseError(row + 1, table.header[col], cell);
}

/// Encodes a table with the schema. Does not validate; see load_csv.
inline Dataset table_to_dataset(const CsvTable& table, const CsvSchema& schema) {
  std::vector<std::size_t> numeric_cols;
  for (const auto& name : schema.x) numeric_cols.push_back(table.column(name));
  std::vector<std::size_t> cat_cols;
  for (const auto& name : schema.categorical) cat_cols.push_back(table.column(name));
  const std::size_t a_col = table.column(schema.a);
  const std::size_t y_col = table.column(schema.y);
  const std::optional<std::size_t> s_col =
      schema.s ? std::optional(table.column(*schema.s)) : std::nullopt;
  const std::optional<std::size_t> e_col =
      schema.e ? std::optional(table.column(*schema.e)) : std::nullopt;

  std::vector<std::vector<std::string>> levels;
  for (std::size_t col : cat_cols) {
    std::set<std::string> seen;
    for (const auto& row : table.rows) seen.emplace(detail::trim(row[col]));
    levels.emplace_back(seen.begin(), seen.end());
  }

  Dataset data;
  const auto n = static_cast<Index>(table.rows.size());
  Index d = static_cast<Index>(numeric_cols.size());
  for (const auto& lv : levels) d += static_cast<Index>(lv.size());
  data.x.resize(n, d);
  data.s.resize(n);
  data.a.resize(n);
  data.y.resize(n);
  data.e.resize(n);

  for (const auto& name : schema.x) data.feature_names.push_back(name);
  for (std::size_t c = 0; c < cat_cols.size(); ++c) {
    for (const auto& level : levels[c]) data.feature_names.push_back(schema.categorical[c] + "=" + level);
  }

  for (Index i = 0; i < n; ++i) {
    const auto r = static_cast<std::size_t>(i);
    Index j = 0;
    for (std::size_t col : numeric_cols) data.x(i, j++) = numeric_cell(table, r, col);
    for (std::size_t c = 0; c < cat_cols.size(); ++c) {
      const std::string_view value = detail::trim(table.rows[r][cat_cols[c]]);
      for (const auto& level : levels[c]) data.x(i, j++) = (value == level) ? 1.0 : 0.0;
    }
    data.a(i) = static_cast<int>(numeric_cell(table, r, a_col));
    if (numeric_cell(table, r, a_col) != data.a(i)) {
      throw DataError("binary", "treatment must be 0 or 1 at row " + std::to_string(i), i);
    }
    data.y(i) = numeric_cell(table, r, y_col);
    if (s_col) {
      const double sv = numeric_cell(table, r, *s_col);
      data.s(i) = static_cast<int>(sv);
      if (sv != data.s(i)) {
        throw DataError("binary", "source indicator must be 0 or 1 at row " + std::to_string(i), i);
      }
    } else {
      data.s(i) = schema.s_constant;
    }
    data.e(i) = e_col ? numeric_cell(table, r, *e_col) : schema.e_constant;
  }
  return data;
}

inline Dataset load_csv(const std::string& path, const CsvSchema& schema) {
  Dataset data = table_to_dataset(read_csv_table(path), schema);
  validate(data);
  return data;
}

/// Writes feature columns followed by s, a, y, e and any extra named columns,
/// with 17 significant digits so values reload bit-for-bit.
inline void write_csv(std::ostream& out, const Dataset& data,
                      const std::vector<std::pair<std::string, Vector>>& extra = {}) {
  std::vector<std::string> names = data.feature_names;
  if (names.empty()) {
    for (Index j = 0; j < data.d(); ++j) names.push_back("x" + std::to_string(j + 1));
  }
  for (std::size_t j = 0; j < names.size(); ++j) out << names[j] << ',';
  out << "s,a,y,e";
  for (const auto& [name, values] : extra) out << ',' << name;
  out << '\n';
  for (Index i = 0; i < data.n(); ++i) {
    for (Index j = 0; j < data.d(); ++j) out << detail::format_double(data.x(i, j)) << ',';
    out << data.s(i) << ',' << data.a(i) << ',' << detail::format_double(data.y(i)) << ','
        << detail::format_double(data.e(i));
    for (const auto& [name, values] : extra) out << ',' << detail::format_double(values(i));
    out << '\n';
  }
}

inline void write_csv(const std::string& path, const Dataset& data,
                      const std::vector<std::pair<std::string, Vector>>& extra = {}) {
  std::ofstream out(path);
  if (!out) throw FileError(path);
  write_csv(out, data, extra);
}

/// Schema that reloads a file produced by write_csv.
inline CsvSchema written_schema(const Dataset& data) {
  CsvSchema schema;
  schema.x = data.feature_names;
  if (schema.x.empty()) {
    for (Index j = 0; j < data.d(); ++j) schema.x.push_back("x" + std::to_string(j + 1));
  }
  schema.s = "s";
  schema.e = "e";
  return schema;
}

}  // namespace qrcate
