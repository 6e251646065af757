#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "nbglarma/types.hpp"

namespace nbglarma {

/// Malformed input file; the message names the offending cell.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  [[nodiscard]] std::size_t column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    throw InputError("missing column '" + std::string(name) + "'");
  }
};

namespace detail {

inline bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t extra = 0;
    if (c < 0x80) extra = 0;
    else if ((c >> 5) == 0x6) extra = 1;
    else if ((c >> 4) == 0xe) extra = 2;
    else if ((c >> 3) == 0x1e) extra = 3;
    else return false;
    if (i + extra >= s.size()) return false;
    for (std::size_t k = 1; k <= extra; ++k) {
      if ((static_cast<unsigned char>(s[i + k]) >> 6) != 0x2) return false;
    }
    i += extra + 1;
  }
  return true;
}

inline std::vector<std::string> split_csv_line(std::string_view line, const std::string& where) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  bool was_quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"' && field.empty() && !was_quoted) {
      quoted = was_quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(field));
      field.clear();
      was_quoted = false;
    } else {
      field += c;
    }
  }
  if (quoted) throw InputError(where + ": unterminated quoted field");
  out.push_back(std::move(field));
  return out;
}

}  // namespace detail

/// Comma-separated, header row first, '\n' line endings, UTF-8.
inline CsvTable parse_csv(std::string_view text, const std::string& name) {
  if (!detail::valid_utf8(text)) throw InputError(name + ": not valid UTF-8");
  CsvTable table;
  std::size_t start = 0;
  std::size_t line_no = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    const std::string where = name + " line " + std::to_string(line_no);
    if (line.find('\r') != std::string_view::npos) throw InputError(where + ": carriage return; expected '\\n' line endings");
    if (line.empty()) {
      if (start >= text.size()) break;
      throw InputError(where + ": empty line");
    }
    auto fields = detail::split_csv_line(line, where);
    if (table.header.empty()) {
      table.header = std::move(fields);
      continue;
    }
    if (fields.size() != table.header.size()) {
      throw InputError(where + ": expected " + std::to_string(table.header.size()) + " fields, found " +
                       std::to_string(fields.size()));
    }
    table.rows.push_back(std::move(fields));
  }
  if (table.header.empty()) throw InputError(name + ": missing header row");
  return table;
}

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str(), path);
}

namespace detail {

inline std::string cell_name(const std::string& name, const CsvTable& t, std::size_t row, std::size_t col) {
  return name + " row " + std::to_string(row + 2) + " column '" + t.header[col] + "'";
}

}  // namespace detail

/// Parses a decimal number with '.' as separator; the whole cell must be consumed.
inline double parse_real(const std::string& cell, const std::string& where) {
  double v = 0.0;
  const char* first = cell.data();
  const char* last = first + cell.size();
  if (!cell.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (cell.empty() || ec != std::errc() || ptr != last || !std::isfinite(v)) {
    throw InputError(where + ": '" + cell + "' is not a finite decimal number");
  }
  return v;
}

inline std::int64_t parse_count(const std::string& cell, const std::string& where) {
  std::int64_t v = 0;
  const char* first = cell.data();
  const char* last = first + cell.size();
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (cell.empty() || ec != std::errc() || ptr != last) {
    throw InputError(where + ": '" + cell + "' is not an integer count");
  }
  if (v < 0) throw InputError(where + ": negative count " + cell);
  return v;
}

inline Matrix numeric_matrix(const CsvTable& t, const std::string& name) {
  Matrix m(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(t.header.size()));
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    for (std::size_t c = 0; c < t.header.size(); ++c) {
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          parse_real(t.rows[r][c], detail::cell_name(name, t, r, c));
    }
  }
  return m;
}

inline std::vector<std::int64_t> count_column(const CsvTable& t, std::size_t col, const std::string& name) {
  std::vector<std::int64_t> out(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) out[r] = parse_count(t.rows[r][col], detail::cell_name(name, t, r, col));
  return out;
}

/// Shortest round-trip decimal; NA for non-finite values.
inline std::string format_real(double v) {
  if (!std::isfinite(v)) return "NA";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, res.ptr};
}

inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  out += '"';
  return out;
}

/// Accumulates rows and writes them with '\n' endings.
class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header) : width_(header.size()) { add(header); }

  void add(const std::vector<std::string>& fields) {
    if (fields.size() != width_) throw std::logic_error("CsvWriter: row width mismatch");
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) text_ += ',';
      text_ += csv_field(fields[i]);
    }
    text_ += '\n';
  }

  [[nodiscard]] const std::string& text() const noexcept { return text_; }

 private:
  std::size_t width_;
  std::string text_;
};

}  // namespace nbglarma
