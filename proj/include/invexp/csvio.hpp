#pragma once

// Minimal strict CSV: one header line naming columns (units in the names),
// numeric rows, %.17g formatting so identical values give identical bytes.

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace invexp {

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& columns)
      : out_(path, std::ios::binary), n_columns_(columns.size()) {
    if (!out_) throw std::runtime_error("cannot open for writing: " + path);
    for (size_t i = 0; i < columns.size(); ++i) {
      if (i) out_ << ',';
      out_ << columns[i];
    }
    out_ << '\n';
  }

  void row(const std::vector<double>& values) {
    if (values.size() != n_columns_) throw std::logic_error("CsvWriter: column count mismatch");
    for (size_t i = 0; i < values.size(); ++i) {
      if (i) out_ << ',';
      out_ << format_double(values[i]);
    }
    out_ << '\n';
  }

 private:
  std::ofstream out_;
  size_t n_columns_;
};

struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  int column_index(const std::string& name) const {
    for (size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return static_cast<int>(i);
    return -1;
  }

  std::vector<double> column(const std::string& name) const {
    const int idx = column_index(name);
    if (idx < 0) throw std::runtime_error("CSV: missing column '" + name + "'");
    std::vector<double> v;
    v.reserve(rows.size());
    for (const auto& r : rows) v.push_back(r[idx]);
    return v;
  }

  static CsvTable read(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    CsvTable table;
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty CSV: " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::stringstream header(line);
    std::string cell;
    while (std::getline(header, cell, ',')) table.columns.push_back(cell);
    size_t line_no = 1;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      std::stringstream row(line);
      std::vector<double> values;
      while (std::getline(row, cell, ',')) {
        // from_chars, not stod: stod raises out_of_range on subnormals
        double v = 0.0;
        const char* begin = cell.data();
        const char* end = begin + cell.size();
        while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
        const auto [ptr, ec] = std::from_chars(begin, end, v);
        if ((ec != std::errc() && ec != std::errc::result_out_of_range) || ptr != end)
          throw std::runtime_error(path + ":" + std::to_string(line_no) + ": not a number: '" + cell + "'");
        values.push_back(v);
      }
      if (values.size() != table.columns.size())
        throw std::runtime_error(path + ":" + std::to_string(line_no) + ": wrong column count");
      table.rows.push_back(std::move(values));
    }
    return table;
  }
};

}  // namespace invexp
