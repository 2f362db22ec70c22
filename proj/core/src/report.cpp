#include "rsparse/report.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "rsparse/errors.hpp"
#include "rsparse/version.hpp"

namespace rsparse {

std::string format_sig9(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

void write_report(const ReportTable& table, const std::string& path,
                  const std::string& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open report file for writing: " + path);
  for (std::size_t i = 0; i < table.columns.size(); ++i) {
    if (i) out << ',';
    out << table.columns[i];
  }
  out << '\n';
  for (const auto& row : table.rows) {
    if (row.size() != table.columns.size()) {
      throw usage_error("report row width " + std::to_string(row.size()) +
                        " does not match header width " +
                        std::to_string(table.columns.size()));
    }
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out << ',';
      out << row[i];
    }
    out << '\n';
  }
  out << "# rsparse=" << kVersion;
  if (!meta.empty()) out << ' ' << meta;
  out << '\n';
  if (!out) throw io_error("write failed: " + path);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

ReportTable read_report(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open report file: " + path);
  ReportTable table;
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto fields = split_csv_line(line);
    if (!have_header) {
      table.columns = std::move(fields);
      have_header = true;
    } else {
      table.rows.push_back(std::move(fields));
    }
  }
  if (!have_header) throw io_error("report file has no header: " + path);
  return table;
}

}  // namespace rsparse
