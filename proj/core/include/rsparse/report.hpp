#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace rsparse {

// One CSV cell rendered with 9 significant digits.
std::string format_sig9(double v);

// Tabular result record: fixed column set, one row per record.
struct ReportTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;  // each row matches columns.size()
};

// Writes a CSV with a header row, LF line endings, and a trailing
// "# rsparse=<version> ..." provenance comment carrying the seeds in `meta`.
// Numeric cells should already be formatted via format_sig9.
void write_report(const ReportTable& table, const std::string& path,
                  const std::string& meta = {});

// Reads a CSV written by write_report (provenance comments are skipped).
ReportTable read_report(const std::string& path);

// Splits one CSV line; no quoting is used by any writer in this project.
std::vector<std::string> split_csv_line(const std::string& line);

}  // namespace rsparse
