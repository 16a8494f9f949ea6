#pragma once

// Versioned CSV: first line `# boltzflow-<kind> v<version>`, second line the column names.
// Numbers are written with 17 significant digits so a read-back is exact.

#include <fstream>
#include <string>
#include <variant>
#include <vector>

namespace boltzflow::io {

using CsvCell = std::variant<double, long long, std::string>;

class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::string& kind, std::vector<std::string> columns, int version = 1);

  /// Throws ConfigError when the cell count differs from the column count.
  void row(const std::vector<CsvCell>& cells);
  std::size_t rows() const { return rows_; }

 private:
  std::ofstream out_;
  std::vector<std::string> columns_;
  std::size_t rows_ = 0;
};

struct CsvTable {
  std::string kind;
  int version = 0;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  /// Index of a named column; throws ConfigError if absent.
  std::size_t column(const std::string& name) const;
  double number(std::size_t row, const std::string& name) const;
};

std::string format_number(double x);

/// Throws ConfigError on a missing or malformed header line or a ragged row.
CsvTable read_csv(const std::string& path);

}  // namespace boltzflow::io
