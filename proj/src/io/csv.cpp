#include "boltzflow/io/csv.hpp"

#include "boltzflow/core.hpp"

#include <charconv>
#include <cstdio>
#include <sstream>

namespace boltzflow::io {

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

std::string format_number(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

CsvWriter::CsvWriter(const std::string& path, const std::string& kind, std::vector<std::string> columns, int version)
    : out_(path), columns_(std::move(columns)) {
  if (!out_) throw ConfigError("cannot write " + path);
  out_ << "# boltzflow-" << kind << " v" << version << '\n';
  for (std::size_t i = 0; i < columns_.size(); ++i) out_ << (i ? "," : "") << columns_[i];
  out_ << '\n';
}

void CsvWriter::row(const std::vector<CsvCell>& cells) {
  if (cells.size() != columns_.size())
    throw ConfigError("csv: row has " + std::to_string(cells.size()) + " cells, expected " + std::to_string(columns_.size()));
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out_ << ',';
    if (const auto* d = std::get_if<double>(&cells[i]))
      out_ << format_number(*d);
    else if (const auto* n = std::get_if<long long>(&cells[i]))
      out_ << *n;
    else
      out_ << std::get<std::string>(cells[i]);
  }
  out_ << '\n';
  ++rows_;
}

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < columns.size(); ++i)
    if (columns[i] == name) return i;
  throw ConfigError("csv: no column '" + name + "'");
}

double CsvTable::number(std::size_t row, const std::string& name) const {
  const std::string& cell = rows.at(row).at(column(name));
  double v = 0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size()) throw ConfigError("csv: '" + cell + "' is not a number");
  return v;
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path);
  CsvTable t;
  std::string line;
  const std::string prefix = "# boltzflow-";
  if (!std::getline(in, line) || line.rfind(prefix, 0) != 0) throw ConfigError("csv " + path + ": missing header line");
  const auto v = line.rfind(" v");
  if (v == std::string::npos || v < prefix.size()) throw ConfigError("csv " + path + ": malformed header line");
  t.kind = line.substr(prefix.size(), v - prefix.size());
  try {
    t.version = std::stoi(line.substr(v + 2));
  } catch (const std::exception&) {
    throw ConfigError("csv " + path + ": malformed version");
  }
  if (!std::getline(in, line)) throw ConfigError("csv " + path + ": missing column line");
  t.columns = split(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != t.columns.size()) throw ConfigError("csv " + path + ": ragged row");
    t.rows.push_back(std::move(cells));
  }
  return t;
}

}  // namespace boltzflow::io
