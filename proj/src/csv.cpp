#include "qmagpi/csv.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "qmagpi/error.hpp"

namespace qmagpi::csv {

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) {
    while (!field.empty() && (field.back() == '\r' || field.back() == ' ')) field.pop_back();
    while (!field.empty() && field.front() == ' ') field.erase(field.begin());
    out.push_back(field);
  }
  return out;
}

}  // namespace

std::string format_number(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw Error("csv: number formatting failed");
  return std::string(buf, end);
}

void write_columns(const std::filesystem::path& path, const std::vector<std::string>& header,
                   const std::vector<const std::vector<double>*>& columns) {
  if (header.size() != columns.size()) throw InvalidArgument("csv: header/column count mismatch");
  const std::size_t rows = columns.empty() ? 0 : columns.front()->size();
  for (const auto* c : columns) {
    if (c->size() != rows) throw InvalidArgument("csv: columns differ in length");
  }
  std::ofstream out(path);
  if (!out) throw Error("csv: cannot open " + path.string() + " for writing");
  for (std::size_t j = 0; j < header.size(); ++j) out << (j ? "," : "") << header[j];
  out << '\n';
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < columns.size(); ++j) out << (j ? "," : "") << format_number((*columns[j])[i]);
    out << '\n';
  }
  if (!out) throw Error("csv: write failed for " + path.string());
}

Table read(const std::filesystem::path& path, const std::vector<std::string>& expected) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("csv: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw InvalidArgument("csv: " + path.string() + " is empty (header required)");
  Table table;
  table.header = split(line);
  if (!expected.empty() && table.header != expected) {
    std::string want;
    for (std::size_t j = 0; j < expected.size(); ++j) want += (j ? "," : "") + expected[j];
    throw InvalidArgument("csv: " + path.string() + " header must be '" + want + "'");
  }
  table.columns.resize(table.header.size());
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto fields = split(line);
    if (fields.size() != table.header.size()) {
      throw InvalidArgument("csv: " + path.string() + ":" + std::to_string(lineno) + ": wrong field count");
    }
    for (std::size_t j = 0; j < fields.size(); ++j) {
      double v = 0.0;
      const auto& f = fields[j];
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || ptr != f.data() + f.size()) {
        throw InvalidArgument("csv: " + path.string() + ":" + std::to_string(lineno) + ": bad number '" + f + "'");
      }
      table.columns[j].push_back(v);
    }
  }
  return table;
}

}  // namespace qmagpi::csv
