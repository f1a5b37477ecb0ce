#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace qmagpi::csv {

/// Shortest round-trip decimal representation; stable across runs.
std::string format_number(double v);

/// Writes a header line followed by one row per index. All columns must
/// have equal length.
void write_columns(const std::filesystem::path& path, const std::vector<std::string>& header,
                   const std::vector<const std::vector<double>*>& columns);

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> columns;
};

/// Reads a numeric CSV with a mandatory header. When `expected` is
/// non-empty the header must match it exactly.
Table read(const std::filesystem::path& path, const std::vector<std::string>& expected = {});

}  // namespace qmagpi::csv
