#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace rano {

/// Minimal delimiter-separated table with a header row. Extra columns are
/// tolerated; callers validate the ones they need.
struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  std::optional<size_t> col(const std::string& name) const;
  /// Throws rano::Error naming every missing column.
  void require_columns(const std::vector<std::string>& names) const;
  const std::string& cell(size_t row, size_t col_index) const { return rows[row][col_index]; }
};

Table read_delim(const std::filesystem::path& path, char delim = ',');
Table parse_delim(const std::string& text, char delim = ',');

}  // namespace rano
