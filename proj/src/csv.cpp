#include "rano/csv.hpp"

#include <fstream>
#include <sstream>

#include "rano/common.hpp"

namespace rano {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, delim)) out.push_back(trim(field));
  if (!line.empty() && line.back() == delim) out.push_back("");
  return out;
}

}  // namespace

std::optional<size_t> Table::col(const std::string& name) const {
  for (size_t i = 0; i < columns.size(); ++i) {
    if (columns[i] == name) return i;
  }
  return std::nullopt;
}

void Table::require_columns(const std::vector<std::string>& names) const {
  std::string missing;
  for (const auto& n : names) {
    if (!col(n)) missing += missing.empty() ? n : ", " + n;
  }
  if (!missing.empty()) throw Error("table is missing required column(s): " + missing);
}

Table parse_delim(const std::string& text, char delim) {
  Table t;
  std::istringstream in(text);
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    auto fields = split_line(line, delim);
    if (header) {
      t.columns = fields;
      header = false;
    } else {
      fields.resize(t.columns.size());  // ragged short rows pad with ""
      t.rows.push_back(std::move(fields));
    }
  }
  return t;
}

Table read_delim(const std::filesystem::path& path, char delim) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open table: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_delim(ss.str(), delim);
}

}  // namespace rano
