#include "nanotile/csv.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace nanotile {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

int CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return static_cast<int>(i);
  throw CsvError("missing column '" + name + "'");
}

const std::string& CsvTable::cell(std::size_t row, const std::string& name) const {
  return rows.at(row).at(column(name));
}

double CsvTable::number(std::size_t row, const std::string& name) const {
  const auto& s = cell(row, name);
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw CsvError("column '" + name + "' row " + std::to_string(row) + ": not a number: '" + s + "'");
  }
}

CsvTable parse_csv(std::istream& is) {
  CsvTable t;
  std::string line;
  while (std::getline(is, line)) {
    const auto s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    auto fields = split(s);
    if (t.header.empty()) {
      t.header = std::move(fields);
      continue;
    }
    if (fields.size() != t.header.size())
      throw CsvError("row has " + std::to_string(fields.size()) + " fields, header has " +
                     std::to_string(t.header.size()));
    t.rows.push_back(std::move(fields));
  }
  if (t.header.empty()) throw CsvError("empty table");
  return t;
}

CsvTable read_csv(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw CsvError("file not found: " + file.string());
  return parse_csv(is);
}

std::filesystem::path data_dir() {
  if (const char* env = std::getenv("NANOTILE_DATA_DIR"); env && *env) return env;
  return NANOTILE_DEFAULT_DATA_DIR;
}

}  // namespace nanotile
