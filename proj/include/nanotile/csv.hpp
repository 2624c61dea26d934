#pragma once

#include <filesystem>
#include <istream>
#include <stdexcept>
#include <string>
#include <vector>

namespace nanotile {

class CsvError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Comma-separated table with a header row. Blank lines and lines starting
// with '#' are skipped. No quoting.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const;
  const std::string& cell(std::size_t row, const std::string& name) const;
  double number(std::size_t row, const std::string& name) const;
};

CsvTable parse_csv(std::istream& is);
CsvTable read_csv(const std::filesystem::path& file);

// Calibration data directory: $NANOTILE_DATA_DIR, else the source tree's data/.
std::filesystem::path data_dir();

}  // namespace nanotile
