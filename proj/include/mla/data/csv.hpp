#pragma once

#include <istream>
#include <optional>
#include <string>
#include <vector>

namespace mla::data {

// Minimal RFC 4180 reader: comma separated, double-quoted fields may contain
// commas, quotes ("") and newlines. Returns nullopt at end of input.
class CsvReader {
 public:
  explicit CsvReader(std::istream& in) : in_(in) {}

  std::optional<std::vector<std::string>> next();
  std::size_t line() const noexcept { return line_; }  // 1-based line of the last record

 private:
  std::istream& in_;
  std::size_t line_ = 0;
  std::size_t next_line_ = 1;
};

std::vector<std::string> split_simple(const std::string& line, char sep = ',');

// Parses a full-string double; nullopt on failure or trailing garbage.
std::optional<double> parse_double(const std::string& text);

}  // namespace mla::data
