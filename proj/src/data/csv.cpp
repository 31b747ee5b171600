#include "mla/data/csv.hpp"

#include <charconv>
#include <cstdlib>

#include "mla/error.hpp"

namespace mla::data {

std::optional<std::vector<std::string>> CsvReader::next() {
  std::vector<std::string> fields;
  std::string field;
  bool in_quotes = false;
  bool any = false;
  line_ = next_line_;
  int ch;
  while ((ch = in_.get()) != EOF) {
    any = true;
    const char c = static_cast<char>(ch);
    if (in_quotes) {
      if (c == '"') {
        if (in_.peek() == '"') {
          in_.get();
          field += '"';
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++next_line_;
        field += c;
      }
      continue;
    }
    if (c == '"') {
      in_quotes = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c == '\n') {
      ++next_line_;
      fields.push_back(std::move(field));
      return fields;
    } else if (c != '\r') {
      field += c;
    }
  }
  if (in_quotes) throw FormatError("unterminated quoted field starting near line " + std::to_string(line_));
  if (!any) return std::nullopt;
  fields.push_back(std::move(field));
  return fields;
}

std::vector<std::string> split_simple(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string::npos) {
      std::string last = line.substr(start);
      if (!last.empty() && last.back() == '\r') last.pop_back();
      out.push_back(std::move(last));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

std::optional<double> parse_double(const std::string& text) {
  std::size_t b = 0, e = text.size();
  while (b < e && (text[b] == ' ' || text[b] == '\t')) ++b;
  while (e > b && (text[e - 1] == ' ' || text[e - 1] == '\t')) --e;
  if (b == e) return std::nullopt;
  double value = 0.0;
  const char* first = text.data() + b;
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, text.data() + e, value);
  if (ec != std::errc() || ptr != text.data() + e) return std::nullopt;
  return value;
}

}  // namespace mla::data
