#pragma once

#include <cstddef>
#include <istream>
#include <optional>
#include <string>
#include <vector>

namespace triage {

struct CsvRecord {
  std::size_t record = 0;      // 0 for the header, 1.. for data rows
  std::size_t first_line = 0;  // physical line the record starts on (1-based)
  std::vector<std::string> fields;
};

/// Streaming RFC 4180 reader: comma separated, double-quote quoting with ""
/// escapes, quoted fields may span lines, LF or CRLF endings.
class CsvReader {
 public:
  explicit CsvReader(std::istream& in) : in_(in) {}

  /// Next record, or nullopt at end of input. Throws DataError on an
  /// unterminated quote or stray characters after a closing quote.
  std::optional<CsvRecord> next();

 private:
  std::istream& in_;
  std::size_t line_ = 1;
  std::size_t record_ = 0;
};

}  // namespace triage
