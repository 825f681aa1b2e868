#include "triage/csv.hpp"

#include "triage/error.hpp"

namespace triage {

std::optional<CsvRecord> CsvReader::next() {
  int ch = in_.get();
  if (ch == EOF) return std::nullopt;

  CsvRecord rec;
  rec.record = record_++;
  rec.first_line = line_;
  std::string field;
  bool quoted = false;     // inside a quoted section
  bool was_quoted = false; // current field started with a quote

  auto fail = [&](const char* what) {
    throw DataError("malformed CSV at row " + std::to_string(rec.record) + " (line " +
                    std::to_string(rec.first_line) + "): " + what);
  };

  for (;; ch = in_.get()) {
    if (quoted) {
      if (ch == EOF) fail("unterminated quoted field");
      if (ch == '"') {
        if (in_.peek() == '"') {
          in_.get();
          field.push_back('"');
        } else {
          quoted = false;
          const int nx = in_.peek();
          if (nx != ',' && nx != '\n' && nx != '\r' && nx != EOF) fail("text after closing quote");
        }
      } else {
        if (ch == '\n') ++line_;
        field.push_back(static_cast<char>(ch));
      }
      continue;
    }
    if (ch == ',') {
      rec.fields.push_back(std::move(field));
      field.clear();
      was_quoted = false;
    } else if (ch == '\n' || ch == EOF) {
      if (ch == '\n') ++line_;
      break;
    } else if (ch == '\r') {
      if (in_.peek() == '\n') continue;
      field.push_back('\r');
    } else if (ch == '"' && field.empty() && !was_quoted) {
      quoted = was_quoted = true;
    } else {
      field.push_back(static_cast<char>(ch));
    }
  }
  rec.fields.push_back(std::move(field));
  return rec;
}

}  // namespace triage
