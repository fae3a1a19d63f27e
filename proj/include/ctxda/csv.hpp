// SPDX-License-Identifier: Apache-2.0
#pragma once

// RFC-4180 reading and writing. Fields may be quoted; quoted fields may
// contain commas, doubled quotes and line breaks.

#include <cstddef>
#include <istream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ctxda/error.hpp"

namespace ctxda::csv {

struct Record {
  std::vector<std::string> fields;
  std::size_t line = 0;  // 1-based line on which the record starts
};

/// Parses all records. Throws FormatError on an unterminated quote or a
/// stray character after a closing quote.
inline std::vector<Record> parse(std::string_view text, const std::string& origin = "<csv>") {
  std::vector<Record> records;
  Record current;
  std::string field;
  std::size_t line = 1;
  current.line = 1;
  bool in_quotes = false;
  bool after_quote = false;
  bool record_has_content = false;

  auto end_field = [&] {
    current.fields.push_back(std::move(field));
    field.clear();
    after_quote = false;
  };
  auto end_record = [&] {
    end_field();
    records.push_back(std::move(current));
    current = Record{};
    record_has_content = false;
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (in_quotes) {
      if (ch == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
          after_quote = true;
        }
      } else {
        if (ch == '\n') ++line;
        field.push_back(ch);
      }
      continue;
    }
    if (ch == '\r' && i + 1 < text.size() && text[i + 1] == '\n') continue;
    if (ch == ',') {
      end_field();
      record_has_content = true;
    } else if (ch == '\n' || ch == '\r') {
      if (record_has_content || !field.empty() || !current.fields.empty()) end_record();
      ++line;
      current.line = line;
    } else if (after_quote) {
      throw FormatError(origin + ":" + std::to_string(line) +
                        ": unexpected character after closing quote");
    } else if (ch == '"' && field.empty()) {
      in_quotes = true;
      record_has_content = true;
    } else {
      field.push_back(ch);
      record_has_content = true;
    }
  }
  if (in_quotes) {
    throw FormatError(origin + ":" + std::to_string(current.line) + ": unterminated quote");
  }
  if (record_has_content || !field.empty() || !current.fields.empty()) end_record();
  return records;
}

/// Quotes a field when it contains a comma, quote, or line break.
inline std::string field(std::string_view value) {
  if (value.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(value);
  std::string out = "\"";
  for (char ch : value) {
    if (ch == '"') out.push_back('"');
    out.push_back(ch);
  }
  out.push_back('"');
  return out;
}

inline std::string join(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i > 0) out.push_back(',');
    out += field(fields[i]);
  }
  return out;
}

}  // namespace ctxda::csv
