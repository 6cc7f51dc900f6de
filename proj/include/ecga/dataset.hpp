#pragma once

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "ecga/config.hpp"
#include "ecga/errors.hpp"

namespace ecga {

// How to read a delimiter-separated dataset file.
struct DatasetSchema {
  char delimiter = ',';
  std::size_t label_column = 0;
  std::vector<std::size_t> text_columns = {1};
  bool has_header = false;
  std::vector<std::string> label_names;  // fixed order; discovered when empty
};

inline DatasetSchema schema_from_config(const RunConfig& c) {
  DatasetSchema s;
  s.delimiter = c.delimiter.empty() ? ',' : c.delimiter[0];
  s.label_column = c.label_column;
  s.text_columns = c.text_columns;
  s.has_header = c.has_header;
  s.label_names = c.labels;
  return s;
}

struct RawDataset {
  std::vector<std::string> texts;
  std::vector<int> labels;
  std::vector<std::string> label_names;

  std::size_t size() const { return texts.size(); }
};

namespace detail {

// Split one record; double quotes delimit fields that contain the delimiter
// ("" inside quotes is a literal quote).
inline std::vector<std::string> split_record(const std::string& line, char delim) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += ch;
      }
    } else if (ch == '"' && cur.empty()) {
      quoted = true;
    } else if (ch == delim) {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

inline bool all_integer(const std::vector<std::string>& v) {
  for (const auto& s : v) {
    char* end = nullptr;
    std::strtol(s.c_str(), &end, 10);
    if (s.empty() || end == s.c_str() || *end != '\0') return false;
  }
  return true;
}

}  // namespace detail

// Load a labelled text dataset.  When the schema carries no label names,
// distinct labels are discovered and ordered numerically if they all parse
// as integers, lexicographically otherwise.
inline RawDataset load_dataset(const std::string& path, const DatasetSchema& schema) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open dataset file: " + path);
  RawDataset ds;
  std::vector<std::string> raw_labels;
  std::string line;
  std::size_t lineno = 0;
  std::size_t needed = schema.label_column;
  for (std::size_t c : schema.text_columns) needed = std::max(needed, c);
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (schema.has_header && lineno == 1) continue;
    if (detail::trim(line).empty()) continue;
    auto fields = detail::split_record(line, schema.delimiter);
    if (fields.size() <= needed) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected at least " +
                       std::to_string(needed + 1) + " columns, got " +
                       std::to_string(fields.size()));
    }
    std::string text;
    for (std::size_t c : schema.text_columns) {
      if (!text.empty()) text += ' ';
      text += fields[c];
    }
    ds.texts.push_back(std::move(text));
    raw_labels.push_back(detail::trim(fields[schema.label_column]));
  }
  if (ds.texts.empty()) throw ParseError(path + ": dataset is empty");

  std::vector<std::string> names = schema.label_names;
  if (names.empty()) {
    names = raw_labels;
    std::sort(names.begin(), names.end());
    names.erase(std::unique(names.begin(), names.end()), names.end());
    if (detail::all_integer(names)) {
      std::sort(names.begin(), names.end(), [](const std::string& a, const std::string& b) {
        return std::strtol(a.c_str(), nullptr, 10) < std::strtol(b.c_str(), nullptr, 10);
      });
    }
  }
  std::unordered_map<std::string, int> index;
  for (std::size_t i = 0; i < names.size(); ++i) index[names[i]] = static_cast<int>(i);
  ds.labels.reserve(raw_labels.size());
  for (std::size_t i = 0; i < raw_labels.size(); ++i) {
    auto it = index.find(raw_labels[i]);
    if (it == index.end()) {
      throw ParseError(path + ": unknown label '" + raw_labels[i] + "'");
    }
    ds.labels.push_back(it->second);
  }
  ds.label_names = std::move(names);
  return ds;
}

}  // namespace ecga
