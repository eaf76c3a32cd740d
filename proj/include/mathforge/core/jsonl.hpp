#pragma once

#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mathforge/core/error.hpp"
#include "mathforge/core/fs.hpp"

namespace mathforge {

using json = nlohmann::json;

/// Calls `fn(object, line_number)` for every non-blank line. Line numbers
/// are 1-based. Lines that fail to parse raise IoError naming the line.
inline void for_each_jsonl(const fs::path& path,
                           const std::function<void(const json&, std::size_t)>& fn) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    fn(obj, lineno);
  }
}

template <class T>
std::vector<T> read_jsonl(const fs::path& path) {
  std::vector<T> out;
  for_each_jsonl(path, [&](const json& j, std::size_t lineno) {
    try {
      out.push_back(j.get<T>());
    } catch (const json::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  });
  return out;
}

template <class Range>
std::string to_jsonl(const Range& items) {
  std::string out;
  for (const auto& item : items) {
    out += json(item).dump();
    out.push_back('\n');
  }
  return out;
}

template <class Range>
void write_jsonl(const fs::path& path, const Range& items) {
  write_file_atomic(path, to_jsonl(items));
}

}  // namespace mathforge
