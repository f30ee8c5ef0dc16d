// Copyright 2026 The hepaseg Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Flat `key=value` text files (parameter files, run manifests).

#ifndef HEPASEG_KEYVALUE_HPP
#define HEPASEG_KEYVALUE_HPP

#include <charconv>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "hepaseg/error.hpp"

namespace hepaseg {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

inline KeyValues parse_key_values(std::istream& in, const std::string& source = "input") {
  KeyValues out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos || line[b] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw DataError(source + ":" + std::to_string(lineno) + ": expected key=value");
    auto trim = [](std::string s) {
      const auto f = s.find_first_not_of(" \t\r");
      if (f == std::string::npos) return std::string{};
      return s.substr(f, s.find_last_not_of(" \t\r") - f + 1);
    };
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

inline KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return parse_key_values(in, path.string());
}

inline std::optional<std::string> find_value(const KeyValues& kv, const std::string& key) {
  for (const auto& [k, v] : kv)
    if (k == key) return v;
  return std::nullopt;
}

inline double parse_real(const std::string& key, const std::string& value) {
  double v = 0.0;
  const auto r = std::from_chars(value.data(), value.data() + value.size(), v);
  if (r.ec != std::errc() || r.ptr != value.data() + value.size())
    throw DataError("bad numeric value '" + value + "' for " + key);
  return v;
}

inline long parse_integer(const std::string& key, const std::string& value) {
  long v = 0;
  const auto r = std::from_chars(value.data(), value.data() + value.size(), v);
  if (r.ec != std::errc() || r.ptr != value.data() + value.size())
    throw DataError("bad integer value '" + value + "' for " + key);
  return v;
}

/// Shortest decimal form that reads back to the same double.
inline std::string format_real(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

/// Writes to a sibling temporary and renames it into place.
inline void write_key_values_atomic(const std::filesystem::path& path, const KeyValues& kv) {
  std::ostringstream s;
  for (const auto& [k, v] : kv) s << k << '=' << v << '\n';
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << s.str();
    out.flush();
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("cannot move " + tmp.string() + " into place: " + ec.message());
}

}  // namespace hepaseg

#endif  // HEPASEG_KEYVALUE_HPP
