#pragma once

// Flat key=value config text with [section] headers.
//
// Config structs expose their fields through a static
// `fields(Self& self, F&& f)` that calls f(name, member) for every field.
// That one list drives serialization, parsing and unknown-key rejection.

#include <charconv>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "atlab/errors.hpp"

namespace atlab::config {

// Each enum participating in configs provides to_string/from_string
// overloads found by ADL.
template <typename T>
std::string format_value(const T& v) {
  if constexpr (std::is_same_v<T, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_floating_point_v<T>) {
    // Shortest text that parses back to the same double.
    char buf[40];
    const auto res = std::to_chars(buf, buf + sizeof buf, static_cast<double>(v));
    return std::string(buf, res.ptr);
  } else if constexpr (std::is_integral_v<T>) {
    return std::to_string(v);
  } else if constexpr (std::is_same_v<T, std::string>) {
    return v;
  } else {
    return to_string(v);
  }
}

template <typename T>
void parse_value(const std::string& key, const std::string& text, T& out) {
  auto fail = [&] {
    throw ConfigError("invalid value '" + text + "' for key " + key);
  };
  if constexpr (std::is_same_v<T, bool>) {
    if (text == "true" || text == "1" || text == "on") out = true;
    else if (text == "false" || text == "0" || text == "off") out = false;
    else fail();
  } else if constexpr (std::is_floating_point_v<T>) {
    try {
      std::size_t used = 0;
      out = std::stod(text, &used);
      if (used != text.size()) fail();
    } catch (const std::logic_error&) {
      fail();
    }
  } else if constexpr (std::is_integral_v<T>) {
    if (!text.empty() && text[0] == '-') fail();
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, out);
    if (ec != std::errc{} || ptr != end) fail();
  } else if constexpr (std::is_same_v<T, std::string>) {
    out = text;
  } else {
    if (!from_string(text, out)) fail();
  }
}

using Section = std::vector<std::pair<std::string, std::string>>;
using Document = std::map<std::string, Section>;

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// '#' starts a comment. Keys before any header land in section "".
inline Document parse_document(const std::string& text) {
  Document doc;
  std::istringstream is(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos)
      line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("line " + std::to_string(lineno) + ": bad section");
      section = trim(line.substr(1, line.size() - 2));
      doc[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
    doc[section].emplace_back(trim(line.substr(0, eq)),
                              trim(line.substr(eq + 1)));
  }
  return doc;
}

template <typename Cfg>
void apply_section(const Section& entries, Cfg& cfg,
                   const std::string& section_name) {
  for (const auto& [key, value] : entries) {
    bool found = false;
    Cfg::fields(cfg, [&](const char* name, auto& member) {
      if (key == name) {
        parse_value(key, value, member);
        found = true;
      }
    });
    if (!found)
      throw ConfigError("unknown key '" + key + "' in section [" +
                        section_name + "]");
  }
}

template <typename Cfg>
void write_section(std::ostream& os, const std::string& name, const Cfg& cfg) {
  os << '[' << name << "]\n";
  Cfg::fields(cfg, [&](const char* key, const auto& member) {
    os << key << " = " << format_value(member) << '\n';
  });
}

}  // namespace atlab::config
