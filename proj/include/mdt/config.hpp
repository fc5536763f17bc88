#pragma once

// Flat key=value configuration. A config struct exposes its fields through
// `visit_fields(cfg, visitor)`; the helpers below parse, override and print
// any such struct. Lines starting with '#' are comments.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "mdt/errors.hpp"

namespace mdt {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

inline std::string trim_ws(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline KeyValues parse_key_values(const std::string& text, const std::string& source = "config") {
  KeyValues out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim_ws(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
    out.emplace_back(trim_ws(line.substr(0, eq)), trim_ws(line.substr(eq + 1)));
  }
  return out;
}

inline KeyValues read_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str(), path);
}

namespace detail {

inline std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  // Prefer the shortest representation that round-trips.
  for (int p = 1; p <= 17; ++p) {
    std::ostringstream t;
    t << std::setprecision(p) << v;
    if (std::stod(t.str()) == v) return t.str();
  }
  return os.str();
}

template <class F>
std::string to_text(const F& v) {
  if constexpr (std::is_same_v<F, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_same_v<F, std::string>) {
    return v;
  } else if constexpr (std::is_same_v<F, std::optional<std::size_t>>) {
    return v ? std::to_string(*v) : "inf";
  } else if constexpr (std::is_floating_point_v<F>) {
    return format_double(v);
  } else {
    return std::to_string(v);
  }
}

template <class I>
I parse_integer(const std::string& key, const std::string& text) {
  I v{};
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || p != text.data() + text.size())
    throw ConfigError("config key '" + key + "': expected an integer, got '" + text + "'");
  return v;
}

template <class F>
void from_text(const std::string& key, const std::string& text, F& out) {
  if constexpr (std::is_same_v<F, bool>) {
    if (text == "true" || text == "1" || text == "yes" || text == "on") out = true;
    else if (text == "false" || text == "0" || text == "no" || text == "off") out = false;
    else throw ConfigError("config key '" + key + "': expected a boolean, got '" + text + "'");
  } else if constexpr (std::is_same_v<F, std::string>) {
    out = text;
  } else if constexpr (std::is_same_v<F, std::optional<std::size_t>>) {
    if (text == "inf" || text == "none" || text == "unbounded") out.reset();
    else out = parse_integer<std::size_t>(key, text);
  } else if constexpr (std::is_floating_point_v<F>) {
    try {
      std::size_t used = 0;
      out = static_cast<F>(std::stod(text, &used));
      if (used != text.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': expected a number, got '" + text + "'");
    }
  } else {
    out = parse_integer<F>(key, text);
  }
}

}  // namespace detail

// Applies key/value pairs to cfg. Keys not known to cfg are returned so a
// caller layering several configs can reject leftovers.
template <class Cfg>
KeyValues apply_key_values(Cfg& cfg, const KeyValues& kvs) {
  KeyValues unknown;
  for (const auto& [k, v] : kvs) {
    bool hit = false;
    visit_fields(cfg, [&](const char* name, auto& field) {
      if (!hit && k == name) {
        detail::from_text(k, v, field);
        hit = true;
      }
    });
    if (!hit) unknown.emplace_back(k, v);
  }
  return unknown;
}

template <class Cfg>
std::string to_key_values(const Cfg& cfg) {
  std::ostringstream os;
  visit_fields(cfg, [&](const char* name, auto& field) { os << name << '=' << detail::to_text(field) << '\n'; });
  return os.str();
}

}  // namespace mdt
