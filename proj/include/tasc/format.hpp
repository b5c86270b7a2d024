#pragma once

// Number formatting for the result tables.

#include <cstdio>
#include <optional>
#include <string>

namespace tasc::fmt {

inline constexpr const char* kMissing = "–";

inline std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  std::string s = buf;
  if (s == "-0" || s.rfind("-0.", 0) == 0) {
    // avoid "-0.0" for values that round to zero
    bool zero = true;
    for (char c : s) zero = zero && (c == '-' || c == '0' || c == '.');
    if (zero) s.erase(0, 1);
  }
  return s;
}

/// Two decimals without the leading zero: 0.758 -> ".76".
inline std::string two_decimals_bare(double v) {
  std::string s = fixed(v, 2);
  if (s.rfind("0.", 0) == 0) return s.substr(1);
  if (s.rfind("-0.", 0) == 0) return "-" + s.substr(2);
  return s;
}

inline std::string f1(double v) { return two_decimals_bare(v); }
inline std::string fraction(double v) { return two_decimals_bare(v); }
inline std::string percent(double v) { return fixed(v, 1); }
inline std::string relative(double v) { return fixed(v, 1); }

inline std::string with_relative(const std::string& cell, const std::optional<double>& rel) {
  return rel ? cell + " (" + relative(*rel) + ")" : cell;
}

}  // namespace tasc::fmt
