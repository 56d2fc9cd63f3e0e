#pragma once

#include <charconv>
#include <cmath>
#include <string>
#include <string_view>

namespace vibemil {

// Shortest round-trip decimal form; deterministic for a given double.
inline void append_double(std::string& out, double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    out.append(buf, res.ptr);
}

inline std::string format_double(double v) {
    std::string s;
    append_double(s, v);
    return s;
}

// Fixed number of decimals, used for human-facing tables.
inline std::string format_fixed(double v, int decimals) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed, decimals);
    return std::string(buf, res.ptr);
}

}  // namespace vibemil
