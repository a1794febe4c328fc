#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace kd {

/// Shortest decimal string that parses back to exactly the same double.
std::string format_double(double value);

/// Parses a double, throwing kd::FormatError with `context` on failure.
double parse_double(std::string_view text, const std::string& context);

/// Parses a non-negative integer, throwing kd::FormatError on failure.
std::int64_t parse_int(std::string_view text, const std::string& context);

/// Full 64-bit unsigned parse (seeds, fingerprints).
std::uint64_t parse_uint(std::string_view text, const std::string& context);

/// Splits on any run of spaces, tabs, or commas; no empty tokens.
std::vector<std::string_view> split_fields(std::string_view line);

/// True for blank lines and lines whose first non-space character is '#'.
bool is_comment_or_blank(std::string_view line);

}  // namespace kd
