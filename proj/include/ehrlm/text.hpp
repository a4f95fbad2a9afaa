// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ehrlm::text {

std::string to_lower(std::string_view s);
std::string_view trim(std::string_view s);
std::vector<std::string> split_whitespace(std::string_view s);

/// Collapses runs of whitespace to one space and trims both ends.
std::string normalize_whitespace(std::string_view s);

/// Parses a full-string decimal number; nullopt on any trailing garbage.
std::optional<double> parse_number(std::string_view s);

/// Renders with at most one decimal place, no locale, no trailing ".0".
/// 98.6 -> "98.6", 88.0 -> "88", 37.25 -> "37.3".
std::string format_decimal1(double value);

/// Round-trippable rendering used in machine-readable outputs.
std::string format_double(double value);

/// Splits a UTF-8 string into code points, each returned as its byte string.
/// Invalid lead bytes are passed through as single-byte symbols.
std::vector<std::string> utf8_chars(std::string_view s);

}  // namespace ehrlm::text
