// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ehrlm::csv {

/// A parsed comma-separated table. Fields are raw strings with RFC 4180
/// quoting removed.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column index of `name`, or nullopt.
  std::optional<std::size_t> column(std::string_view name) const;
};

/// Splits one CSV record. Quoted fields may contain commas and doubled quotes;
/// embedded newlines are not supported.
std::vector<std::string> split_record(std::string_view line);

/// Reads a whole file. Throws IoError when the file cannot be opened. Blank
/// lines are skipped; a trailing '\r' is stripped.
Table read_file(const std::filesystem::path& path);

/// Quotes a field only when it contains a comma, quote, or leading/trailing
/// space.
std::string escape_field(std::string_view field);

std::string join_record(const std::vector<std::string>& fields);

void write_file(const std::filesystem::path& path, const Table& table);

}  // namespace ehrlm::csv
