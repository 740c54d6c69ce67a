#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace histgdp::csv {

struct Row {
  std::size_t line = 0;  // 1-based line where the record starts
  std::vector<std::string> fields;
};

struct Table {
  std::vector<std::string> header;
  std::vector<Row> rows;

  /// Column index by header name.
  std::optional<std::size_t> column(std::string_view name) const;
};

/// RFC-4180 parsing: quoted fields may contain commas, doubled quotes and
/// line breaks. A leading UTF-8 byte-order mark is ignored.
Table parse(std::string_view text);
Table read(const std::filesystem::path& path);

std::string escape(std::string_view field);
std::string join(const std::vector<std::string>& fields);

/// Writes text to a file, throwing IoError on failure.
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace histgdp::csv
