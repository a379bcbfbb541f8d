#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace assaysel::io {

// Shortest decimal text that parses back to the same double.
std::string format_double(double value);
// Throws DataError(kMalformedRow) naming `context` on bad input.
double parse_double(std::string_view text, std::string_view context);
std::uint64_t parse_u64(std::string_view text, std::string_view context);

using CsvRow = std::vector<std::string>;

struct CsvTable {
  CsvRow header;
  std::vector<CsvRow> rows;
  // 1-based source line of each row, for error messages.
  std::vector<std::size_t> lines;

  // Index of a header column; throws DataError(kMissingColumn).
  std::size_t column(std::string_view name, std::string_view file) const;
};

// RFC 4180 reader: quoted fields, doubled quotes, CRLF. When
// `skip_comments` is set, lines starting with '#' before the header or
// between records are ignored (used for artifact provenance lines).
CsvTable parse_csv(std::string_view text, bool skip_comments = true);
CsvTable read_csv(const std::filesystem::path& path, bool skip_comments = true);

std::string csv_escape(std::string_view field);
void append_csv_row(std::string& out, std::span<const std::string> fields);

std::string read_file(const std::filesystem::path& path);
// Writes via a temporary sibling and rename, so readers never see a torn file.
void write_file(const std::filesystem::path& path, std::string_view contents);

// Flat little-endian float64 blob.
void append_f64_le(std::string& out, std::span<const double> values);
std::vector<double> read_f64_le(std::string_view bytes, std::size_t count, std::size_t offset = 0);
void append_u64_le(std::string& out, std::uint64_t value);
std::uint64_t read_u64_le(std::string_view bytes, std::size_t offset);

// 64-bit FNV-1a as 16 lowercase hex digits.
std::string fnv1a_hex(std::string_view data);

}  // namespace assaysel::io
