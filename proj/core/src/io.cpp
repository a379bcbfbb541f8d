#include "assaysel/io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "assaysel/error.hpp"

namespace assaysel::io {

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  std::array<char, 32> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  return std::string(buf.data(), ptr);
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

}  // namespace

double parse_double(std::string_view text, std::string_view context) {
  auto t = trim(text);
  if (t == "nan" || t == "NaN") return std::nan("");
  if (t == "inf") return INFINITY;
  if (t == "-inf") return -INFINITY;
  if (!t.empty() && t.front() == '+') t.remove_prefix(1);
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) {
    throw DataError(DataErrc::kMalformedRow,
                    std::string(context) + ": not a number: '" + std::string(text) + "'");
  }
  return value;
}

std::uint64_t parse_u64(std::string_view text, std::string_view context) {
  auto t = trim(text);
  std::uint64_t value = 0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) {
    throw DataError(DataErrc::kMalformedRow,
                    std::string(context) + ": not an unsigned integer: '" + std::string(text) + "'");
  }
  return value;
}

std::size_t CsvTable::column(std::string_view name, std::string_view file) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw DataError(DataErrc::kMissingColumn,
                  std::string(file) + ": no column '" + std::string(name) + "'");
}

CsvTable parse_csv(std::string_view text, bool skip_comments) {
  CsvTable table;
  CsvRow row;
  std::string field;
  bool in_quotes = false;
  bool at_row_start = true;
  bool field_was_quoted = false;
  std::size_t line = 1;
  std::size_t row_line = 1;
  bool have_header = false;

  auto end_row = [&] {
    row.push_back(std::move(field));
    field.clear();
    const bool blank = row.size() == 1 && row[0].empty() && !field_was_quoted;
    if (!blank) {
      if (!have_header) {
        table.header = std::move(row);
        have_header = true;
      } else {
        table.rows.push_back(std::move(row));
        table.lines.push_back(row_line);
      }
    }
    row.clear();
    at_row_start = true;
    field_was_quoted = false;
  };

  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (at_row_start) {
      row_line = line;
      if (skip_comments && c == '#') {
        while (i < text.size() && text[i] != '\n') ++i;
        if (i < text.size()) ++i;
        ++line;
        continue;
      }
      at_row_start = false;
    }
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          i += 2;
          continue;
        }
        in_quotes = false;
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      ++i;
      continue;
    }
    switch (c) {
      case '"':
        in_quotes = true;
        field_was_quoted = true;
        break;
      case ',':
        row.push_back(std::move(field));
        field.clear();
        break;
      case '\r':
        break;
      case '\n':
        end_row();
        ++line;
        break;
      default:
        field.push_back(c);
    }
    ++i;
  }
  if (in_quotes) {
    throw DataError(DataErrc::kMalformedRow,
                    "unterminated quoted field starting on line " + std::to_string(row_line));
  }
  if (!at_row_start) end_row();
  return table;
}

CsvTable read_csv(const std::filesystem::path& path, bool skip_comments) {
  return parse_csv(read_file(path), skip_comments);
}

std::string csv_escape(std::string_view field) {
  const bool needs_quotes =
      field.find_first_of(",\"\n\r") != std::string_view::npos ||
      (!field.empty() && (field.front() == ' ' || field.back() == ' ' || field.front() == '#'));
  if (!needs_quotes) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

void append_csv_row(std::string& out, std::span<const std::string> fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out.push_back(',');
    out += csv_escape(fields[i]);
  }
  out.push_back('\n');
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(DataErrc::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(DataErrc::kIo, "cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw DataError(DataErrc::kIo, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

namespace {

template <typename T>
T to_le(T v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    std::array<unsigned char, sizeof(T)> b;
    std::memcpy(b.data(), &v, sizeof(T));
    std::reverse(b.begin(), b.end());
    std::memcpy(&v, b.data(), sizeof(T));
    return v;
  }
}

}  // namespace

void append_f64_le(std::string& out, std::span<const double> values) {
  const auto start = out.size();
  out.resize(start + values.size() * sizeof(double));
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint64_t bits = to_le(std::bit_cast<std::uint64_t>(values[i]));
    std::memcpy(out.data() + start + i * sizeof(double), &bits, sizeof(bits));
  }
}

std::vector<double> read_f64_le(std::string_view bytes, std::size_t count, std::size_t offset) {
  if (offset + count * sizeof(double) > bytes.size()) {
    throw DataError(DataErrc::kIo, "binary block truncated");
  }
  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, bytes.data() + offset + i * sizeof(double), sizeof(bits));
    values[i] = std::bit_cast<double>(to_le(bits));
  }
  return values;
}

void append_u64_le(std::string& out, std::uint64_t value) {
  const std::uint64_t le = to_le(value);
  out.append(reinterpret_cast<const char*>(&le), sizeof(le));
}

std::uint64_t read_u64_le(std::string_view bytes, std::size_t offset) {
  if (offset + sizeof(std::uint64_t) > bytes.size()) {
    throw DataError(DataErrc::kIo, "binary header truncated");
  }
  std::uint64_t v;
  std::memcpy(&v, bytes.data() + offset, sizeof(v));
  return to_le(v);
}

std::string fnv1a_hex(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kHex[h & 0xF];
    h >>= 4;
  }
  return out;
}

}  // namespace assaysel::io
