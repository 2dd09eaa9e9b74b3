#pragma once

// Small file utilities shared by the pipeline: hashing, CSV, dates.

#include "slff/common.hpp"

#include <chrono>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace slff {

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Column index by name; throws DataError if absent.
  std::size_t column(const std::string& name) const;
};

// Comma-separated, optional double-quoted fields, first row is the header.
CsvTable read_csv(const std::filesystem::path& path);
CsvTable parse_csv(std::string_view text);
std::string format_csv(const CsvTable& table);

// Shortest round-trip representation; NaN is written as an empty field.
std::string format_double(double v);
double parse_double(const std::string& field);  // empty -> NaN

// Calendar dates.
using Date = std::chrono::sys_days;

Date parse_date(std::string_view iso);  // YYYY-MM-DD
std::string format_date(Date d);
int year_of(Date d);
bool is_weekday(Date d);
// count Monday-Friday dates starting at (or after) start.
std::vector<Date> business_days(Date start, int count);

}  // namespace slff
