#include "slff/io.hpp"

#include <openssl/evp.h>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace slff {

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error("sha256: digest failed");
  std::ostringstream out;
  for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return out.str();
}

std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_file(path)); }

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw DataError("cannot write " + path.string());
}

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  throw DataError("csv: missing column '" + name + "'");
}

CsvTable parse_csv(std::string_view text) {
  CsvTable t;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, any = false;
  const auto end_row = [&]() {
    row.push_back(field);
    field.clear();
    const bool blank = row.size() == 1 && row[0].empty();
    if (!blank) {
      if (t.header.empty()) t.header = std::move(row);
      else t.rows.push_back(std::move(row));
    }
    row.clear();
    any = false;
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    if (c == '"') quoted = true;
    else if (c == ',') {
      row.push_back(field);
      field.clear();
    } else if (c == '\n') end_row();
    else if (c != '\r') field.push_back(c);
    any = true;
  }
  if (quoted) throw DataError("csv: unterminated quote");
  if (any || !field.empty() || !row.empty()) end_row();
  for (const auto& r : t.rows)
    if (r.size() != t.header.size()) throw DataError("csv: ragged row");
  return t;
}

CsvTable read_csv(const std::filesystem::path& path) {
  try {
    return parse_csv(read_file(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::string format_csv(const CsvTable& table) {
  std::string out;
  const auto write_row = [&](const std::vector<std::string>& r) {
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (i) out.push_back(',');
      if (r[i].find_first_of(",\"\n") != std::string::npos) {
        out.push_back('"');
        for (char c : r[i]) {
          if (c == '"') out.push_back('"');
          out.push_back(c);
        }
        out.push_back('"');
      } else {
        out += r[i];
      }
    }
    out.push_back('\n');
  };
  write_row(table.header);
  for (const auto& r : table.rows) write_row(r);
  return out;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& field) {
  if (field.empty() || field == "NA" || field == "NaN" || field == "nan")
    return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (res.ec != std::errc() || res.ptr != field.data() + field.size())
    throw DataError("not a number: '" + field + "'");
  return v;
}

Date parse_date(std::string_view iso) {
  int y = 0;
  unsigned m = 0, d = 0;
  if (iso.size() != 10 || iso[4] != '-' || iso[7] != '-') throw DataError("bad date '" + std::string(iso) + "'");
  const auto num = [&](std::size_t pos, std::size_t len) {
    int v = 0;
    const auto r = std::from_chars(iso.data() + pos, iso.data() + pos + len, v);
    if (r.ec != std::errc() || r.ptr != iso.data() + pos + len) throw DataError("bad date '" + std::string(iso) + "'");
    return v;
  };
  y = num(0, 4);
  m = static_cast<unsigned>(num(5, 2));
  d = static_cast<unsigned>(num(8, 2));
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!ymd.ok()) throw DataError("bad date '" + std::string(iso) + "'");
  return Date{ymd};
}

std::string format_date(Date d) {
  const std::chrono::year_month_day ymd{d};
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", int(ymd.year()), unsigned(ymd.month()), unsigned(ymd.day()));
  return buf;
}

int year_of(Date d) { return int(std::chrono::year_month_day{d}.year()); }

bool is_weekday(Date d) {
  const std::chrono::weekday wd{d};
  return wd != std::chrono::Saturday && wd != std::chrono::Sunday;
}

std::vector<Date> business_days(Date start, int count) {
  std::vector<Date> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (Date d = start; static_cast<int>(out.size()) < count; d += std::chrono::days{1})
    if (is_weekday(d)) out.push_back(d);
  return out;
}

}  // namespace slff
