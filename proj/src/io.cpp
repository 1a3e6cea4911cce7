#include "sgdlab/io.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "sgdlab/errors.hpp"

namespace sgdlab {

std::string fmt17(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

CsvWriter::CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header) : path_(path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_.open(path, std::ios::binary | std::ios::trunc);
  if (!out_) throw InvalidInput("cannot open " + path.string() + " for writing");
  for (std::size_t i = 0; i < header.size(); ++i) out_ << (i ? "," : "") << header[i];
  out_ << '\n';
}

CsvWriter& CsvWriter::cell(double x) {
  out_ << (first_ ? "" : ",") << fmt17(x);
  first_ = false;
  return *this;
}

CsvWriter& CsvWriter::cell(long long x) {
  out_ << (first_ ? "" : ",") << x;
  first_ = false;
  return *this;
}

CsvWriter& CsvWriter::cell(std::string_view s) {
  out_ << (first_ ? "" : ",");
  if (s.find_first_of(",\"\n") != std::string_view::npos) {
    out_ << '"';
    for (char c : s) out_ << (c == '"' ? "\"\"" : std::string(1, c));
    out_ << '"';
  } else {
    out_ << s;
  }
  first_ = false;
  return *this;
}

void CsvWriter::end_row() {
  out_ << '\n';
  first_ = true;
}

void CsvWriter::close() {
  out_.close();
  if (!out_) throw InvalidInput("failed writing " + path_.string());
}

int CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return static_cast<int>(i);
  return -1;
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open " + path.string());
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": missing header", 0);
  t.header = split_csv_line(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto row = split_csv_line(line);
    if (row.size() != t.header.size())
      throw FormatError(path.string() + ": row has " + std::to_string(row.size()) + " cells, header has " +
                            std::to_string(t.header.size()),
                        static_cast<std::size_t>(in.tellg()));
    t.rows.push_back(std::move(row));
  }
  return t;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidInput("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw InvalidInput("failed writing " + path.string());
}

}  // namespace sgdlab
