#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

namespace sgdlab {

// 17 significant digits; nan and inf are spelled out.
std::string fmt17(double x);

std::vector<std::string> split_csv_line(const std::string& line);

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header);
  CsvWriter& cell(double x);
  CsvWriter& cell(long long x);
  CsvWriter& cell(int x) { return cell(static_cast<long long>(x)); }
  CsvWriter& cell(std::string_view s);
  void end_row();
  void close();

 private:
  std::ofstream out_;
  bool first_ = true;
  std::filesystem::path path_;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const;  // -1 when absent
};

CsvTable read_csv(const std::filesystem::path& path);

// 64-bit FNV-1a; used as a content fingerprint, not for security.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t x);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view text);

}  // namespace sgdlab
