#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <limits>

#include <gtest/gtest.h>

#include "sgdlab/errors.hpp"
#include "sgdlab/io.hpp"

using namespace sgdlab;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "sgdlab_io_test";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(Fmt17, RoundTripsDoubles) {
  for (double x : {0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, std::numeric_limits<double>::denorm_min()})
    EXPECT_EQ(std::strtod(fmt17(x).c_str(), nullptr), x);
  EXPECT_EQ(fmt17(std::nan("")), "nan");
  EXPECT_EQ(fmt17(-std::numeric_limits<double>::infinity()), "-inf");
  EXPECT_EQ(fmt17(2.0), "2");
}

TEST(Csv, SplitHandlesQuotes) {
  EXPECT_EQ(split_csv_line("a,\"b,c\",\"d\"\"e\",\r"), (std::vector<std::string>{"a", "b,c", "d\"e", ""}));
  EXPECT_EQ(split_csv_line(""), (std::vector<std::string>{""}));
}

TEST(Csv, WriteThenRead) {
  const fs::path p = scratch("table.csv");
  {
    CsvWriter w(p, {"id", "name", "value"});
    w.cell(1).cell("plain").cell(0.25);
    w.end_row();
    w.cell(2).cell("has,comma \"quoted\"").cell(std::numeric_limits<double>::infinity());
    w.end_row();
    w.close();
  }
  const CsvTable t = read_csv(p);
  EXPECT_EQ(t.header, (std::vector<std::string>{"id", "name", "value"}));
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[1][1], "has,comma \"quoted\"");
  EXPECT_EQ(t.rows[1][2], "inf");
  EXPECT_EQ(t.column("value"), 2);
  EXPECT_EQ(t.column("missing"), -1);
}

TEST(Csv, RaggedRowIsFormatError) {
  const fs::path p = scratch("ragged.csv");
  write_text(p, "a,b\n1,2\n3\n");
  EXPECT_THROW(read_csv(p), FormatError);
  write_text(p, "");
  EXPECT_THROW(read_csv(p), FormatError);
  EXPECT_THROW(read_csv(scratch("absent.csv")), InvalidInput);
}

TEST(Fnv, KnownVectors) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(hex64(fnv1a64("foobar")), "85944171f73967e8");
  EXPECT_EQ(hex64(0x1), "0000000000000001");
}

TEST(Text, RoundTripKeepsBytes) {
  const fs::path p = scratch("nested/dir/bytes.bin");
  const std::string bytes("a\0b\r\n\xff", 6);
  write_text(p, bytes);
  EXPECT_EQ(read_text(p), bytes);
}
