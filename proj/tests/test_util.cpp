#include <gtest/gtest.h>

#include <map>

#include "specbench/util.hpp"
#include "test_support.hpp"

using namespace specbench;

TEST(Fnv1a64, KnownVectors) {
  // Published FNV-1a 64-bit test vectors.
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a64("foobar"), 0x85944171f73967e8ULL);
}

TEST(Fnv1a64, SeedChains) {
  EXPECT_EQ(fnv1a64("bar", fnv1a64("foo")), fnv1a64("foobar"));
}

TEST(Hex64, PadsToSixteenDigits) {
  EXPECT_EQ(hex64(0), "0000000000000000");
  EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
  EXPECT_EQ(hex64(~0ULL), "ffffffffffffffff");
}

TEST(BoundedDraw, StaysInRangeAndIsReproducible) {
  std::mt19937_64 a(7), b(7);
  std::map<std::uint64_t, int> hist;
  for (int i = 0; i < 6000; ++i) {
    const auto x = bounded_draw(a, 6);
    ASSERT_LT(x, 6u);
    ASSERT_EQ(x, bounded_draw(b, 6));
    hist[x]++;
  }
  ASSERT_EQ(hist.size(), 6u);
  for (const auto& [v, n] : hist) EXPECT_NEAR(n, 1000, 150) << v;
  EXPECT_EQ(bounded_draw(a, 0), 0u);
  EXPECT_EQ(bounded_draw(a, 1), 0u);
}

TEST(Split, KeepsEmptyFields) {
  const auto f = split("a\t\tb\t", '\t');
  ASSERT_EQ(f.size(), 4u);
  EXPECT_EQ(f[0], "a");
  EXPECT_EQ(f[1], "");
  EXPECT_EQ(f[2], "b");
  EXPECT_EQ(f[3], "");
  EXPECT_EQ(split("", ',').size(), 1u);
}

TEST(Trim, StripsWhitespace) {
  EXPECT_EQ(trim("  x y \r\n"), "x y");
  EXPECT_EQ(trim(" \t "), "");
}

TEST(TsvField, ReplacesSeparators) {
  EXPECT_EQ(tsv_field("a\tb\nc\rd"), "a b c d");
}

TEST(Files, AtomicWriteThenRead) {
  specbench::testing::TempDir dir;
  const auto p = dir / "nested/deeper/file.bin";
  const std::string payload("x\0y\nz", 5);
  write_file_atomic(p, payload);
  EXPECT_EQ(read_file(p), payload);
  EXPECT_FALSE(std::filesystem::exists(p.string() + ".tmp"));
  write_file_atomic(p, "second");
  EXPECT_EQ(read_file(p), "second");
  EXPECT_THROW(read_file(dir / "missing"), std::runtime_error);
}
