// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include "ehrlm/csv.hpp"
#include "ehrlm/error.hpp"
#include "ehrlm/rng.hpp"
#include "ehrlm/text.hpp"
#include "support.hpp"

using namespace ehrlm;

TEST_CASE("decimal rendering keeps at most one place") {
  CHECK(text::format_decimal1(98.6) == "98.6");
  CHECK(text::format_decimal1(88.0) == "88");
  CHECK(text::format_decimal1(0.0) == "0");
  CHECK(text::format_decimal1(37.25) == "37.3");
  CHECK(text::format_decimal1(-1.04) == "-1");
}

TEST_CASE("number parsing rejects trailing garbage") {
  CHECK(text::parse_number("12.5") == 12.5);
  CHECK_FALSE(text::parse_number("12.5x"));
  CHECK_FALSE(text::parse_number(""));
}

TEST_CASE("whitespace normalization") {
  CHECK(text::normalize_whitespace("  a \t b\n\nc ") == "a b c");
  CHECK(text::split_whitespace(" x  y ") == std::vector<std::string>{"x", "y"});
}

TEST_CASE("utf8 code points") {
  const auto chars = text::utf8_chars("a\xC3\xA9\xE2\x96\x81");
  REQUIRE(chars.size() == 3);
  CHECK(chars[1] == "\xC3\xA9");
  CHECK(chars[2] == "\xE2\x96\x81");
}

TEST_CASE("csv quoting round-trips") {
  const std::vector<std::string> fields = {"plain", "has,comma", "say \"hi\"", " padded", ""};
  CHECK(csv::split_record(csv::join_record(fields)) == fields);

  testing::TempDir dir;
  csv::Table t{{"a", "b"}, {{"1", "x,y"}, {"2", ""}}};
  csv::write_file(dir / "t.csv", t);
  const auto back = csv::read_file(dir / "t.csv");
  CHECK(back.header == t.header);
  CHECK(back.rows == t.rows);
  CHECK(back.column("b") == 1u);
  CHECK_FALSE(back.column("c"));
}

TEST_CASE("csv reader strips CR and skips blank lines") {
  testing::TempDir dir;
  testing::write_text(dir / "t.csv", "a,b\r\n1,2\r\n\r\n3,4\r\n");
  const auto t = csv::read_file(dir / "t.csv");
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[1] == std::vector<std::string>{"3", "4"});
  CHECK_THROWS_AS(csv::read_file(dir / "missing.csv"), IoError);
}

TEST_CASE("rng streams are reproducible and in range") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng r(1);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    CHECK((u >= 0.0 && u < 1.0));
    CHECK(r.below(7) < 7u);
  }
  CHECK(mix_seed(1, 0) != mix_seed(1, 1));
}

TEST_CASE("rng normal has unit moments") {
  Rng r(3);
  double sum = 0, sq = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    sum += x;
    sq += x * x;
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(std::abs(sq / n - 1.0) < 0.02);
}
