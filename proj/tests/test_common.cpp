#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "amsbench/csv.hpp"
#include "amsbench/errors.hpp"
#include "amsbench/rng.hpp"
#include "amsbench/time.hpp"

using namespace ams;

TEST_SUITE_BEGIN("common");

TEST_CASE("timestamp parse/format round-trip") {
    const char* samples[] = {
        "1970-01-01T00:00:00", "2016-02-29T23:59:59", "2016-03-01T08:00:00",
        "1999-12-31T12:34:56", "2024-02-29T00:00:01",
    };
    for (const char* s : samples) {
        const Timestamp t = parse_timestamp(s);
        CHECK(format_timestamp(t) == s);
    }
    // space separator accepted, canonicalized to 'T' on output
    CHECK(format_timestamp(parse_timestamp("2016-03-01 08:00:00")) == "2016-03-01T08:00:00");
}

TEST_CASE("timestamp rejects malformed input") {
    CHECK_THROWS_AS(parse_timestamp("2016-13-40T00:00:00"), ParseError);
    CHECK_THROWS_AS(parse_timestamp("2016-02-30T00:00:00"), ParseError);
    CHECK_THROWS_AS(parse_timestamp("2015-02-29T00:00:00"), ParseError);  // not a leap year
    CHECK_THROWS_AS(parse_timestamp("2016-01-01T24:00:00"), ParseError);
    CHECK_THROWS_AS(parse_timestamp("2016-01-01"), ParseError);
    CHECK_THROWS_AS(parse_timestamp("2016/01/01T00:00:00"), ParseError);
    CHECK_THROWS_AS(parse_timestamp("not a timestamp xx"), ParseError);
}

TEST_CASE("civil date math agrees with known anchors") {
    CHECK(days_from_civil(1970, 1, 1) == 0);
    CHECK(days_from_civil(2000, 3, 1) == 11017);
    int y, m, d;
    civil_from_days(11017, y, m, d);
    CHECK(y == 2000);
    CHECK(m == 3);
    CHECK(d == 1);
    // exhaustive round-trip over four years including a leap year
    for (std::int64_t day = days_from_civil(2015, 1, 1); day <= days_from_civil(2018, 12, 31);
         ++day) {
        civil_from_days(day, y, m, d);
        CHECK(days_from_civil(y, m, d) == day);
    }
}

TEST_CASE("date_of floors toward past days") {
    const Timestamp t = parse_timestamp("2016-03-05T23:59:59");
    CHECK(date_of(t) == days_from_civil(2016, 3, 5));
    CHECK(date_of(t + 1) == days_from_civil(2016, 3, 6));
    CHECK(at_hour(date_of(t), 8) == parse_timestamp("2016-03-05T08:00:00"));
}

TEST_CASE("rng determinism and fork independence") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng root(7);
    Rng c1 = root.fork("patient", 1);
    Rng c2 = root.fork("patient", 2);
    Rng c1_again = root.fork("patient", 1);
    CHECK(c1.next_u64() == c1_again.next_u64());
    CHECK(c1.next_u64() != c2.next_u64());
}

TEST_CASE("rng distributions are sane") {
    Rng r(123);
    double sum = 0, sum2 = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double x = r.normal();
        sum += x;
        sum2 += x * x;
    }
    CHECK(std::abs(sum / n) < 0.03);
    CHECK(std::abs(sum2 / n - 1.0) < 0.05);

    for (int i = 0; i < 1000; ++i) {
        const double u = r.uniform(2.0, 5.0);
        CHECK(u >= 2.0);
        CHECK(u < 5.0);
    }
}

TEST_CASE("csv quoting round-trip preserves bytes") {
    const std::string path = std::filesystem::temp_directory_path() / "ams_csv_test.csv";
    {
        CsvWriter w(path);
        w.write_row({"id", "text"});
        w.write_row({"1", "plain"});
        w.write_row({"2", "with,comma"});
        w.write_row({"3", "with \"quotes\""});
        w.write_row({"4", "multi\nline"});
        w.write_row({"5", "漢字 ünïcode"});
        w.write_row({"6", ""});
    }
    CsvReader r(path);
    REQUIRE(r.header() == std::vector<std::string>{"id", "text"});
    std::vector<std::string> f;
    REQUIRE(r.next(f));
    CHECK(f[1] == "plain");
    REQUIRE(r.next(f));
    CHECK(f[1] == "with,comma");
    REQUIRE(r.next(f));
    CHECK(f[1] == "with \"quotes\"");
    REQUIRE(r.next(f));
    CHECK(f[1] == "multi\nline");
    REQUIRE(r.next(f));
    CHECK(f[1] == "漢字 ünïcode");
    REQUIRE(r.next(f));
    CHECK(f[1] == "");
    CHECK_FALSE(r.next(f));
    std::filesystem::remove(path);
}

TEST_CASE("csv reader flags structural problems with line numbers") {
    const std::string path = std::filesystem::temp_directory_path() / "ams_csv_bad.csv";
    {
        std::ofstream out(path, std::ios::binary);
        out << "a,b\r\n1,2\r\n3\r\n";
    }
    CsvReader r(path);
    std::vector<std::string> f;
    CHECK(r.next(f));
    CHECK(f == std::vector<std::string>{"1", "2"});
    CHECK_THROWS_WITH_AS(r.next(f), doctest::Contains(":3:"), ParseError);
    std::filesystem::remove(path);
}

TEST_CASE("float formatting round-trips exactly") {
    const double vals[] = {0.0,  1.0,  -1.5, 0.1, 1.0 / 3.0, 1e-300, 1e300, 37.25,
                           98.6, -0.0, 2.5e-8};
    for (double v : vals) {
        const std::string s = format_double(v);
        CHECK(parse_double(s, "test") == v);
    }
    CHECK(format_double(0.5) == "0.5");
    CHECK_THROWS_AS(parse_double("1.5x", "ctx"), ParseError);
    CHECK_THROWS_AS(parse_int("12.5", "ctx"), ParseError);
}

TEST_SUITE_END();
