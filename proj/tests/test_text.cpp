#include <doctest.h>

#include <cmath>
#include <limits>

#include "metrik/text.hpp"

using namespace metrik;

TEST_CASE("format_double emits shortest round-trip forms") {
    CHECK(format_double(0.0) == "0");
    CHECK(format_double(0.05) == "0.05");
    CHECK(format_double(1e-7) == "1e-07");
    CHECK(format_double(1.0 / 3.0) == "0.3333333333333333");
}

TEST_CASE("format/parse round-trips arbitrary doubles bit-exactly") {
    for (double v : {0.1, -2.5e300, 3.141592653589793, 1e-308, 123456.789,
                     std::numeric_limits<double>::min()}) {
        CHECK(parse_double(format_double(v)) == v);
    }
    CHECK(std::isnan(*parse_double("nan")));
}

TEST_CASE("parse_double rejects junk") {
    CHECK(!parse_double("").has_value());
    CHECK(!parse_double("1.2.3").has_value());
    CHECK(!parse_double("abc").has_value());
    CHECK(!parse_double("1e").has_value());
}

TEST_CASE("trim strips surrounding whitespace only") {
    CHECK(trim("  a b \t\r\n") == "a b");
    CHECK(trim("") == "");
    CHECK(trim("x") == "x");
}

TEST_CASE("csv split handles quoting and embedded delimiters") {
    auto fields = split_csv_line("a,\"b,c\",\"d\"\"e\",f");
    REQUIRE(fields.size() == 4);
    CHECK(fields[0] == "a");
    CHECK(fields[1] == "b,c");
    CHECK(fields[2] == "d\"e");
    CHECK(fields[3] == "f");
}

TEST_CASE("csv escape round-trips through split") {
    for (const std::string& raw : {std::string("plain"), std::string("with,comma"),
                                   std::string("with\"quote"), std::string("")}) {
        auto fields = split_csv_line(csv_escape(raw) + "," + csv_escape(raw));
        REQUIRE(fields.size() == 2);
        CHECK(fields[0] == raw);
        CHECK(fields[1] == raw);
    }
}
