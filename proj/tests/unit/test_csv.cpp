#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <string>
#include <vector>

#include "ecgfreq/csv.hpp"
#include "ecgfreq/errors.hpp"
#include "oracles.hpp"

using ecgfreq::Errc;
using ecgfreq::Error;

namespace {

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    f << text;
}

}  // namespace

TEST_CASE("csv read: header, rows, column lookup") {
    oracle::TempDir td("csv");
    write_text(td.str("t.csv"), "a,b,c\n1,2,3\nx,,z\n");
    ecgfreq::csv::Table t = ecgfreq::csv::read_file(td.str("t.csv"));
    REQUIRE(t.header == std::vector<std::string>{"a", "b", "c"});
    REQUIRE(t.rows.size() == 2);
    CHECK(t.at(0, "a") == "1");
    CHECK(t.at(1, "b") == "");
    CHECK(t.at(1, "c") == "z");
    CHECK_THROWS_MATCHES(t.col("missing"), Error, Catch::Matchers::Predicate<Error>([](const Error& e) {
                             return e.code() == Errc::MissingColumn;
                         }));
}

TEST_CASE("csv read: comment lines are skipped and collected") {
    oracle::TempDir td("csv");
    write_text(td.str("t.csv"), "# config_hash=abc\na,b\n# mid comment\n1,2\n");
    std::vector<std::string> comments;
    ecgfreq::csv::Table t = ecgfreq::csv::read_file(td.str("t.csv"), &comments);
    REQUIRE(t.rows.size() == 1);
    CHECK(t.at(0, "b") == "2");
    REQUIRE(comments.size() == 2);
    CHECK(comments[0].find("config_hash=abc") != std::string::npos);
}

TEST_CASE("csv read: CRLF line endings are tolerated") {
    oracle::TempDir td("csv");
    write_text(td.str("t.csv"), "a,b\r\n1,2\r\n");
    ecgfreq::csv::Table t = ecgfreq::csv::read_file(td.str("t.csv"));
    REQUIRE(t.rows.size() == 1);
    CHECK(t.at(0, "b") == "2");
}

TEST_CASE("csv read: ragged row is an error naming the line") {
    oracle::TempDir td("csv");
    write_text(td.str("t.csv"), "a,b\n1,2,3\n");
    try {
        ecgfreq::csv::read_file(td.str("t.csv"));
        FAIL("expected UnparsableRow");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::UnparsableRow);
        CHECK(std::string(e.what()).find(":2") != std::string::npos);  // 1-based line number
    }
}

TEST_CASE("csv writer: round trip and comment emission") {
    oracle::TempDir td("csv");
    {
        ecgfreq::csv::Writer w(td.str("out.csv"));
        w.comment("config_hash=deadbeef");
        w.row({"id", "value"});
        w.row({"r1", "0.5"});
        w.close();
    }
    std::vector<std::string> comments;
    ecgfreq::csv::Table t = ecgfreq::csv::read_file(td.str("out.csv"), &comments);
    REQUIRE(comments.size() == 1);
    CHECK(t.header == std::vector<std::string>{"id", "value"});
    CHECK(t.at(0, "value") == "0.5");
}

TEST_CASE("csv writer refuses fields that would need quoting") {
    oracle::TempDir td("csv");
    ecgfreq::csv::Writer w(td.str("bad.csv"));
    CHECK_THROWS_AS(w.row({"a,b"}), Error);
    CHECK_THROWS_AS(w.row({"a\"b"}), Error);
    CHECK_THROWS_AS(w.row({"a\nb"}), Error);
}

TEST_CASE("numeric parsing is full-string and strict") {
    CHECK(ecgfreq::csv::parse_ll("42", "ctx") == 42);
    CHECK(ecgfreq::csv::parse_ll("-7", "ctx") == -7);
    CHECK_THROWS_AS(ecgfreq::csv::parse_ll("42x", "ctx"), Error);
    CHECK_THROWS_AS(ecgfreq::csv::parse_ll("", "ctx"), Error);
    CHECK(ecgfreq::csv::parse_double("0.25", "ctx") == 0.25);
    CHECK_THROWS_AS(ecgfreq::csv::parse_double("1.2.3", "ctx"), Error);
}

TEST_CASE("fmt_full round-trips doubles exactly") {
    for (double v : {0.1, 1.0 / 3.0, 1e-300, 123456.789, -0.0, 3.0}) {
        const std::string s = ecgfreq::csv::fmt_full(v);
        CHECK(ecgfreq::csv::parse_double(s, "ctx") == v);
    }
}
