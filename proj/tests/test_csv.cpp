// Copyright (C) 2026 Token Pruning Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "tpl/csv.hpp"
#include "tpl/error.hpp"

using namespace tpl;

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

}  // namespace

TEST_CASE("formatting") {
    CsvTable t;
    t.header = {"name", "n", "x"};
    t.rows.push_back({std::string("plain"), std::int64_t{-3}, 0.1});
    t.rows.push_back({std::string("a,b \"q\""), std::uint64_t{7}, 1.0 / 3});
    CHECK(format_csv(t) == "name,n,x\nplain,-3,0.1\n\"a,b \"\"q\"\"\",7,0.333333333\n");

    t.rows.push_back({std::string("x"), std::uint64_t{1}, std::numeric_limits<double>::infinity()});
    CHECK_THROWS_AS(format_csv(t), Error);
    t.rows.back() = {std::string("short")};
    CHECK_THROWS_AS(format_csv(t), Error);
}

TEST_CASE("empty histogram gives a header-only file") {
    const auto text = format_csv(histogram_table(PositionHistogram{}, TokenLayout::make(0, 2, 2, 0)));
    CHECK(text == "position,row,col,frequency,samples\n");
}

TEST_CASE("emit_csv writes byte-identical files") {
    const auto dir = std::filesystem::temp_directory_path();
    CsvTable t;
    t.header = {"a", "b"};
    for (int i = 0; i < 50; ++i) t.rows.push_back({std::int64_t{i}, 0.7 * i});
    const auto n1 = emit_csv(t, dir / "tpl_csv_1.csv");
    const auto n2 = emit_csv(t, dir / "tpl_csv_2.csv");
    CHECK(n1 == n2);
    CHECK(n1 == std::filesystem::file_size(dir / "tpl_csv_1.csv"));
    CHECK(slurp(dir / "tpl_csv_1.csv") == slurp(dir / "tpl_csv_2.csv"));
    std::filesystem::remove(dir / "tpl_csv_1.csv");
    std::filesystem::remove(dir / "tpl_csv_2.csv");

    try {
        emit_csv(t, dir / "no_such_dir_tpl" / "x.csv");
        FAIL("write into a missing directory succeeded");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::io);
    }
}

TEST_CASE("numeric columns round-trip through parse") {
    std::mt19937_64 gen(5);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    CsvTable t;
    t.header = {"frequency", "v"};
    std::vector<double> freq, values;
    for (int i = 0; i < 500; ++i) {
        freq.push_back(unit(gen));
        values.push_back(nd(gen) * std::pow(10.0, static_cast<double>(static_cast<int>(gen() % 12) - 6)));
        t.rows.push_back({freq.back(), values.back()});
    }
    const auto parsed = parse_csv(format_csv(t));
    REQUIRE(parsed.size() == 501);
    CHECK(parsed[0] == std::vector<std::string>{"frequency", "v"});
    for (std::size_t i = 0; i < values.size(); ++i) {
        // Unit-scale report columns come back within 1e-9; any magnitude keeps
        // nine significant digits (half an ulp of the ninth digit is 5e-9).
        CHECK(std::abs(std::stod(parsed[i + 1][0]) - freq[i]) <= 1e-9);
        const double back = std::stod(parsed[i + 1][1]);
        CHECK(std::abs(back - values[i]) <= 5e-9 * std::abs(values[i]));
    }
}

TEST_CASE("parse_csv handles quoting") {
    const auto rows = parse_csv("a,\"b,c\",\"d\"\"e\"\n,\r\nlast");
    REQUIRE(rows.size() == 3);
    CHECK(rows[0] == std::vector<std::string>{"a", "b,c", "d\"e"});
    CHECK(rows[1] == std::vector<std::string>{"", ""});
    CHECK(rows[2] == std::vector<std::string>{"last"});
    CHECK_THROWS_AS(parse_csv("\"open"), Error);
}

TEST_CASE("report tables") {
    NamedCost c{"fastv", PruneSchedule::parse("1:320"), {}};
    c.report.final_tokens = 384;
    c.report.flops_ratio = 0.5;
    c.report.kv_bytes = 1024 * 1024;
    c.report.tfrr = 9.0;
    const auto rows = parse_csv(format_csv(cost_table({c})));
    REQUIRE(rows.size() == 2);
    CHECK(rows[1][0] == "fastv");
    CHECK(rows[1][1] == "1:320");
    CHECK(rows[1][6] == "1");
    CHECK(rows[1][7] == "9");
    CHECK(rows[1][8] == "");

    UniformityReport u;
    u.cells = tile_grid(2, 2, 1, 2);
    u.counts = {3, 1};
    const auto ut = parse_csv(format_csv(uniformity_table(u)));
    CHECK(ut.size() == 3);
    CHECK(ut[2] == std::vector<std::string>{"1", "1", "0", "1", "2", "2", "1"});
}
