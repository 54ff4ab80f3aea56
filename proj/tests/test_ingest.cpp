#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "blocklmm/blocklmm.hpp"

using namespace blocklmm;

namespace {

std::string write_temp(const std::string& text) {
    static int counter = 0;
    auto path = std::filesystem::temp_directory_path() /
                ("blocklmm_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++) +
                 ".csv");
    std::ofstream out(path);
    out << text;
    return path.string();
}

}  // namespace

TEST_CASE("csv typing: numeric vs categorical") {
    auto path = write_temp("g,x,y\nb,1.5,2\na,2.5,3\nb,3.5,4\n");
    auto table = load_csv(path);
    REQUIRE(table.nrows == 3);
    REQUIRE(table.columns.size() == 3);
    CHECK_FALSE(table.find("g")->numeric);
    CHECK(table.find("x")->numeric);
    CHECK(table.find("x")->num[2] == 3.5);
    CHECK(table.find("y")->numeric);
    std::filesystem::remove(path);
}

TEST_CASE("csv quoting and escapes") {
    auto path = write_temp("g,y\n\"a,b\",1\n\"say \"\"hi\"\"\",2\n");
    auto table = load_csv(path);
    REQUIRE(table.nrows == 2);
    CHECK(table.find("g")->cat[0] == "a,b");
    CHECK(table.find("g")->cat[1] == "say \"hi\"");
    std::filesystem::remove(path);
}

TEST_CASE("csv errors") {
    auto ragged = write_temp("a,b\n1,2\n3\n");
    CHECK_THROWS_AS(load_csv(ragged), DataError);
    std::filesystem::remove(ragged);

    auto missing = write_temp("a,b\n1,\n");
    try {
        load_csv(missing);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("missing value at row 1, column b") != std::string::npos);
    }
    std::filesystem::remove(missing);

    auto empty = write_temp("a,b\n");
    CHECK_THROWS_AS(load_csv(empty), DataError);
    std::filesystem::remove(empty);

    CHECK_THROWS_AS(load_csv("/nonexistent/path.csv"), DataError);
}

TEST_CASE("model matrices: dimensions, level coding, response placement") {
    auto path = write_temp(
        "g,h,x,y\n"
        "b,u,1.0,10\n"
        "a,v,2.0,20\n"
        "b,u,3.0,30\n"
        "c,v,4.0,40\n"
        "a,u,5.0,50\n");
    auto table = load_csv(path);
    auto ast = parse_formula("y ~ 1 + x + (1 + x | g) + (1 | h)");
    auto specs = amalgamate(ast);
    auto [xy, rems, dims] = build_matrices(ast, specs, table);

    CHECK(dims.n == 5);
    CHECK(dims.p == 2);
    CHECK(dims.k == 2);
    CHECK(dims.p_i == std::vector<Eigen::Index>{2, 1});
    CHECK(dims.l_i == std::vector<Eigen::Index>{3, 2});
    CHECK(dims.q_i == std::vector<Eigen::Index>{6, 2});
    CHECK(dims.q == 8);
    CHECK(dims.augmented == 11);

    CHECK(xy.names == std::vector<std::string>{"(Intercept)", "x", "y"});
    CHECK(xy.m.col(0).isOnes());
    CHECK(xy.m(2, 1) == 3.0);
    CHECK(xy.m(2, 2) == 30.0);  // response is the last column

    // levels sorted lexicographically, refs 0-based
    CHECK(rems[0].levels == std::vector<std::string>{"a", "b", "c"});
    CHECK(rems[0].refs == std::vector<std::int32_t>{1, 0, 1, 2, 0});
    CHECK(rems[1].levels == std::vector<std::string>{"u", "v"});
    CHECK(rems[1].refs == std::vector<std::int32_t>{0, 1, 0, 1, 0});
    CHECK(rems[0].wide.col(0).isOnes());
    CHECK(rems[0].wide(3, 1) == 4.0);
    std::filesystem::remove(path);
}

TEST_CASE("model matrix error paths") {
    auto path = write_temp("g,x,y\nb,1.5,2\na,2.5,3\n");
    auto table = load_csv(path);

    auto build = [&](const char* f) {
        auto ast = parse_formula(f);
        return build_matrices(ast, amalgamate(ast), table);
    };
    CHECK_THROWS_AS(build("y ~ 1 + nope + (1|g)"), DataError);  // unknown column
    CHECK_THROWS_AS(build("y ~ 1 + (1|x)"), DataError);         // numeric as grouping
    CHECK_THROWS_AS(build("y ~ 1 + g + (1|g)"), DataError);     // categorical as covariate
    CHECK_THROWS_AS(build("nope ~ 1 + (1|g)"), DataError);      // unknown response
    std::filesystem::remove(path);
}
