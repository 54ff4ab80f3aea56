#include <catch2/catch_amalgamated.hpp>

#include "blocklmm/formula.hpp"

using namespace blocklmm;

TEST_CASE("parses the crossed four-term formula") {
    auto ast = parse_formula("y ~ 1 + service + (1|d) + (1|s) + (1|dept) + (0 + service|dept)");
    CHECK(ast.response == "y");
    CHECK(ast.fixed_intercept);
    CHECK(ast.fixed_covariates == std::vector<std::string>{"service"});
    REQUIRE(ast.re_terms.size() == 4);
    CHECK(ast.re_terms[0].grouping == "d");
    CHECK(ast.re_terms[1].grouping == "s");
    CHECK(ast.re_terms[2].grouping == "dept");
    CHECK(ast.re_terms[2].intercept);
    CHECK(ast.re_terms[2].covariates.empty());
    CHECK_FALSE(ast.re_terms[3].intercept);
    CHECK(ast.re_terms[3].covariates == std::vector<std::string>{"service"});
    // three distinct grouping columns
    CHECK(amalgamate(ast).size() == 3);
}

TEST_CASE("zerocorr marks the term") {
    auto ast = parse_formula("y ~ 1 + service + (1|d) + (1|s) + zerocorr(service|dept)");
    REQUIRE(ast.re_terms.size() == 3);
    const auto& zt = ast.re_terms[2];
    CHECK(zt.zerocorr);
    CHECK(zt.grouping == "dept");
    CHECK(zt.intercept);  // implicit intercept inside zerocorr(...)
    CHECK(zt.covariates == std::vector<std::string>{"service"});
}

TEST_CASE("amalgamation merges terms per grouping factor") {
    auto ast = parse_formula("y ~ 1 + service + (1|s) + (1|d) + (1|dept) + (0 + service|dept)");
    auto specs = amalgamate(ast);
    REQUIRE(specs.size() == 3);
    CHECK(specs[0].grouping == "s");
    CHECK(specs[0].p() == 1);
    CHECK(specs[1].grouping == "d");
    CHECK(specs[1].p() == 1);
    CHECK(specs[2].grouping == "dept");
    REQUIRE(specs[2].p() == 2);
    CHECK(specs[2].columns[0].intercept);
    CHECK(specs[2].columns[1].name == "service");
    // intercept and slope never appear in one originating term: diagonal-only
    CHECK(specs[2].corr_mask[0][0]);
    CHECK(specs[2].corr_mask[1][1]);
    CHECK_FALSE(specs[2].corr_mask[1][0]);
    CHECK(specs[2].n_free() == 2);
}

TEST_CASE("zerocorr forbids correlation even within one term") {
    auto ast = parse_formula("y ~ 1 + zerocorr(1 + x | g)");
    auto specs = amalgamate(ast);
    REQUIRE(specs.size() == 1);
    REQUIRE(specs[0].p() == 2);
    CHECK_FALSE(specs[0].corr_mask[1][0]);

    auto full = amalgamate(parse_formula("y ~ 1 + (1 + x | g)"));
    CHECK(full[0].corr_mask[1][0]);
    CHECK(full[0].n_free() == 3);
}

TEST_CASE("rendering is canonical and round-trips") {
    const std::string canon = "y ~ 1 + service + (1 | d) + (1 | s) + zerocorr(1 + service | dept)";
    auto ast = parse_formula("y~1+service+(1|d)+(1|s)+zerocorr(service|dept)");
    CHECK(render_formula(ast) == canon);
    CHECK(parse_formula(render_formula(ast)) == ast);
}

TEST_CASE("suppressed intercepts") {
    auto ast = parse_formula("y ~ 0 + x + (0 + x | g)");
    CHECK_FALSE(ast.fixed_intercept);
    CHECK_FALSE(ast.re_terms[0].intercept);
    CHECK(render_formula(ast) == "y ~ 0 + x + (0 + x | g)");
}

TEST_CASE("parse errors carry positions and messages") {
    CHECK_THROWS_AS(parse_formula(""), ParseError);
    CHECK_THROWS_AS(parse_formula("y ~"), ParseError);
    CHECK_THROWS_AS(parse_formula("y + x"), ParseError);
    CHECK_THROWS_AS(parse_formula("y ~ 1 | g"), ParseError);          // bar outside parens
    CHECK_THROWS_AS(parse_formula("y ~ 1 + (1 | )"), ParseError);     // missing grouping
    CHECK_THROWS_AS(parse_formula("y ~ 1 + (1 + x g)"), ParseError);  // missing bar
    CHECK_THROWS_AS(parse_formula("y ~ 0 + 1 + x"), ParseError);      // conflicting markers
    CHECK_THROWS_AS(parse_formula("y ~ x + x"), ParseError);          // duplicate fixed term
    CHECK_THROWS_AS(parse_formula("y ~ 1 + (1|g) + (1|g)"), ParseError);
    CHECK_THROWS_AS(parse_formula("y ~ 2 + x"), ParseError);
    CHECK_THROWS_AS(parse_formula("y ~ x @ z"), ParseError);

    try {
        parse_formula("y ~ 1 | g");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("'|'") != std::string::npos);
        CHECK(e.pos == 6);
    }
}

TEST_CASE("identifiers may contain dots, underscores and non-ascii bytes") {
    auto ast = parse_formula("log.y ~ 1 + x_1 + (1 | grp.id)");
    CHECK(ast.response == "log.y");
    CHECK(ast.fixed_covariates[0] == "x_1");
    CHECK(ast.re_terms[0].grouping == "grp.id");
}
