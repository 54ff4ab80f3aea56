#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "blocklmm/blocklmm.hpp"
#include "blocklmm/reference.hpp"
#include "test_support.hpp"

using namespace blocklmm;

namespace {

std::vector<std::vector<bool>> full_mask(int p) {
    std::vector<std::vector<bool>> m(p, std::vector<bool>(p, false));
    for (int r = 0; r < p; ++r)
        for (int c = 0; c <= r; ++c) m[r][c] = true;
    return m;
}

std::vector<std::vector<bool>> diag_mask(int p) {
    std::vector<std::vector<bool>> m(p, std::vector<bool>(p, false));
    for (int r = 0; r < p; ++r) m[r][r] = true;
    return m;
}

}  // namespace

TEST_CASE("theta layout is column-major over the masked lower triangle") {
    std::vector<LambdaTemplate> ts{LambdaTemplate::from_mask(full_mask(2)),
                                   LambdaTemplate::from_mask(diag_mask(2))};
    auto map = ThetaMap::build(ts);
    CHECK(map.total == 5);
    CHECK(map.spans == std::vector<std::pair<int, int>>{{0, 3}, {3, 2}});
    CHECK(map.lower_bounds[0] == 0.0);
    CHECK(map.lower_bounds[1] == -std::numeric_limits<double>::infinity());
    CHECK(map.lower_bounds[2] == 0.0);
    CHECK(map.lower_bounds[3] == 0.0);
    CHECK(map.lower_bounds[4] == 0.0);

    set_theta(ts, map, std::vector<double>{1, 2, 3, 4, 5});
    CHECK(ts[0].values(0, 0) == 1);  // first column first
    CHECK(ts[0].values(1, 0) == 2);
    CHECK(ts[0].values(1, 1) == 3);
    CHECK(ts[0].values(0, 1) == 0);  // strictly upper stays zero
    CHECK(ts[1].values(0, 0) == 4);
    CHECK(ts[1].values(1, 1) == 5);
    CHECK(ts[1].values(1, 0) == 0);  // masked entry stays zero
}

TEST_CASE("initial theta is identity-shaped") {
    std::vector<LambdaTemplate> ts{LambdaTemplate::from_mask(full_mask(2)),
                                   LambdaTemplate::from_mask(diag_mask(1))};
    CHECK(initial_theta(ts) == std::vector<double>{1, 0, 1, 1});
}

TEST_CASE("set_theta validates length and lower bounds") {
    std::vector<LambdaTemplate> ts{LambdaTemplate::from_mask(full_mask(2))};
    auto map = ThetaMap::build(ts);
    CHECK_THROWS_AS(set_theta(ts, map, std::vector<double>{1, 2}), ThetaError);
    CHECK_THROWS_AS(set_theta(ts, map, std::vector<double>{-0.1, 2, 3}), ThetaError);
    CHECK_NOTHROW(set_theta(ts, map, std::vector<double>{0.0, -2, 3}));  // off-diag unbounded
}

TEST_CASE("fitted template values for the four-term model shape") {
    // two scalar templates plus a diagonal 2x2 template share a 4-vector
    std::vector<LambdaTemplate> ts{LambdaTemplate::from_mask(diag_mask(1)),
                                   LambdaTemplate::from_mask(diag_mask(1)),
                                   LambdaTemplate::from_mask(diag_mask(2))};
    auto map = ThetaMap::build(ts);
    const std::vector<double> theta{0.2757269709081104, 0.4352906455775487, 0.04315999320792337,
                                    0.12997785126273184};
    set_theta(ts, map, theta);
    CHECK(ts[0].scalar_value() == Catch::Approx(0.27573).margin(1e-5));
    CHECK(ts[1].scalar_value() == Catch::Approx(0.43529).margin(1e-5));
    CHECK(ts[2].values(0, 0) == Catch::Approx(0.04316).margin(1e-5));
    CHECK(ts[2].values(1, 1) == Catch::Approx(0.12998).margin(1e-5));
    CHECK(ts[2].values(1, 0) == 0.0);
}

TEST_CASE("block scaling equals dense multiplication, pattern preserved") {
    std::mt19937 rng(1234);
    for (int trial = 0; trial < 40; ++trial) {
        auto inst = testsupport::random_instance(rng);
        auto model = testsupport::make_model(inst);
        auto theta = testsupport::random_theta(model.tmap, rng);
        set_theta(model.templates, model.tmap, theta);

        const Eigen::Index k = model.A.k;
        for (Eigen::Index i = 0; i < k; ++i) {
            for (Eigen::Index j = 0; j <= i; ++j) {
                Block b = model.A.grid.at(i, j);
                const Eigen::MatrixXd before = densify(b);
                const auto pattern_before =
                    b.tag == BlockTag::Sparse ? b.sparse().rowval : std::vector<std::int32_t>{};

                scale_block_left(model.templates[i], b);
                scale_block_right(b, model.templates[j]);

                Eigen::MatrixXd Li = Eigen::MatrixXd::Zero(b.rows(), b.rows());
                for (Eigen::Index g = 0; g < model.terms[i].nlevels(); ++g)
                    Li.block(g * model.terms[i].p(), g * model.terms[i].p(), model.terms[i].p(),
                             model.terms[i].p()) = model.templates[i].values;
                Eigen::MatrixXd Lj = Eigen::MatrixXd::Zero(b.cols(), b.cols());
                for (Eigen::Index g = 0; g < model.terms[j].nlevels(); ++g)
                    Lj.block(g * model.terms[j].p(), g * model.terms[j].p(), model.terms[j].p(),
                             model.terms[j].p()) = model.templates[j].values;

                const Eigen::MatrixXd expect = Li.transpose() * before * Lj;
                REQUIRE((densify(b) - expect).cwiseAbs().maxCoeff() < 1e-12);
                if (b.tag == BlockTag::Sparse) CHECK(b.sparse().rowval == pattern_before);
            }
        }
    }
}

TEST_CASE("scalar-scalar sparse scaling multiplies every nonzero by s*t") {
    SparseBlock s;
    s.rows = 3;
    s.cols = 2;
    s.colptr = {0, 2, 3};
    s.rowval = {0, 2, 1};
    s.nzval = {1.0, 2.0, 3.0};
    Block b;
    b.tag = BlockTag::Sparse;
    b.data = s;

    LambdaTemplate left = LambdaTemplate::from_mask(diag_mask(1));
    LambdaTemplate right = LambdaTemplate::from_mask(diag_mask(1));
    left.values(0, 0) = 0.5;
    right.values(0, 0) = 4.0;
    scale_block_left(left, b);
    scale_block_right(b, right);
    CHECK(b.sparse().nzval == std::vector<double>{2.0, 4.0, 6.0});
    CHECK(b.sparse().rowval == s.rowval);
}
