#include <catch2/catch_amalgamated.hpp>
#include <numbers>
#include <random>

#include "blocklmm/blocklmm.hpp"
#include "blocklmm/reference.hpp"
#include "test_support.hpp"

using namespace blocklmm;

TEST_CASE("dense Z expands the compact per-term storage") {
    std::mt19937 rng(3);
    auto inst = testsupport::random_instance(rng, 2, 50);
    auto model = testsupport::make_model(inst);
    Eigen::MatrixXd Z = reference::dense_Z(model.terms);
    REQUIRE(Z.rows() == model.dims.n);
    REQUIRE(Z.cols() == model.dims.q);
    // each observation touches exactly one level per term
    Eigen::Index off = 0;
    for (const auto& t : model.terms) {
        for (Eigen::Index o = 0; o < model.dims.n; ++o) {
            for (Eigen::Index g = 0; g < t.nlevels(); ++g) {
                for (Eigen::Index c = 0; c < t.p(); ++c) {
                    const double expect = g == t.refs[o] ? t.wide(o, c) : 0.0;
                    REQUIRE(Z(o, off + g * t.p() + c) == expect);
                }
            }
        }
        off += t.q();
    }
}

TEST_CASE("dense relative-covariance factor is block diagonal and lower triangular") {
    std::vector<std::vector<bool>> mask{{true, false}, {true, true}};
    auto t = LambdaTemplate::from_mask(mask);
    t.values << 2.0, 0.0, 0.5, 1.5;
    Eigen::MatrixXd L = reference::dense_lambda({t}, {3});
    REQUIRE(L.rows() == 6);
    for (int g = 0; g < 3; ++g) {
        CHECK(L(2 * g, 2 * g) == 2.0);
        CHECK(L(2 * g + 1, 2 * g) == 0.5);
        CHECK(L(2 * g + 1, 2 * g + 1) == 1.5);
        CHECK(L(2 * g, 2 * g + 1) == 0.0);
    }
    CHECK(L.cwiseAbs().sum() == 3 * 4.0);
    CHECK(Eigen::MatrixXd(L.triangularView<Eigen::StrictlyUpper>()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("one-sample REML criterion has the textbook closed form") {
    std::mt19937 rng(13);
    const int n = 40;
    testsupport::Instance inst;
    inst.table.nrows = n;
    inst.table.columns.push_back(testsupport::numeric("y", n, rng));
    inst.table.columns.push_back(testsupport::categorical("g0", 5, n, rng));
    inst.formula = "y ~ 1 + (1|g0)";
    auto model = testsupport::make_model(inst);

    update_L(model, std::vector<double>{0.0});  // zero variance: plain Gaussian model
    const Eigen::VectorXd y = testsupport::dense_y(model);
    const double ybar = y.mean();
    const double s2 = (y.array() - ybar).square().sum() / (n - 1);
    const double expect =
        std::log(static_cast<double>(n)) + (n - 1) * (1.0 + std::log(2.0 * std::numbers::pi * s2));
    CHECK(objective_reml(model) == Catch::Approx(expect).epsilon(1e-12));

    // the dense oracle agrees
    Eigen::MatrixXd Z = reference::dense_Z(model.terms);
    Eigen::MatrixXd Lambda =
        reference::dense_lambda(model.templates, testsupport::term_levels(model));
    CHECK(reference::dense_objective_reml(testsupport::dense_X(model), y, Z, Lambda) ==
          Catch::Approx(expect).epsilon(1e-12));
}

TEST_CASE("oracles are internally consistent on random instances") {
    std::mt19937 rng(19);
    for (int trial = 0; trial < 20; ++trial) {
        auto inst = testsupport::random_instance(rng);
        auto model = testsupport::make_model(inst);
        auto theta = testsupport::random_theta(model.tmap, rng);
        set_theta(model.templates, model.tmap, theta);

        Eigen::MatrixXd Z = reference::dense_Z(model.terms);
        Eigen::MatrixXd Lambda =
            reference::dense_lambda(model.templates, testsupport::term_levels(model));
        Eigen::MatrixXd ZXy(model.dims.n, model.dims.augmented);
        ZXy << Z, model.xy.m;
        Eigen::MatrixXd A_dense = ZXy.transpose() * ZXy;

        // the Cholesky of the augmented system reproduces the penalized RSS and
        // the marginal objective through the determinant identities
        Eigen::MatrixXd Lchol = reference::dense_omega_chol(A_dense, Lambda);
        auto pls =
            reference::dense_pls(testsupport::dense_X(model), testsupport::dense_y(model), Z, Lambda);
        const double ryy = Lchol(Lchol.rows() - 1, Lchol.cols() - 1);
        REQUIRE(std::abs(ryy * ryy - pls.r2) < 1e-9 * std::max(1.0, pls.r2));

        double logdet_rzz = 0;
        for (Eigen::Index i = 0; i < model.dims.q; ++i) logdet_rzz += std::log(Lchol(i, i));
        const double n = static_cast<double>(model.dims.n);
        const double via_chol =
            2.0 * logdet_rzz + n * (1.0 + std::log(2.0 * std::numbers::pi * ryy * ryy / n));
        const double via_marginal = reference::dense_objective(
            testsupport::dense_X(model), testsupport::dense_y(model), Z, Lambda);
        REQUIRE(std::abs(via_chol - via_marginal) < 1e-8 * std::abs(via_marginal));
    }
}

TEST_CASE("penalized solver at fixed coefficients never beats the joint minimum") {
    std::mt19937 rng(37);
    auto inst = testsupport::random_instance(rng, 2, 100);
    auto model = testsupport::make_model(inst);
    auto theta = testsupport::random_theta(model.tmap, rng);
    set_theta(model.templates, model.tmap, theta);
    Eigen::MatrixXd Z = reference::dense_Z(model.terms);
    Eigen::MatrixXd Lambda =
        reference::dense_lambda(model.templates, testsupport::term_levels(model));
    const Eigen::MatrixXd X = testsupport::dense_X(model);
    const Eigen::VectorXd y = testsupport::dense_y(model);

    auto joint = reference::dense_pls(X, y, Z, Lambda);
    auto at_opt = reference::dense_pls_fixed_beta(X, y, Z, Lambda, joint.beta);
    CHECK(at_opt.r2 == Catch::Approx(joint.r2).epsilon(1e-10));

    Eigen::VectorXd perturbed = joint.beta;
    perturbed[0] += 0.1;
    auto off = reference::dense_pls_fixed_beta(X, y, Z, Lambda, perturbed);
    CHECK(off.r2 >= joint.r2);
}

TEST_CASE("tiny replica of the three-term crossed design as a fixed regression fixture") {
    // 3 grouping factors with 6, 4 and 2 levels; the third carries a diagonal
    // intercept+slope covariance. Deterministic data; frozen oracle values.
    const int n = 24;
    testsupport::Instance inst;
    inst.table.nrows = n;
    Column y, x, g0, g1, g2;
    y.name = "y";
    y.numeric = true;
    x.name = "x1";
    x.numeric = true;
    g0.name = "g0";
    g1.name = "g1";
    g2.name = "g2";
    char buf[8];
    for (int o = 0; o < n; ++o) {
        x.num.push_back(((o * 7) % 5) - 2.0);
        y.num.push_back(std::sin(0.7 * o) + 0.25 * x.num.back() + 0.1 * (o % 6));
        std::snprintf(buf, sizeof buf, "a%d", o % 6);
        g0.cat.push_back(buf);
        std::snprintf(buf, sizeof buf, "b%d", (o / 2) % 4);
        g1.cat.push_back(buf);
        g2.cat.push_back(o % 2 ? "u" : "v");
    }
    inst.table.columns = {y, x, g0, g1, g2};
    inst.formula = "y ~ 1 + x1 + (1|g0) + (1|g1) + zerocorr(1 + x1|g2)";

    auto model = testsupport::make_model(inst);
    const std::vector<double> theta{0.8, 0.5, 0.3, 0.2};
    update_L(model, theta);

    Eigen::MatrixXd Z = reference::dense_Z(model.terms);
    Eigen::MatrixXd Lambda =
        reference::dense_lambda(model.templates, testsupport::term_levels(model));
    const double oracle = reference::dense_objective(testsupport::dense_X(model),
                                                     testsupport::dense_y(model), Z, Lambda);
    CHECK(objective(model) == Catch::Approx(oracle).epsilon(1e-10));
    // frozen value from the dense oracle; guards against silent regressions
    CHECK(oracle == Catch::Approx(51.204714400117176).epsilon(1e-12));
}
