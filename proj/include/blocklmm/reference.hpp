// Brute-force dense oracles. Deliberately naive O(n^3) algebra on
// materialized matrices; used by tests to anchor the blocked engine.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "blocklmm/data.hpp"
#include "blocklmm/lambda.hpp"

namespace blocklmm {
namespace reference {

/// Dense Z from the per-term (refs, wide) structures, columns in term order.
inline Eigen::MatrixXd dense_Z(const std::vector<ReMat>& terms) {
    Eigen::Index n = terms.empty() ? 0 : terms[0].wide.rows();
    Eigen::Index q = 0;
    for (const auto& t : terms) q += t.q();
    Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(n, q);
    Eigen::Index off = 0;
    for (const auto& t : terms) {
        for (Eigen::Index o = 0; o < n; ++o)
            Z.block(o, off + t.refs[o] * t.p(), 1, t.p()) = t.wide.row(o);
        off += t.q();
    }
    return Z;
}

/// Dense Lambda: block diagonal with each term's template repeated per level.
inline Eigen::MatrixXd dense_lambda(const std::vector<LambdaTemplate>& templates,
                                    const std::vector<Eigen::Index>& nlevels) {
    Eigen::Index q = 0;
    for (std::size_t i = 0; i < templates.size(); ++i) q += templates[i].p() * nlevels[i];
    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(q, q);
    Eigen::Index off = 0;
    for (std::size_t i = 0; i < templates.size(); ++i) {
        const auto p = templates[i].p();
        for (Eigen::Index g = 0; g < nlevels[i]; ++g) {
            L.block(off, off, p, p) = templates[i].values;
            off += p;
        }
    }
    return L;
}

/// -2 log-likelihood via the n x n marginal covariance V = Z Lam Lam^T Z^T + I,
/// GLS beta-hat and the profiled sigma^2.
inline double dense_objective(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                              const Eigen::MatrixXd& Z, const Eigen::MatrixXd& Lambda) {
    const Eigen::Index n = y.size();
    Eigen::MatrixXd ZL = Z * Lambda;
    Eigen::MatrixXd V = ZL * ZL.transpose();
    V.diagonal().array() += 1.0;
    Eigen::LLT<Eigen::MatrixXd> llt(V);
    if (llt.info() != Eigen::Success) throw std::runtime_error("V factorization failed");

    const Eigen::MatrixXd Vi_X = llt.solve(X);
    const Eigen::VectorXd Vi_y = llt.solve(y);
    const Eigen::VectorXd beta = (X.transpose() * Vi_X).ldlt().solve(X.transpose() * Vi_y);
    const Eigen::VectorXd resid = y - X * beta;
    const double sigma2 = resid.dot(llt.solve(resid)) / static_cast<double>(n);

    double logdetV = 0;
    for (Eigen::Index i = 0; i < n; ++i) logdetV += 2.0 * std::log(llt.matrixL()(i, i));
    return logdetV + static_cast<double>(n) * (1.0 + std::log(2.0 * std::numbers::pi * sigma2));
}

/// REML criterion: adds log det(X^T V^-1 X) and replaces n by n - p.
inline double dense_objective_reml(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                   const Eigen::MatrixXd& Z, const Eigen::MatrixXd& Lambda) {
    const Eigen::Index n = y.size();
    const Eigen::Index p = X.cols();
    Eigen::MatrixXd ZL = Z * Lambda;
    Eigen::MatrixXd V = ZL * ZL.transpose();
    V.diagonal().array() += 1.0;
    Eigen::LLT<Eigen::MatrixXd> llt(V);

    const Eigen::MatrixXd XtViX = X.transpose() * llt.solve(X);
    const Eigen::VectorXd beta = XtViX.ldlt().solve(X.transpose() * llt.solve(y));
    const Eigen::VectorXd resid = y - X * beta;
    const double sigma2 = resid.dot(llt.solve(resid)) / static_cast<double>(n - p);

    double logdetV = 0;
    for (Eigen::Index i = 0; i < n; ++i) logdetV += 2.0 * std::log(llt.matrixL()(i, i));
    const double logdetXtViX = std::log(XtViX.determinant());
    return logdetV + logdetXtViX +
           static_cast<double>(n - p) * (1.0 + std::log(2.0 * std::numbers::pi * sigma2));
}

/// Omega_theta materialized densely from dense A and Lambda, then its lower
/// Cholesky factor.
inline Eigen::MatrixXd dense_omega_chol(const Eigen::MatrixXd& A_dense,
                                        const Eigen::MatrixXd& Lambda) {
    const Eigen::Index q = Lambda.rows();
    const Eigen::Index dim = A_dense.rows();
    Eigen::MatrixXd scale = Eigen::MatrixXd::Identity(dim, dim);
    scale.topLeftCorner(q, q) = Lambda;
    Eigen::MatrixXd omega = scale.transpose() * A_dense * scale;
    omega.topLeftCorner(q, q).diagonal().array() += 1.0;
    Eigen::LLT<Eigen::MatrixXd> llt(omega);
    if (llt.info() != Eigen::Success) throw std::runtime_error("Omega factorization failed");
    return llt.matrixL();
}

struct PlsResult {
    Eigen::VectorXd u;
    Eigen::VectorXd beta;
    double r2 = 0;
};

/// Minimize |y - X beta - Z Lambda u|^2 + |u|^2 by dense normal equations.
/// With beta free the minimum equals r_yy^2 from the blocked factor.
inline PlsResult dense_pls(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                           const Eigen::MatrixXd& Z, const Eigen::MatrixXd& Lambda) {
    const Eigen::Index q = Z.cols();
    const Eigen::Index p = X.cols();
    Eigen::MatrixXd ZL = Z * Lambda;
    Eigen::MatrixXd C(q + p, q + p);
    C.topLeftCorner(q, q) = ZL.transpose() * ZL + Eigen::MatrixXd::Identity(q, q);
    C.topRightCorner(q, p) = ZL.transpose() * X;
    C.bottomLeftCorner(p, q) = X.transpose() * ZL;
    C.bottomRightCorner(p, p) = X.transpose() * X;
    Eigen::VectorXd rhs(q + p);
    rhs.head(q) = ZL.transpose() * y;
    rhs.tail(p) = X.transpose() * y;
    Eigen::VectorXd sol = C.ldlt().solve(rhs);

    PlsResult r;
    r.u = sol.head(q);
    r.beta = sol.tail(p);
    const Eigen::VectorXd resid = y - X * r.beta - ZL * r.u;
    r.r2 = resid.squaredNorm() + r.u.squaredNorm();
    return r;
}

/// Same minimization at fixed beta.
inline PlsResult dense_pls_fixed_beta(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                      const Eigen::MatrixXd& Z, const Eigen::MatrixXd& Lambda,
                                      const Eigen::VectorXd& beta) {
    const Eigen::Index q = Z.cols();
    Eigen::MatrixXd ZL = Z * Lambda;
    Eigen::MatrixXd C = ZL.transpose() * ZL + Eigen::MatrixXd::Identity(q, q);
    const Eigen::VectorXd ytil = y - X * beta;
    PlsResult r;
    r.u = C.ldlt().solve(ZL.transpose() * ytil);
    r.beta = beta;
    const Eigen::VectorXd resid = ytil - ZL * r.u;
    r.r2 = resid.squaredNorm() + r.u.squaredNorm();
    return r;
}

}  // namespace reference
}  // namespace blocklmm
