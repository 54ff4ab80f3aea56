// Bound-constrained derivative-free optimization of the profiled objective
// and extraction of post-fit quantities (once, at convergence).
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "blocklmm/factor.hpp"

namespace blocklmm {

struct FitOptions {
    bool reml = false;
    int max_evals = 2000;
    double ftol_abs = 1e-8;
    double xtol_abs = 1e-6;
    std::optional<std::vector<double>> initial_theta;
    // per-evaluation progress hook: (eval#, theta, objective)
    std::function<void(int, std::span<const double>, double)> progress;
};

struct VarCorr {
    std::string grouping;
    std::vector<std::string> column_names;
    Eigen::MatrixXd cov;   // sigma^2 * T T^T
    std::vector<std::vector<bool>> corr_mask;
};

struct FitResult {
    std::vector<double> theta;
    Eigen::VectorXd beta;
    Eigen::VectorXd se;
    double sigma2 = 0;
    std::vector<VarCorr> varcorr;
    double objective = 0;
    double aic = 0, aicc = 0, bic = 0;
    int df = 0;
    int n_evals = 0;
    bool converged = false;
    bool reml = false;
    bool perfect_fit = false;
};

namespace detail {

// Nelder-Mead with projection onto the lower bounds. Stops when the simplex
// function spread falls below ftol_abs or its diameter below xtol_abs.
struct NelderMead {
    std::function<double(std::span<const double>)> f;
    std::vector<double> lower;
    double ftol_abs = 1e-8;
    double xtol_abs = 1e-6;
    int max_evals = 2000;
    double step = 0.25;  // initial simplex edge length

    int n_evals = 0;
    bool converged = false;
    double best_f = 0;

    std::vector<double> minimize(std::vector<double> x0) {
        const std::size_t d = x0.size();
        project(x0);
        std::vector<std::vector<double>> xs;
        std::vector<double> fs;
        xs.push_back(x0);
        fs.push_back(eval(x0));
        for (std::size_t i = 0; i < d; ++i) {
            auto x = x0;
            x[i] += step;
            project(x);
            xs.push_back(x);
            fs.push_back(eval(x));
        }

        while (n_evals < max_evals) {
            // sort ascending by f
            std::vector<std::size_t> ord(xs.size());
            for (std::size_t i = 0; i < ord.size(); ++i) ord[i] = i;
            std::sort(ord.begin(), ord.end(), [&](std::size_t a, std::size_t b) { return fs[a] < fs[b]; });
            reorder(xs, fs, ord);

            if (fs.back() - fs.front() <= ftol_abs || diameter(xs) <= xtol_abs) {
                converged = true;
                break;
            }

            std::vector<double> centroid(d, 0.0);
            for (std::size_t i = 0; i + 1 < xs.size(); ++i)
                for (std::size_t c = 0; c < d; ++c) centroid[c] += xs[i][c] / static_cast<double>(d);

            auto propose = [&](double coef) {
                std::vector<double> x(d);
                for (std::size_t c = 0; c < d; ++c)
                    x[c] = centroid[c] + coef * (centroid[c] - xs.back()[c]);
                project(x);
                return x;
            };

            auto xr = propose(1.0);
            const double fr = eval(xr);
            if (fr < fs.front()) {
                auto xe = propose(2.0);
                const double fe = eval(xe);
                if (fe < fr) {
                    xs.back() = xe;
                    fs.back() = fe;
                } else {
                    xs.back() = xr;
                    fs.back() = fr;
                }
            } else if (fr < fs[fs.size() - 2]) {
                xs.back() = xr;
                fs.back() = fr;
            } else {
                const bool outside = fr < fs.back();
                auto xc = propose(outside ? 0.5 : -0.5);
                const double fc = eval(xc);
                if (fc < std::min(fr, fs.back())) {
                    xs.back() = xc;
                    fs.back() = fc;
                } else {
                    // shrink toward the best vertex
                    for (std::size_t i = 1; i < xs.size(); ++i) {
                        for (std::size_t c = 0; c < d; ++c)
                            xs[i][c] = xs[0][c] + 0.5 * (xs[i][c] - xs[0][c]);
                        project(xs[i]);
                        fs[i] = eval(xs[i]);
                        if (n_evals >= max_evals) break;
                    }
                }
            }
        }

        std::size_t best = 0;
        for (std::size_t i = 1; i < fs.size(); ++i)
            if (fs[i] < fs[best]) best = i;
        best_f = fs[best];
        return xs[best];
    }

  private:
    double eval(const std::vector<double>& x) {
        ++n_evals;
        return f(x);
    }
    void project(std::vector<double>& x) const {
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::max(x[i], lower[i]);
    }
    static void reorder(std::vector<std::vector<double>>& xs, std::vector<double>& fs,
                        const std::vector<std::size_t>& ord) {
        std::vector<std::vector<double>> xs2(xs.size());
        std::vector<double> fs2(fs.size());
        for (std::size_t i = 0; i < ord.size(); ++i) {
            xs2[i] = std::move(xs[ord[i]]);
            fs2[i] = fs[ord[i]];
        }
        xs = std::move(xs2);
        fs = std::move(fs2);
    }
    static double diameter(const std::vector<std::vector<double>>& xs) {
        double dmax = 0;
        for (std::size_t i = 1; i < xs.size(); ++i) {
            double d = 0;
            for (std::size_t c = 0; c < xs[i].size(); ++c)
                d = std::max(d, std::abs(xs[i][c] - xs[0][c]));
            dmax = std::max(dmax, d);
        }
        return dmax;
    }
};

}  // namespace detail

inline double sigma2(const Model& model, bool reml = false) {
    if (!model.factored) throw FactorError("sigma2 requested before update_L");
    const double ryy = r_yy(model);
    const double denom = reml ? static_cast<double>(model.dims.n - model.dims.p)
                              : static_cast<double>(model.dims.n);
    return ryy * ryy / denom;
}

/// beta-hat from the p x p triangular system in L's final block, plus
/// standard errors from the triangular inverse.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> fixed_effects(const Model& model,
                                                                 bool reml = false) {
    if (!model.factored) throw FactorError("fixed_effects requested before update_L");
    const Eigen::Index p = model.dims.p;
    const auto& last = model.L.at(model.A.k, model.A.k).dense().m;
    const Eigen::MatrixXd lxx = last.topLeftCorner(p, p);  // R_XX^T
    for (Eigen::Index i = 0; i < p; ++i)
        if (lxx(i, i) <= 0.0) throw FactorError("rank-deficient fixed-effects matrix");

    // R_XX beta = r_Xy  <=>  L_XX^T beta = (y-row of the final block)^T
    Eigen::VectorXd beta = last.row(p).head(p).transpose();
    lxx.triangularView<Eigen::Lower>().transpose().solveInPlace(beta);

    const double sigma = std::sqrt(sigma2(model, reml));
    Eigen::MatrixXd kinv = Eigen::MatrixXd::Identity(p, p);
    lxx.triangularView<Eigen::Lower>().solveInPlace(kinv);  // kinv = L_XX^{-1}
    Eigen::VectorXd se(p);
    for (Eigen::Index j = 0; j < p; ++j) se[j] = sigma * kinv.col(j).norm();  // rows of R_XX^{-1}
    return {std::move(beta), std::move(se)};
}

/// Conditional modes: solve R_ZZ u = r_Zy - R_ZX beta-hat through the blocked
/// factor, then b = Lambda u, reshaped levels x p per term.
inline std::vector<Eigen::MatrixXd> conditional_modes(const Model& model, bool reml = false) {
    if (!model.factored) throw FactorError("conditional_modes requested before update_L");
    const Eigen::Index k = model.A.k;
    const Eigen::Index p = model.dims.p;
    const auto [beta, se] = fixed_effects(model, reml);
    (void)se;

    // rhs_j = r_Zy_j - R_ZX_j beta
    std::vector<Eigen::VectorXd> u(k);
    for (Eigen::Index j = 0; j < k; ++j) {
        const auto& xyblk = model.L.at(k, j).dense().m;  // (p+1) x q_j: [R_ZX^T ; r_Zy^T]
        u[j] = xyblk.row(p).transpose() - xyblk.topRows(p).transpose() * beta;
    }

    // backward block substitution with R_ZZ = L_ZZ^T
    for (Eigen::Index j = k - 1; j >= 0; --j) {
        for (Eigen::Index i = j + 1; i < k; ++i) {
            const Block& lij = model.L.at(i, j);
            if (lij.tag == BlockTag::Sparse) {
                const auto& s = lij.sparse();
                for (Eigen::Index c = 0; c < s.cols; ++c) {
                    double acc = 0;
                    for (std::int64_t t = s.colptr[c]; t < s.colptr[c + 1]; ++t)
                        acc += s.nzval[t] * u[i][s.rowval[t]];
                    u[j][c] -= acc;
                }
            } else {
                u[j].noalias() -= lij.dense().m.transpose() * u[i];
            }
        }
        const Block& djj = model.L.at(j, j);
        switch (djj.tag) {
            case BlockTag::Diagonal:
                u[j].array() /= djj.diag().d.array();
                break;
            case BlockTag::BlockDiagonal: {
                const auto& bd = djj.blockdiag();
                for (std::size_t g = 0; g < bd.tiles.size(); ++g) {
                    auto seg = u[j].segment(static_cast<Eigen::Index>(g) * bd.p, bd.p);
                    bd.tiles[g].triangularView<Eigen::Lower>().transpose().solveInPlace(seg);
                }
                break;
            }
            case BlockTag::Dense:
                djj.dense().m.triangularView<Eigen::Lower>().transpose().solveInPlace(u[j]);
                break;
            case BlockTag::Sparse:
                throw FactorError("diagonal factor cannot be sparse");
        }
    }

    std::vector<Eigen::MatrixXd> modes(k);
    for (Eigen::Index j = 0; j < k; ++j) {
        const auto& t = model.templates[j];
        const Eigen::Index pj = t.p();
        const Eigen::Index lj = model.terms[j].nlevels();
        modes[j].resize(lj, pj);
        for (Eigen::Index g = 0; g < lj; ++g)
            modes[j].row(g) =
                (t.values.triangularView<Eigen::Lower>() * u[j].segment(g * pj, pj)).transpose();
    }
    return modes;
}

inline FitResult fit(Model& model, const FitOptions& opts = {}) {
    if (model.tmap.total == 0) throw FactorError("model has no covariance parameters to fit");

    detail::NelderMead nm;
    nm.lower = model.tmap.lower_bounds;
    nm.ftol_abs = opts.ftol_abs;
    nm.xtol_abs = opts.xtol_abs;
    nm.max_evals = opts.max_evals;
    int eval_no = 0;
    nm.f = [&](std::span<const double> theta) {
        update_L(model, theta);
        const double obj = opts.reml ? objective_reml(model) : objective(model);
        if (opts.progress) opts.progress(++eval_no, theta, obj);
        return obj;
    };

    std::vector<double> theta0 =
        opts.initial_theta ? *opts.initial_theta : initial_theta(model.templates);
    // restart with a shrinking simplex until the optimum stops moving; this
    // guards against premature simplex collapse far from the minimizer
    std::vector<double> best = nm.minimize(std::move(theta0));
    int total_evals = nm.n_evals;
    bool converged = nm.converged;
    double best_f = nm.best_f;
    for (int restart = 0; restart < 4 && converged && total_evals < opts.max_evals; ++restart) {
        nm.n_evals = 0;
        nm.converged = false;
        nm.max_evals = opts.max_evals - total_evals;
        nm.step = restart == 0 ? 0.05 : 0.01;
        auto cand = nm.minimize(best);
        total_evals += nm.n_evals;
        converged = nm.converged;
        const bool improved = nm.best_f < best_f - opts.ftol_abs;
        if (nm.best_f < best_f) {
            best = std::move(cand);
            best_f = nm.best_f;
        }
        if (!improved) break;
    }
    update_L(model, best);  // re-install the optimum before extraction

    FitResult r;
    r.theta = best;
    r.reml = opts.reml;
    r.n_evals = total_evals;
    r.converged = converged;
    r.objective = opts.reml ? objective_reml(model) : objective(model);
    r.perfect_fit = model.perfect_fit;
    r.sigma2 = sigma2(model, opts.reml);
    auto [beta, se] = fixed_effects(model, opts.reml);
    r.beta = std::move(beta);
    r.se = std::move(se);

    for (std::size_t i = 0; i < model.templates.size(); ++i) {
        VarCorr vc;
        vc.grouping = model.terms[i].grouping;
        for (const auto& col : model.terms[i].columns)
            vc.column_names.push_back(col.intercept ? "(Intercept)" : col.name);
        const auto& T = model.templates[i].values;
        vc.cov = r.sigma2 * (T * T.transpose());
        vc.corr_mask = model.terms[i].corr_mask;
        r.varcorr.push_back(std::move(vc));
    }

    r.df = model.tmap.total + static_cast<int>(model.dims.p) + 1;
    const double n = static_cast<double>(model.dims.n);
    r.aic = r.objective + 2.0 * r.df;
    r.bic = r.objective + r.df * std::log(n);
    r.aicc = r.aic + 2.0 * r.df * (r.df + 1.0) / (n - r.df - 1.0);
    return r;
}

}  // namespace blocklmm
