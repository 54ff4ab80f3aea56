// Blocked in-place Cholesky factorization of Omega_theta and evaluation of
// the profiled ML/REML objectives from the factor's diagonal data.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "blocklmm/blocks.hpp"
#include "blocklmm/data.hpp"
#include "blocklmm/formula.hpp"
#include "blocklmm/gram.hpp"
#include "blocklmm/lambda.hpp"

namespace blocklmm {

struct FactorError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Model {
    FormulaAST ast;
    XyMat xy;
    std::vector<ReMat> terms;  // model order (sorted unless sorting disabled)
    ModelDims dims;
    std::vector<LambdaTemplate> templates;
    ThetaMap tmap;
    GramBlocks A;
    BlockGrid L;
    std::vector<double> theta;
    bool factored = false;
    bool perfect_fit = false;
};

namespace detail {

inline Block allocate_L_block(const Block& a, Eigen::Index i, Eigen::Index j, Eigen::Index k) {
    Block b;
    if (j == 0 && i == 0) {
        b = a;  // Diagonal / BlockDiagonal structure is preserved in L[1,1]
    } else if (j == 0 && a.tag == BlockTag::Sparse) {
        b = a;  // same pattern, values rewritten per theta
    } else {
        b.tag = BlockTag::Dense;
        b.data = DenseBlock{Eigen::MatrixXd::Zero(a.rows(), a.cols())};
    }
    (void)i;
    (void)k;
    return b;
}

// L[i][j] <- A[i][j], converting structure where the tags differ.
inline void copy_block(const Block& a, Block& l) {
    if (a.tag == l.tag) {
        switch (a.tag) {
            case BlockTag::Diagonal: l.diag().d = a.diag().d; return;
            case BlockTag::Sparse: l.sparse().nzval = a.sparse().nzval; return;
            case BlockTag::Dense: l.dense().m = a.dense().m; return;
            case BlockTag::BlockDiagonal: l.blockdiag().tiles = a.blockdiag().tiles; return;
        }
    }
    // conversion target is always dense
    auto& m = l.dense().m;
    m.setZero();
    switch (a.tag) {
        case BlockTag::Diagonal:
            m.diagonal() = a.diag().d;
            return;
        case BlockTag::Sparse: {
            const auto& s = a.sparse();
            for (Eigen::Index c = 0; c < s.cols; ++c)
                for (std::int64_t t = s.colptr[c]; t < s.colptr[c + 1]; ++t)
                    m(s.rowval[t], c) = s.nzval[t];
            return;
        }
        case BlockTag::BlockDiagonal: {
            const auto& bd = a.blockdiag();
            for (std::size_t g = 0; g < bd.tiles.size(); ++g)
                m.block(g * bd.p, g * bd.p, bd.p, bd.p) = bd.tiles[g];
            return;
        }
        case BlockTag::Dense:
            m = a.dense().m;
            return;
    }
}

inline void add_identity(Block& b) {
    switch (b.tag) {
        case BlockTag::Diagonal:
            b.diag().d.array() += 1.0;
            return;
        case BlockTag::BlockDiagonal:
            for (auto& tile : b.blockdiag().tiles) tile.diagonal().array() += 1.0;
            return;
        case BlockTag::Dense:
            b.dense().m.diagonal().array() += 1.0;
            return;
        case BlockTag::Sparse:
            throw FactorError("cannot inflate a sparse diagonal block");
    }
}

// target -= left * right^T with structure-specialized kernels; when
// symmetric, only the lower triangle of the target is updated.
inline void downdate(Eigen::MatrixXd& target, const Block& left, const Block& right,
                     bool symmetric) {
    if (left.tag == BlockTag::Sparse && right.tag == BlockTag::Sparse) {
        const auto& a = left.sparse();
        const auto& b = right.sparse();
        // each pair of nonzeros in a shared column is a scalar rank-1 scatter
        for (Eigen::Index c = 0; c < a.cols; ++c) {
            for (std::int64_t kb = b.colptr[c]; kb < b.colptr[c + 1]; ++kb) {
                const auto cb = b.rowval[kb];
                const double vb = b.nzval[kb];
                double* tcol = target.col(cb).data();
                for (std::int64_t ka = a.colptr[c]; ka < a.colptr[c + 1]; ++ka) {
                    const auto ra = a.rowval[ka];
                    if (symmetric && ra < cb) continue;
                    tcol[ra] -= a.nzval[ka] * vb;
                }
            }
        }
        return;
    }
    if (left.tag == BlockTag::Dense && right.tag == BlockTag::Sparse) {
        const auto& a = left.dense().m;
        const auto& b = right.sparse();
        for (Eigen::Index c = 0; c < b.cols; ++c)
            for (std::int64_t kb = b.colptr[c]; kb < b.colptr[c + 1]; ++kb)
                target.col(b.rowval[kb]).noalias() -= a.col(c) * b.nzval[kb];
        return;
    }
    if (left.tag == BlockTag::Sparse && right.tag == BlockTag::Dense) {
        const auto& a = left.sparse();
        const auto& b = right.dense().m;
        for (Eigen::Index c = 0; c < a.cols; ++c)
            for (std::int64_t ka = a.colptr[c]; ka < a.colptr[c + 1]; ++ka)
                target.row(a.rowval[ka]).noalias() -= a.nzval[ka] * b.col(c).transpose();
        return;
    }
    if (left.tag == BlockTag::Dense && right.tag == BlockTag::Dense) {
        if (symmetric)
            target.selfadjointView<Eigen::Lower>().rankUpdate(left.dense().m, -1.0);
        else
            target.noalias() -= left.dense().m * right.dense().m.transpose();
        return;
    }
    throw FactorError("unsupported downdate kernel");
}

constexpr double kPivotFloorRel = 1e-13;

inline void chol_diagonal_vector(Eigen::VectorXd& d) {
    const double floor = kPivotFloorRel * d.maxCoeff();
    for (Eigen::Index i = 0; i < d.size(); ++i) {
        if (d[i] < floor || d[i] <= 0.0)
            throw FactorError("non-positive pivot in diagonal block (entry " + std::to_string(i) + ")");
        d[i] = std::sqrt(d[i]);
    }
}

inline void chol_dense_lower(Eigen::MatrixXd& m, const char* what) {
    const double floor = kPivotFloorRel * m.diagonal().maxCoeff();
    Eigen::LLT<Eigen::Ref<Eigen::MatrixXd>> llt(m);
    if (llt.info() != Eigen::Success || m.diagonal().minCoeff() < std::sqrt(std::max(floor, 0.0)))
        throw FactorError(std::string("Cholesky breakdown in ") + what);
    m.triangularView<Eigen::StrictlyUpper>().setZero();
}

// last diagonal block: a zero trailing (response) pivot is a perfect fit,
// a zero earlier pivot means rank-deficient X
inline bool chol_last_block(Eigen::MatrixXd& m) {
    const Eigen::Index n = m.rows();
    const double floor = kPivotFloorRel * m.diagonal().maxCoeff();
    bool perfect = false;
    for (Eigen::Index j = 0; j < n; ++j) {
        double piv = m(j, j);
        for (Eigen::Index c = 0; c < j; ++c) piv -= m(j, c) * m(j, c);
        if (piv < floor) {
            if (j == n - 1 && piv > -floor) {
                m(j, j) = 0.0;
                perfect = true;
                break;
            }
            throw FactorError("rank-deficient fixed-effects matrix (model-specification error)");
        }
        piv = std::sqrt(piv);
        m(j, j) = piv;
        for (Eigen::Index i = j + 1; i < n; ++i) {
            double s = m(i, j);
            for (Eigen::Index c = 0; c < j; ++c) s -= m(i, c) * m(j, c);
            m(i, j) = s / piv;
        }
    }
    m.triangularView<Eigen::StrictlyUpper>().setZero();
    return perfect;
}

// X <- X * Ljj^{-T} for the structured diagonal factors
inline void solve_against_diag(Block& x, const Block& ljj) {
    switch (ljj.tag) {
        case BlockTag::Diagonal: {
            const auto& d = ljj.diag().d;
            if (x.tag == BlockTag::Sparse) {
                auto& s = x.sparse();
                for (Eigen::Index c = 0; c < s.cols; ++c)
                    for (std::int64_t t = s.colptr[c]; t < s.colptr[c + 1]; ++t) s.nzval[t] /= d[c];
            } else {
                auto& m = x.dense().m;
                m.array().rowwise() /= d.transpose().array();
            }
            return;
        }
        case BlockTag::BlockDiagonal: {
            const auto& bd = ljj.blockdiag();
            const Eigen::Index p = bd.p;
            if (x.tag == BlockTag::Sparse) {
                auto& s = x.sparse();
                for (std::size_t g = 0; g < bd.tiles.size(); ++g) {
                    const auto& t = bd.tiles[g];
                    const Eigen::Index c0 = static_cast<Eigen::Index>(g) * p;
                    const std::int64_t len = s.colptr[c0 + 1] - s.colptr[c0];
                    for (std::int64_t r = 0; r < len; ++r) {
                        // row vector w over the level's p columns: solve w T^T = w_old,
                        // i.e. forward substitution with the lower tile
                        for (Eigen::Index c = 0; c < p; ++c) {
                            double s2 = s.nzval[s.colptr[c0 + c] + r];
                            for (Eigen::Index m = 0; m < c; ++m)
                                s2 -= t(c, m) * s.nzval[s.colptr[c0 + m] + r];
                            s.nzval[s.colptr[c0 + c] + r] = s2 / t(c, c);
                        }
                    }
                }
            } else {
                auto& m = x.dense().m;
                for (std::size_t g = 0; g < bd.tiles.size(); ++g) {
                    auto cols = m.middleCols(static_cast<Eigen::Index>(g) * p, p);
                    bd.tiles[g].triangularView<Eigen::Lower>().transpose().solveInPlace<Eigen::OnTheRight>(
                        cols);
                }
            }
            return;
        }
        case BlockTag::Dense: {
            auto& m = x.dense().m;
            ljj.dense().m.triangularView<Eigen::Lower>().transpose().solveInPlace<Eigen::OnTheRight>(m);
            return;
        }
        case BlockTag::Sparse:
            throw FactorError("diagonal factor cannot be sparse");
    }
}

inline double log_diag_sum(const Block& b) {
    double s = 0;
    switch (b.tag) {
        case BlockTag::Diagonal:
            for (Eigen::Index i = 0; i < b.diag().d.size(); ++i) s += std::log(b.diag().d[i]);
            return s;
        case BlockTag::BlockDiagonal:
            for (const auto& t : b.blockdiag().tiles)
                for (Eigen::Index i = 0; i < t.rows(); ++i) s += std::log(t(i, i));
            return s;
        case BlockTag::Dense:
            for (Eigen::Index i = 0; i < b.dense().m.rows(); ++i) s += std::log(b.dense().m(i, i));
            return s;
        case BlockTag::Sparse:
            throw FactorError("diagonal factor cannot be sparse");
    }
    return s;
}

}  // namespace detail

inline void allocate_L(Model& model) {
    const Eigen::Index k = model.A.k;
    model.L.init(k + 1);
    for (Eigen::Index i = 0; i <= k; ++i)
        for (Eigen::Index j = 0; j <= i; ++j)
            model.L.at(i, j) = detail::allocate_L_block(model.A.grid.at(i, j), i, j, k);
}

/// One profiled-objective evaluation's heavy step: install theta and redo the
/// blocked factorization in place. No allocation after the first call.
inline void update_L(Model& model, std::span<const double> theta) {
    set_theta(model.templates, model.tmap, theta);
    model.theta.assign(theta.begin(), theta.end());
    model.factored = false;
    model.perfect_fit = false;

    const Eigen::Index k = model.A.k;
    for (Eigen::Index j = 0; j <= k; ++j) {
        for (Eigen::Index i = j; i <= k; ++i) {
            Block& l = model.L.at(i, j);
            detail::copy_block(model.A.grid.at(i, j), l);
            if (i < k) scale_block_left(model.templates[i], l);
            if (j < k) scale_block_right(l, model.templates[j]);
            if (i == j && j < k) detail::add_identity(l);
        }
        for (Eigen::Index i = j; i <= k; ++i) {
            Block& l = model.L.at(i, j);
            if (l.tag != BlockTag::Dense) continue;  // j == 0 blocks have no downdate
            for (Eigen::Index c = 0; c < j; ++c)
                detail::downdate(l.dense().m, model.L.at(i, c), model.L.at(j, c), i == j);
        }
        Block& djj = model.L.at(j, j);
        switch (djj.tag) {
            case BlockTag::Diagonal:
                detail::chol_diagonal_vector(djj.diag().d);
                break;
            case BlockTag::BlockDiagonal:
                for (auto& tile : djj.blockdiag().tiles) detail::chol_dense_lower(tile, "random-effects tile");
                break;
            case BlockTag::Dense:
                if (j == k)
                    model.perfect_fit = detail::chol_last_block(djj.dense().m);
                else
                    detail::chol_dense_lower(djj.dense().m, "random-effects block");
                break;
            case BlockTag::Sparse:
                throw FactorError("diagonal factor cannot be sparse");
        }
        for (Eigen::Index i = j + 1; i <= k; ++i) detail::solve_against_diag(model.L.at(i, j), djj);
    }
    model.factored = true;
}

inline double log_det_rzz(const Model& model) {
    double s = 0;
    for (Eigen::Index j = 0; j < model.A.k; ++j) s += detail::log_diag_sum(model.L.at(j, j));
    return s;
}

inline double r_yy(const Model& model) {
    const auto& last = model.L.at(model.A.k, model.A.k).dense().m;
    return last(last.rows() - 1, last.cols() - 1);
}

/// Profiled -2 log-likelihood from the factor's diagonal data alone.
inline double objective(const Model& model) {
    if (!model.factored) throw FactorError("objective requested before update_L");
    const double n = static_cast<double>(model.dims.n);
    const double ryy = r_yy(model);
    if (ryy <= 0.0) return std::numeric_limits<double>::infinity();  // perfect fit
    return 2.0 * log_det_rzz(model) + n * (1.0 + std::log(2.0 * std::numbers::pi * ryy * ryy / n));
}

inline double objective_reml(const Model& model) {
    if (!model.factored) throw FactorError("objective requested before update_L");
    const double n = static_cast<double>(model.dims.n);
    const double p = static_cast<double>(model.dims.p);
    if (p >= n) throw FactorError("REML requires n > p");
    const double ryy = r_yy(model);
    if (ryy <= 0.0) return std::numeric_limits<double>::infinity();
    const auto& last = model.L.at(model.A.k, model.A.k).dense().m;
    double log_rxx = 0;
    for (Eigen::Index i = 0; i < model.dims.p; ++i) log_rxx += std::log(last(i, i));
    return 2.0 * log_det_rzz(model) + 2.0 * log_rxx +
           (n - p) * (1.0 + std::log(2.0 * std::numbers::pi * ryy * ryy / (n - p)));
}

inline std::int64_t nnz_L(const Model& model) { return grid_nnz(model.L); }
inline std::int64_t nnz_A(const Model& model) { return grid_nnz(model.A.grid); }

/// Total bytes of the blocked model representation (A and L).
inline std::int64_t footprint_bytes(const Model& model) {
    return grid_bytes(model.A.grid) + grid_bytes(model.L);
}

/// Build a model from parsed inputs. Terms are ordered by q_i descending
/// unless sort is disabled (the fill-in comparison path).
inline Model make_model(const FormulaAST& ast, const DataTable& table, bool sort = true) {
    if (ast.re_terms.empty()) throw DataError("a mixed model requires at least one random-effects term");
    Model m;
    m.ast = ast;
    auto specs = amalgamate(ast);
    auto [xy, rems, dims] = build_matrices(ast, specs, table);
    m.xy = std::move(xy);
    m.terms = sort ? sort_terms(std::move(rems)) : std::move(rems);
    // dims follow model order
    m.dims = dims;
    m.dims.p_i.clear();
    m.dims.l_i.clear();
    m.dims.q_i.clear();
    for (const auto& rm : m.terms) {
        m.dims.p_i.push_back(rm.p());
        m.dims.l_i.push_back(rm.nlevels());
        m.dims.q_i.push_back(rm.q());
    }
    for (const auto& rm : m.terms) m.templates.push_back(LambdaTemplate::from_mask(rm.corr_mask));
    m.tmap = ThetaMap::build(m.templates);
    m.A = assemble_A(m.terms, m.xy);
    allocate_L(m);
    return m;
}

/// Dense lower-triangular materialization of the blocked factor (tests only).
inline Eigen::MatrixXd densify_lower(const BlockGrid& g) {
    Eigen::Index dim = 0;
    std::vector<Eigen::Index> offs;
    for (Eigen::Index i = 0; i < g.nblocks; ++i) {
        offs.push_back(dim);
        dim += g.at(i, i).rows();
    }
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(dim, dim);
    for (Eigen::Index i = 0; i < g.nblocks; ++i)
        for (Eigen::Index j = 0; j <= i; ++j)
            m.block(offs[i], offs[j], g.at(i, j).rows(), g.at(i, j).cols()) = densify(g.at(i, j));
    return m;
}

}  // namespace blocklmm
