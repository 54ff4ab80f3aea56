// Implicit representation of the relative covariance factor: per-term
// lower-triangular templates, the theta mapping, and Lambda-scaling of
// structured blocks. The full factor is never materialized.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "blocklmm/blocks.hpp"

namespace blocklmm {

struct ThetaError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Lower-triangular p x p template; entries outside the mask stay zero.
struct LambdaTemplate {
    Eigen::MatrixXd values;              // p x p, strictly lower + diagonal used
    std::vector<std::vector<bool>> mask; // free-parameter mask, diagonal all true

    Eigen::Index p() const { return values.rows(); }
    bool scalar() const { return p() == 1; }
    double scalar_value() const { return values(0, 0); }

    static LambdaTemplate from_mask(const std::vector<std::vector<bool>>& mask) {
        LambdaTemplate t;
        const auto p = static_cast<Eigen::Index>(mask.size());
        t.values = Eigen::MatrixXd::Zero(p, p);
        t.mask = mask;
        return t;
    }
};

/// Layout of the flat theta vector: per-term spans, column-major over the
/// masked lower triangle within each term.
struct ThetaMap {
    std::vector<std::pair<int, int>> spans;  // (offset, count) per term
    int total = 0;
    std::vector<double> lower_bounds;  // 0 for diagonal entries, -inf otherwise

    static ThetaMap build(const std::vector<LambdaTemplate>& templates) {
        ThetaMap map;
        for (const auto& t : templates) {
            const int off = map.total;
            int count = 0;
            const auto p = t.p();
            for (Eigen::Index c = 0; c < p; ++c)
                for (Eigen::Index r = c; r < p; ++r)
                    if (t.mask[r][c]) {
                        map.lower_bounds.push_back(r == c ? 0.0
                                                          : -std::numeric_limits<double>::infinity());
                        ++count;
                    }
            map.spans.emplace_back(off, count);
            map.total += count;
        }
        return map;
    }
};

inline void set_theta(std::vector<LambdaTemplate>& templates, const ThetaMap& map,
                      std::span<const double> theta) {
    if (static_cast<int>(theta.size()) != map.total)
        throw ThetaError("theta length " + std::to_string(theta.size()) + " does not match map total " +
                         std::to_string(map.total));
    int k = 0;
    for (auto& t : templates) {
        const auto p = t.p();
        for (Eigen::Index c = 0; c < p; ++c)
            for (Eigen::Index r = c; r < p; ++r)
                if (t.mask[r][c]) {
                    const double v = theta[k];
                    if (v < map.lower_bounds[k])
                        throw ThetaError("theta[" + std::to_string(k) + "] violates its lower bound");
                    t.values(r, c) = v;
                    ++k;
                }
    }
}

inline std::vector<double> initial_theta(const std::vector<LambdaTemplate>& templates) {
    std::vector<double> theta;
    for (const auto& t : templates) {
        const auto p = t.p();
        for (Eigen::Index c = 0; c < p; ++c)
            for (Eigen::Index r = c; r < p; ++r)
                if (t.mask[r][c]) theta.push_back(r == c ? 1.0 : 0.0);
    }
    return theta;
}

namespace detail {

// new = T^T * old on a p-subvector (T lower triangular).
inline void tmul_left(const Eigen::MatrixXd& T, double* v, Eigen::Index p) {
    for (Eigen::Index a = 0; a < p; ++a) {
        double s = 0;
        for (Eigen::Index r = a; r < p; ++r) s += T(r, a) * v[r];
        v[a] = s;
    }
}

}  // namespace detail

/// B <- Lambda_i^T * B, treating B's rows as runs of p per level.
inline void scale_block_left(const LambdaTemplate& t, Block& b) {
    const auto p = t.p();
    if (b.rows() % p != 0) throw ThetaError("row count not a multiple of template size");
    switch (b.tag) {
        case BlockTag::Diagonal: {
            if (p != 1) throw ThetaError("diagonal block requires a scalar template");
            b.diag().d *= t.scalar_value();
            return;
        }
        case BlockTag::Dense: {
            auto& m = b.dense().m;
            if (p == 1) {
                m *= t.scalar_value();
            } else {
                for (Eigen::Index g = 0; g < m.rows() / p; ++g)
                    m.middleRows(g * p, p) = t.values.transpose() * m.middleRows(g * p, p);
            }
            return;
        }
        case BlockTag::BlockDiagonal: {
            auto& bd = b.blockdiag();
            if (bd.p != p) throw ThetaError("tile size mismatch");
            for (auto& tile : bd.tiles) tile = t.values.transpose() * tile;
            return;
        }
        case BlockTag::Sparse: {
            auto& s = b.sparse();
            if (p == 1) {
                const double v = t.scalar_value();
                for (auto& x : s.nzval) x *= v;
            } else {
                // pattern stores whole level groups: runs of p consecutive rows
                for (Eigen::Index c = 0; c < s.cols; ++c) {
                    for (std::int64_t k = s.colptr[c]; k < s.colptr[c + 1]; k += p) {
                        if (k + p > s.colptr[c + 1] || s.rowval[k] % p != 0)
                            throw ThetaError("sparse block pattern not level-group aligned");
                        detail::tmul_left(t.values, &s.nzval[k], p);
                    }
                }
            }
            return;
        }
    }
}

/// B <- B * Lambda_j, treating B's columns as runs of p per level.
inline void scale_block_right(Block& b, const LambdaTemplate& t) {
    const auto p = t.p();
    if (b.cols() % p != 0) throw ThetaError("column count not a multiple of template size");
    switch (b.tag) {
        case BlockTag::Diagonal: {
            if (p != 1) throw ThetaError("diagonal block requires a scalar template");
            b.diag().d *= t.scalar_value();
            return;
        }
        case BlockTag::Dense: {
            auto& m = b.dense().m;
            if (p == 1) {
                m *= t.scalar_value();
            } else {
                for (Eigen::Index g = 0; g < m.cols() / p; ++g)
                    m.middleCols(g * p, p) = m.middleCols(g * p, p) * t.values;
            }
            return;
        }
        case BlockTag::BlockDiagonal: {
            auto& bd = b.blockdiag();
            if (bd.p != p) throw ThetaError("tile size mismatch");
            for (auto& tile : bd.tiles) tile = tile * t.values;
            return;
        }
        case BlockTag::Sparse: {
            auto& s = b.sparse();
            if (p == 1) {
                const double v = t.scalar_value();
                for (auto& x : s.nzval) x *= v;
            } else {
                // columns of one level group share their row pattern
                for (Eigen::Index g = 0; g < s.cols / p; ++g) {
                    const Eigen::Index c0 = g * p;
                    const std::int64_t len = s.colptr[c0 + 1] - s.colptr[c0];
                    for (std::int64_t r = 0; r < len; ++r) {
                        double row[8];  // p_i <= 8 is far beyond practical template sizes
                        if (p > 8) throw ThetaError("template size too large");
                        for (Eigen::Index c = 0; c < p; ++c)
                            row[c] = s.nzval[s.colptr[c0 + c] + r];
                        for (Eigen::Index c = 0; c < p; ++c) {
                            double acc = 0;
                            for (Eigen::Index m = c; m < p; ++m) acc += row[m] * t.values(m, c);
                            s.nzval[s.colptr[c0 + c] + r] = acc;
                        }
                    }
                }
            }
            return;
        }
    }
}

}  // namespace blocklmm
