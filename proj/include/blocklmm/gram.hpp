// Term ordering and one-pass assembly of the blocked augmented Gram matrix.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdio>
#include <numeric>
#include <string>
#include <vector>

#include "blocklmm/blocks.hpp"
#include "blocklmm/data.hpp"

namespace blocklmm {

/// Stable sort by q_i descending; ties keep formula order. Placing the
/// largest term first keeps the [1,1] factor block diagonal and minimizes
/// fill-in in the first block column.
inline std::vector<ReMat> sort_terms(std::vector<ReMat> rems) {
    std::stable_sort(rems.begin(), rems.end(),
                     [](const ReMat& a, const ReMat& b) { return a.q() > b.q(); });
    return rems;
}

struct GramBlocks {
    BlockGrid grid;  // (k+1) x (k+1), last block row is the Xy part
    Eigen::Index k = 0;
};

namespace detail {

// Off-diagonal RE x RE block: CSC with level-pair granularity. Every observed
// (row level, col level) pair stores a full p_i x p_j tile so that Lambda
// scaling and the triangular solve against L[1,1] preserve the pattern.
inline Block assemble_cross_block(const ReMat& ri, const ReMat& rj) {
    const Eigen::Index n = ri.wide.rows();
    const Eigen::Index pi = ri.p(), pj = rj.p();
    const Eigen::Index li = ri.nlevels(), lj = rj.nlevels();

    std::vector<Eigen::Index> order(n);
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        if (rj.refs[a] != rj.refs[b]) return rj.refs[a] < rj.refs[b];
        return ri.refs[a] < ri.refs[b];
    });

    // level-pair pattern + accumulated tiles
    std::vector<std::int64_t> lev_colptr(lj + 1, 0);
    std::vector<std::int32_t> lev_row;
    std::vector<Eigen::MatrixXd> tiles;
    for (Eigen::Index t = 0; t < n;) {
        const std::int32_t cl = rj.refs[order[t]];
        const std::int32_t rl = ri.refs[order[t]];
        Eigen::MatrixXd tile = Eigen::MatrixXd::Zero(pi, pj);
        while (t < n && rj.refs[order[t]] == cl && ri.refs[order[t]] == rl) {
            const Eigen::Index o = order[t];
            tile.noalias() += ri.wide.row(o).transpose() * rj.wide.row(o);
            ++t;
        }
        lev_row.push_back(rl);
        tiles.push_back(std::move(tile));
        ++lev_colptr[cl + 1];
    }
    for (Eigen::Index c = 0; c < lj; ++c) lev_colptr[c + 1] += lev_colptr[c];

    const std::int64_t npairs = static_cast<std::int64_t>(lev_row.size());
    const double density = static_cast<double>(npairs) / (static_cast<double>(li) * lj);
    if (density > 0.5) {
        Block b;
        b.tag = BlockTag::Dense;
        Eigen::MatrixXd m = Eigen::MatrixXd::Zero(li * pi, lj * pj);
        for (Eigen::Index c = 0; c < lj; ++c)
            for (std::int64_t t = lev_colptr[c]; t < lev_colptr[c + 1]; ++t)
                m.block(lev_row[t] * pi, c * pj, pi, pj) = tiles[t];
        b.data = DenseBlock{std::move(m)};
        return b;
    }

    Block b;
    b.tag = BlockTag::Sparse;
    SparseBlock s;
    s.rows = li * pi;
    s.cols = lj * pj;
    s.colptr.assign(s.cols + 1, 0);
    s.rowval.resize(npairs * pi * pj);
    s.nzval.resize(npairs * pi * pj);
    std::int64_t k = 0;
    for (Eigen::Index c = 0; c < lj; ++c) {
        const std::int64_t len = lev_colptr[c + 1] - lev_colptr[c];
        for (Eigen::Index sub = 0; sub < pj; ++sub) {
            s.colptr[c * pj + sub] = k;
            for (std::int64_t t = lev_colptr[c]; t < lev_colptr[c + 1]; ++t)
                for (Eigen::Index r = 0; r < pi; ++r) {
                    s.rowval[k] = lev_row[t] * pi + static_cast<std::int32_t>(r);
                    s.nzval[k] = tiles[t](r, sub);
                    ++k;
                }
        }
        (void)len;
    }
    s.colptr[s.cols] = k;
    b.data = std::move(s);
    return b;
}

}  // namespace detail

/// Assemble the lower triangle of the augmented Gram matrix. The blocks are
/// independent of theta and computed exactly once per model.
inline GramBlocks assemble_A(const std::vector<ReMat>& rems, const XyMat& xy) {
    const Eigen::Index k = static_cast<Eigen::Index>(rems.size());
    const Eigen::Index n = xy.n();
    GramBlocks A;
    A.k = k;
    A.grid.init(k + 1);

    for (Eigen::Index i = 0; i < k; ++i) {
        const ReMat& ri = rems[i];
        for (const auto ref : ri.refs)
            if (ref < 0 || ref >= ri.nlevels()) throw DataError("level reference out of range");

        // diagonal block
        Block& di = A.grid.at(i, i);
        if (ri.p() == 1) {
            di.tag = BlockTag::Diagonal;
            Eigen::VectorXd d = Eigen::VectorXd::Zero(ri.nlevels());
            for (Eigen::Index o = 0; o < n; ++o) {
                const double x = ri.wide(o, 0);
                d[ri.refs[o]] += x * x;
            }
            di.data = DiagonalBlock{std::move(d)};
        } else {
            di.tag = BlockTag::BlockDiagonal;
            BlockDiagonalBlock bd;
            bd.p = ri.p();
            bd.tiles.assign(ri.nlevels(), Eigen::MatrixXd::Zero(bd.p, bd.p));
            for (Eigen::Index o = 0; o < n; ++o)
                bd.tiles[ri.refs[o]].noalias() += ri.wide.row(o).transpose() * ri.wide.row(o);
            di.data = std::move(bd);
        }

        for (Eigen::Index j = 0; j < i; ++j)
            A.grid.at(i, j) = detail::assemble_cross_block(ri, rems[j]);

        // Xy row against this term
        Block& xb = A.grid.at(k, i);
        xb.tag = BlockTag::Dense;
        Eigen::MatrixXd m = Eigen::MatrixXd::Zero(xy.p() + 1, ri.q());
        for (Eigen::Index o = 0; o < n; ++o)
            m.middleCols(ri.refs[o] * ri.p(), ri.p()).noalias() +=
                xy.m.row(o).transpose() * ri.wide.row(o);
        xb.data = DenseBlock{std::move(m)};
    }

    Block& last = A.grid.at(k, k);
    last.tag = BlockTag::Dense;
    last.data = DenseBlock{xy.m.transpose() * xy.m};
    return A;
}

inline std::int64_t grid_nnz(const BlockGrid& g) {
    std::int64_t total = 0;
    for (Eigen::Index i = 0; i < g.nblocks; ++i)
        for (Eigen::Index j = 0; j <= i; ++j) total += structural_nnz(g.at(i, j), i == j);
    return total;
}

inline std::int64_t grid_bytes(const BlockGrid& g) {
    std::int64_t total = 0;
    for (Eigen::Index i = 0; i < g.nblocks; ++i)
        for (Eigen::Index j = 0; j <= i; ++j) total += storage_bytes(g.at(i, j));
    return total;
}

/// Fixed-width table of per-block structure tags, "A/L" where they differ.
inline std::string block_description(const GramBlocks& A, const BlockGrid& L,
                                     const std::vector<ReMat>& rems) {
    const Eigen::Index nb = A.grid.nblocks;
    std::vector<std::string> headers{"rows"};
    for (const auto& rm : rems) headers.push_back(rm.grouping);
    headers.push_back("fixed");

    std::vector<std::vector<std::string>> cells;
    for (Eigen::Index i = 0; i < nb; ++i) {
        std::vector<std::string> row;
        row.push_back(std::to_string(A.grid.at(i, i).rows()));
        for (Eigen::Index j = 0; j <= i; ++j) {
            const BlockTag at = A.grid.at(i, j).tag;
            const BlockTag lt = L.at(i, j).tag;
            row.push_back(at == lt ? tag_name(at)
                                   : std::string(tag_abbrev(at)) + "/" + tag_abbrev(lt));
        }
        cells.push_back(std::move(row));
    }

    std::vector<std::size_t> width(headers.size());
    for (std::size_t c = 0; c < headers.size(); ++c) {
        width[c] = headers[c].size();
        for (const auto& row : cells)
            if (c < row.size()) width[c] = std::max(width[c], row[c].size());
    }
    std::string out;
    auto append_row = [&](const std::vector<std::string>& row) {
        for (std::size_t c = 0; c < headers.size(); ++c) {
            std::string cell = c < row.size() ? row[c] : "";
            cell.resize(width[c], ' ');
            out += cell;
            if (c + 1 < headers.size()) out += "  ";
        }
        while (!out.empty() && out.back() == ' ') out.pop_back();
        out += '\n';
    };
    append_row(headers);
    for (const auto& row : cells) append_row(row);
    return out;
}

}  // namespace blocklmm
