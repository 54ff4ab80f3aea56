// Structure-tagged block storage for the blocked Gram matrix and its factor.
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace blocklmm {

enum class BlockTag { Diagonal, Sparse, Dense, BlockDiagonal };

inline const char* tag_name(BlockTag t) {
    switch (t) {
        case BlockTag::Diagonal: return "Diagonal";
        case BlockTag::Sparse: return "Sparse";
        case BlockTag::Dense: return "Dense";
        case BlockTag::BlockDiagonal: return "BlkDiag";
    }
    return "?";
}

inline const char* tag_abbrev(BlockTag t) {
    return t == BlockTag::Diagonal ? "Diag" : tag_name(t);
}

struct DiagonalBlock {
    Eigen::VectorXd d;
};

/// Compressed-column storage with sorted row indices. For blocks between two
/// vector-valued terms the pattern is allocated at level-pair granularity:
/// every (row level, column level) pair observed in the data contributes a
/// full p_i x p_j tile of stored entries, so Lambda scaling and the
/// column-1 triangular solve never change the pattern.
struct SparseBlock {
    Eigen::Index rows = 0, cols = 0;
    std::vector<std::int64_t> colptr;  // size cols + 1
    std::vector<std::int32_t> rowval;
    std::vector<double> nzval;

    std::int64_t nnz() const { return static_cast<std::int64_t>(rowval.size()); }
};

struct DenseBlock {
    Eigen::MatrixXd m;
};

struct BlockDiagonalBlock {
    Eigen::Index p = 0;                  // tile size
    std::vector<Eigen::MatrixXd> tiles;  // one p x p tile per level
};

struct Block {
    BlockTag tag = BlockTag::Dense;
    std::variant<DiagonalBlock, SparseBlock, DenseBlock, BlockDiagonalBlock> data;

    DiagonalBlock& diag() { return std::get<DiagonalBlock>(data); }
    const DiagonalBlock& diag() const { return std::get<DiagonalBlock>(data); }
    SparseBlock& sparse() { return std::get<SparseBlock>(data); }
    const SparseBlock& sparse() const { return std::get<SparseBlock>(data); }
    DenseBlock& dense() { return std::get<DenseBlock>(data); }
    const DenseBlock& dense() const { return std::get<DenseBlock>(data); }
    BlockDiagonalBlock& blockdiag() { return std::get<BlockDiagonalBlock>(data); }
    const BlockDiagonalBlock& blockdiag() const { return std::get<BlockDiagonalBlock>(data); }

    Eigen::Index rows() const {
        switch (tag) {
            case BlockTag::Diagonal: return diag().d.size();
            case BlockTag::Sparse: return sparse().rows;
            case BlockTag::Dense: return dense().m.rows();
            case BlockTag::BlockDiagonal: {
                const auto& b = blockdiag();
                return b.p * static_cast<Eigen::Index>(b.tiles.size());
            }
        }
        return 0;
    }
    Eigen::Index cols() const {
        switch (tag) {
            case BlockTag::Diagonal: return diag().d.size();
            case BlockTag::Sparse: return sparse().cols;
            case BlockTag::Dense: return dense().m.cols();
            case BlockTag::BlockDiagonal: return rows();
        }
        return 0;
    }
};

/// Dense materialization, mainly for tests and small-model oracles.
inline Eigen::MatrixXd densify(const Block& b) {
    switch (b.tag) {
        case BlockTag::Diagonal:
            return b.diag().d.asDiagonal();
        case BlockTag::Dense:
            return b.dense().m;
        case BlockTag::BlockDiagonal: {
            const auto& bd = b.blockdiag();
            Eigen::MatrixXd m = Eigen::MatrixXd::Zero(b.rows(), b.rows());
            for (std::size_t g = 0; g < bd.tiles.size(); ++g)
                m.block(g * bd.p, g * bd.p, bd.p, bd.p) = bd.tiles[g];
            return m;
        }
        case BlockTag::Sparse: {
            const auto& s = b.sparse();
            Eigen::MatrixXd m = Eigen::MatrixXd::Zero(s.rows, s.cols);
            for (Eigen::Index c = 0; c < s.cols; ++c)
                for (std::int64_t k = s.colptr[c]; k < s.colptr[c + 1]; ++k)
                    m(s.rowval[k], c) = s.nzval[k];
            return m;
        }
    }
    throw std::logic_error("bad tag");
}

/// Structural nonzero count; on-diagonal dense / block-diagonal storage is
/// counted as its lower triangle.
inline std::int64_t structural_nnz(const Block& b, bool on_diagonal) {
    switch (b.tag) {
        case BlockTag::Diagonal: return b.diag().d.size();
        case BlockTag::Sparse: return b.sparse().nnz();
        case BlockTag::Dense: {
            const auto r = b.dense().m.rows(), c = b.dense().m.cols();
            return on_diagonal ? r * (r + 1) / 2 : r * c;
        }
        case BlockTag::BlockDiagonal: {
            const auto& bd = b.blockdiag();
            return static_cast<std::int64_t>(bd.tiles.size()) * bd.p * (bd.p + 1) / 2;
        }
    }
    return 0;
}

inline std::int64_t storage_bytes(const Block& b) {
    switch (b.tag) {
        case BlockTag::Diagonal: return b.diag().d.size() * 8;
        case BlockTag::Sparse: {
            const auto& s = b.sparse();
            return s.nnz() * 12 + static_cast<std::int64_t>(s.colptr.size()) * 8;
        }
        case BlockTag::Dense: return b.dense().m.size() * 8;
        case BlockTag::BlockDiagonal: {
            const auto& bd = b.blockdiag();
            return static_cast<std::int64_t>(bd.tiles.size()) * bd.p * bd.p * 8;
        }
    }
    return 0;
}

/// Lower-triangular grid of blocks; entry (i,j) is present for i >= j.
struct BlockGrid {
    Eigen::Index nblocks = 0;
    std::vector<Block> blocks;  // row-major lower triangle

    void init(Eigen::Index nb) {
        nblocks = nb;
        blocks.assign(static_cast<std::size_t>(nb * (nb + 1) / 2), Block{});
    }
    Block& at(Eigen::Index i, Eigen::Index j) { return blocks[idx(i, j)]; }
    const Block& at(Eigen::Index i, Eigen::Index j) const { return blocks[idx(i, j)]; }

  private:
    std::size_t idx(Eigen::Index i, Eigen::Index j) const {
        if (j > i || i >= nblocks) throw std::out_of_range("block index");
        return static_cast<std::size_t>(i * (i + 1) / 2 + j);
    }
};

}  // namespace blocklmm
