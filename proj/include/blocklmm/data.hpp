// CSV loading, categorical encoding and model-matrix construction.
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "blocklmm/formula.hpp"

namespace blocklmm {

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Column {
    std::string name;
    bool numeric = false;
    std::vector<double> num;       // when numeric
    std::vector<std::string> cat;  // otherwise
};

struct DataTable {
    std::vector<Column> columns;
    std::size_t nrows = 0;

    const Column* find(const std::string& name) const {
        for (const auto& c : columns)
            if (c.name == name) return &c;
        return nullptr;
    }
};

namespace detail {

// RFC-4180-ish: double quotes with "" escapes, no embedded newlines.
inline std::vector<std::string> split_csv_line(const std::string& line, std::size_t lineno) {
    std::vector<std::string> out;
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field += c;
            }
        } else if (c == '"' && field.empty()) {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(field));
            field.clear();
        } else if (c != '\r') {
            field += c;
        }
    }
    if (quoted) throw DataError("unterminated quote on line " + std::to_string(lineno));
    out.push_back(std::move(field));
    return out;
}

inline bool parse_double(const std::string& s, double& out) {
    if (s.empty()) return false;
    char* end = nullptr;
    out = std::strtod(s.c_str(), &end);
    return end == s.c_str() + s.size();
}

}  // namespace detail

inline DataTable load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open file: " + path);

    std::string line;
    if (!std::getline(in, line)) throw DataError("empty file: " + path);
    auto header = detail::split_csv_line(line, 1);

    std::vector<std::vector<std::string>> cells(header.size());
    std::size_t nrows = 0;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() && in.eof()) break;
        auto row = detail::split_csv_line(line, lineno);
        if (row.size() != header.size())
            throw DataError("ragged row at line " + std::to_string(lineno) + ": expected " +
                            std::to_string(header.size()) + " fields, got " + std::to_string(row.size()));
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (row[c].empty())
                throw DataError("missing value at row " + std::to_string(nrows + 1) + ", column " +
                                header[c]);
            cells[c].push_back(std::move(row[c]));
        }
        ++nrows;
    }
    if (nrows == 0) throw DataError("no data rows in " + path);

    DataTable table;
    table.nrows = nrows;
    for (std::size_t c = 0; c < header.size(); ++c) {
        Column col;
        col.name = header[c];
        col.numeric = true;
        std::vector<double> vals(nrows);
        for (std::size_t r = 0; r < nrows; ++r) {
            if (!detail::parse_double(cells[c][r], vals[r])) {
                col.numeric = false;
                break;
            }
        }
        if (col.numeric)
            col.num = std::move(vals);
        else
            col.cat = std::move(cells[c]);
        table.columns.push_back(std::move(col));
    }
    return table;
}

/// Fixed-effects columns with the response appended as the last column.
struct XyMat {
    Eigen::MatrixXd m;  // n x (p+1)
    std::vector<std::string> names;

    Eigen::Index n() const { return m.rows(); }
    Eigen::Index p() const { return m.cols() - 1; }
};

/// Per-grouping-factor random-effects structure: level references plus the
/// dense per-observation regressor values (rows of X_i). The implied Z_i is
/// never materialized.
struct ReMat {
    std::string grouping;
    std::vector<std::int32_t> refs;   // 0-based level index per observation
    std::vector<std::string> levels;  // lexicographically sorted labels
    Eigen::MatrixXd wide;             // n x p
    std::vector<Regressor> columns;
    std::vector<std::vector<bool>> corr_mask;

    Eigen::Index nlevels() const { return static_cast<Eigen::Index>(levels.size()); }
    Eigen::Index p() const { return wide.cols(); }
    Eigen::Index q() const { return nlevels() * p(); }
};

struct ModelDims {
    Eigen::Index n = 0, p = 0, k = 0;
    std::vector<Eigen::Index> p_i, l_i, q_i;
    Eigen::Index q = 0;
    Eigen::Index augmented = 0;  // q + p + 1
};

inline std::tuple<XyMat, std::vector<ReMat>, ModelDims> build_matrices(const FormulaAST& ast,
                                                                       const std::vector<TermSpec>& specs,
                                                                       const DataTable& table) {
    const auto n = static_cast<Eigen::Index>(table.nrows);

    auto numeric_col = [&](const std::string& name) -> const Column& {
        const Column* c = table.find(name);
        if (!c) throw DataError("unknown column: " + name);
        if (!c->numeric) throw DataError("categorical column '" + name + "' used as a numeric covariate");
        return *c;
    };

    XyMat xy;
    const Eigen::Index p = (ast.fixed_intercept ? 1 : 0) + static_cast<Eigen::Index>(ast.fixed_covariates.size());
    if (p < 1) throw DataError("fixed-effects part is empty (use at least an intercept)");
    xy.m.resize(n, p + 1);
    Eigen::Index col = 0;
    if (ast.fixed_intercept) {
        xy.m.col(col).setOnes();
        xy.names.push_back("(Intercept)");
        ++col;
    }
    for (const auto& name : ast.fixed_covariates) {
        const Column& c = numeric_col(name);
        xy.m.col(col) = Eigen::Map<const Eigen::VectorXd>(c.num.data(), n);
        xy.names.push_back(name);
        ++col;
    }
    {
        const Column& c = numeric_col(ast.response);
        xy.m.col(col) = Eigen::Map<const Eigen::VectorXd>(c.num.data(), n);
        xy.names.push_back(ast.response);
    }

    std::vector<ReMat> rems;
    for (const auto& spec : specs) {
        const Column* g = table.find(spec.grouping);
        if (!g) throw DataError("unknown column: " + spec.grouping);
        if (g->numeric)
            throw DataError("numeric column '" + spec.grouping + "' used as a grouping factor");

        ReMat rm;
        rm.grouping = spec.grouping;
        rm.columns = spec.columns;
        rm.corr_mask = spec.corr_mask;

        std::map<std::string, std::int32_t> level_ids;  // lexicographic ordering
        for (const auto& label : g->cat) level_ids.emplace(label, 0);
        rm.levels.reserve(level_ids.size());
        for (auto& [label, id] : level_ids) {
            id = static_cast<std::int32_t>(rm.levels.size());
            rm.levels.push_back(label);
        }
        rm.refs.resize(table.nrows);
        for (std::size_t o = 0; o < table.nrows; ++o) rm.refs[o] = level_ids.at(g->cat[o]);

        const auto pi = static_cast<Eigen::Index>(spec.columns.size());
        rm.wide.resize(n, pi);
        for (Eigen::Index c = 0; c < pi; ++c) {
            if (spec.columns[c].intercept) {
                rm.wide.col(c).setOnes();
            } else {
                const Column& cc = numeric_col(spec.columns[c].name);
                rm.wide.col(c) = Eigen::Map<const Eigen::VectorXd>(cc.num.data(), n);
            }
        }
        rems.push_back(std::move(rm));
    }

    ModelDims dims;
    dims.n = n;
    dims.p = p;
    dims.k = static_cast<Eigen::Index>(rems.size());
    for (const auto& rm : rems) {
        dims.p_i.push_back(rm.p());
        dims.l_i.push_back(rm.nlevels());
        dims.q_i.push_back(rm.q());
        dims.q += rm.q();
    }
    dims.augmented = dims.q + dims.p + 1;
    return {std::move(xy), std::move(rems), dims};
}

}  // namespace blocklmm
