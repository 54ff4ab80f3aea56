// Wilkinson-style mixed-model formula parsing and term amalgamation.
#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace blocklmm {

struct ParseError : std::runtime_error {
    ParseError(const std::string& msg, std::size_t pos)
        : std::runtime_error(msg + " (at position " + std::to_string(pos) + ")"), pos(pos) {}
    std::size_t pos;
};

/// One regressor inside a term: the intercept or a named numeric column.
struct Regressor {
    bool intercept = false;
    std::string name;  // empty when intercept

    friend bool operator==(const Regressor&, const Regressor&) = default;
};

/// A random-effects term `(expr | grouping)`, possibly wrapped in zerocorr(...).
struct RandomTerm {
    bool intercept = true;
    std::vector<std::string> covariates;  // source order
    std::string grouping;
    bool zerocorr = false;

    friend bool operator==(const RandomTerm&, const RandomTerm&) = default;
};

struct FormulaAST {
    std::string response;
    bool fixed_intercept = true;
    std::vector<std::string> fixed_covariates;  // source order
    std::vector<RandomTerm> re_terms;           // source order

    friend bool operator==(const FormulaAST&, const FormulaAST&) = default;
};

/// Amalgamated per-grouping-factor term: column set plus the lower-triangular
/// mask of free covariance parameters.
struct TermSpec {
    std::string grouping;
    std::vector<Regressor> columns;
    // corr_mask(r,c) for r >= c; diagonal always true.
    std::vector<std::vector<bool>> corr_mask;

    std::size_t p() const { return columns.size(); }
    int n_free() const {
        int n = 0;
        for (std::size_t r = 0; r < corr_mask.size(); ++r)
            for (std::size_t c = 0; c <= r; ++c)
                if (corr_mask[r][c]) ++n;
        return n;
    }
};

namespace detail {

enum class TokKind { Ident, Zero, One, Plus, Tilde, Bar, LParen, RParen, End };

struct Token {
    TokKind kind;
    std::string text;
    std::size_t pos;
};

inline bool ident_start(unsigned char c) {
    return std::isalpha(c) || c == '_' || c >= 0x80;
}
inline bool ident_char(unsigned char c) {
    return std::isalnum(c) || c == '_' || c == '.' || c >= 0x80;
}

class Lexer {
  public:
    explicit Lexer(std::string_view src) : src_(src) { advance(); }

    const Token& peek() const { return tok_; }
    Token take() {
        Token t = tok_;
        advance();
        return t;
    }

  private:
    void advance() {
        while (i_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[i_]))) ++i_;
        std::size_t start = i_;
        if (i_ >= src_.size()) {
            tok_ = {TokKind::End, "", start};
            return;
        }
        char c = src_[i_];
        switch (c) {
            case '+': tok_ = {TokKind::Plus, "+", start}; ++i_; return;
            case '~': tok_ = {TokKind::Tilde, "~", start}; ++i_; return;
            case '|': tok_ = {TokKind::Bar, "|", start}; ++i_; return;
            case '(': tok_ = {TokKind::LParen, "(", start}; ++i_; return;
            case ')': tok_ = {TokKind::RParen, ")", start}; ++i_; return;
            default: break;
        }
        if (c == '0' || c == '1') {
            ++i_;
            if (i_ < src_.size() && ident_char(static_cast<unsigned char>(src_[i_])))
                throw ParseError("numeric literal must be 0 or 1", start);
            tok_ = {c == '0' ? TokKind::Zero : TokKind::One, std::string(1, c), start};
            return;
        }
        if (ident_start(static_cast<unsigned char>(c))) {
            while (i_ < src_.size() && ident_char(static_cast<unsigned char>(src_[i_]))) ++i_;
            tok_ = {TokKind::Ident, std::string(src_.substr(start, i_ - start)), start};
            return;
        }
        throw ParseError(std::string("unexpected character '") + c + "'", start);
    }

    std::string_view src_;
    std::size_t i_ = 0;
    Token tok_{};
};

// Expression of 0/1 markers and covariate names, as found on either side
// of ~ or to the left of |.
struct TermExpr {
    bool saw_zero = false;
    bool saw_one = false;
    std::vector<std::string> covariates;
    bool intercept() const { return !saw_zero; }
};

inline TermExpr parse_term_expr(Lexer& lx) {
    TermExpr e;
    for (;;) {
        Token t = lx.take();
        switch (t.kind) {
            case TokKind::Zero:
                if (e.saw_one) throw ParseError("conflicting intercept markers 1 and 0", t.pos);
                e.saw_zero = true;
                break;
            case TokKind::One:
                if (e.saw_zero) throw ParseError("conflicting intercept markers 0 and 1", t.pos);
                e.saw_one = true;
                break;
            case TokKind::Ident:
                if (std::find(e.covariates.begin(), e.covariates.end(), t.text) != e.covariates.end())
                    throw ParseError("duplicate column '" + t.text + "' in term", t.pos);
                e.covariates.push_back(t.text);
                break;
            default:
                throw ParseError("expected column name, 0 or 1", t.pos);
        }
        if (lx.peek().kind != TokKind::Plus) return e;
        lx.take();
    }
}

inline RandomTerm parse_re_body(Lexer& lx, bool zerocorr) {
    TermExpr e = parse_term_expr(lx);
    Token bar = lx.take();
    if (bar.kind != TokKind::Bar) throw ParseError("expected '|' in random-effects term", bar.pos);
    Token g = lx.take();
    if (g.kind != TokKind::Ident) throw ParseError("expected grouping column after '|'", g.pos);
    Token close = lx.take();
    if (close.kind != TokKind::RParen) throw ParseError("expected ')'", close.pos);
    RandomTerm rt;
    rt.intercept = e.intercept();
    rt.covariates = std::move(e.covariates);
    rt.grouping = g.text;
    rt.zerocorr = zerocorr;
    return rt;
}

}  // namespace detail

inline FormulaAST parse_formula(std::string_view text) {
    using namespace detail;
    if (text.empty()) throw ParseError("empty formula", 0);
    Lexer lx(text);

    Token resp = lx.take();
    if (resp.kind != TokKind::Ident) throw ParseError("expected response column name", resp.pos);
    Token tilde = lx.take();
    if (tilde.kind != TokKind::Tilde) throw ParseError("expected '~' after response", tilde.pos);
    if (lx.peek().kind == TokKind::End) throw ParseError("empty right-hand side", lx.peek().pos);

    FormulaAST ast;
    ast.response = resp.text;
    bool saw_zero = false, saw_one = false;

    for (;;) {
        Token t = lx.peek();
        if (t.kind == TokKind::LParen) {
            lx.take();
            ast.re_terms.push_back(parse_re_body(lx, /*zerocorr=*/false));
        } else if (t.kind == TokKind::Ident && t.text == "zerocorr") {
            lx.take();
            Token open = lx.take();
            if (open.kind != TokKind::LParen) throw ParseError("expected '(' after zerocorr", open.pos);
            ast.re_terms.push_back(parse_re_body(lx, /*zerocorr=*/true));
        } else if (t.kind == TokKind::Zero) {
            lx.take();
            if (saw_one) throw ParseError("conflicting intercept markers 1 and 0", t.pos);
            saw_zero = true;
        } else if (t.kind == TokKind::One) {
            lx.take();
            if (saw_zero) throw ParseError("conflicting intercept markers 0 and 1", t.pos);
            saw_one = true;
        } else if (t.kind == TokKind::Ident) {
            lx.take();
            if (std::find(ast.fixed_covariates.begin(), ast.fixed_covariates.end(), t.text) !=
                ast.fixed_covariates.end())
                throw ParseError("duplicate fixed-effects term '" + t.text + "'", t.pos);
            ast.fixed_covariates.push_back(t.text);
        } else if (t.kind == TokKind::Bar) {
            throw ParseError("'|' outside a parenthesized random-effects term", t.pos);
        } else {
            throw ParseError("expected a model term", t.pos);
        }

        Token nxt = lx.peek();
        if (nxt.kind == TokKind::End) break;
        if (nxt.kind == TokKind::Bar)
            throw ParseError("'|' outside a parenthesized random-effects term", nxt.pos);
        if (nxt.kind != TokKind::Plus) throw ParseError("expected '+' between terms", nxt.pos);
        lx.take();
    }
    ast.fixed_intercept = !saw_zero;

    for (std::size_t i = 0; i < ast.re_terms.size(); ++i)
        for (std::size_t j = i + 1; j < ast.re_terms.size(); ++j)
            if (ast.re_terms[i] == ast.re_terms[j])
                throw ParseError("duplicate random-effects term for '" + ast.re_terms[i].grouping + "'", 0);

    return ast;
}

/// Canonical text form; parse_formula(render_formula(ast)) == ast.
inline std::string render_formula(const FormulaAST& ast) {
    std::string s = ast.response + " ~ ";
    s += ast.fixed_intercept ? "1" : "0";
    for (const auto& c : ast.fixed_covariates) s += " + " + c;
    for (const auto& rt : ast.re_terms) {
        s += " + ";
        if (rt.zerocorr) s += "zerocorr";
        s += "(";
        s += rt.intercept ? "1" : "0";
        for (const auto& c : rt.covariates) s += " + " + c;
        s += " | " + rt.grouping + ")";
    }
    return s;
}

/// Merge random-effects terms sharing a grouping factor into one TermSpec.
/// Columns are the source-order union; a correlation parameter is free only
/// when some originating term contains both columns and no originating term
/// containing both forbids it (zerocorr).
inline std::vector<TermSpec> amalgamate(const FormulaAST& ast) {
    std::vector<TermSpec> specs;
    for (const auto& rt : ast.re_terms) {
        TermSpec* spec = nullptr;
        for (auto& s : specs)
            if (s.grouping == rt.grouping) spec = &s;
        if (!spec) {
            specs.push_back(TermSpec{rt.grouping, {}, {}});
            spec = &specs.back();
        }
        if (rt.intercept) {
            Regressor ic{true, ""};
            if (std::find(spec->columns.begin(), spec->columns.end(), ic) == spec->columns.end())
                spec->columns.push_back(ic);
        }
        for (const auto& c : rt.covariates) {
            Regressor r{false, c};
            if (std::find(spec->columns.begin(), spec->columns.end(), r) == spec->columns.end())
                spec->columns.push_back(r);
        }
    }

    for (auto& spec : specs) {
        const std::size_t p = spec.columns.size();
        auto col_index = [&](const Regressor& r) {
            return static_cast<std::size_t>(
                std::find(spec.columns.begin(), spec.columns.end(), r) - spec.columns.begin());
        };
        std::vector<std::vector<bool>> together(p, std::vector<bool>(p, false));
        std::vector<std::vector<bool>> forbidden(p, std::vector<bool>(p, false));
        for (const auto& rt : ast.re_terms) {
            if (rt.grouping != spec.grouping) continue;
            std::vector<std::size_t> idx;
            if (rt.intercept) idx.push_back(col_index(Regressor{true, ""}));
            for (const auto& c : rt.covariates) idx.push_back(col_index(Regressor{false, c}));
            for (std::size_t a : idx)
                for (std::size_t b : idx) {
                    if (a == b) continue;
                    together[a][b] = true;
                    if (rt.zerocorr) forbidden[a][b] = true;
                }
        }
        spec.corr_mask.assign(p, std::vector<bool>(p, false));
        for (std::size_t r = 0; r < p; ++r) {
            spec.corr_mask[r][r] = true;
            for (std::size_t c = 0; c < r; ++c)
                spec.corr_mask[r][c] = together[r][c] && !forbidden[r][c];
        }
    }
    return specs;
}

}  // namespace blocklmm
