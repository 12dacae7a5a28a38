#pragma once

#include <boost/multiprecision/cpp_int.hpp>
#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "projmeas/errors.hpp"

namespace projmeas {

using Rational = boost::multiprecision::cpp_rational;
using BigInt = boost::multiprecision::cpp_int;

/// Dense matrix over the exact rationals, row-major. Small: certificate math
/// only, d <= 8 in practice.
struct RatMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<Rational> a;

    RatMatrix() = default;
    RatMatrix(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c) {}

    Rational& at(int i, int j) { return a[static_cast<std::size_t>(i) * cols + j]; }
    const Rational& at(int i, int j) const { return a[static_cast<std::size_t>(i) * cols + j]; }

    static RatMatrix identity(int n) {
        RatMatrix m(n, n);
        for (int i = 0; i < n; ++i) m.at(i, i) = 1;
        return m;
    }

    [[nodiscard]] RatMatrix transpose() const {
        RatMatrix t(cols, rows);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) t.at(j, i) = at(i, j);
        return t;
    }

    [[nodiscard]] RatMatrix operator*(const RatMatrix& o) const {
        if (cols != o.rows) throw DimensionError("rational matrix product shape mismatch");
        RatMatrix p(rows, o.cols);
        for (int i = 0; i < rows; ++i)
            for (int k = 0; k < cols; ++k) {
                const Rational& v = at(i, k);
                if (v == 0) continue;
                for (int j = 0; j < o.cols; ++j) p.at(i, j) += v * o.at(k, j);
            }
        return p;
    }

    [[nodiscard]] RatMatrix operator-(const RatMatrix& o) const {
        if (rows != o.rows || cols != o.cols) throw DimensionError("rational matrix sum shape mismatch");
        RatMatrix m(rows, cols);
        for (std::size_t i = 0; i < a.size(); ++i) m.a[i] = a[i] - o.a[i];
        return m;
    }

    [[nodiscard]] bool is_zero() const {
        for (const auto& v : a)
            if (v != 0) return false;
        return true;
    }

    [[nodiscard]] Eigen::MatrixXd to_double() const {
        Eigen::MatrixXd m(rows, cols);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) m(i, j) = static_cast<double>(at(i, j));
        return m;
    }
};

/// Exact determinant by fraction-free-ish Gaussian elimination.
inline Rational rat_determinant(RatMatrix m) {
    if (m.rows != m.cols) throw DimensionError("determinant of non-square matrix");
    Rational det = 1;
    const int n = m.rows;
    for (int col = 0; col < n; ++col) {
        int pivot = -1;
        for (int r = col; r < n; ++r)
            if (m.at(r, col) != 0) {
                pivot = r;
                break;
            }
        if (pivot < 0) return Rational(0);
        if (pivot != col) {
            for (int j = 0; j < n; ++j) std::swap(m.at(pivot, j), m.at(col, j));
            det = -det;
        }
        det *= m.at(col, col);
        const Rational inv = Rational(1) / m.at(col, col);
        for (int r = col + 1; r < n; ++r) {
            const Rational f = m.at(r, col) * inv;
            if (f == 0) continue;
            for (int j = col; j < n; ++j) m.at(r, j) -= f * m.at(col, j);
        }
    }
    return det;
}

/// In-place reduced row echelon form. Returns the rank; pivot column of every
/// pivot row is appended to `pivots` when non-null.
inline int rat_rref(RatMatrix& m, std::vector<int>* pivots = nullptr) {
    int rank = 0;
    for (int col = 0; col < m.cols && rank < m.rows; ++col) {
        int pivot = -1;
        for (int r = rank; r < m.rows; ++r)
            if (m.at(r, col) != 0) {
                pivot = r;
                break;
            }
        if (pivot < 0) continue;
        if (pivot != rank)
            for (int j = 0; j < m.cols; ++j) std::swap(m.at(pivot, j), m.at(rank, j));
        const Rational inv = Rational(1) / m.at(rank, col);
        for (int j = 0; j < m.cols; ++j) m.at(rank, j) *= inv;
        for (int r = 0; r < m.rows; ++r) {
            if (r == rank) continue;
            const Rational f = m.at(r, col);
            if (f == 0) continue;
            for (int j = 0; j < m.cols; ++j) m.at(r, j) -= f * m.at(rank, j);
        }
        if (pivots) pivots->push_back(col);
        ++rank;
    }
    return rank;
}

inline int rat_rank(RatMatrix m) { return rat_rref(m); }

/// Basis of the right kernel, one column per basis vector.
inline RatMatrix rat_kernel(RatMatrix m) {
    std::vector<int> pivots;
    const int rank = rat_rref(m, &pivots);
    std::vector<int> free_cols;
    {
        std::size_t p = 0;
        for (int c = 0; c < m.cols; ++c) {
            if (p < pivots.size() && pivots[p] == c)
                ++p;
            else
                free_cols.push_back(c);
        }
    }
    RatMatrix k(m.cols, static_cast<int>(free_cols.size()));
    for (std::size_t f = 0; f < free_cols.size(); ++f) {
        k.at(free_cols[f], static_cast<int>(f)) = 1;
        for (int r = 0; r < rank; ++r) k.at(pivots[r], static_cast<int>(f)) = -m.at(r, free_cols[f]);
    }
    return k;
}

struct RatSolveResult {
    bool feasible = false;
    std::vector<Rational> x;
    int inconsistent_row = -1;  // row of [A|b] that reduced to 0 = nonzero
};

/// Exact solve of A x = b (any shape); reports infeasibility with the
/// offending reduced row.
inline RatSolveResult rat_solve(const RatMatrix& A, const std::vector<Rational>& b) {
    if (static_cast<int>(b.size()) != A.rows) throw DimensionError("rat_solve rhs size mismatch");
    RatMatrix aug(A.rows, A.cols + 1);
    for (int i = 0; i < A.rows; ++i) {
        for (int j = 0; j < A.cols; ++j) aug.at(i, j) = A.at(i, j);
        aug.at(i, A.cols) = b[i];
    }
    std::vector<int> pivots;
    const int rank = rat_rref(aug, &pivots);
    RatSolveResult res;
    for (int r = 0; r < rank; ++r) {
        if (pivots[r] == A.cols) {
            res.feasible = false;
            res.inconsistent_row = r;
            return res;
        }
    }
    res.feasible = true;
    res.x.assign(A.cols, Rational(0));
    for (int r = 0; r < rank; ++r) res.x[pivots[r]] = aug.at(r, A.cols);
    return res;
}

/// True when v lies in the column span of basis (columns independent or not).
inline bool rat_span_contains(const RatMatrix& basis_cols, const std::vector<Rational>& v) {
    return rat_solve(basis_cols, v).feasible;
}

/// Parse "p/q", integers, or finite decimals ("0.25") exactly.
inline Rational parse_rational(const std::string& s) {
    if (s.empty()) throw ValidationError("empty rational literal");
    const auto slash = s.find('/');
    try {
        if (slash != std::string::npos) {
            const BigInt p(s.substr(0, slash));
            const BigInt q(s.substr(slash + 1));
            if (q == 0) throw ValidationError("zero denominator in '" + s + "'");
            return Rational(p, q);
        }
        const auto dot = s.find('.');
        if (dot == std::string::npos) return Rational(BigInt(s));
        std::string digits = s.substr(0, dot) + s.substr(dot + 1);
        const std::size_t frac_len = s.size() - dot - 1;
        if (digits.empty() || digits == "-" || digits == "+") throw ValidationError("bad literal");
        BigInt q = 1;
        for (std::size_t i = 0; i < frac_len; ++i) q *= 10;
        return Rational(BigInt(digits), q);
    } catch (const std::exception&) {
        throw ValidationError("cannot parse rational literal '" + s + "'");
    }
}

inline std::string format_rational(const Rational& r) {
    std::ostringstream os;
    os << numerator(r);
    if (denominator(r) != 1) os << "/" << denominator(r);
    return os.str();
}

/// Nearest rational with denominator <= max_den (continued fractions).
/// Returns nothing for non-finite input.
inline std::optional<Rational> rationalize(double x, std::uint64_t max_den = 1000000) {
    if (!std::isfinite(x)) return std::nullopt;
    const bool neg = x < 0;
    double v = std::fabs(x);
    BigInt p0 = 0, q0 = 1, p1 = 1, q1 = 0;
    for (int iter = 0; iter < 64; ++iter) {
        const double fl = std::floor(v);
        if (fl > 9e17) break;
        const BigInt ai(static_cast<long long>(fl));
        BigInt p2 = ai * p1 + p0;
        BigInt q2 = ai * q1 + q0;
        if (q2 > BigInt(max_den)) break;
        p0 = p1;
        q0 = q1;
        p1 = p2;
        q1 = q2;
        const double frac = v - fl;
        if (frac < 1e-15) break;
        v = 1.0 / frac;
    }
    if (q1 == 0) return std::nullopt;
    Rational r(p1, q1);
    if (neg) r = -r;
    return r;
}

}  // namespace projmeas
