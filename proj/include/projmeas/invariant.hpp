#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "projmeas/ensemble.hpp"
#include "projmeas/errors.hpp"
#include "projmeas/lyapunov.hpp"
#include "projmeas/parallel.hpp"
#include "projmeas/rational.hpp"

namespace projmeas {

// ---------------------------------------------------------------------------
// Exact subspace helpers (column bases canonicalized through row reduction).

namespace detail {

/// Canonical exact basis: RREF of the transposed column set, transposed back.
/// Equal spans give identical matrices.
inline RatMatrix rat_canonical_basis(const RatMatrix& cols) {
    RatMatrix rows = cols.transpose();
    const int rank = rat_rref(rows);
    RatMatrix out(cols.rows, rank);
    for (int r = 0; r < rank; ++r)
        for (int j = 0; j < cols.rows; ++j) out.at(j, r) = rows.at(r, j);
    return out;
}

inline bool rat_span_contains_cols(const RatMatrix& basis, const RatMatrix& vectors) {
    for (int j = 0; j < vectors.cols; ++j) {
        std::vector<Rational> v(static_cast<std::size_t>(vectors.rows));
        for (int i = 0; i < vectors.rows; ++i) v[static_cast<std::size_t>(i)] = vectors.at(i, j);
        if (!rat_span_contains(basis, v)) return false;
    }
    return true;
}

inline RatMatrix rat_sum_spans(const RatMatrix& a, const RatMatrix& b) {
    RatMatrix both(a.rows, a.cols + b.cols);
    for (int i = 0; i < a.rows; ++i) {
        for (int j = 0; j < a.cols; ++j) both.at(i, j) = a.at(i, j);
        for (int j = 0; j < b.cols; ++j) both.at(i, a.cols + j) = b.at(i, j);
    }
    return rat_canonical_basis(both);
}

/// Intersection of two exact column spans via the kernel of [A | -B].
inline RatMatrix rat_intersect_spans(const RatMatrix& a, const RatMatrix& b) {
    if (a.cols == 0 || b.cols == 0) return RatMatrix(a.rows, 0);
    RatMatrix stacked(a.rows, a.cols + b.cols);
    for (int i = 0; i < a.rows; ++i) {
        for (int j = 0; j < a.cols; ++j) stacked.at(i, j) = a.at(i, j);
        for (int j = 0; j < b.cols; ++j) stacked.at(i, a.cols + j) = -b.at(i, j);
    }
    const RatMatrix ker = rat_kernel(stacked);
    RatMatrix inter(a.rows, ker.cols);
    for (int c = 0; c < ker.cols; ++c)
        for (int i = 0; i < a.rows; ++i) {
            Rational v = 0;
            for (int j = 0; j < a.cols; ++j) v += a.at(i, j) * ker.at(j, c);
            inter.at(i, c) = v;
        }
    return rat_canonical_basis(inter);
}

/// Closure of exact column vectors under the atom action.
inline RatMatrix rat_spin_up(const std::vector<RatMatrix>& atoms, const RatMatrix& seed_cols) {
    RatMatrix basis = rat_canonical_basis(seed_cols);
    bool grew = true;
    while (grew && basis.cols < basis.rows) {
        grew = false;
        for (const auto& g : atoms) {
            const RatMatrix image = g * basis;
            if (!rat_span_contains_cols(basis, image)) {
                basis = rat_sum_spans(basis, image);
                grew = true;
            }
        }
    }
    return basis;
}

inline bool rat_is_invariant(const std::vector<RatMatrix>& atoms, const RatMatrix& basis) {
    for (const auto& g : atoms)
        if (!rat_span_contains_cols(basis, g * basis)) return false;
    return true;
}

inline Subspace subspace_from_exact(const RatMatrix& basis_cols) {
    RatMatrix canon = rat_canonical_basis(basis_cols);
    Subspace s = Subspace::span_of(canon.to_double(), 1e-12);
    s.set_exact(std::move(canon));
    return s;
}

inline std::string short_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Algebra closure.

/// Basis of the unital matrix algebra generated by the atoms, viewed as
/// vectors in d^2 dimensions. Float mode keeps spanning elements normalized
/// to unit Frobenius norm; exact mode also keeps the exact elements.
struct AlgebraBasis {
    int ambient = 0;
    bool exact = false;
    std::vector<Eigen::MatrixXd> elements;
    std::vector<RatMatrix> rat_elements;  // exact mode only
    int rounds = 0;

    [[nodiscard]] int dimension() const { return static_cast<int>(elements.size()); }
};

namespace detail {

/// Incremental orthonormal span in flattened matrix space. Residual ratios
/// inside (kRank, 10*kRank) are reported as ambiguous rather than resolved
/// silently in either direction.
class FlatSpan {
  public:
    bool insert(const Eigen::MatrixXd& m) {
        Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
        const double original = v.norm();
        if (!(original > 0)) return false;
        for (int round = 0; round < 2; ++round)
            for (const auto& b : basis_) v -= b.dot(v) * b;
        const double ratio = v.norm() / original;
        if (ratio <= tol::kRank) return false;
        if (ratio < 10 * tol::kRank) throw ToleranceAmbiguityError(ratio);
        basis_.push_back(v / v.norm());
        return true;
    }

    [[nodiscard]] int size() const { return static_cast<int>(basis_.size()); }

  private:
    std::vector<Eigen::VectorXd> basis_;
};

/// Exact membership structure: echelonized rows with pivot bookkeeping.
class ExactSpan {
  public:
    bool insert(std::vector<Rational> v) {
        reduce(v);
        int pivot = -1;
        for (std::size_t i = 0; i < v.size(); ++i)
            if (v[i] != 0) {
                pivot = static_cast<int>(i);
                break;
            }
        if (pivot < 0) return false;
        const Rational inv = Rational(1) / v[static_cast<std::size_t>(pivot)];
        for (auto& x : v) x *= inv;
        rows_.push_back(std::move(v));
        pivots_.push_back(pivot);
        return true;
    }

    [[nodiscard]] int size() const { return static_cast<int>(rows_.size()); }

  private:
    void reduce(std::vector<Rational>& v) const {
        for (std::size_t r = 0; r < rows_.size(); ++r) {
            const Rational f = v[static_cast<std::size_t>(pivots_[r])];
            if (f == 0) continue;
            const auto& row = rows_[r];
            for (std::size_t i = 0; i < v.size(); ++i) v[i] -= f * row[i];
        }
    }

    std::vector<std::vector<Rational>> rows_;
    std::vector<int> pivots_;
};

}  // namespace detail

inline AlgebraBasis algebra_closure(const MatrixEnsemble& e) {
    AlgebraBasis out;
    out.ambient = e.dim;
    out.exact = e.exact();
    const int d = e.dim;

    if (out.exact) {
        detail::ExactSpan span;
        std::deque<RatMatrix> queue;
        queue.push_back(RatMatrix::identity(d));
        for (const auto& g : e.rat_atoms) queue.push_back(g);
        while (!queue.empty()) {
            RatMatrix m = std::move(queue.front());
            queue.pop_front();
            if (!span.insert(m.a)) continue;
            out.rat_elements.push_back(m);
            out.elements.push_back(m.to_double());
            for (const auto& g : e.rat_atoms) {
                queue.push_back(g * m);
                queue.push_back(m * g);
            }
            ++out.rounds;
        }
        return out;
    }

    detail::FlatSpan span;
    std::deque<Eigen::MatrixXd> queue;
    queue.push_back(Eigen::MatrixXd::Identity(d, d));
    for (const auto& g : e.atoms) queue.push_back(g);
    while (!queue.empty()) {
        Eigen::MatrixXd m = std::move(queue.front());
        queue.pop_front();
        const double n = m.norm();
        if (!(n > 0)) continue;
        m /= n;
        if (!span.insert(m)) continue;
        out.elements.push_back(m);
        for (const auto& g : e.atoms) {
            queue.push_back(g * m);
            queue.push_back(m * g);
        }
        ++out.rounds;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Invariant subspace lattice.

struct LatticeOptions {
    std::uint64_t seed = 1;
    int budget = -1;          // random algebra elements; default 50 d^2
    long pair_budget = 4096;  // sum/intersection closure operations
    int workers = 1;
    std::uint64_t rational_max_den = 1000000;
};

/// Discovered sublattice of invariant subspaces. Soundness is checked
/// (every member passes the invariance residual, exactly so in rational
/// mode); completeness is best-effort within the search budget, and the
/// incomplete flag is raised when the closure pass runs out of budget.
struct InvariantLattice {
    std::vector<Subspace> members;  // sorted by (dim, fingerprint); {0} first, V last
    bool incomplete = false;
    std::vector<std::size_t> jh_chain;  // indices into members, from {0} to V
    std::vector<int> jh_quotient_dims;

    [[nodiscard]] std::vector<std::size_t> members_of_dim(int k) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < members.size(); ++i)
            if (members[i].dim() == k) out.push_back(i);
        return out;
    }

    [[nodiscard]] std::vector<std::size_t> proper_members() const {
        std::vector<std::size_t> out;
        if (members.empty()) return out;
        const int d = members.back().ambient_dim();
        for (std::size_t i = 0; i < members.size(); ++i)
            if (members[i].dim() > 0 && members[i].dim() < d) out.push_back(i);
        return out;
    }
};

namespace detail {

/// Generating sets harvested from the eigenstructure of one matrix.
inline std::vector<Eigen::MatrixXd> eigen_generating_sets(const Eigen::MatrixXd& a) {
    std::vector<Eigen::MatrixXd> sets;
    const int d = static_cast<int>(a.rows());
    Eigen::EigenSolver<Eigen::MatrixXd> es(a);
    if (es.info() != Eigen::Success) return sets;
    const auto& vals = es.eigenvalues();
    const auto& vecs = es.eigenvectors();
    const double scale = std::max(1.0, a.norm());
    for (int i = 0; i < d; ++i) {
        const std::complex<double> lam = vals[i];
        if (std::fabs(lam.imag()) <= 1e-9 * scale) {
            Eigen::VectorXd v = vecs.col(i).real();
            if (v.norm() < 1e-9) v = vecs.col(i).imag();
            if (v.norm() < 1e-9) continue;
            Eigen::MatrixXd s(d, 1);
            s.col(0) = v / v.norm();
            sets.push_back(s);
            // Whole numerical eigenspace, in case of multiplicity.
            Eigen::JacobiSVD<Eigen::MatrixXd> svd(
                a - lam.real() * Eigen::MatrixXd::Identity(d, d), Eigen::ComputeFullV);
            const auto& sv = svd.singularValues();
            int null_dim = 0;
            for (Eigen::Index k = 0; k < sv.size(); ++k)
                if (sv[k] <= 1e-8 * scale) ++null_dim;
            if (null_dim > 1) sets.push_back(svd.matrixV().rightCols(null_dim));
        } else if (lam.imag() > 0) {
            Eigen::VectorXd vr = vecs.col(i).real();
            Eigen::VectorXd vi = vecs.col(i).imag();
            if (vr.norm() < 1e-12 || vi.norm() < 1e-12) continue;
            Eigen::MatrixXd s(d, 2);
            s.col(0) = vr / vr.norm();
            s.col(1) = vi / vi.norm();
            sets.push_back(s);
        }
    }
    return sets;
}

inline Subspace float_spin_up(const MatrixEnsemble& e, const Eigen::MatrixXd& seed_cols) {
    Subspace w = Subspace::span_of(seed_cols, tol::kRank);
    for (int round = 0; round < e.dim + 1 && w.dim() > 0 && w.dim() < e.dim; ++round) {
        Eigen::MatrixXd stacked(e.dim, w.dim() * (1 + static_cast<int>(e.size())));
        stacked.leftCols(w.dim()) = w.basis();
        int col = w.dim();
        for (const auto& g : e.atoms) {
            stacked.middleCols(col, w.dim()) = g * w.basis();
            col += w.dim();
        }
        Subspace grown = Subspace::span_of(stacked, tol::kRank);
        if (grown.dim() == w.dim()) return grown;
        w = std::move(grown);
    }
    return w;
}

/// Rationalize columns (scaled so the largest-magnitude entry is 1) and spin
/// exactly. Returns nothing when the result is trivial, full, or the entries
/// do not admit small rational coordinates.
inline std::optional<RatMatrix> exact_candidate(const MatrixEnsemble& e,
                                                const Eigen::MatrixXd& seed_cols,
                                                std::uint64_t max_den) {
    RatMatrix seed(static_cast<int>(seed_cols.rows()), static_cast<int>(seed_cols.cols()));
    for (int j = 0; j < seed.cols; ++j) {
        Eigen::VectorXd v = seed_cols.col(j);
        int arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (!(std::fabs(v[arg]) > 0)) return std::nullopt;
        v /= v[arg];
        for (int i = 0; i < seed.rows; ++i) {
            const double x = v[i];
            const double snapped = std::fabs(x - std::llround(x)) < 1e-9
                                       ? static_cast<double>(std::llround(x))
                                       : x;
            auto r = rationalize(snapped, max_den);
            if (!r) return std::nullopt;
            seed.at(i, j) = *r;
        }
    }
    RatMatrix spun = rat_spin_up(e.rat_atoms, seed);
    if (spun.cols == 0 || spun.cols == seed.rows) return std::nullopt;
    return spun;
}

struct CandidateStore {
    std::vector<Subspace> list;
    std::vector<std::vector<long long>> keys;

    bool add(Subspace s) {
        auto key = s.fingerprint();
        for (const auto& k : keys)
            if (k == key) return false;
        keys.push_back(std::move(key));
        list.push_back(std::move(s));
        return true;
    }
};

}  // namespace detail

inline InvariantLattice invariant_subspace_lattice(const MatrixEnsemble& e, const AlgebraBasis& alg,
                                                   const LatticeOptions& opts = {}) {
    const int d = e.dim;
    const int budget = opts.budget > 0 ? opts.budget : 50 * d * d;
    const bool exact = e.exact() && alg.exact;
    InvariantLattice lat;

    detail::CandidateStore store;
    store.add(Subspace::zero(d));
    {
        Subspace full = Subspace::full(d);
        if (exact) full.set_exact(RatMatrix::identity(d));
        store.add(std::move(full));
    }

    auto consider = [&](const Eigen::MatrixXd& seed_cols) {
        if (seed_cols.cols() == 0) return;
        if (exact) {
            auto cand = detail::exact_candidate(e, seed_cols, opts.rational_max_den);
            if (cand) store.add(detail::subspace_from_exact(*cand));
            return;
        }
        Subspace w = detail::float_spin_up(e, seed_cols);
        if (w.dim() == 0 || w.dim() >= d) return;
        if (invariance_residual(e, w).first <= tol::kInvariance) store.add(std::move(w));
    };

    // Atoms first, then seeded random elements of the generated algebra.
    for (const auto& g : e.atoms)
        for (const auto& s : detail::eigen_generating_sets(g)) consider(s);

    std::vector<std::vector<Eigen::MatrixXd>> harvested(static_cast<std::size_t>(budget));
    SplitRng root(opts.seed);
    const int adim = alg.dimension();
    parallel_for(budget, opts.workers, [&](long i) {
        SplitRng rng = root.split(static_cast<std::uint64_t>(i));
        Eigen::MatrixXd a = Eigen::MatrixXd::Zero(d, d);
        for (int k = 0; k < adim; ++k) a += rng.normal() * alg.elements[static_cast<std::size_t>(k)];
        harvested[static_cast<std::size_t>(i)] = detail::eigen_generating_sets(a);
    });
    for (const auto& sets : harvested)
        for (const auto& s : sets) consider(s);

    // Common fixed space of all atoms is invariant whenever nonzero.
    {
        Eigen::MatrixXd stacked(d * static_cast<int>(e.size()), d);
        for (std::size_t i = 0; i < e.size(); ++i)
            stacked.middleRows(static_cast<int>(i) * d, d) =
                e.atoms[i] - Eigen::MatrixXd::Identity(d, d);
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(stacked, Eigen::ComputeFullV);
        const auto& sv = svd.singularValues();
        int null_dim = 0;
        for (Eigen::Index k = 0; k < sv.size(); ++k)
            if (sv[k] <= 1e-9 * std::max(1.0, sv[0])) ++null_dim;
        if (null_dim > 0 && null_dim < d) consider(svd.matrixV().rightCols(null_dim));
    }

    // Close under sums and intersections.
    long pair_ops = 0;
    bool grew = true;
    while (grew) {
        grew = false;
        const std::size_t n = store.list.size();
        for (std::size_t i = 0; i < n && pair_ops <= opts.pair_budget; ++i) {
            for (std::size_t j = i + 1; j < n && pair_ops <= opts.pair_budget; ++j) {
                const Subspace& a = store.list[i];
                const Subspace& b = store.list[j];
                if (a.dim() == 0 || b.dim() == 0 || a.dim() == d || b.dim() == d) continue;
                ++pair_ops;
                if (exact) {
                    const RatMatrix s = detail::rat_sum_spans(*a.exact(), *b.exact());
                    if (s.cols > 0 && s.cols < d) grew |= store.add(detail::subspace_from_exact(s));
                    const RatMatrix t = detail::rat_intersect_spans(*a.exact(), *b.exact());
                    if (t.cols > 0 && t.cols < d) grew |= store.add(detail::subspace_from_exact(t));
                } else {
                    Subspace s = a.sum(b);
                    if (s.dim() > 0 && s.dim() < d &&
                        invariance_residual(e, s).first <= tol::kInvariance)
                        grew |= store.add(std::move(s));
                    Subspace t = a.intersect(b);
                    if (t.dim() > 0 && t.dim() < d &&
                        invariance_residual(e, t).first <= tol::kInvariance)
                        grew |= store.add(std::move(t));
                }
            }
        }
        if (pair_ops > opts.pair_budget) {
            lat.incomplete = true;
            break;
        }
    }

    lat.members = std::move(store.list);
    std::stable_sort(lat.members.begin(), lat.members.end(),
                     [](const Subspace& a, const Subspace& b) {
                         if (a.dim() != b.dim()) return a.dim() < b.dim();
                         return a.fingerprint() < b.fingerprint();
                     });

    // Greedy maximal chain: repeatedly step to a minimal-dimension strict
    // extension present in the lattice. V is always present, so this ends.
    std::size_t current = 0;  // {0} sorts first
    lat.jh_chain.push_back(current);
    while (lat.members[current].dim() < d) {
        std::size_t best = lat.members.size();
        for (std::size_t i = 0; i < lat.members.size(); ++i) {
            if (lat.members[i].dim() <= lat.members[current].dim()) continue;
            const bool covers = lat.members[current].dim() == 0 ||
                                lat.members[i].contains(lat.members[current], 1e-6);
            if (!covers) continue;
            if (best == lat.members.size() || lat.members[i].dim() < lat.members[best].dim())
                best = i;
        }
        lat.jh_quotient_dims.push_back(lat.members[best].dim() - lat.members[current].dim());
        current = best;
        lat.jh_chain.push_back(current);
    }
    return lat;
}

// ---------------------------------------------------------------------------
// Invariant complements (stacked Sylvester systems).

/// Result of the complement search for an invariant subspace W. In exact mode
/// the witness is exact and the residual is exactly zero; in float mode the
/// residual is the max Frobenius norm of A_g X - X D_g + B_g over the atoms.
struct ComplementResult {
    bool found = false;
    bool exact = false;
    Subspace complement;
    double residual = 0;
    std::string infeasibility;  // set when not found

    Eigen::MatrixXd witness;  // X in block coordinates (float mode)
};

namespace detail {

inline ComplementResult solve_complement_float(const MatrixEnsemble& e, const Subspace& w) {
    const int d = e.dim;
    const int k = w.dim();
    const int q = d - k;
    const Eigen::MatrixXd B = w.basis();
    const Eigen::MatrixXd C = w.orth_complement().basis();
    const std::size_t m = e.size();
    Eigen::MatrixXd sys(static_cast<Eigen::Index>(m) * k * q, k * q);
    Eigen::VectorXd rhs(static_cast<Eigen::Index>(m) * k * q);
    for (std::size_t gi = 0; gi < m; ++gi) {
        const Eigen::MatrixXd A = B.transpose() * e.atoms[gi] * B;
        const Eigen::MatrixXd Bg = B.transpose() * e.atoms[gi] * C;
        const Eigen::MatrixXd D = C.transpose() * e.atoms[gi] * C;
        // vec(AX - XD) with column-major vec: (I (x) A  -  D^T (x) I) vec(X).
        Eigen::MatrixXd block = Eigen::MatrixXd::Zero(k * q, k * q);
        for (int c = 0; c < q; ++c) {
            for (int r = 0; r < k; ++r)
                for (int rr = 0; rr < k; ++rr) block(c * k + r, c * k + rr) += A(r, rr);
            for (int cc = 0; cc < q; ++cc) {
                const double dval = D(cc, c);
                for (int r = 0; r < k; ++r) block(c * k + r, cc * k + r) -= dval;
            }
        }
        sys.middleRows(static_cast<Eigen::Index>(gi) * k * q, k * q) = block;
        for (int c = 0; c < q; ++c)
            for (int r = 0; r < k; ++r)
                rhs[static_cast<Eigen::Index>(gi) * k * q + c * k + r] = -Bg(r, c);
    }
    Eigen::VectorXd x = sys.bdcSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(rhs);
    Eigen::MatrixXd X(k, q);
    for (int c = 0; c < q; ++c)
        for (int r = 0; r < k; ++r) X(r, c) = x[c * k + r];
    ComplementResult res;
    res.witness = X;
    double worst = 0;
    for (std::size_t gi = 0; gi < m; ++gi) {
        const Eigen::MatrixXd A = B.transpose() * e.atoms[gi] * B;
        const Eigen::MatrixXd Bg = B.transpose() * e.atoms[gi] * C;
        const Eigen::MatrixXd D = C.transpose() * e.atoms[gi] * C;
        worst = std::max(worst, (A * X - X * D + Bg).norm());
    }
    res.residual = worst;
    res.found = worst <= 1e-8;
    if (res.found)
        res.complement = Subspace::span_of(B * X + C, 1e-12);
    else
        res.infeasibility = "least-squares residual " + short_double(worst);
    return res;
}

inline ComplementResult solve_complement_exact(const MatrixEnsemble& e, const RatMatrix& wbasis) {
    const int d = e.dim;
    const int k = wbasis.cols;
    const int q = d - k;
    // Base change T = [B | E_free] where E_free holds the standard vectors
    // at the non-pivot coordinates of the canonical basis.
    RatMatrix rows = wbasis.transpose();
    std::vector<int> pivots;
    rat_rref(rows, &pivots);
    std::vector<bool> is_pivot(static_cast<std::size_t>(d), false);
    for (int p : pivots) is_pivot[static_cast<std::size_t>(p)] = true;
    std::vector<int> free_coords;
    for (int i = 0; i < d; ++i)
        if (!is_pivot[static_cast<std::size_t>(i)]) free_coords.push_back(i);
    RatMatrix T(d, d);
    for (int j = 0; j < k; ++j)
        for (int i = 0; i < d; ++i) T.at(i, j) = wbasis.at(i, j);
    for (int j = 0; j < q; ++j) T.at(free_coords[static_cast<std::size_t>(j)], k + j) = 1;

    // Conjugated atoms M = T^-1 g T, solved column by column.
    const std::size_t m = e.size();
    std::vector<RatMatrix> A(m, RatMatrix(k, k)), Bg(m, RatMatrix(k, q)), D(m, RatMatrix(q, q));
    for (std::size_t gi = 0; gi < m; ++gi) {
        const RatMatrix gT = e.rat_atoms[gi] * T;
        for (int c = 0; c < d; ++c) {
            std::vector<Rational> col(static_cast<std::size_t>(d));
            for (int i = 0; i < d; ++i) col[static_cast<std::size_t>(i)] = gT.at(i, c);
            auto sol = rat_solve(T, col);
            if (!sol.feasible) throw ValidationError("conjugation solve failed unexpectedly");
            for (int r = 0; r < d; ++r) {
                const Rational v = sol.x[static_cast<std::size_t>(r)];
                if (r < k && c < k)
                    A[gi].at(r, c) = v;
                else if (r < k)
                    Bg[gi].at(r, c - k) = v;
                else if (c >= k)
                    D[gi].at(r - k, c - k) = v;
                else if (v != 0)
                    throw NotInvariantError(1.0, static_cast<int>(gi));
            }
        }
    }

    // Stacked exact Sylvester system in vec(X), column-major.
    const int nx = k * q;
    RatMatrix sys(static_cast<int>(m) * nx, nx);
    std::vector<Rational> rhs(static_cast<std::size_t>(m) * static_cast<std::size_t>(nx));
    for (std::size_t gi = 0; gi < m; ++gi) {
        const int base = static_cast<int>(gi) * nx;
        for (int c = 0; c < q; ++c)
            for (int r = 0; r < k; ++r) {
                const int row = base + c * k + r;
                for (int rr = 0; rr < k; ++rr) sys.at(row, c * k + rr) += A[gi].at(r, rr);
                for (int cc = 0; cc < q; ++cc) sys.at(row, cc * k + r) -= D[gi].at(cc, c);
                rhs[static_cast<std::size_t>(row)] = -Bg[gi].at(r, c);
            }
    }
    auto sol = rat_solve(sys, rhs);
    ComplementResult res;
    res.exact = true;
    if (!sol.feasible) {
        res.found = false;
        res.infeasibility = "exact linear system is inconsistent (row " +
                            std::to_string(sol.inconsistent_row) + ")";
        return res;
    }
    // Complement columns in original coordinates: B*X + E_free.
    RatMatrix comp(d, q);
    for (int c = 0; c < q; ++c) {
        for (int i = 0; i < d; ++i) {
            Rational v = 0;
            for (int r = 0; r < k; ++r)
                v += wbasis.at(i, r) * sol.x[static_cast<std::size_t>(c * k + r)];
            comp.at(i, c) = v;
        }
        comp.at(free_coords[static_cast<std::size_t>(c)], c) += 1;
    }
    if (!rat_is_invariant(e.rat_atoms, comp))
        throw ValidationError("exact complement failed the invariance check");
    res.found = true;
    res.residual = 0;
    res.complement = detail::subspace_from_exact(comp);
    return res;
}

}  // namespace detail

/// Search for an invariant complement of the invariant subspace w.
/// Exact mode requires w to carry an exact basis that is exactly invariant;
/// otherwise the float path runs. Throws NotInvariantError when w itself is
/// not invariant to working precision.
inline ComplementResult solve_complement(const MatrixEnsemble& e, const Subspace& w) {
    if (w.ambient_dim() != e.dim) throw DimensionError("complement: ambient dimension mismatch");
    if (w.dim() == 0) {
        ComplementResult res;
        res.found = true;
        res.exact = e.exact();
        Subspace full = Subspace::full(e.dim);
        if (e.exact()) full.set_exact(RatMatrix::identity(e.dim));
        res.complement = std::move(full);
        return res;
    }
    if (w.dim() == e.dim) {
        ComplementResult res;
        res.found = true;
        res.exact = e.exact();
        res.complement = Subspace::zero(e.dim);
        return res;
    }
    const auto [resid, atom] = invariance_residual(e, w);
    if (resid > tol::kInvariance) throw NotInvariantError(resid, atom);
    if (e.exact() && w.exact() && detail::rat_is_invariant(e.rat_atoms, *w.exact()))
        return detail::solve_complement_exact(e, *w.exact());
    return detail::solve_complement_float(e, w);
}

// ---------------------------------------------------------------------------
// Complete reducibility certificate.

/// Decomposition evidence for the action restricted to an invariant subspace.
/// semisimple == true comes with a direct-sum decomposition into invariant
/// components; false comes with at least one invariant subspace of the
/// restriction that admits no invariant complement.
struct ReducibilityCertificate {
    bool semisimple = false;
    bool incomplete_lattice = false;
    std::vector<Subspace> components;  // ambient coordinates, dims sum to u.dim
    std::vector<Subspace> failures;    // ambient coordinates, when not semisimple
    double max_residual = 0;           // worst complement residual encountered
};

namespace detail {

/// Map a subspace expressed in the coordinates of u back to ambient ones.
inline Subspace lift_through(const Subspace& u, const Subspace& inner) {
    Subspace out = Subspace::from_orthonormal(u.basis() * inner.basis());
    if (u.exact() && inner.exact()) {
        const RatMatrix& ub = *u.exact();
        const RatMatrix& ib = *inner.exact();
        RatMatrix prod(u.ambient_dim(), inner.dim());
        for (int i = 0; i < prod.rows; ++i)
            for (int j = 0; j < prod.cols; ++j) {
                Rational v = 0;
                for (int t = 0; t < ub.cols; ++t) v += ub.at(i, t) * ib.at(t, j);
                prod.at(i, j) = v;
            }
        out.set_exact(rat_canonical_basis(prod));
    }
    return out;
}

inline void decompose_recursive(const MatrixEnsemble& e, const LatticeOptions& opts, int depth,
                                ReducibilityCertificate& cert, const Subspace& frame) {
    if (e.dim == 0 || frame.dim() == 0) return;
    AlgebraBasis alg = algebra_closure(e);
    LatticeOptions inner = opts;
    inner.seed = opts.seed + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(depth + 1);
    InvariantLattice lat = invariant_subspace_lattice(e, alg, inner);
    cert.incomplete_lattice = cert.incomplete_lattice || lat.incomplete;
    const auto proper = lat.proper_members();
    if (proper.empty() || depth > e.dim + 1) {
        cert.components.push_back(frame);
        return;
    }
    // Minimal proper member first (members are dim-sorted).
    const Subspace& w = lat.members[proper.front()];
    ComplementResult comp = solve_complement(e, w);
    cert.max_residual = std::max(cert.max_residual, comp.residual);
    if (!comp.found) {
        // The restriction is not semisimple after all; report the whole
        // frame as one component rather than fabricating a split.
        cert.components.push_back(frame);
        return;
    }
    cert.components.push_back(lift_through(frame, w));
    if (comp.complement.dim() == 0) return;
    MatrixEnsemble restricted = restrict_quotient(e, comp.complement, BlockKind::Restrict);
    decompose_recursive(restricted, opts, depth + 1, cert, lift_through(frame, comp.complement));
}

}  // namespace detail

inline ReducibilityCertificate complete_reducibility_certificate(const MatrixEnsemble& e,
                                                                 const Subspace& u,
                                                                 const LatticeOptions& opts = {}) {
    if (u.ambient_dim() != e.dim) throw DimensionError("reducibility: ambient dimension mismatch");
    ReducibilityCertificate cert;
    if (u.dim() == 0) {
        cert.semisimple = true;
        return cert;
    }
    const bool whole = u.dim() == e.dim;
    MatrixEnsemble eu = whole ? e : restrict_quotient(e, u, BlockKind::Restrict);
    Subspace frame = u;
    if (whole && !frame.exact() && eu.exact()) frame.set_exact(RatMatrix::identity(e.dim));

    AlgebraBasis alg = algebra_closure(eu);
    InvariantLattice lat = invariant_subspace_lattice(eu, alg, opts);
    cert.incomplete_lattice = lat.incomplete;

    cert.semisimple = true;
    for (std::size_t idx : lat.proper_members()) {
        ComplementResult comp = solve_complement(eu, lat.members[idx]);
        cert.max_residual = std::max(cert.max_residual, comp.residual);
        if (!comp.found) {
            cert.semisimple = false;
            cert.failures.push_back(detail::lift_through(frame, lat.members[idx]));
        }
    }
    if (cert.semisimple) detail::decompose_recursive(eu, opts, 0, cert, frame);
    return cert;
}

// ---------------------------------------------------------------------------
// Deflation filtration by top growth rate.

struct FiltrationOptions {
    long n_steps = 20000;
    int n_trials = 8;
    std::uint64_t seed = 1;
    int workers = 1;
    LatticeOptions lattice;
};

struct FiltrationLevel {
    Subspace space;
    ExponentEstimate top;  // top exponent of the restriction to this space
};

/// Decreasing chain V = F_1 > F_2 > ... > F_k > {0}, where each successor is
/// the sum of the invariant subspaces of the previous level whose top
/// exponent sits strictly below the level's own (under the 3-sigma tie rule).
struct FiltrationReport {
    std::vector<FiltrationLevel> levels;  // F_1 (= V) first; {0} never stored
    bool critical = false;                // F_2 = {0}
    bool incomplete_lattice = false;
    bool monotone = true;  // consecutive tops strictly decreasing per tie rule
    std::uint64_t seed = 0;

    [[nodiscard]] std::vector<int> dims() const {
        std::vector<int> out;
        out.reserve(levels.size());
        for (const auto& l : levels) out.push_back(l.space.dim());
        return out;
    }
    [[nodiscard]] std::vector<double> exponents() const {
        std::vector<double> out;
        out.reserve(levels.size());
        for (const auto& l : levels) out.push_back(l.top.value);
        return out;
    }
};

inline FiltrationReport fkh_filtration(const MatrixEnsemble& e,
                                       const FiltrationOptions& opts = {}) {
    FiltrationReport report;
    report.seed = opts.seed;
    SplitRng root(opts.seed);

    AlgebraBasis alg = algebra_closure(e);
    LatticeOptions lopts = opts.lattice;
    lopts.seed = root.split(1).next_u64();
    lopts.workers = opts.workers;
    InvariantLattice lat = invariant_subspace_lattice(e, alg, lopts);
    report.incomplete_lattice = lat.incomplete;

    SpectrumOptions sopts;
    sopts.workers = opts.workers;

    // Exponent cache keyed by subspace fingerprint; seeds split per entry.
    std::map<std::vector<long long>, ExponentEstimate> cache;
    std::uint64_t cache_counter = 0;
    auto top_exponent = [&](const Subspace& w) -> ExponentEstimate {
        if (w.dim() == 0) return ExponentEstimate::minus_infinity();
        auto key = w.fingerprint();
        auto it = cache.find(key);
        if (it != cache.end()) return it->second;
        const MatrixEnsemble sub =
            w.dim() == e.dim ? e : restrict_quotient(e, w, BlockKind::Restrict);
        const std::uint64_t seed = root.split(1000 + cache_counter++).next_u64();
        LyapunovReport rep = estimate_spectrum(sub, opts.n_steps, opts.n_trials, seed, sopts);
        ExponentEstimate est = rep.top();
        cache.emplace(std::move(key), est);
        return est;
    };

    Subspace current = Subspace::full(e.dim);
    if (e.exact()) current.set_exact(RatMatrix::identity(e.dim));

    for (int level = 0; level < e.dim && current.dim() > 0; ++level) {
        const ExponentEstimate lam = top_exponent(current);
        if (!report.levels.empty()) {
            const ExponentEstimate& prev = report.levels.back().top;
            if (!definitely_less(lam, prev)) report.monotone = false;
        }
        report.levels.push_back({current, lam});

        // Successor: sum of strictly-contained lattice members whose top
        // exponent is definitely below this level's.
        Subspace next = Subspace::zero(e.dim);
        bool next_exact_ok = e.exact();
        std::optional<RatMatrix> next_exact;
        for (const auto& member : lat.members) {
            if (member.dim() == 0 || member.dim() >= current.dim()) continue;
            if (current.dim() < e.dim && !current.contains(member, 1e-6)) continue;
            const ExponentEstimate mu = top_exponent(member);
            if (!definitely_less(mu, lam)) continue;
            next = next.sum(member);
            if (next_exact_ok && member.exact()) {
                next_exact = next_exact ? detail::rat_sum_spans(*next_exact, *member.exact())
                                        : *member.exact();
            } else {
                next_exact_ok = false;
            }
        }
        if (next.dim() == 0) break;
        if (next.dim() >= current.dim()) {
            // Guard against tolerance artifacts producing a non-strict chain.
            report.monotone = false;
            break;
        }
        if (next_exact_ok && next_exact) next.set_exact(detail::rat_canonical_basis(*next_exact));
        current = std::move(next);
    }

    report.critical = report.levels.size() == 1;
    return report;
}

}  // namespace projmeas
