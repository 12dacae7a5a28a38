#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "projmeas/errors.hpp"
#include "projmeas/rational.hpp"

namespace projmeas {

namespace tol {
/// Sign canonicalization: first coordinate larger than this decides the sign.
inline constexpr double kSign = 1e-12;
/// Unit-norm slack for projective representatives.
inline constexpr double kUnit = 1e-12;
/// Orthonormality slack for subspace bases.
inline constexpr double kOrtho = 1e-10;
/// Relative rank cutoff for float spans.
inline constexpr double kRank = 1e-9;
/// Relative invariance residual allowed in restrict/quotient.
inline constexpr double kInvariance = 1e-8;
/// Weight normalization slack for ensembles.
inline constexpr double kWeights = 1e-12;
/// Weight normalization slack for empirical measures.
inline constexpr double kMeasureWeights = 1e-10;
}  // namespace tol

inline double clamp01(double x) { return std::min(1.0, std::max(0.0, x)); }

/// Point of P(V) stored as a canonical unit representative: the first
/// coordinate with |v_i| > tol::kSign is made positive.
class ProjectivePoint {
  public:
    ProjectivePoint() = default;

    static ProjectivePoint from(Eigen::VectorXd v) {
        const double n = v.norm();
        if (!(n > 0) || !std::isfinite(n))
            throw ValidationError("projective point needs a nonzero finite representative");
        v /= n;
        canonicalize(v);
        ProjectivePoint p;
        p.rep_ = std::move(v);
        return p;
    }

    [[nodiscard]] const Eigen::VectorXd& rep() const { return rep_; }
    [[nodiscard]] int dim() const { return static_cast<int>(rep_.size()); }

    static void canonicalize(Eigen::VectorXd& v) {
        for (Eigen::Index i = 0; i < v.size(); ++i) {
            if (std::fabs(v[i]) > tol::kSign) {
                if (v[i] < 0) v = -v;
                return;
            }
        }
    }

  private:
    Eigen::VectorXd rep_;
};

/// Angular (Fubini-Study) distance on P(V), in [0, pi/2].
inline double angular_distance(const ProjectivePoint& x, const ProjectivePoint& y) {
    if (x.dim() != y.dim()) throw DimensionError("angular_distance dimension mismatch");
    return std::acos(clamp01(std::fabs(x.rep().dot(y.rep()))));
}

/// Linear subspace with an orthonormal column basis; dim 0 (the zero
/// subspace) is legal and carries a d x 0 basis. Rational-certified
/// subspaces additionally carry an exact column basis.
class Subspace {
  public:
    Subspace() = default;

    /// Wrap an already orthonormal basis.
    static Subspace from_orthonormal(Eigen::MatrixXd basis) {
        if (basis.cols() > 0) {
            const double err =
                (basis.transpose() * basis - Eigen::MatrixXd::Identity(basis.cols(), basis.cols()))
                    .cwiseAbs()
                    .maxCoeff();
            if (err > tol::kOrtho) throw ValidationError("basis is not orthonormal");
        }
        Subspace s;
        s.basis_ = std::move(basis);
        return s;
    }

    /// Orthonormal span of arbitrary columns, rank decided by SVD at the
    /// relative cutoff. With guard_band, a singular value falling in
    /// (cutoff, 10*cutoff) raises ToleranceAmbiguityError.
    static Subspace span_of(const Eigen::MatrixXd& cols, double rel_tol = tol::kRank,
                            bool guard_band = false) {
        if (cols.cols() == 0) return zero(static_cast<int>(cols.rows()));
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(cols, Eigen::ComputeThinU);
        const auto& sv = svd.singularValues();
        const double top = sv.size() ? sv[0] : 0.0;
        if (!(top > 0)) return zero(static_cast<int>(cols.rows()));
        int rank = 0;
        for (Eigen::Index i = 0; i < sv.size(); ++i) {
            const double ratio = sv[i] / top;
            if (guard_band && ratio > rel_tol && ratio < 10 * rel_tol)
                throw ToleranceAmbiguityError(ratio);
            if (ratio > rel_tol) ++rank;
        }
        Subspace s;
        s.basis_ = svd.matrixU().leftCols(rank);
        return s;
    }

    static Subspace zero(int ambient) {
        Subspace s;
        s.basis_ = Eigen::MatrixXd(ambient, 0);
        return s;
    }

    static Subspace full(int ambient) {
        Subspace s;
        s.basis_ = Eigen::MatrixXd::Identity(ambient, ambient);
        return s;
    }

    /// Span of selected standard basis vectors; exact by construction.
    static Subspace coordinate_span(int ambient, const std::vector<int>& coords) {
        Eigen::MatrixXd b = Eigen::MatrixXd::Zero(ambient, static_cast<int>(coords.size()));
        RatMatrix e(ambient, static_cast<int>(coords.size()));
        for (std::size_t j = 0; j < coords.size(); ++j) {
            b(coords[j], static_cast<int>(j)) = 1.0;
            e.at(coords[j], static_cast<int>(j)) = 1;
        }
        Subspace s = from_orthonormal(std::move(b));
        s.exact_ = std::move(e);
        return s;
    }

    /// Attach an exact rational basis (columns spanning the same space).
    void set_exact(RatMatrix basis_cols) { exact_ = std::move(basis_cols); }
    [[nodiscard]] const std::optional<RatMatrix>& exact() const { return exact_; }

    [[nodiscard]] int ambient_dim() const { return static_cast<int>(basis_.rows()); }
    [[nodiscard]] int dim() const { return static_cast<int>(basis_.cols()); }
    [[nodiscard]] const Eigen::MatrixXd& basis() const { return basis_; }

    [[nodiscard]] Eigen::MatrixXd projector() const { return basis_ * basis_.transpose(); }

    /// Orthonormal basis of the orthogonal complement.
    [[nodiscard]] Subspace orth_complement() const {
        const int d = ambient_dim();
        const int k = dim();
        if (k == 0) return full(d);
        if (k == d) return zero(d);
        Eigen::MatrixXd residual = Eigen::MatrixXd::Identity(d, d) - projector();
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(residual, Eigen::ComputeThinU);
        Subspace s;
        s.basis_ = svd.matrixU().leftCols(d - k);
        return s;
    }

    [[nodiscard]] bool contains_point(const ProjectivePoint& x, double tol_angle = 1e-8) const;

    [[nodiscard]] bool contains(const Subspace& w, double tol_res = 1e-8) const {
        if (w.ambient_dim() != ambient_dim()) throw DimensionError("contains: ambient mismatch");
        if (w.dim() == 0) return true;
        if (dim() == 0) return false;
        const Eigen::MatrixXd r = w.basis_ - projector() * w.basis_;
        return r.cwiseAbs().maxCoeff() <= tol_res;
    }

    [[nodiscard]] bool equals(const Subspace& o, double tol_proj = 1e-6) const {
        if (o.ambient_dim() != ambient_dim() || o.dim() != dim()) return false;
        return (projector() - o.projector()).cwiseAbs().maxCoeff() <= tol_proj;
    }

    /// Largest principal angle to another subspace of equal dimension.
    [[nodiscard]] double max_principal_angle(const Subspace& o) const {
        if (o.ambient_dim() != ambient_dim()) throw DimensionError("principal angle ambient mismatch");
        if (dim() == 0 || o.dim() == 0) return dim() == o.dim() ? 0.0 : 1.5707963267948966;
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(basis_.transpose() * o.basis_);
        const auto& sv = svd.singularValues();
        const Eigen::Index m = std::min<Eigen::Index>(dim(), o.dim());
        double cos_min = m > 0 ? clamp01(sv[m - 1]) : 1.0;
        return std::acos(cos_min);
    }

    [[nodiscard]] Subspace sum(const Subspace& o) const {
        if (o.ambient_dim() != ambient_dim()) throw DimensionError("sum ambient mismatch");
        Eigen::MatrixXd both(ambient_dim(), dim() + o.dim());
        both << basis_, o.basis_;
        return span_of(both, 1e-8);
    }

    [[nodiscard]] Subspace intersect(const Subspace& o) const {
        if (o.ambient_dim() != ambient_dim()) throw DimensionError("intersect ambient mismatch");
        const int d = ambient_dim();
        if (dim() == 0 || o.dim() == 0) return zero(d);
        // x in both spans  <=>  (I-P1)x = 0 and (I-P2)x = 0.
        Eigen::MatrixXd stacked(2 * d, d);
        stacked.topRows(d) = Eigen::MatrixXd::Identity(d, d) - projector();
        stacked.bottomRows(d) = Eigen::MatrixXd::Identity(d, d) - o.projector();
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(stacked, Eigen::ComputeFullV);
        const auto& sv = svd.singularValues();
        int null_dim = 0;
        for (Eigen::Index i = 0; i < sv.size(); ++i)
            if (sv[i] <= 1e-8) ++null_dim;
        null_dim += d - static_cast<int>(sv.size());
        if (null_dim == 0) return zero(d);
        Subspace s;
        s.basis_ = svd.matrixV().rightCols(null_dim);
        return s;
    }

    /// Deterministic dedup / ordering key: projector entries on a 1e-6 grid.
    [[nodiscard]] std::vector<long long> fingerprint() const {
        const Eigen::MatrixXd p = projector();
        std::vector<long long> f;
        f.reserve(static_cast<std::size_t>(p.size()) + 1);
        f.push_back(dim());
        for (Eigen::Index i = 0; i < p.rows(); ++i)
            for (Eigen::Index j = 0; j < p.cols(); ++j)
                f.push_back(static_cast<long long>(std::llround(p(i, j) * 1e6)));
        return f;
    }

  private:
    Eigen::MatrixXd basis_;
    std::optional<RatMatrix> exact_;
};

/// Angular distance from a point to P(W), in [0, pi/2]; W must be nonzero.
inline double distance_to_subspace(const ProjectivePoint& x, const Subspace& w) {
    if (w.dim() == 0) throw DimensionError("distance to the zero subspace is undefined");
    if (x.dim() != w.ambient_dim()) throw DimensionError("distance_to_subspace dimension mismatch");
    const Eigen::VectorXd r = x.rep() - w.projector() * x.rep();
    return std::asin(clamp01(r.norm()));
}

inline bool Subspace::contains_point(const ProjectivePoint& x, double tol_angle) const {
    if (dim() == 0) return false;
    return distance_to_subspace(x, *this) <= tol_angle;
}

/// Projective action x -> [g x]. g must be invertible; a representative
/// collapsing to numerical zero reports degeneracy.
inline ProjectivePoint act_projective(const Eigen::MatrixXd& g, const ProjectivePoint& x) {
    if (g.cols() != x.dim()) throw DimensionError("act_projective dimension mismatch");
    Eigen::VectorXd y = g * x.rep();
    const double n = y.norm();
    const double scale = g.cwiseAbs().maxCoeff();
    if (!(n > 1e-14 * std::max(1.0, scale)))
        throw ValidationError("projective action degenerated: matrix is singular on this point");
    return ProjectivePoint::from(std::move(y));
}

}  // namespace projmeas
