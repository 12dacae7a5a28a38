#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "projmeas/ensemble.hpp"
#include "projmeas/errors.hpp"
#include "projmeas/geometry.hpp"
#include "projmeas/rng.hpp"

namespace projmeas {

/// Where an empirical measure came from; serialized into its header.
struct Provenance {
    std::string kind = "manual";  // manual | cesaro | backward | pushforward | dirac | survey
    std::uint64_t seed = 0;
    long n_steps = 0;
    std::string detail;
};

struct WeightedAtom {
    ProjectivePoint x;
    double w = 0;
};

/// Weighted atom cloud on P(V). Weights are kept normalized; construction
/// renormalizes and rejects non-positive weights.
class EmpiricalMeasure {
  public:
    EmpiricalMeasure() = default;

    EmpiricalMeasure(std::vector<WeightedAtom> atoms, Provenance prov)
        : atoms_(std::move(atoms)), prov_(std::move(prov)) {
        if (atoms_.empty()) throw ValidationError("empirical measure needs at least one atom");
        dim_ = atoms_[0].x.dim();
        double sum = 0;
        for (const auto& a : atoms_) {
            if (a.x.dim() != dim_) throw DimensionError("measure atoms live in different spaces");
            if (!(a.w > 0)) throw ValidationError("measure weights must be positive");
            sum += a.w;
        }
        if (std::fabs(sum - 1.0) > tol::kMeasureWeights)
            for (auto& a : atoms_) a.w /= sum;
    }

    static EmpiricalMeasure dirac(const ProjectivePoint& x) {
        return EmpiricalMeasure({{x, 1.0}}, Provenance{"dirac", 0, 0, ""});
    }

    [[nodiscard]] int dim() const { return dim_; }
    [[nodiscard]] const std::vector<WeightedAtom>& atoms() const { return atoms_; }
    [[nodiscard]] const Provenance& provenance() const { return prov_; }
    void set_provenance(Provenance p) { prov_ = std::move(p); }

    /// Weighted second-moment matrix sum w x x^T (trace 1).
    [[nodiscard]] Eigen::MatrixXd second_moment() const {
        Eigen::MatrixXd m = Eigen::MatrixXd::Zero(dim_, dim_);
        for (const auto& a : atoms_) m += a.w * (a.x.rep() * a.x.rep().transpose());
        return m;
    }

    /// Numerical span of the atoms with weight above weight_floor: the
    /// second-moment eigendirections carrying at least rank_tol of the top
    /// eigenvalue. Statistical clouds need a loose cutoff; 1e-3 default.
    [[nodiscard]] Subspace span_estimate(double rank_tol = 1e-3, double weight_floor = 1e-6) const {
        Eigen::MatrixXd m = Eigen::MatrixXd::Zero(dim_, dim_);
        for (const auto& a : atoms_)
            if (a.w > weight_floor) m += a.w * (a.x.rep() * a.x.rep().transpose());
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
        const auto& ev = es.eigenvalues();  // ascending
        const double top = ev[dim_ - 1];
        if (!(top > 0)) throw ValidationError("span of an all-underweight measure");
        int rank = 0;
        for (int i = 0; i < dim_; ++i)
            if (ev[i] >= rank_tol * top) ++rank;
        Eigen::MatrixXd basis(dim_, rank);
        for (int k = 0; k < rank; ++k) basis.col(k) = es.eigenvectors().col(dim_ - 1 - k);
        return Subspace::span_of(basis, 1e-12);
    }

    /// Mass within angular delta of P(W).
    [[nodiscard]] double mass_within(const Subspace& w, double delta) const {
        if (w.dim() == 0) return 0.0;
        double m = 0;
        for (const auto& a : atoms_)
            if (distance_to_subspace(a.x, w) <= delta) m += a.w;
        return m;
    }

    /// Weighted mean angular distance to P(W).
    [[nodiscard]] double mean_distance(const Subspace& w) const {
        double m = 0;
        for (const auto& a : atoms_) m += a.w * distance_to_subspace(a.x, w);
        return m;
    }

    /// Largest pairwise angular distance between atoms.
    [[nodiscard]] double support_diameter() const {
        double d = 0;
        for (std::size_t i = 0; i < atoms_.size(); ++i)
            for (std::size_t j = i + 1; j < atoms_.size(); ++j)
                d = std::max(d, angular_distance(atoms_[i].x, atoms_[j].x));
        return d;
    }

    /// Pushforward under an invertible matrix; weights unchanged.
    [[nodiscard]] EmpiricalMeasure pushforward(const Eigen::MatrixXd& g) const {
        std::vector<WeightedAtom> out;
        out.reserve(atoms_.size());
        for (const auto& a : atoms_) out.push_back({act_projective(g, a.x), a.w});
        Provenance p = prov_;
        p.kind = "pushforward";
        return EmpiricalMeasure(std::move(out), std::move(p));
    }

    /// Pushforward to the quotient V/W in orthogonal-complement coordinates.
    /// Atoms inside P(W) (component below drop_tol) are dropped and the rest
    /// renormalized.
    [[nodiscard]] EmpiricalMeasure pushforward_quotient(const Subspace& w, double drop_tol = 1e-9) const {
        const Eigen::MatrixXd c = w.orth_complement().basis();
        std::vector<WeightedAtom> out;
        for (const auto& a : atoms_) {
            Eigen::VectorXd y = c.transpose() * a.x.rep();
            if (y.norm() <= drop_tol) continue;
            out.push_back({ProjectivePoint::from(std::move(y)), a.w});
        }
        if (out.empty()) throw ValidationError("measure is entirely supported on P(W); quotient empty");
        Provenance p = prov_;
        p.kind = "pushforward";
        p.detail = "quotient";
        return EmpiricalMeasure(std::move(out), std::move(p));
    }

    /// Weight-preserving systematic resample down to at most cap atoms.
    [[nodiscard]] EmpiricalMeasure resampled(std::size_t cap, std::uint64_t seed) const {
        if (atoms_.size() <= cap) return *this;
        SplitRng rng(seed);
        const double offset = rng.uniform();
        std::vector<WeightedAtom> out;
        out.reserve(cap);
        double cum = 0;
        std::size_t next = 0;
        for (const auto& a : atoms_) {
            cum += a.w;
            while (next < cap && (offset + static_cast<double>(next)) / static_cast<double>(cap) < cum) {
                out.push_back({a.x, 1.0 / static_cast<double>(cap)});
                ++next;
            }
        }
        while (next++ < cap) out.push_back({atoms_.back().x, 1.0 / static_cast<double>(cap)});
        return EmpiricalMeasure(std::move(out), prov_);
    }

    /// d=2 chart t = x1/x2 on P^1 minus [e1]; atoms at [e1] map to +inf.
    [[nodiscard]] std::vector<std::pair<double, double>> chart_values() const {
        if (dim_ != 2) throw DimensionError("chart coordinates are defined for dim 2 only");
        std::vector<std::pair<double, double>> out;
        out.reserve(atoms_.size());
        for (const auto& a : atoms_) {
            const auto& v = a.x.rep();
            const double t = std::fabs(v[1]) > 0 ? v[0] / v[1]
                                                 : std::numeric_limits<double>::infinity();
            out.push_back({t, a.w});
        }
        return out;
    }

  private:
    int dim_ = 0;
    std::vector<WeightedAtom> atoms_;
    Provenance prov_;
};

/// Sliced 1-Wasserstein distance: average over seeded random directions u of
/// the 1-d W1 distance between the pushforwards under x -> |<u, x>|.
inline double measure_distance(const EmpiricalMeasure& a, const EmpiricalMeasure& b,
                               std::uint64_t seed, int n_directions = 64) {
    if (a.dim() != b.dim()) throw DimensionError("measure_distance dimension mismatch");
    const int d = a.dim();
    SplitRng root(seed);
    double total = 0;
    std::vector<std::pair<double, double>> pa, pb;  // (value, signed weight)
    for (int k = 0; k < n_directions; ++k) {
        SplitRng rng = root.split(static_cast<std::uint64_t>(k));
        Eigen::VectorXd u(d);
        double nrm = 0;
        do {
            for (int i = 0; i < d; ++i) u[i] = rng.normal();
            nrm = u.norm();
        } while (!(nrm > 1e-12));
        u /= nrm;
        pa.clear();
        pb.clear();
        for (const auto& at : a.atoms()) pa.push_back({std::fabs(u.dot(at.x.rep())), at.w});
        for (const auto& at : b.atoms()) pb.push_back({std::fabs(u.dot(at.x.rep())), at.w});
        std::sort(pa.begin(), pa.end());
        std::sort(pb.begin(), pb.end());
        // W1 = integral |F_a - F_b| over the merged support.
        double w1 = 0, fa = 0, fb = 0, prev = 0;
        std::size_t ia = 0, ib = 0;
        bool first = true;
        while (ia < pa.size() || ib < pb.size()) {
            double t;
            if (ib >= pb.size() || (ia < pa.size() && pa[ia].first <= pb[ib].first))
                t = pa[ia].first;
            else
                t = pb[ib].first;
            if (!first) w1 += std::fabs(fa - fb) * (t - prev);
            first = false;
            while (ia < pa.size() && pa[ia].first <= t) fa += pa[ia++].second;
            while (ib < pb.size() && pb[ib].first <= t) fb += pb[ib++].second;
            prev = t;
        }
        total += w1;
    }
    return total / n_directions;
}

}  // namespace projmeas
