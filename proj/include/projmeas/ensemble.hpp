#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "projmeas/errors.hpp"
#include "projmeas/geometry.hpp"
#include "projmeas/rational.hpp"
#include "projmeas/rng.hpp"

namespace projmeas {

enum class ArithmeticMode { Float64, ExactRational };

/// Finitely supported distribution on GL(V): atoms with positive weights
/// summing to one. In exact-rational mode the atoms additionally carry exact
/// entries used by the certificate layer.
struct MatrixEnsemble {
    int dim = 0;
    ArithmeticMode mode = ArithmeticMode::Float64;
    std::vector<Eigen::MatrixXd> atoms;
    std::vector<double> weights;
    std::vector<RatMatrix> rat_atoms;      // parallel to atoms when exact
    std::vector<Rational> rat_weights;     // optional exact weights
    std::vector<double> cumulative;        // prefix sums for sampling

    [[nodiscard]] std::size_t size() const { return atoms.size(); }
    [[nodiscard]] bool exact() const { return mode == ArithmeticMode::ExactRational; }
};

inline void validate_ensemble(MatrixEnsemble& e) {
    if (e.dim < 1) throw ValidationError("ensemble dimension must be >= 1");
    if (e.atoms.empty()) throw ValidationError("ensemble needs at least one atom");
    if (e.atoms.size() != e.weights.size())
        throw ValidationError("ensemble has " + std::to_string(e.atoms.size()) + " atoms but " +
                              std::to_string(e.weights.size()) + " weights");
    double sum = 0;
    for (std::size_t i = 0; i < e.atoms.size(); ++i) {
        const auto& g = e.atoms[i];
        if (g.rows() != e.dim || g.cols() != e.dim)
            throw ValidationError("atom " + std::to_string(i) + " is not " + std::to_string(e.dim) +
                                  "x" + std::to_string(e.dim));
        if (!g.allFinite()) throw ValidationError("atom " + std::to_string(i) + " has non-finite entries");
        if (!(e.weights[i] > 0))
            throw ValidationError("weight " + std::to_string(i) + " must be positive");
        sum += e.weights[i];
        // Invertibility: exact when available, scaled determinant otherwise.
        if (e.exact()) {
            if (rat_determinant(e.rat_atoms.at(i)) == 0)
                throw ValidationError("atom " + std::to_string(i) + " is singular");
        } else {
            const double scale = g.cwiseAbs().maxCoeff();
            if (!(scale > 0) || std::fabs(g.determinant()) <= 1e-12 * std::pow(scale, e.dim))
                throw ValidationError("atom " + std::to_string(i) + " is numerically singular");
        }
    }
    if (std::fabs(sum - 1.0) > tol::kWeights)
        throw ValidationError("weights sum to " + std::to_string(sum) + ", expected 1");
    if (e.exact() && e.rat_atoms.size() != e.atoms.size())
        throw ValidationError("exact-rational ensemble lacks exact atoms");
    e.cumulative.resize(e.weights.size());
    std::partial_sum(e.weights.begin(), e.weights.end(), e.cumulative.begin());
    e.cumulative.back() = 1.0;
}

inline MatrixEnsemble make_ensemble(std::vector<Eigen::MatrixXd> atoms, std::vector<double> weights) {
    MatrixEnsemble e;
    e.dim = atoms.empty() ? 0 : static_cast<int>(atoms[0].rows());
    e.atoms = std::move(atoms);
    e.weights = std::move(weights);
    validate_ensemble(e);
    return e;
}

inline MatrixEnsemble make_rational_ensemble(std::vector<RatMatrix> atoms, std::vector<Rational> weights) {
    MatrixEnsemble e;
    e.mode = ArithmeticMode::ExactRational;
    e.dim = atoms.empty() ? 0 : atoms[0].rows;
    Rational wsum = 0;
    for (const auto& w : weights) wsum += w;
    if (wsum != 1) throw ValidationError("exact weights must sum to exactly 1");
    for (auto& m : atoms) {
        if (m.rows != e.dim || m.cols != e.dim) throw ValidationError("exact atom shape mismatch");
        e.atoms.push_back(m.to_double());
        e.rat_atoms.push_back(std::move(m));
    }
    for (const auto& w : weights) e.weights.push_back(static_cast<double>(w));
    e.rat_weights = std::move(weights);
    validate_ensemble(e);
    return e;
}

enum class WordDirection {
    Forward,   // product g_{i_n} ... g_{i_1}, new letters multiply on the left
    Backward,  // product g_{i_1} ... g_{i_n}, new letters multiply on the right
};

/// A sampled word: atom indices plus the evaluation convention.
struct WordSample {
    std::vector<std::size_t> indices;
    WordDirection direction = WordDirection::Forward;
};

inline std::size_t sample_atom_index(const MatrixEnsemble& e, SplitRng& rng) {
    return rng.categorical(e.cumulative);
}

inline WordSample sample_word(const MatrixEnsemble& e, long n, std::uint64_t seed,
                              WordDirection dir = WordDirection::Forward) {
    if (n < 0) throw ValidationError("word length must be >= 0");
    SplitRng rng(seed);
    WordSample w;
    w.direction = dir;
    w.indices.reserve(static_cast<std::size_t>(n));
    for (long k = 0; k < n; ++k) w.indices.push_back(sample_atom_index(e, rng));
    return w;
}

/// Matrix kept at unit Frobenius norm with the factored scale stored as a log;
/// the represented value is m * exp(log_scale).
struct ScaledMatrix {
    Eigen::MatrixXd m;
    double log_scale = 0;

    static ScaledMatrix identity(int d) { return {Eigen::MatrixXd::Identity(d, d), 0.0}; }

    void multiply_left(const Eigen::MatrixXd& g) { absorb(g * m); }
    void multiply_right(const Eigen::MatrixXd& g) { absorb(m * g); }

    [[nodiscard]] double log_frobenius() const { return log_scale + std::log(m.norm()); }

  private:
    void absorb(Eigen::MatrixXd p) {
        const double f = p.norm();
        if (!(f > 0) || !std::isfinite(f))
            throw DegenerateFrameError("matrix product collapsed during renormalization");
        m = p / f;
        log_scale += std::log(f);
    }
};

/// Evaluate a word with running renormalization; safe for long products.
inline ScaledMatrix evaluate_word(const MatrixEnsemble& e, const WordSample& w) {
    // The empty product is exactly the identity with log_scale 0.
    ScaledMatrix p = ScaledMatrix::identity(e.dim);
    for (std::size_t idx : w.indices) {
        if (idx >= e.size()) throw ValidationError("word references atom out of range");
        if (w.direction == WordDirection::Forward)
            p.multiply_left(e.atoms[idx]);
        else
            p.multiply_right(e.atoms[idx]);
    }
    return p;
}

/// Relative invariance residual max_g |(I-P) g P| / |g| for a candidate
/// invariant subspace.
inline std::pair<double, int> invariance_residual(const MatrixEnsemble& e, const Subspace& w) {
    if (w.ambient_dim() != e.dim) throw DimensionError("invariance check ambient mismatch");
    if (w.dim() == 0 || w.dim() == e.dim) return {0.0, -1};
    const Eigen::MatrixXd p = w.projector();
    const Eigen::MatrixXd q = Eigen::MatrixXd::Identity(e.dim, e.dim) - p;
    double worst = 0;
    int worst_atom = -1;
    for (std::size_t i = 0; i < e.size(); ++i) {
        const double r = (q * e.atoms[i] * p).norm() / e.atoms[i].norm();
        if (r > worst) {
            worst = r;
            worst_atom = static_cast<int>(i);
        }
    }
    return {worst, worst_atom};
}

enum class BlockKind { Restrict, Quotient };

/// Induced ensemble on an invariant subspace W (basis coordinates) or on the
/// quotient V/W (orthogonal-complement coordinates). Weights are preserved.
inline MatrixEnsemble restrict_quotient(const MatrixEnsemble& e, const Subspace& w, BlockKind kind) {
    const auto [residual, atom] = invariance_residual(e, w);
    if (residual > tol::kInvariance) throw NotInvariantError(residual, atom);
    Eigen::MatrixXd frame;
    if (kind == BlockKind::Restrict) {
        if (w.dim() == 0) throw DimensionError("cannot restrict to the zero subspace");
        frame = w.basis();
    } else {
        if (w.dim() == e.dim) throw DimensionError("cannot form the quotient by the full space");
        frame = w.orth_complement().basis();
    }
    MatrixEnsemble out;
    out.dim = static_cast<int>(frame.cols());
    out.weights = e.weights;
    for (const auto& g : e.atoms) out.atoms.push_back(frame.transpose() * g * frame);
    validate_ensemble(out);
    return out;
}

/// Atom-wise derived ensembles used by the recurrence probe.
inline MatrixEnsemble map_atoms(const MatrixEnsemble& e,
                                const std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>& f) {
    MatrixEnsemble out;
    out.dim = 0;
    for (const auto& g : e.atoms) out.atoms.push_back(f(g));
    out.dim = out.atoms.empty() ? 0 : static_cast<int>(out.atoms[0].rows());
    out.weights = e.weights;
    validate_ensemble(out);
    return out;
}

inline MatrixEnsemble inverse_transpose_ensemble(const MatrixEnsemble& e) {
    return map_atoms(e, [](const Eigen::MatrixXd& g) { return g.inverse().transpose().eval(); });
}

/// g -> g^2 is only a representation for a commuting family; checked here.
inline MatrixEnsemble atom_square_ensemble(const MatrixEnsemble& e) {
    for (std::size_t i = 0; i < e.size(); ++i)
        for (std::size_t j = i + 1; j < e.size(); ++j) {
            const double comm = (e.atoms[i] * e.atoms[j] - e.atoms[j] * e.atoms[i]).norm();
            if (comm > 1e-8 * e.atoms[i].norm() * e.atoms[j].norm())
                throw ValidationError("atom squaring needs a commuting ensemble");
        }
    return map_atoms(e, [](const Eigen::MatrixXd& g) { return (g * g).eval(); });
}

}  // namespace projmeas
