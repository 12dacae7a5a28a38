#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "projmeas/ensemble.hpp"
#include "projmeas/errors.hpp"
#include "projmeas/geometry.hpp"
#include "projmeas/io.hpp"
#include "projmeas/measure.hpp"
#include "projmeas/rng.hpp"

namespace projmeas {

// ---------------------------------------------------------------------------
// Forward-chain occupation measures.

/// Cesaro occupation measure of the forward projective chain started at x0:
/// after burn_in steps, every thinning-th visited point becomes an atom.
/// The result is capped by weight-preserving systematic resampling.
inline EmpiricalMeasure cesaro_measure(const MatrixEnsemble& e, const ProjectivePoint& x0,
                                       long n, long burn_in = 0, long thinning = 1,
                                       std::uint64_t seed = 1, std::size_t cap = 4096) {
    if (x0.dim() != e.dim) throw DimensionError("cesaro_measure: start point dimension mismatch");
    if (n < burn_in) throw ValidationError("cesaro_measure needs n >= burn_in");
    if (thinning < 1) throw ValidationError("cesaro_measure needs thinning >= 1");
    SplitRng root(seed);
    SplitRng chain = root.split(0);
    const std::uint64_t resample_seed = root.split(1).next_u64();

    ProjectivePoint x = x0;
    std::vector<WeightedAtom> atoms;
    atoms.reserve(static_cast<std::size_t>((n - burn_in) / thinning + 1));
    for (long k = 1; k <= n; ++k) {
        const std::size_t idx = sample_atom_index(e, chain);
        x = act_projective(e.atoms[idx], x);
        if (k > burn_in && (k - burn_in) % thinning == 0) atoms.push_back({x, 1.0});
    }
    if (atoms.empty()) atoms.push_back({x0, 1.0});
    Provenance prov{"cesaro", seed, n,
                    "burn_in=" + std::to_string(burn_in) + " thinning=" + std::to_string(thinning)};
    EmpiricalMeasure m(std::move(atoms), std::move(prov));
    if (m.atoms().size() > cap) m = m.resampled(cap, resample_seed);
    return m;
}

/// Pushforward of base by the backward-ordered product b_1 b_2 ... b_n
/// (each fresh letter multiplies on the right). n = 0 returns base unchanged.
inline EmpiricalMeasure backward_limit_measure(const MatrixEnsemble& e, long n, std::uint64_t seed,
                                               const EmpiricalMeasure& base) {
    if (base.dim() != e.dim) throw DimensionError("backward_limit_measure: base dimension mismatch");
    if (n < 0) throw ValidationError("backward_limit_measure needs n >= 0");
    if (n == 0) return base;
    SplitRng rng(seed);
    ScaledMatrix p = ScaledMatrix::identity(e.dim);
    for (long k = 0; k < n; ++k) p.multiply_right(e.atoms[sample_atom_index(e, rng)]);
    EmpiricalMeasure out = base.pushforward(p.m);
    // Keep the backward provenance rather than the generic pushforward one.
    return EmpiricalMeasure(out.atoms(), Provenance{"backward", seed, n, ""});
}

// ---------------------------------------------------------------------------
// Escape-of-mass diagnostic.

enum class EscapeVerdict { Tight, Escaping, Undecided };

inline const char* to_string(EscapeVerdict v) {
    switch (v) {
        case EscapeVerdict::Tight: return "TIGHT";
        case EscapeVerdict::Escaping: return "ESCAPING";
        default: return "UNDECIDED";
    }
}

struct EscapeProfile {
    std::vector<long> checkpoints;
    std::vector<double> mass;  // Cesaro mass within delta of P(W) at each checkpoint
    double delta = 0.05;
    EscapeVerdict verdict = EscapeVerdict::Undecided;
    std::uint64_t seed = 0;
};

/// Verdict rule over a checkpointed mass sequence: ESCAPING when the sequence
/// is non-decreasing and ends above 0.9; TIGHT when it is bounded by 0.5 and
/// non-increasing over the last half; UNDECIDED otherwise.
inline EscapeVerdict escape_verdict(const std::vector<double>& mass) {
    if (mass.empty()) return EscapeVerdict::Undecided;
    bool increasing = true;
    for (std::size_t i = 0; i + 1 < mass.size(); ++i)
        if (mass[i + 1] < mass[i]) increasing = false;
    if (increasing && mass.back() > 0.9) return EscapeVerdict::Escaping;
    bool bounded = true;
    for (double m : mass)
        if (m > 0.5) bounded = false;
    bool tail_flat = true;
    for (std::size_t i = mass.size() / 2; i + 1 < mass.size(); ++i)
        if (mass[i + 1] > mass[i]) tail_flat = false;
    if (bounded && tail_flat) return EscapeVerdict::Tight;
    return EscapeVerdict::Undecided;
}

/// Occupation mass near P(W) along one forward chain, recorded at the given
/// checkpoints. Requires W invariant and x0 off P(W).
inline EscapeProfile escape_mass_profile(const MatrixEnsemble& e, const Subspace& w,
                                         const ProjectivePoint& x0, double delta = 0.05,
                                         std::vector<long> schedule = {100, 1000, 10000, 100000},
                                         std::uint64_t seed = 1) {
    if (w.ambient_dim() != e.dim) throw DimensionError("escape profile: ambient mismatch");
    if (x0.dim() != e.dim) throw DimensionError("escape profile: start point mismatch");
    if (schedule.empty()) throw ValidationError("escape profile needs a nonempty schedule");
    if (!std::is_sorted(schedule.begin(), schedule.end()) || schedule.front() < 1)
        throw ValidationError("escape profile schedule must be increasing and positive");
    if (w.dim() == 0 || w.dim() == e.dim)
        throw ValidationError("escape profile needs a proper nonzero subspace");
    const auto [resid, atom] = invariance_residual(e, w);
    if (resid > tol::kInvariance) throw NotInvariantError(resid, atom);
    if (distance_to_subspace(x0, w) <= 1e-9)
        throw ValidationError("escape profile start point lies on P(W)");

    EscapeProfile profile;
    profile.checkpoints = schedule;
    profile.delta = delta;
    profile.seed = seed;
    SplitRng rng(seed);
    ProjectivePoint x = x0;
    long near_count = 0;
    std::size_t next_cp = 0;
    for (long k = 1; k <= schedule.back(); ++k) {
        x = act_projective(e.atoms[sample_atom_index(e, rng)], x);
        if (distance_to_subspace(x, w) <= delta) ++near_count;
        if (k == schedule[next_cp]) {
            profile.mass.push_back(static_cast<double>(near_count) / static_cast<double>(k));
            ++next_cp;
        }
    }
    profile.verdict = escape_verdict(profile.mass);
    return profile;
}

/// Escape profile averaged over independent chains (one per start point, with
/// split word seeds). The chart walk of a single chain is noisy enough to
/// break monotone verdicts; the averaged occupation estimates the expected
/// mass and stabilizes the verdict.
inline EscapeProfile averaged_escape_profile(const MatrixEnsemble& e, const Subspace& w,
                                             const std::vector<ProjectivePoint>& starts,
                                             double delta = 0.05,
                                             std::vector<long> schedule = {100, 1000, 10000,
                                                                           100000},
                                             std::uint64_t seed = 1) {
    if (starts.empty()) throw ValidationError("averaged escape profile needs start points");
    SplitRng root(seed);
    EscapeProfile avg;
    avg.delta = delta;
    avg.seed = seed;
    avg.checkpoints = schedule;
    avg.mass.assign(schedule.size(), 0.0);
    for (std::size_t i = 0; i < starts.size(); ++i) {
        const EscapeProfile one = escape_mass_profile(e, w, starts[i], delta, schedule,
                                                      root.split(i).next_u64());
        for (std::size_t k = 0; k < avg.mass.size(); ++k) avg.mass[k] += one.mass[k];
    }
    for (auto& m : avg.mass) m /= static_cast<double>(starts.size());
    avg.verdict = escape_verdict(avg.mass);
    return avg;
}

// ---------------------------------------------------------------------------
// Stationarity residual.

/// One step of the measure dynamics: every atom of nu pushed by every atom of
/// the ensemble with product weights.
inline EmpiricalMeasure one_step_pushforward(const MatrixEnsemble& e, const EmpiricalMeasure& nu) {
    if (nu.dim() != e.dim) throw DimensionError("one-step pushforward dimension mismatch");
    std::vector<WeightedAtom> out;
    out.reserve(e.size() * nu.atoms().size());
    for (std::size_t gi = 0; gi < e.size(); ++gi)
        for (const auto& a : nu.atoms())
            out.push_back({act_projective(e.atoms[gi], a.x), e.weights[gi] * a.w});
    Provenance prov = nu.provenance();
    prov.detail = prov.detail.empty() ? "one-step" : prov.detail + " one-step";
    return EmpiricalMeasure(std::move(out), std::move(prov));
}

/// Sliced transport distance between nu and its one-step image; zero exactly
/// when nu is stationary for the measure dynamics restricted to its atoms.
inline double stationarity_residual(const MatrixEnsemble& e, const EmpiricalMeasure& nu,
                                    std::uint64_t seed) {
    return measure_distance(one_step_pushforward(e, nu), nu, seed);
}

// ---------------------------------------------------------------------------
// Component resampling (stopped products).

/// Labels a product matrix given by its unit-Frobenius representative.
/// Labels must be scale-invariant; 0 is the designated identity label.
using MatrixClassifier = std::function<int(const Eigen::MatrixXd&)>;

/// Identity label iff det > 0. Scale-invariant: the representative is the
/// true product divided by a positive scalar, which cannot change the sign.
inline int classify_det_sign(const Eigen::MatrixXd& g) { return g.determinant() > 0 ? 0 : 1; }

/// Identity label iff g^T g is proportional to the identity (conformal),
/// which is the scale-invariant form of orthogonality.
inline int classify_conformal(const Eigen::MatrixXd& g) {
    const Eigen::MatrixXd m = g.transpose() * g;
    const double c = m.trace() / static_cast<double>(m.rows());
    const Eigen::MatrixXd dev =
        m - c * Eigen::MatrixXd::Identity(m.rows(), m.cols());
    return dev.norm() <= 1e-9 * std::max(1.0, m.norm()) ? 0 : 1;
}

/// Labels by the permutation induced on a list of pairwise-orthogonal blocks:
/// 0 when every block maps into itself, a positive code for a nontrivial
/// permutation, -1 when the blocks are not permuted at all.
inline MatrixClassifier block_permutation_classifier(std::vector<Subspace> blocks,
                                                     double angle_tol = 1e-6) {
    return [blocks = std::move(blocks), angle_tol](const Eigen::MatrixXd& g) -> int {
        const std::size_t b = blocks.size();
        std::vector<int> image(b, -1);
        for (std::size_t i = 0; i < b; ++i) {
            const Subspace img = Subspace::span_of(g * blocks[i].basis(), tol::kRank);
            if (img.dim() != blocks[i].dim()) return -1;
            for (std::size_t j = 0; j < b; ++j)
                if (blocks[j].dim() == img.dim() &&
                    blocks[j].max_principal_angle(img) <= angle_tol) {
                    image[i] = static_cast<int>(j);
                    break;
                }
            if (image[i] < 0) return -1;
        }
        // Lehmer-style code; identity permutation encodes to 0.
        int code = 0;
        int factor = 1;
        for (std::size_t i = 0; i < b; ++i) {
            int smaller = 0;
            for (std::size_t j = i + 1; j < b; ++j)
                if (image[j] < image[i]) ++smaller;
            code += smaller * factor;
            factor *= static_cast<int>(b - i);
        }
        return code;
    };
}

struct ResampleReport {
    std::vector<Eigen::MatrixXd> products;  // unit-Frobenius representatives
    std::vector<double> log_scales;
    std::vector<long> taus;
    double mean_tau = 0;
    double stderr_tau = 0;
    int n_samples = 0;
    std::uint64_t seed = 0;
};

struct ResampleOptions {
    long timeout = 1000000;
    bool keep_products = true;
    int precheck_pairs = 32;
    int precheck_max_len = 8;
};

/// Emits i.i.d. samples of the product stopped at the first return of its
/// label to the identity label, plus the empirical law of the stopping time.
/// Before sampling, identity-labeled products are checked to be closed under
/// multiplication on sampled pairs; violations raise ClassifierInconsistent.
inline ResampleReport resample_component(const MatrixEnsemble& e, const MatrixClassifier& cls,
                                         int n_samples, std::uint64_t seed,
                                         const ResampleOptions& opts = {}) {
    if (n_samples < 1) throw ValidationError("resample_component needs n_samples >= 1");
    if (cls(Eigen::MatrixXd::Identity(e.dim, e.dim)) != 0)
        throw ClassifierInconsistentError("identity matrix is not labeled 0");

    SplitRng root(seed);

    // Consistency precheck: identity-labeled products must stay identity-
    // labeled under multiplication.
    {
        SplitRng pre = root.split(0);
        std::vector<ScaledMatrix> pool;
        for (int i = 0; i < 4 * opts.precheck_pairs &&
                        static_cast<int>(pool.size()) < 2 * opts.precheck_pairs;
             ++i) {
            ScaledMatrix p = ScaledMatrix::identity(e.dim);
            const int len = 1 + static_cast<int>(pre.next_u64() %
                                                 static_cast<std::uint64_t>(opts.precheck_max_len));
            for (int k = 0; k < len; ++k) p.multiply_left(e.atoms[sample_atom_index(e, pre)]);
            if (cls(p.m) == 0) pool.push_back(std::move(p));
        }
        for (std::size_t i = 0; i + 1 < pool.size(); i += 2) {
            ScaledMatrix prod = pool[i];
            prod.multiply_left(pool[i + 1].m);
            if (cls(prod.m) != 0)
                throw ClassifierInconsistentError(
                    "identity-labeled products are not closed under multiplication");
        }
    }

    ResampleReport report;
    report.seed = seed;
    report.n_samples = n_samples;
    SplitRng rng = root.split(1);
    double sum = 0, sumsq = 0;
    for (int s = 0; s < n_samples; ++s) {
        ScaledMatrix p = ScaledMatrix::identity(e.dim);
        long tau = 0;
        do {
            p.multiply_left(e.atoms[sample_atom_index(e, rng)]);
            ++tau;
            if (tau >= opts.timeout) throw TimeoutNoReturnError(tau);
        } while (cls(p.m) != 0);
        sum += static_cast<double>(tau);
        sumsq += static_cast<double>(tau) * static_cast<double>(tau);
        report.taus.push_back(tau);
        if (opts.keep_products) {
            report.products.push_back(p.m);
            report.log_scales.push_back(p.log_scale);
        }
    }
    const double n = static_cast<double>(n_samples);
    report.mean_tau = sum / n;
    if (n_samples > 1) {
        const double var = std::max(0.0, (sumsq - sum * sum / n) / (n - 1));
        report.stderr_tau = std::sqrt(var / n);
    }
    return report;
}

// ---------------------------------------------------------------------------
// Serialization helpers.

inline void write_measure_csv(const EmpiricalMeasure& m, const std::string& path) {
    std::vector<std::string> header;
    for (int i = 0; i < m.dim(); ++i) header.push_back("x" + std::to_string(i));
    header.emplace_back("weight");
    CsvWriter csv;
    csv.header(header);
    const auto& prov = m.provenance();
    csv.comment("kind " + prov.kind + " seed " + std::to_string(prov.seed) + " n " +
                std::to_string(prov.n_steps) +
                (prov.detail.empty() ? std::string() : " " + prov.detail));
    for (const auto& a : m.atoms()) {
        std::vector<double> row(a.x.rep().data(), a.x.rep().data() + a.x.rep().size());
        row.push_back(a.w);
        csv.row(row);
    }
    csv.write(path);
}

inline void write_escape_csv(const EscapeProfile& p, const std::string& path) {
    CsvWriter csv;
    csv.header({"n", "mass"});
    csv.comment("delta " + fmt_double(p.delta) + " seed " + std::to_string(p.seed) + " verdict " +
                std::string(to_string(p.verdict)));
    for (std::size_t i = 0; i < p.checkpoints.size(); ++i)
        csv.row({static_cast<double>(p.checkpoints[i]), p.mass[i]});
    csv.write(path);
}

}  // namespace projmeas
