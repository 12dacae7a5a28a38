#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "projmeas/ensemble.hpp"
#include "projmeas/errors.hpp"
#include "projmeas/geometry.hpp"
#include "projmeas/invariant.hpp"
#include "projmeas/lyapunov.hpp"
#include "projmeas/measure.hpp"
#include "projmeas/parallel.hpp"
#include "projmeas/rng.hpp"
#include "projmeas/stationary.hpp"

namespace projmeas {

// ---------------------------------------------------------------------------
// Shared helper: snap a measure's support span onto the invariant lattice.

struct SnapResult {
    Subspace raw_span;
    std::optional<std::size_t> member;  // index into lattice.members
    double angle = 0;                   // containment angle of member inside raw span (0 when equal)
    bool span_not_invariant = false;    // no member captured the mass, or dims shrank
};

/// Chooses the minimal-dimension lattice member holding at least mass_floor of
/// the measure within angular radius, among members no larger than the raw
/// span estimate. A snap to a member strictly smaller than the raw span, or a
/// failure to snap at all, raises the span_not_invariant flag (reported, not
/// fatal): it signals estimation noise or lattice incompleteness.
inline SnapResult snap_to_lattice(const EmpiricalMeasure& m, const InvariantLattice& lattice,
                                  double radius = 0.05, double mass_floor = 0.95) {
    SnapResult out;
    out.raw_span = m.span_estimate();
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < lattice.members.size(); ++i) {
        const Subspace& w = lattice.members[i];
        if (w.dim() == 0 || w.dim() > out.raw_span.dim()) continue;
        if (m.mass_within(w, radius) < mass_floor) continue;
        if (!best || w.dim() < lattice.members[*best].dim()) best = i;
    }
    out.member = best;
    if (!best) {
        out.span_not_invariant = true;
        return out;
    }
    const Subspace& w = lattice.members[*best];
    out.span_not_invariant = w.dim() < out.raw_span.dim();
    if (w.dim() == out.raw_span.dim()) {
        out.angle = w.max_principal_angle(out.raw_span);
    } else {
        // Containment angle: how far w sticks out of the raw span.
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(out.raw_span.basis().transpose() * w.basis());
        const double c = std::clamp(svd.singularValues().minCoeff(), -1.0, 1.0);
        out.angle = std::acos(c);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Critical-case semisimplicity certificate.

struct MeasureCriticalResult {
    std::size_t measure_index = 0;
    SnapResult snap;
    Subspace support_span;  // the snapped subspace actually certified
    bool certified = false;
    ReducibilityCertificate certificate;
};

struct CriticalCertificate {
    bool critical = false;  // filtration gate; results only populated when true
    bool all_semisimple = false;
    bool any_span_not_invariant = false;
    bool incomplete_lattice = false;
    FiltrationReport filtration;
    std::vector<MeasureCriticalResult> results;
};

struct CriticalOptions {
    FiltrationOptions filtration;
    LatticeOptions lattice;
    double snap_radius = 0.05;
    double snap_mass = 0.95;
};

/// When the filtration is critical, certifies for each measure that the
/// action restricted to the (lattice-snapped) span of its support is
/// completely reducible.
inline CriticalCertificate critical_semisimplicity_check(
    const MatrixEnsemble& e, const std::vector<EmpiricalMeasure>& measures,
    const CriticalOptions& opts = {}) {
    CriticalCertificate cert;
    cert.filtration = fkh_filtration(e, opts.filtration);
    cert.critical = cert.filtration.critical;
    cert.incomplete_lattice = cert.filtration.incomplete_lattice;
    if (!cert.critical) return cert;

    const AlgebraBasis alg = algebra_closure(e);
    const InvariantLattice lattice = invariant_subspace_lattice(e, alg, opts.lattice);
    cert.incomplete_lattice = cert.incomplete_lattice || lattice.incomplete;

    cert.all_semisimple = true;
    bool any_certified = false;
    for (std::size_t i = 0; i < measures.size(); ++i) {
        MeasureCriticalResult r;
        r.measure_index = i;
        r.snap = snap_to_lattice(measures[i], lattice, opts.snap_radius, opts.snap_mass);
        cert.any_span_not_invariant = cert.any_span_not_invariant || r.snap.span_not_invariant;
        if (r.snap.member) {
            r.support_span = lattice.members[*r.snap.member];
            r.certificate = complete_reducibility_certificate(e, r.support_span, opts.lattice);
            r.certified = r.certificate.semisimple;
            cert.incomplete_lattice =
                cert.incomplete_lattice || r.certificate.incomplete_lattice;
            any_certified = true;
            if (!r.certified) cert.all_semisimple = false;
        }
        cert.results.push_back(std::move(r));
    }
    if (!any_certified) cert.all_semisimple = false;
    return cert;
}

// ---------------------------------------------------------------------------
// Lift existence decision.

enum class LiftAnswer { Exists, NotExists, Undecided };

inline const char* to_string(LiftAnswer a) {
    switch (a) {
        case LiftAnswer::Exists: return "EXISTS";
        case LiftAnswer::NotExists: return "NOT_EXISTS";
        default: return "UNDECIDED";
    }
}

struct LiftDecision {
    LiftAnswer answer = LiftAnswer::Undecided;
    std::optional<Subspace> witness;        // ambient coordinates
    ExponentEstimate intersection_top;      // top exponent of W' ∩ W (-inf when trivial)
    ExponentEstimate nubar_top;             // given top exponent of the quotient span
    ExponentEstimate w_top;                 // top exponent of the restriction to W
    double iso_angle = 0;                   // quotient-image mismatch of the witness
    bool expanding_bypass = false;          // hypothesis failed; contracting-regime answer
    bool incomplete_lattice = false;
    EscapeProfile corroboration;
    std::string note;
};

struct LiftOptions {
    long n_steps = 20000;
    int n_trials = 8;
    std::uint64_t seed = 1;
    int workers = 1;
    LatticeOptions lattice;
    double iso_angle_tol = 0.02;
    double escape_delta = 0.05;
    std::vector<long> escape_schedule = {100, 1000, 10000, 100000};
};

namespace detail {

/// Random projective point at least min_dist off P(W), for corroboration runs.
inline ProjectivePoint generic_start(int dim, const Subspace& avoid, std::uint64_t seed,
                                     double min_dist = 0.1) {
    SplitRng rng(seed);
    for (int tries = 0; tries < 256; ++tries) {
        Eigen::VectorXd v(dim);
        for (int i = 0; i < dim; ++i) v[i] = rng.normal();
        if (v.norm() < 1e-6) continue;
        ProjectivePoint p = ProjectivePoint::from(v);
        if (avoid.dim() == 0 || avoid.dim() == dim || distance_to_subspace(p, avoid) > min_dist)
            return p;
    }
    throw ValidationError("could not sample a start point away from the subspace");
}

}  // namespace detail

/// Decides whether the stationary measure described by (nubar_span, nubar_top)
/// on the quotient by W admits a stationary lift off P(W). nubar_span lives in
/// quotient coordinates (the orthonormal complement frame of W).
inline LiftDecision decide_lift_existence(const MatrixEnsemble& e, const Subspace& w,
                                          const Subspace& nubar_span,
                                          const ExponentEstimate& nubar_top,
                                          const LiftOptions& opts = {}) {
    if (w.ambient_dim() != e.dim) throw DimensionError("lift decision: ambient mismatch");
    if (w.dim() == 0 || w.dim() == e.dim)
        throw ValidationError("lift decision needs a proper nonzero subspace");
    const int q_dim = e.dim - w.dim();
    if (nubar_span.ambient_dim() != q_dim)
        throw DimensionError("lift decision: quotient span must live in quotient coordinates");
    if (nubar_span.dim() == 0) throw ValidationError("lift decision: quotient span is zero");
    const auto [resid, atom] = invariance_residual(e, w);
    if (resid > tol::kInvariance) throw NotInvariantError(resid, atom);

    SplitRng root(opts.seed);
    SpectrumOptions sopts;
    sopts.workers = opts.workers;

    LiftDecision dec;
    dec.nubar_top = nubar_top;

    const MatrixEnsemble on_w = restrict_quotient(e, w, BlockKind::Restrict);
    dec.w_top = estimate_spectrum(on_w, opts.n_steps, opts.n_trials, root.split(1).next_u64(), sopts)
                    .top();

    const Eigen::MatrixXd C = w.orth_complement().basis();  // quotient frame

    // Theorem hypothesis: top(quotient span) <= top(W) under the tie rule.
    // When the quotient definitely grows faster, the lift exists by the
    // contracting-regime result; record the bypass and the preimage witness.
    if (definitely_less(dec.w_top, nubar_top)) {
        dec.expanding_bypass = true;
        dec.answer = LiftAnswer::Exists;
        Eigen::MatrixXd pre(e.dim, w.dim() + nubar_span.dim());
        pre.leftCols(w.dim()) = w.basis();
        pre.rightCols(nubar_span.dim()) = C * nubar_span.basis();
        dec.witness = Subspace::span_of(pre, 1e-12);
        dec.intersection_top = dec.w_top;
        dec.note = "expanding-case bypass: quotient growth exceeds the subspace growth";
    } else {
        const AlgebraBasis alg = algebra_closure(e);
        LatticeOptions lopts = opts.lattice;
        lopts.seed = root.split(2).next_u64();
        lopts.workers = opts.workers;
        const InvariantLattice lattice = invariant_subspace_lattice(e, alg, lopts);
        dec.incomplete_lattice = lattice.incomplete;

        std::uint64_t exp_stream = 100;
        for (const Subspace& cand : lattice.members) {
            if (cand.dim() == 0) continue;
            // Quotient image must match the span of the quotient measure.
            const Subspace image = Subspace::span_of(C.transpose() * cand.basis(), 1e-9);
            if (image.dim() != nubar_span.dim()) continue;
            const double angle = image.max_principal_angle(nubar_span);
            if (angle > opts.iso_angle_tol) continue;
            // Intersection with W must grow strictly slower than the span.
            const Subspace inter = cand.intersect(w);
            ExponentEstimate inter_top = ExponentEstimate::minus_infinity();
            if (inter.dim() > 0) {
                const MatrixEnsemble on_inter = restrict_quotient(e, inter, BlockKind::Restrict);
                inter_top = estimate_spectrum(on_inter, opts.n_steps, opts.n_trials,
                                              root.split(exp_stream++).next_u64(), sopts)
                                .top();
            }
            if (!definitely_less(inter_top, nubar_top)) continue;
            dec.answer = LiftAnswer::Exists;
            dec.witness = cand;
            dec.intersection_top = inter_top;
            dec.iso_angle = angle;
            break;
        }
        if (dec.answer != LiftAnswer::Exists) {
            dec.answer = lattice.incomplete ? LiftAnswer::Undecided : LiftAnswer::NotExists;
            if (lattice.incomplete)
                dec.note = "no witness among discovered subspaces; lattice search incomplete";
        }
    }

    const ProjectivePoint x0 = detail::generic_start(e.dim, w, root.split(3).next_u64());
    dec.corroboration = escape_mass_profile(e, w, x0, opts.escape_delta, opts.escape_schedule,
                                            root.split(4).next_u64());
    if (dec.answer == LiftAnswer::Exists &&
        dec.corroboration.verdict == EscapeVerdict::Escaping) {
        dec.note += (dec.note.empty() ? "" : "; ");
        dec.note += "warning: simulation shows escaping mass despite a lift witness";
    }
    return dec;
}

/// Derives the lift-decision inputs from a quotient simulation: runs the
/// forward chain on the quotient action, snaps the occupation span to the
/// quotient lattice, and estimates that span's top exponent.
struct QuotientData {
    MatrixEnsemble quotient;
    EmpiricalMeasure nubar;
    Subspace nubar_span;  // quotient coordinates
    ExponentEstimate nubar_top;
    bool span_not_invariant = false;
};

inline QuotientData derive_quotient_data(const MatrixEnsemble& e, const Subspace& w,
                                         long n_steps = 20000, std::uint64_t seed = 1,
                                         int workers = 1) {
    QuotientData out{restrict_quotient(e, w, BlockKind::Quotient), {}, {}, {}, false};
    SplitRng root(seed);
    if (out.quotient.dim == 1) {
        out.nubar = EmpiricalMeasure::dirac(ProjectivePoint::from(Eigen::VectorXd::Ones(1)));
        out.nubar_span = Subspace::full(1);
    } else {
        const ProjectivePoint x0 =
            detail::generic_start(out.quotient.dim, Subspace::zero(out.quotient.dim),
                                  root.split(1).next_u64());
        out.nubar = cesaro_measure(out.quotient, x0, n_steps, n_steps / 10, 1,
                                   root.split(2).next_u64());
        const AlgebraBasis alg = algebra_closure(out.quotient);
        LatticeOptions lopts;
        lopts.seed = root.split(3).next_u64();
        lopts.workers = workers;
        const InvariantLattice lattice = invariant_subspace_lattice(out.quotient, alg, lopts);
        const SnapResult snap = snap_to_lattice(out.nubar, lattice);
        out.span_not_invariant = snap.span_not_invariant;
        out.nubar_span = snap.member ? lattice.members[*snap.member] : snap.raw_span;
    }
    SpectrumOptions sopts;
    sopts.workers = workers;
    const MatrixEnsemble on_span =
        out.nubar_span.dim() == out.quotient.dim
            ? out.quotient
            : restrict_quotient(out.quotient, out.nubar_span, BlockKind::Restrict);
    out.nubar_top =
        estimate_spectrum(on_span, std::max(1000L, n_steps), 8, root.split(4).next_u64(), sopts)
            .top();
    return out;
}

// ---------------------------------------------------------------------------
// Orbit compactness probe.

enum class OrbitVerdict { LikelySupports, LikelyNot, Undecided };

inline const char* to_string(OrbitVerdict v) {
    switch (v) {
        case OrbitVerdict::LikelySupports: return "LIKELY-SUPPORTS";
        case OrbitVerdict::LikelyNot: return "LIKELY-NOT";
        default: return "UNDECIDED";
    }
}

struct OrbitProbe {
    OrbitVerdict verdict = OrbitVerdict::Undecided;
    bool bounded = false;           // projected orbit stays off degeneration
    bool gap_in_filtration = true;  // accumulation proxy consistent with the allowed set
    bool finite_orbit = false;
    double min_projected_norm = 1;
    double concentration_mass = 0;  // heaviest small-ball mass among tail samples
    std::optional<ProjectivePoint> concentration_center;
    double center_distance = 0;  // distance of the center to P(F) (pi/2 when F = 0)
    Subspace orbit_span;
    Subspace deflation_space;  // F of the filtration on the orbit span, ambient coords
    int n_samples = 0;
    std::uint64_t seed = 0;
};

struct OrbitOptions {
    int n_samples = 400;
    long max_word_len = 1000;
    std::uint64_t seed = 1;
    int workers = 1;
    double degeneracy_eps = 0.01;
    double concentration_radius = 0.05;
    double concentration_mass = 0.2;
    double filtration_tube = 0.05;
    double finite_dedup = 1e-6;
    int finite_max = 64;
    FiltrationOptions filtration;
};

/// Samples the orbit of x under random words of growing length, computes the
/// deflation subspace F of the orbit span, and reports a heuristic verdict on
/// whether the orbit closure can support a stationary measure: bounded
/// quotient samples with no stray accumulation point support it; a heavy
/// accumulation center outside P(F) speaks against it.
inline OrbitProbe orbit_compactness_probe(const MatrixEnsemble& e, const ProjectivePoint& x,
                                          const OrbitOptions& opts = {}) {
    if (x.dim() != e.dim) throw DimensionError("orbit probe: point dimension mismatch");
    OrbitProbe probe;
    probe.seed = opts.seed;
    probe.n_samples = opts.n_samples;
    SplitRng root(opts.seed);

    // Orbit samples from independent words of growing length.
    std::vector<ProjectivePoint> samples(static_cast<std::size_t>(opts.n_samples),
                                         ProjectivePoint{});
    std::vector<long> lengths(static_cast<std::size_t>(opts.n_samples), 0);
    parallel_for(opts.n_samples, opts.workers, [&](long i) {
        SplitRng rng = root.split(static_cast<std::uint64_t>(i));
        const long len = std::max<long>(
            1, (i + 1) * opts.max_word_len / std::max(1, opts.n_samples));
        ProjectivePoint p = x;
        for (long k = 0; k < len; ++k) p = act_projective(e.atoms[sample_atom_index(e, rng)], p);
        samples[static_cast<std::size_t>(i)] = p;
        lengths[static_cast<std::size_t>(i)] = len;
    });

    // Finite-orbit short circuit.
    {
        std::vector<ProjectivePoint> distinct;
        for (const auto& p : samples) {
            bool seen = false;
            for (const auto& q : distinct)
                if (angular_distance(p, q) <= opts.finite_dedup) {
                    seen = true;
                    break;
                }
            if (!seen) {
                distinct.push_back(p);
                if (static_cast<int>(distinct.size()) > opts.finite_max) break;
            }
        }
        if (static_cast<int>(distinct.size()) <= opts.finite_max) {
            probe.finite_orbit = true;
            probe.bounded = true;
            probe.gap_in_filtration = true;
            probe.verdict = OrbitVerdict::LikelySupports;
            Eigen::MatrixXd cols(e.dim, static_cast<int>(distinct.size()));
            for (std::size_t i = 0; i < distinct.size(); ++i)
                cols.col(static_cast<int>(i)) = distinct[i].rep();
            probe.orbit_span = Subspace::span_of(cols, 1e-9);
            probe.deflation_space = Subspace::zero(e.dim);
            return probe;
        }
    }

    // Span of the sampled orbit and the deflation subspace of its restriction.
    {
        Eigen::MatrixXd cols(e.dim, opts.n_samples);
        for (int i = 0; i < opts.n_samples; ++i) cols.col(i) = samples[static_cast<std::size_t>(i)].rep();
        probe.orbit_span = Subspace::span_of(cols, 1e-9);
    }
    const bool whole = probe.orbit_span.dim() == e.dim;
    const MatrixEnsemble on_span =
        whole ? e : restrict_quotient(e, probe.orbit_span, BlockKind::Restrict);
    FiltrationOptions fopts = opts.filtration;
    fopts.seed = root.split(0x0f1).next_u64();
    fopts.workers = opts.workers;
    const FiltrationReport filt = fkh_filtration(on_span, fopts);
    Subspace f_inner = filt.levels.size() >= 2 ? filt.levels[1].space
                                               : Subspace::zero(on_span.dim);
    if (whole || f_inner.dim() == 0) {
        probe.deflation_space =
            f_inner.dim() == 0 ? Subspace::zero(e.dim) : f_inner;
    } else {
        probe.deflation_space =
            Subspace::span_of(probe.orbit_span.basis() * f_inner.basis(), 1e-12);
    }

    // Degeneration proxy: norms of the samples in the quotient of the span by F.
    probe.min_projected_norm = 1;
    if (probe.deflation_space.dim() > 0) {
        Eigen::MatrixXd fq;  // complement frame of F inside the span
        {
            const Eigen::MatrixXd sb = probe.orbit_span.basis();
            const Eigen::MatrixXd fb_inner = sb.transpose() * probe.deflation_space.basis();
            Subspace f_in_span = Subspace::span_of(fb_inner, 1e-9);
            fq = sb * f_in_span.orth_complement().basis();
        }
        for (const auto& p : samples)
            probe.min_projected_norm =
                std::min(probe.min_projected_norm, (fq.transpose() * p.rep()).norm());
    }
    probe.bounded = probe.min_projected_norm >= opts.degeneracy_eps;

    // Concentration analysis on the long-word tail.
    std::vector<std::size_t> tail;
    for (std::size_t i = 0; i < samples.size(); ++i)
        if (lengths[i] * 2 >= opts.max_word_len) tail.push_back(i);
    if (!tail.empty()) {
        double best_mass = 0;
        std::size_t best_center = tail.front();
        for (std::size_t ci : tail) {
            int count = 0;
            for (std::size_t oi : tail)
                if (angular_distance(samples[ci], samples[oi]) <= opts.concentration_radius)
                    ++count;
            const double mass = static_cast<double>(count) / static_cast<double>(tail.size());
            if (mass > best_mass) {
                best_mass = mass;
                best_center = ci;
            }
        }
        probe.concentration_mass = best_mass;
        if (best_mass >= opts.concentration_mass) {
            probe.concentration_center = samples[best_center];
            probe.center_distance =
                probe.deflation_space.dim() == 0
                    ? 1.5707963267948966
                    : distance_to_subspace(samples[best_center], probe.deflation_space);
        }
    }

    if (probe.concentration_center &&
        probe.center_distance > opts.filtration_tube) {
        probe.gap_in_filtration = false;
        probe.verdict = OrbitVerdict::LikelyNot;
    } else if (probe.bounded) {
        probe.gap_in_filtration = true;
        probe.verdict = OrbitVerdict::LikelySupports;
    } else {
        probe.verdict = OrbitVerdict::Undecided;
    }
    return probe;
}

// ---------------------------------------------------------------------------
// Stationary-measure survey.

struct SurveyCandidate {
    EmpiricalMeasure measure;
    std::string origin;  // "fixed-line", "cesaro", "restricted:<dim>"
    double residual = 0;
};

struct SurveyResult {
    std::vector<SurveyCandidate> measures;
    bool incomplete_lattice = false;
    std::vector<std::string> notes;
};

struct SurveyOptions {
    long n_steps = 10000;
    int n_starts = 3;
    std::uint64_t seed = 1;
    int workers = 1;
    std::size_t cap = 4096;
    double dedup_distance = 0.02;
    double residual_tol = 0.05;
    double absorb_delta = 0.05;
    double absorb_mass = 0.9;
    double absorb_drift = 0.1;
    double escape_probe_delta = 0.1;
    int max_depth = 3;
    LatticeOptions lattice;
};

namespace detail {

inline EmpiricalMeasure lift_measure(const EmpiricalMeasure& inner, const Subspace& w) {
    std::vector<WeightedAtom> atoms;
    atoms.reserve(inner.atoms().size());
    for (const auto& a : inner.atoms())
        atoms.push_back({ProjectivePoint::from(w.basis() * a.x.rep()), a.w});
    return EmpiricalMeasure(std::move(atoms), inner.provenance());
}

inline void survey_impl(const MatrixEnsemble& e, const SurveyOptions& opts, int depth,
                        const std::string& origin_suffix, SurveyResult& out,
                        std::uint64_t seed) {
    SplitRng root(seed);
    const AlgebraBasis alg = algebra_closure(e);
    LatticeOptions lopts = opts.lattice;
    lopts.seed = root.split(1).next_u64();
    lopts.workers = opts.workers;
    const InvariantLattice lattice = invariant_subspace_lattice(e, alg, lopts);
    out.incomplete_lattice = out.incomplete_lattice || lattice.incomplete;

    auto add_candidate = [&](EmpiricalMeasure m, std::string origin, double residual) {
        for (const auto& existing : out.measures) {
            if (existing.measure.dim() != m.dim()) continue;
            if (measure_distance(existing.measure, m, 0xd15cULL) <= opts.dedup_distance) return;
        }
        out.measures.push_back({std::move(m), std::move(origin) + origin_suffix, residual});
    };

    // Invariant lines give exactly stationary Diracs.
    for (std::size_t idx : lattice.members_of_dim(1)) {
        const Subspace& line = lattice.members[idx];
        const ProjectivePoint p = ProjectivePoint::from(line.basis().col(0));
        EmpiricalMeasure dirac = EmpiricalMeasure::dirac(p);
        const double res = stationarity_residual(e, dirac, root.split(2 + idx).next_u64());
        add_candidate(std::move(dirac), "fixed-line", res);
    }

    if (e.dim == 1) return;

    // Ensemble-level escape test: when generic mass provably escapes into a
    // proper invariant subspace, transverse occupation measures are transient
    // artifacts (they can look locally shift-invariant for null-recurrent
    // chart walks) and must not be reported as stationary candidates.
    std::optional<std::size_t> escape_sink;
    {
        std::vector<long> schedule;
        for (long n : {opts.n_steps / 10, opts.n_steps, opts.n_steps * 10})
            if (n >= 1 && (schedule.empty() || n > schedule.back())) schedule.push_back(n);
        std::uint64_t probe_stream = 5000;
        for (std::size_t idx : lattice.proper_members()) {
            const Subspace& w = lattice.members[idx];
            SplitRng prng = root.split(probe_stream++);
            std::vector<ProjectivePoint> starts;
            for (int c = 0; c < 3; ++c)
                starts.push_back(generic_start(e.dim, w, prng.next_u64()));
            const EscapeProfile prof = averaged_escape_profile(
                e, w, starts, opts.escape_probe_delta, schedule, prng.next_u64());
            if (prof.verdict == EscapeVerdict::Escaping &&
                (!escape_sink || w.dim() < lattice.members[*escape_sink].dim()))
                escape_sink = idx;
        }
        if (escape_sink)
            out.notes.push_back(
                "generic chains rejected: mass escapes into an invariant subspace of dim " +
                std::to_string(lattice.members[*escape_sink].dim()));
    }

    // Forward chains from generic starts; absorbed chains recurse into the
    // absorbing subspace, the rest must pass the stationarity residual.
    for (int s = 0; s < opts.n_starts; ++s) {
        SplitRng srng = root.split(1000 + static_cast<std::uint64_t>(s));
        const ProjectivePoint x0 =
            generic_start(e.dim, Subspace::zero(e.dim), srng.next_u64());
        const std::uint64_t chain_seed = srng.next_u64();
        const EmpiricalMeasure full = cesaro_measure(e, x0, opts.n_steps, 0, 1, chain_seed,
                                                     static_cast<std::size_t>(opts.n_steps));
        // Split-halves drift check against every proper invariant subspace.
        const auto& atoms = full.atoms();
        const std::size_t half = atoms.size() / 2;
        std::optional<std::size_t> absorber = escape_sink;
        for (std::size_t idx : lattice.proper_members()) {
            const Subspace& w = lattice.members[idx];
            double m1 = 0, m2 = 0;
            for (std::size_t i = 0; i < atoms.size(); ++i) {
                const bool near = distance_to_subspace(atoms[i].x, w) <= opts.absorb_delta;
                if (!near) continue;
                if (i < half)
                    m1 += 1.0;
                else
                    m2 += 1.0;
            }
            m1 /= static_cast<double>(std::max<std::size_t>(1, half));
            m2 /= static_cast<double>(std::max<std::size_t>(1, atoms.size() - half));
            const bool absorbed =
                m2 >= opts.absorb_mass || (m2 >= 0.5 && m2 - m1 >= opts.absorb_drift);
            if (absorbed && (!absorber || w.dim() < lattice.members[*absorber].dim()))
                absorber = idx;
        }
        if (absorber) {
            const Subspace& w = lattice.members[*absorber];
            if (w.dim() == 1) {
                const ProjectivePoint p = ProjectivePoint::from(w.basis().col(0));
                EmpiricalMeasure dirac = EmpiricalMeasure::dirac(p);
                const double res = stationarity_residual(e, dirac, srng.next_u64());
                add_candidate(std::move(dirac), "fixed-line", res);
            } else if (depth < opts.max_depth) {
                const MatrixEnsemble inner = restrict_quotient(e, w, BlockKind::Restrict);
                SurveyResult sub;
                SurveyOptions sub_opts = opts;
                sub_opts.n_starts = 1;
                survey_impl(inner, sub_opts, depth + 1,
                            ":restricted" + std::to_string(w.dim()), sub, srng.next_u64());
                out.incomplete_lattice = out.incomplete_lattice || sub.incomplete_lattice;
                for (auto& cand : sub.measures) {
                    EmpiricalMeasure lifted = lift_measure(cand.measure, w);
                    const double res = stationarity_residual(e, lifted, srng.next_u64());
                    add_candidate(std::move(lifted), cand.origin, res);
                }
                for (auto& n : sub.notes) out.notes.push_back(std::move(n));
            } else {
                out.notes.push_back("chain absorbed into a subspace at max recursion depth");
            }
            continue;
        }
        EmpiricalMeasure capped = full.atoms().size() > opts.cap
                                      ? full.resampled(opts.cap, srng.next_u64())
                                      : full;
        const double res = stationarity_residual(e, capped, srng.next_u64());
        if (res <= opts.residual_tol) {
            add_candidate(std::move(capped), "cesaro", res);
        } else {
            out.notes.push_back("chain from start " + std::to_string(s) +
                                " failed the stationarity residual (" +
                                detail::short_double(res) + ")");
        }
    }
}

}  // namespace detail

/// Best-effort enumeration of stationary measures: exactly-stationary Diracs
/// on invariant lines, plus forward-chain occupation measures that pass the
/// stationarity residual; chains that drift into an invariant subspace are
/// restarted inside it. Deduplicated by transport distance.
inline SurveyResult survey_stationary_measures(const MatrixEnsemble& e,
                                               const SurveyOptions& opts = {}) {
    SurveyResult out;
    detail::survey_impl(e, opts, 0, "", out, opts.seed);
    return out;
}

}  // namespace projmeas
