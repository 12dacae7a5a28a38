#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "projmeas/ensemble.hpp"
#include "projmeas/errors.hpp"
#include "projmeas/measure.hpp"
#include "projmeas/parallel.hpp"

namespace projmeas {

/// Monte Carlo exponent with a cross-trial standard error. The zero subspace
/// carries value -infinity so comparisons degenerate to strict ones.
struct ExponentEstimate {
    double value = 0;
    double stderr_ = 0;

    static ExponentEstimate minus_infinity() {
        return {-std::numeric_limits<double>::infinity(), 0.0};
    }
};

/// 3-sigma tie rule used for every exponent comparison in the library.
inline bool exponents_tied(const ExponentEstimate& a, const ExponentEstimate& b) {
    if (std::isinf(a.value) || std::isinf(b.value)) return a.value == b.value;
    // Absolute floor: isometry-like blocks estimate exponents and standard
    // errors at roundoff scale, where the band alone would declare two
    // equal-by-construction values different.
    return std::fabs(a.value - b.value) <= 3.0 * (a.stderr_ + b.stderr_) + 1e-12;
}

inline bool definitely_less(const ExponentEstimate& a, const ExponentEstimate& b) {
    return !exponents_tied(a, b) && a.value < b.value;
}

struct SpectrumOptions {
    int workers = 1;
    bool record_convergence = false;  // running means from trial 0
    int convergence_points = 48;
};

/// Full spectrum report from QR-deflated frame pushes.
struct LyapunovReport {
    std::vector<double> exponents;  // sorted descending
    std::vector<double> stderrs;    // aligned with exponents
    double sum_stderr = 0;          // stderr of the per-trial exponent sums
    long n_steps = 0;
    int n_trials = 0;
    std::uint64_t seed = 0;
    std::vector<std::pair<long, std::vector<double>>> convergence;

    [[nodiscard]] ExponentEstimate top() const { return {exponents.at(0), stderrs.at(0)}; }
};

namespace detail {

/// One QR-deflation trial: returns the per-position average log diagonal.
inline std::vector<double> spectrum_trial(const MatrixEnsemble& e, long n_steps, SplitRng rng,
                                          std::vector<std::pair<long, std::vector<double>>>* record,
                                          const std::vector<long>* checkpoints) {
    const int d = e.dim;
    Eigen::MatrixXd q = Eigen::MatrixXd::Identity(d, d);
    std::vector<double> acc(static_cast<std::size_t>(d), 0.0);
    std::size_t next_cp = 0;
    for (long step = 1; step <= n_steps; ++step) {
        const std::size_t idx = sample_atom_index(e, rng);
        const Eigen::MatrixXd m = e.atoms[idx] * q;
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
        q = qr.householderQ() * Eigen::MatrixXd::Identity(d, d);
        const Eigen::MatrixXd& r = qr.matrixQR();
        for (int i = 0; i < d; ++i) {
            const double rii = std::fabs(r(i, i));
            if (!(rii > 1e-300) || !std::isfinite(rii))
                throw DegenerateFrameError("orthonormal frame collapsed at step " +
                                           std::to_string(step));
            acc[static_cast<std::size_t>(i)] += std::log(rii);
        }
        if (record && checkpoints && next_cp < checkpoints->size() &&
            step == (*checkpoints)[next_cp]) {
            std::vector<double> running(acc);
            for (auto& v : running) v /= static_cast<double>(step);
            std::sort(running.rbegin(), running.rend());
            record->push_back({step, std::move(running)});
            ++next_cp;
        }
    }
    for (auto& v : acc) v /= static_cast<double>(n_steps);
    return acc;
}

inline std::vector<long> geometric_checkpoints(long n, int points) {
    std::vector<long> cps;
    for (int i = 1; i <= points; ++i) {
        const long c = static_cast<long>(
            std::llround(std::pow(static_cast<double>(n), static_cast<double>(i) / points)));
        if (c >= 1 && (cps.empty() || c > cps.back())) cps.push_back(c);
    }
    if (cps.empty() || cps.back() != n) cps.push_back(n);
    return cps;
}

}  // namespace detail

/// Estimate all d Lyapunov exponents by pushing an orthonormal frame through
/// the random product, re-orthonormalizing each step, and averaging the log
/// moduli of the R diagonal. Positions are averaged across trials, then the
/// averaged vector is sorted descending.
inline LyapunovReport estimate_spectrum(const MatrixEnsemble& e, long n_steps, int n_trials,
                                        std::uint64_t seed, const SpectrumOptions& opts = {}) {
    if (n_steps < 100) throw ValidationError("estimate_spectrum needs n_steps >= 100");
    if (n_trials < 1) throw ValidationError("estimate_spectrum needs n_trials >= 1");
    const int d = e.dim;
    SplitRng root(seed);
    std::vector<std::vector<double>> trial_out(static_cast<std::size_t>(n_trials));
    std::vector<std::pair<long, std::vector<double>>> convergence;
    const std::vector<long> cps =
        opts.record_convergence ? detail::geometric_checkpoints(n_steps, opts.convergence_points)
                                : std::vector<long>{};
    parallel_for(n_trials, opts.workers, [&](long t) {
        auto* rec = (opts.record_convergence && t == 0) ? &convergence : nullptr;
        trial_out[static_cast<std::size_t>(t)] =
            detail::spectrum_trial(e, n_steps, root.split(static_cast<std::uint64_t>(t)), rec,
                                   rec ? &cps : nullptr);
    });

    // Positional mean and stderr across trials, reduced in trial order.
    std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
    for (const auto& tr : trial_out)
        for (int i = 0; i < d; ++i) mean[static_cast<std::size_t>(i)] += tr[static_cast<std::size_t>(i)];
    for (auto& v : mean) v /= n_trials;
    std::vector<double> var(static_cast<std::size_t>(d), 0.0);
    double sum_mean = std::accumulate(mean.begin(), mean.end(), 0.0);
    double sum_var = 0;
    for (const auto& tr : trial_out) {
        double s = 0;
        for (int i = 0; i < d; ++i) {
            const double dv = tr[static_cast<std::size_t>(i)] - mean[static_cast<std::size_t>(i)];
            var[static_cast<std::size_t>(i)] += dv * dv;
            s += tr[static_cast<std::size_t>(i)];
        }
        sum_var += (s - sum_mean) * (s - sum_mean);
    }
    LyapunovReport rep;
    rep.n_steps = n_steps;
    rep.n_trials = n_trials;
    rep.seed = seed;
    rep.convergence = std::move(convergence);
    std::vector<int> order(static_cast<std::size_t>(d));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return mean[static_cast<std::size_t>(a)] > mean[static_cast<std::size_t>(b)]; });
    for (int i : order) {
        rep.exponents.push_back(mean[static_cast<std::size_t>(i)]);
        const double se = n_trials > 1
                              ? std::sqrt(var[static_cast<std::size_t>(i)] / (n_trials - 1) /
                                          n_trials)
                              : 0.0;
        rep.stderrs.push_back(se);
    }
    rep.sum_stderr = n_trials > 1 ? std::sqrt(sum_var / (n_trials - 1) / n_trials) : 0.0;
    return rep;
}

/// Growth exponent of |L_n v| for a fixed starting direction.
inline ExponentEstimate per_vector_exponent(const MatrixEnsemble& e, const ProjectivePoint& x,
                                            long n_steps, int n_trials, std::uint64_t seed,
                                            int workers = 1) {
    if (n_steps < 1) throw ValidationError("per_vector_exponent needs n_steps >= 1");
    if (x.dim() != e.dim) throw DimensionError("per_vector_exponent dimension mismatch");
    SplitRng root(seed);
    std::vector<double> out(static_cast<std::size_t>(n_trials), 0.0);
    parallel_for(n_trials, workers, [&](long t) {
        SplitRng rng = root.split(static_cast<std::uint64_t>(t));
        Eigen::VectorXd v = x.rep();
        double acc = 0;
        for (long k = 0; k < n_steps; ++k) {
            v = e.atoms[sample_atom_index(e, rng)] * v;
            const double f = v.norm();
            if (!(f > 1e-300) || !std::isfinite(f))
                throw DegenerateFrameError("vector collapsed during per-vector exponent run");
            acc += std::log(f);
            v /= f;
        }
        out[static_cast<std::size_t>(t)] = acc / static_cast<double>(n_steps);
    });
    double mean = std::accumulate(out.begin(), out.end(), 0.0) / n_trials;
    double var = 0;
    for (double v : out) var += (v - mean) * (v - mean);
    return {mean, n_trials > 1 ? std::sqrt(var / (n_trials - 1) / n_trials) : 0.0};
}

/// Cocycle average of a measure: double integral of log(|g v| / |v|).
struct CocycleAverage {
    double value = 0;
    double stderr_ = 0;  // scale proxy from the atom cloud, not an iid CI
    std::size_t n_mu_atoms = 0;
    std::size_t n_nu_atoms = 0;
};

inline CocycleAverage cocycle_average(const MatrixEnsemble& e, const EmpiricalMeasure& nu) {
    if (nu.dim() != e.dim) throw DimensionError("cocycle_average dimension mismatch");
    CocycleAverage out;
    out.n_mu_atoms = e.size();
    out.n_nu_atoms = nu.atoms().size();
    double mean = 0, m2 = 0, wsum2 = 0;
    for (const auto& a : nu.atoms()) {
        double f = 0;
        for (std::size_t i = 0; i < e.size(); ++i)
            f += e.weights[i] * std::log((e.atoms[i] * a.x.rep()).norm());
        mean += a.w * f;
        m2 += a.w * f * f;
        wsum2 += a.w * a.w;
    }
    out.value = mean;
    const double var = std::max(0.0, m2 - mean * mean);
    const double n_eff = wsum2 > 0 ? 1.0 / wsum2 : 1.0;
    out.stderr_ = std::sqrt(var / std::max(1.0, n_eff));
    return out;
}

/// Names one matrix block derived from the base ensemble for the recurrence
/// probe: the standard action, an invariant subspace, a quotient, the
/// inverse-transpose family, or atom squares (commuting families).
struct BlockSpec {
    enum class Kind { Full, Restrict, Quotient, InverseTranspose, AtomSquare } kind = Kind::Full;
    Subspace subspace;  // used by Restrict / Quotient
    std::string label = "full";

    static BlockSpec full() { return {}; }
    static BlockSpec restrict_to(Subspace w, std::string label = "restrict") {
        return {Kind::Restrict, std::move(w), std::move(label)};
    }
    static BlockSpec quotient_by(Subspace w, std::string label = "quotient") {
        return {Kind::Quotient, std::move(w), std::move(label)};
    }
    static BlockSpec inverse_transpose() {
        return {Kind::InverseTranspose, Subspace(), "inverse-transpose"};
    }
    static BlockSpec atom_square() { return {Kind::AtomSquare, Subspace(), "atom-square"}; }
};

inline MatrixEnsemble derive_block(const MatrixEnsemble& e, const BlockSpec& spec) {
    switch (spec.kind) {
        case BlockSpec::Kind::Full:
            return e;
        case BlockSpec::Kind::Restrict:
            return restrict_quotient(e, spec.subspace, BlockKind::Restrict);
        case BlockSpec::Kind::Quotient:
            return restrict_quotient(e, spec.subspace, BlockKind::Quotient);
        case BlockSpec::Kind::InverseTranspose:
            return inverse_transpose_ensemble(e);
        case BlockSpec::Kind::AtomSquare:
            return atom_square_ensemble(e);
    }
    throw Error("unreachable block kind");
}

enum class RecurrenceVerdict { Recurrent, Transient };

inline const char* to_string(RecurrenceVerdict v) {
    return v == RecurrenceVerdict::Recurrent ? "RECURRENT" : "TRANSIENT";
}

/// Log norm-ratio series of two blocks driven by the same word, with a
/// running-maximum return counter. Heuristic witness for recurrence of the
/// ratio when the two blocks share their top exponent.
struct RecurrenceReport {
    std::vector<std::pair<long, double>> series;  // recorded subsequence
    double inf_value = 0;
    double sup_value = 0;
    long returns = 0;            // recorded points within 1 nat of the running max
    long required_returns = 0;   // ceil(log2 n_steps)
    RecurrenceVerdict verdict = RecurrenceVerdict::Transient;
    ExponentEstimate exponent_a, exponent_b;
    long n_steps = 0;
    std::uint64_t seed = 0;
    std::string label_a, label_b;
};

struct RecurrenceOptions {
    long precheck_steps = 20000;
    int precheck_trials = 8;
    int workers = 1;
    long max_recorded = 4096;
};

inline RecurrenceReport recurrence_ratio_probe(const MatrixEnsemble& e, const BlockSpec& spec_a,
                                               const BlockSpec& spec_b, long n_steps,
                                               std::uint64_t seed,
                                               const RecurrenceOptions& opts = {}) {
    if (n_steps < 2) throw ValidationError("recurrence probe needs n_steps >= 2");
    const MatrixEnsemble ea = derive_block(e, spec_a);
    const MatrixEnsemble eb = derive_block(e, spec_b);

    RecurrenceReport rep;
    rep.n_steps = n_steps;
    rep.seed = seed;
    rep.label_a = spec_a.label;
    rep.label_b = spec_b.label;

    // Precondition: statistically equal top exponents.
    SplitRng root(seed);
    SpectrumOptions sopts;
    sopts.workers = opts.workers;
    rep.exponent_a =
        estimate_spectrum(ea, opts.precheck_steps, opts.precheck_trials, root.split(1).next_u64(), sopts)
            .top();
    rep.exponent_b =
        estimate_spectrum(eb, opts.precheck_steps, opts.precheck_trials, root.split(2).next_u64(), sopts)
            .top();
    if (!exponents_tied(rep.exponent_a, rep.exponent_b))
        throw ExponentMismatchError(rep.exponent_a.value, rep.exponent_b.value);

    // One long word b_1 ... b_n shared by both blocks, right-multiplied.
    SplitRng rng = root.split(3);
    ScaledMatrix pa = ScaledMatrix::identity(ea.dim);
    ScaledMatrix pb = ScaledMatrix::identity(eb.dim);
    const long stride = std::max<long>(1, n_steps / std::max<long>(1, opts.max_recorded));
    double runmax = -std::numeric_limits<double>::infinity();
    double inf_v = std::numeric_limits<double>::infinity();
    double sup_v = -std::numeric_limits<double>::infinity();
    long returns = 0;
    for (long k = 1; k <= n_steps; ++k) {
        const std::size_t idx = sample_atom_index(e, rng);
        pa.multiply_right(ea.atoms[idx]);
        pb.multiply_right(eb.atoms[idx]);
        if (k % stride == 0 || k == n_steps) {
            const double s = pa.log_frobenius() - pb.log_frobenius();
            rep.series.push_back({k, s});
            runmax = std::max(runmax, s);
            inf_v = std::min(inf_v, s);
            sup_v = std::max(sup_v, s);
            if (s >= runmax - 1.0) ++returns;
        }
    }
    rep.inf_value = inf_v;
    rep.sup_value = sup_v;
    rep.returns = returns;
    rep.required_returns =
        static_cast<long>(std::ceil(std::log2(static_cast<double>(n_steps))));
    rep.verdict = returns >= rep.required_returns ? RecurrenceVerdict::Recurrent
                                                  : RecurrenceVerdict::Transient;
    return rep;
}

}  // namespace projmeas
