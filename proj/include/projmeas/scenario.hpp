#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "projmeas/classify.hpp"
#include "projmeas/ensemble.hpp"
#include "projmeas/errors.hpp"
#include "projmeas/geometry.hpp"
#include "projmeas/invariant.hpp"
#include "projmeas/io.hpp"
#include "projmeas/lyapunov.hpp"
#include "projmeas/measure.hpp"
#include "projmeas/rng.hpp"
#include "projmeas/stationary.hpp"

namespace projmeas {

// ---------------------------------------------------------------------------
// Scenario description.

struct TaskSpec {
    std::string name;
    int line = 0;
    std::map<std::string, std::pair<std::string, int>> args;  // key -> (value, line)
};

struct Scenario {
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string ensemble_path;  // resolved against the scenario directory
    std::string out_dir;        // optional; may be overridden
    std::string mode;           // "", "float", or "rational"
    std::vector<TaskSpec> tasks;
};

namespace detail {

inline const std::set<std::string>& known_tasks() {
    static const std::set<std::string> names = {"spectrum", "filtration", "stationary", "escape",
                                                "lift",     "critical",   "orbit",      "recurrence"};
    return names;
}

}  // namespace detail

/// Parse the versioned scenario format:
///
///   projmeas-scenario/1
///   seed 42
///   ensemble path/to.ens
///   out results            # optional
///   mode float             # optional: float | rational
///   task spectrum
///     steps 100000
///     trials 8
///   end
inline Scenario parse_scenario(std::istream& in, const std::string& base_dir = "") {
    detail::LineSource src(in);
    std::string line;
    int ln = 0;
    if (!src.next(line, ln) || line != kScenarioMagic)
        throw ParseError(ln ? ln : 1, std::string("expected header '") + kScenarioMagic + "'");

    Scenario sc;
    std::optional<TaskSpec> open;
    while (src.next(line, ln)) {
        auto parts = detail::split_ws(line);
        const std::string& key = parts[0];
        if (open) {
            if (key == "end") {
                if (parts.size() != 1) throw ParseError(ln, "end takes no arguments");
                sc.tasks.push_back(std::move(*open));
                open.reset();
                continue;
            }
            if (key == "task") throw ParseError(ln, "missing 'end' before a new task block");
            if (parts.size() < 2) throw ParseError(ln, "task parameter '" + key + "' needs a value");
            std::string value = parts[1];
            for (std::size_t i = 2; i < parts.size(); ++i) value += " " + parts[i];
            if (!open->args.emplace(key, std::make_pair(value, ln)).second)
                throw ParseError(ln, "duplicate task parameter '" + key + "'");
            continue;
        }
        if (key == "seed") {
            if (parts.size() != 2) throw ParseError(ln, "seed expects one value");
            try {
                sc.seed = std::stoull(parts[1]);
            } catch (const std::exception&) {
                throw ParseError(ln, "cannot parse seed '" + parts[1] + "'");
            }
            sc.seed_set = true;
        } else if (key == "ensemble") {
            if (parts.size() != 2) throw ParseError(ln, "ensemble expects one path");
            std::filesystem::path p = parts[1];
            if (p.is_relative() && !base_dir.empty()) p = std::filesystem::path(base_dir) / p;
            sc.ensemble_path = p.string();
        } else if (key == "out") {
            if (parts.size() != 2) throw ParseError(ln, "out expects one path");
            std::filesystem::path p = parts[1];
            if (p.is_relative() && !base_dir.empty()) p = std::filesystem::path(base_dir) / p;
            sc.out_dir = p.string();
        } else if (key == "mode") {
            if (parts.size() != 2 || (parts[1] != "float" && parts[1] != "rational"))
                throw ParseError(ln, "mode must be float or rational");
            sc.mode = parts[1];
        } else if (key == "task") {
            if (parts.size() != 2) throw ParseError(ln, "task expects one name");
            if (!detail::known_tasks().count(parts[1]))
                throw ParseError(ln, "unknown task '" + parts[1] + "'");
            open = TaskSpec{parts[1], ln, {}};
        } else {
            throw ParseError(ln, "unknown key '" + key + "'");
        }
    }
    if (open) throw ParseError(src.line(), "unterminated task block");
    if (!sc.seed_set) throw ParseError(src.line(), "scenario must set a seed");
    if (sc.ensemble_path.empty()) throw ParseError(src.line(), "scenario must name an ensemble");
    return sc;
}

inline Scenario load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open scenario file '" + path + "'");
    return parse_scenario(in, std::filesystem::path(path).parent_path().string());
}

// ---------------------------------------------------------------------------
// Typed access to task parameters.

namespace detail {

class TaskArgs {
  public:
    TaskArgs(const TaskSpec& spec, int dim) : spec_(spec), dim_(dim) {}

    [[nodiscard]] bool has(const std::string& key) const { return spec_.args.count(key) > 0; }

    [[nodiscard]] std::string str(const std::string& key, const std::string& fallback) const {
        auto it = spec_.args.find(key);
        return it == spec_.args.end() ? fallback : it->second.first;
    }

    [[nodiscard]] long num(const std::string& key, long fallback) const {
        auto it = spec_.args.find(key);
        if (it == spec_.args.end()) return fallback;
        try {
            return std::stol(it->second.first);
        } catch (const std::exception&) {
            throw ParseError(it->second.second, "cannot parse integer '" + it->second.first + "'");
        }
    }

    [[nodiscard]] double real(const std::string& key, double fallback) const {
        auto it = spec_.args.find(key);
        if (it == spec_.args.end()) return fallback;
        return parse_double_or_throw(it->second.first, it->second.second);
    }

    [[nodiscard]] std::vector<double> reals(const std::string& key) const {
        auto it = spec_.args.find(key);
        if (it == spec_.args.end()) return {};
        std::vector<double> out;
        for (const auto& tok : tokens(it->second.first))
            out.push_back(parse_double_or_throw(tok, it->second.second));
        return out;
    }

    [[nodiscard]] std::vector<long> nums(const std::string& key) const {
        auto it = spec_.args.find(key);
        if (it == spec_.args.end()) return {};
        std::vector<long> out;
        for (const auto& tok : tokens(it->second.first)) {
            try {
                out.push_back(std::stol(tok));
            } catch (const std::exception&) {
                throw ParseError(it->second.second, "cannot parse integer '" + tok + "'");
            }
        }
        return out;
    }

    /// Coordinate-index subspace, e.g. "subspace 0,1".
    [[nodiscard]] std::optional<Subspace> subspace(const std::string& key) const {
        auto it = spec_.args.find(key);
        if (it == spec_.args.end()) return std::nullopt;
        std::vector<int> coords;
        for (long v : nums(key)) {
            if (v < 0 || v >= dim_)
                throw ParseError(it->second.second, "coordinate index out of range");
            coords.push_back(static_cast<int>(v));
        }
        if (coords.empty()) throw ParseError(it->second.second, "empty coordinate list");
        return Subspace::coordinate_span(dim_, coords);
    }

    /// Homogeneous start point, e.g. "start 1,0.5".
    [[nodiscard]] std::optional<ProjectivePoint> point(const std::string& key) const {
        auto it = spec_.args.find(key);
        if (it == spec_.args.end()) return std::nullopt;
        const std::vector<double> vals = reals(key);
        if (static_cast<int>(vals.size()) != dim_)
            throw ParseError(it->second.second,
                             "start point needs " + std::to_string(dim_) + " coordinates");
        Eigen::VectorXd v(dim_);
        for (int i = 0; i < dim_; ++i) v[i] = vals[static_cast<std::size_t>(i)];
        return ProjectivePoint::from(v);
    }

    void check_known(const std::set<std::string>& allowed) const {
        for (const auto& [key, val] : spec_.args)
            if (!allowed.count(key))
                throw ParseError(val.second,
                                 "unknown parameter '" + key + "' for task " + spec_.name);
    }

  private:
    static std::vector<std::string> tokens(const std::string& s) {
        std::string normalized = s;
        std::replace(normalized.begin(), normalized.end(), ',', ' ');
        return split_ws(normalized);
    }

    const TaskSpec& spec_;
    int dim_;
};

inline void report_exponent(TextReport& rep, const std::string& prefix, const ExponentEstimate& x) {
    rep.kv(prefix, x.value);
    rep.kv(prefix + "_stderr", x.stderr_);
}

inline void report_subspace(TextReport& rep, const std::string& section, const Subspace& w) {
    rep.section(section);
    rep.kv("dim", w.dim());
    const Eigen::MatrixXd b = w.basis();
    for (int c = 0; c < b.cols(); ++c) {
        std::vector<double> col(b.rows() >= 0 ? static_cast<std::size_t>(b.rows()) : 0, 0.0);
        for (int r = 0; r < b.rows(); ++r) col[static_cast<std::size_t>(r)] = b(r, c);
        rep.kv("basis" + std::to_string(c), col);
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Scenario execution.

struct RunOverrides {
    std::string out_dir;  // overrides the scenario's 'out'
    std::optional<std::uint64_t> seed;
    std::optional<std::string> mode;  // "float" | "rational"
    int workers = 1;
};

struct TaskOutcome {
    std::string name;
    std::string verdict;  // short status string for the summary
    std::string report_file;
    int undecided = 0;
};

struct RunOutcome {
    int exit_code = 0;
    int undecided = 0;
    std::string out_dir;
    std::vector<TaskOutcome> tasks;
};

namespace detail {

inline MatrixEnsemble apply_mode(MatrixEnsemble e, const std::string& mode) {
    if (mode == "rational") {
        if (!e.exact())
            throw ValidationError("rational mode requested but the ensemble has no exact data");
        return e;
    }
    if (mode == "float") {
        e.mode = ArithmeticMode::Float64;
        e.rat_atoms.clear();
        e.rat_weights.clear();
    }
    return e;
}

struct TaskContext {
    const MatrixEnsemble& e;
    std::filesystem::path out;
    std::string stem;  // e.g. "task01_spectrum"
    std::uint64_t seed = 0;
    int workers = 1;
    PlotScript* plots = nullptr;

    [[nodiscard]] std::string file(const std::string& suffix) const {
        return (out / (stem + suffix)).string();
    }
};

inline TaskOutcome run_spectrum_task(const TaskContext& ctx, const TaskArgs& args) {
    args.check_known({"steps", "trials", "block", "subspace", "convergence"});
    const long steps = args.num("steps", 100000);
    const int trials = static_cast<int>(args.num("trials", 8));
    const std::string block = args.str("block", "full");
    BlockSpec spec = BlockSpec::full();
    if (block == "restrict" || block == "quotient") {
        auto w = args.subspace("subspace");
        if (!w) throw ValidationError("spectrum block '" + block + "' needs a subspace");
        spec = block == "restrict" ? BlockSpec::restrict_to(*w) : BlockSpec::quotient_by(*w);
    } else if (block == "invtrans") {
        spec = BlockSpec::inverse_transpose();
    } else if (block == "atomsq") {
        spec = BlockSpec::atom_square();
    } else if (block != "full") {
        throw ValidationError("unknown spectrum block '" + block + "'");
    }
    const MatrixEnsemble derived = derive_block(ctx.e, spec);
    SpectrumOptions sopts;
    sopts.workers = ctx.workers;
    sopts.record_convergence = args.num("convergence", 1) != 0;
    const LyapunovReport lyap = estimate_spectrum(derived, steps, trials, ctx.seed, sopts);

    TextReport rep("spectrum");
    rep.kv("block", spec.label);
    rep.kv("dim", derived.dim);
    rep.kv("steps", lyap.n_steps);
    rep.kv("trials", lyap.n_trials);
    rep.kv("seed", lyap.seed);
    rep.kv("exponents", lyap.exponents);
    rep.kv("stderrs", lyap.stderrs);
    rep.kv("sum_stderr", lyap.sum_stderr);
    double det_mean = 0;
    for (std::size_t i = 0; i < derived.size(); ++i)
        det_mean += derived.weights[i] * std::log(std::fabs(derived.atoms[i].determinant()));
    rep.kv("mean_log_abs_det", det_mean);
    rep.write(ctx.file(".txt"));

    if (!lyap.convergence.empty()) {
        CsvWriter csv;
        std::vector<std::string> cols = {"n"};
        for (int i = 0; i < derived.dim; ++i) cols.push_back("lambda" + std::to_string(i + 1));
        csv.header(cols);
        csv.comment("running exponent means, trial 0, seed " + std::to_string(lyap.seed));
        for (const auto& [n, vals] : lyap.convergence) {
            std::vector<double> row = {static_cast<double>(n)};
            row.insert(row.end(), vals.begin(), vals.end());
            csv.row(row);
        }
        csv.write(ctx.file(".csv"));
        if (ctx.plots)
            ctx.plots->add(ctx.stem + ".csv", "1:2", ctx.stem + " top exponent", "lines",
                           "set logscale x");
    }
    return {"spectrum", "ok", ctx.stem + ".txt", 0};
}

inline TaskOutcome run_filtration_task(const TaskContext& ctx, const TaskArgs& args) {
    args.check_known({"steps", "trials"});
    FiltrationOptions fopts;
    fopts.n_steps = args.num("steps", 20000);
    fopts.n_trials = static_cast<int>(args.num("trials", 8));
    fopts.seed = ctx.seed;
    fopts.workers = ctx.workers;
    const FiltrationReport filt = fkh_filtration(ctx.e, fopts);

    TextReport rep("filtration");
    rep.kv("seed", filt.seed);
    rep.kv("steps", fopts.n_steps);
    rep.kv("trials", fopts.n_trials);
    rep.kv("levels", static_cast<long>(filt.levels.size()));
    rep.kv("critical", filt.critical);
    rep.kv("monotone", filt.monotone);
    rep.kv("incomplete_lattice", filt.incomplete_lattice);
    {
        const auto ds = filt.dims();
        std::vector<double> dims(ds.begin(), ds.end());
        rep.kv("dims", dims);
    }
    rep.kv("exponents", filt.exponents());
    for (std::size_t i = 0; i < filt.levels.size(); ++i) {
        report_subspace(rep, "level" + std::to_string(i + 1), filt.levels[i].space);
        report_exponent(rep, "top", filt.levels[i].top);
    }
    rep.write(ctx.file(".txt"));
    return {"filtration", filt.critical ? "critical" : "non-critical", ctx.stem + ".txt", 0};
}

inline TaskOutcome run_stationary_task(const TaskContext& ctx, const TaskArgs& args) {
    args.check_known({"kind", "steps", "burn_in", "thinning", "start", "n", "base_points", "cap"});
    const std::string kind = args.str("kind", "cesaro");
    SplitRng root(ctx.seed);
    TextReport rep("stationary");
    rep.kv("seed", ctx.seed);
    EmpiricalMeasure nu;
    if (kind == "cesaro") {
        const long steps = args.num("steps", 10000);
        const long burn = args.num("burn_in", 0);
        const long thin = args.num("thinning", 1);
        const std::size_t cap = static_cast<std::size_t>(args.num("cap", 4096));
        ProjectivePoint x0 = args.point("start")
                                 ? *args.point("start")
                                 : generic_start(ctx.e.dim, Subspace::zero(ctx.e.dim),
                                                 root.split(1).next_u64());
        nu = cesaro_measure(ctx.e, x0, steps, burn, thin, root.split(2).next_u64(), cap);
        rep.kv("kind", "cesaro");
        rep.kv("steps", steps);
        rep.kv("burn_in", burn);
        rep.kv("thinning", thin);
        std::vector<double> start(x0.rep().data(), x0.rep().data() + x0.rep().size());
        rep.kv("start", start);
    } else if (kind == "backward") {
        const long n = args.num("n", 200);
        const int base_points = static_cast<int>(args.num("base_points", 64));
        std::vector<WeightedAtom> base_atoms;
        SplitRng brng = root.split(1);
        for (int i = 0; i < base_points; ++i) {
            Eigen::VectorXd v(ctx.e.dim);
            for (int k = 0; k < ctx.e.dim; ++k) v[k] = brng.normal();
            base_atoms.push_back({ProjectivePoint::from(v), 1.0});
        }
        EmpiricalMeasure base(std::move(base_atoms), Provenance{"base", ctx.seed, 0, ""});
        nu = backward_limit_measure(ctx.e, n, root.split(2).next_u64(), base);
        rep.kv("kind", "backward");
        rep.kv("n", n);
        rep.kv("base_points", base_points);
    } else {
        throw ValidationError("stationary kind must be cesaro or backward");
    }
    const double residual = stationarity_residual(ctx.e, nu, root.split(3).next_u64());
    rep.kv("atoms", static_cast<long>(nu.atoms().size()));
    rep.kv("stationarity_residual", residual);
    rep.kv("support_diameter", nu.support_diameter());
    rep.kv("second_moment_trace", nu.second_moment().trace());
    const Subspace span = nu.span_estimate();
    rep.kv("span_dim", span.dim());
    rep.write(ctx.file(".txt"));
    write_measure_csv(nu, ctx.file(".csv"));
    if (ctx.e.dim == 2) {
        CsvWriter chart;
        chart.header({"t", "weight"});
        chart.comment("affine chart x1/x2 on the complement of [e1]");
        for (const auto& [t, wgt] : nu.chart_values()) chart.row({t, wgt});
        chart.write(ctx.file("_chart.csv"));
        if (ctx.plots)
            ctx.plots->add(ctx.stem + "_chart.csv", "1:2", ctx.stem + " chart occupation",
                           "impulses");
    }
    return {"stationary", "ok", ctx.stem + ".txt", 0};
}

inline TaskOutcome run_escape_task(const TaskContext& ctx, const TaskArgs& args) {
    args.check_known({"subspace", "start", "delta", "schedule", "chains"});
    auto w = args.subspace("subspace");
    if (!w) throw ValidationError("escape task needs a subspace");
    SplitRng root(ctx.seed);
    const long chains = std::max(1L, args.num("chains", 4));
    std::vector<ProjectivePoint> starts;
    for (long c = 0; c < chains; ++c)
        starts.push_back(args.point("start")
                             ? *args.point("start")
                             : generic_start(ctx.e.dim, *w,
                                             root.split(1 + static_cast<std::uint64_t>(c))
                                                 .next_u64()));
    const double delta = args.real("delta", 0.05);
    std::vector<long> schedule = args.nums("schedule");
    if (schedule.empty()) schedule = {100, 1000, 10000, 100000};
    const EscapeProfile profile =
        averaged_escape_profile(ctx.e, *w, starts, delta, schedule, root.split(99).next_u64());

    TextReport rep("escape");
    rep.kv("seed", profile.seed);
    rep.kv("delta", profile.delta);
    rep.kv("chains", chains);
    rep.kv("subspace_dim", w->dim());
    std::vector<double> cps(profile.checkpoints.begin(), profile.checkpoints.end());
    rep.kv("checkpoints", cps);
    rep.kv("mass", profile.mass);
    rep.kv("verdict", to_string(profile.verdict));
    rep.write(ctx.file(".txt"));
    write_escape_csv(profile, ctx.file(".csv"));
    if (ctx.plots)
        ctx.plots->add(ctx.stem + ".csv", "1:2", ctx.stem + " escape mass", "linespoints",
                       "set logscale x");
    const int undecided = profile.verdict == EscapeVerdict::Undecided ? 1 : 0;
    return {"escape", to_string(profile.verdict), ctx.stem + ".txt", undecided};
}

inline TaskOutcome run_lift_task(const TaskContext& ctx, const TaskArgs& args) {
    args.check_known({"subspace", "steps", "trials"});
    auto w = args.subspace("subspace");
    if (!w) throw ValidationError("lift task needs a subspace");
    SplitRng root(ctx.seed);
    const long steps = args.num("steps", 20000);
    const QuotientData q =
        derive_quotient_data(ctx.e, *w, steps, root.split(1).next_u64(), ctx.workers);
    LiftOptions lopts;
    lopts.n_steps = steps;
    lopts.n_trials = static_cast<int>(args.num("trials", 8));
    lopts.seed = root.split(2).next_u64();
    lopts.workers = ctx.workers;
    const LiftDecision dec = decide_lift_existence(ctx.e, *w, q.nubar_span, q.nubar_top, lopts);

    TextReport rep("lift");
    rep.kv("seed", ctx.seed);
    rep.kv("steps", steps);
    rep.kv("subspace_dim", w->dim());
    rep.kv("quotient_dim", ctx.e.dim - w->dim());
    rep.kv("nubar_span_dim", q.nubar_span.dim());
    rep.kv("nubar_span_not_invariant", q.span_not_invariant);
    rep.kv("answer", to_string(dec.answer));
    rep.kv("expanding_bypass", dec.expanding_bypass);
    rep.kv("incomplete_lattice", dec.incomplete_lattice);
    report_exponent(rep, "nubar_top", dec.nubar_top);
    report_exponent(rep, "subspace_top", dec.w_top);
    report_exponent(rep, "intersection_top", dec.intersection_top);
    rep.kv("iso_angle", dec.iso_angle);
    if (!dec.note.empty()) rep.kv("note", dec.note);
    if (dec.witness) report_subspace(rep, "witness", *dec.witness);
    rep.section("corroboration");
    rep.kv("verdict", to_string(dec.corroboration.verdict));
    rep.kv("mass", dec.corroboration.mass);
    rep.write(ctx.file(".txt"));
    write_escape_csv(dec.corroboration, ctx.file("_escape.csv"));
    const int undecided = dec.answer == LiftAnswer::Undecided ? 1 : 0;
    return {"lift", to_string(dec.answer), ctx.stem + ".txt", undecided};
}

inline TaskOutcome run_critical_task(const TaskContext& ctx, const TaskArgs& args) {
    args.check_known({"steps", "starts", "trials"});
    SplitRng root(ctx.seed);
    SurveyOptions sopts;
    sopts.n_steps = args.num("steps", 10000);
    sopts.n_starts = static_cast<int>(args.num("starts", 3));
    sopts.seed = root.split(1).next_u64();
    sopts.workers = ctx.workers;
    const SurveyResult survey = survey_stationary_measures(ctx.e, sopts);

    CriticalOptions copts;
    copts.filtration.n_steps = sopts.n_steps * 2;
    copts.filtration.n_trials = static_cast<int>(args.num("trials", 8));
    copts.filtration.seed = root.split(2).next_u64();
    copts.filtration.workers = ctx.workers;
    std::vector<EmpiricalMeasure> measures;
    measures.reserve(survey.measures.size());
    for (const auto& c : survey.measures) measures.push_back(c.measure);
    const CriticalCertificate cert = critical_semisimplicity_check(ctx.e, measures, copts);

    TextReport rep("critical");
    rep.kv("seed", ctx.seed);
    rep.kv("survey_steps", sopts.n_steps);
    rep.kv("survey_starts", sopts.n_starts);
    rep.kv("critical", cert.critical);
    rep.kv("all_semisimple", cert.all_semisimple);
    rep.kv("any_span_not_invariant", cert.any_span_not_invariant);
    rep.kv("incomplete_lattice", cert.incomplete_lattice);
    rep.kv("measures", static_cast<long>(survey.measures.size()));
    for (std::size_t i = 0; i < survey.measures.size(); ++i) {
        rep.section("measure" + std::to_string(i));
        rep.kv("origin", survey.measures[i].origin);
        rep.kv("stationarity_residual", survey.measures[i].residual);
        rep.kv("atoms", static_cast<long>(survey.measures[i].measure.atoms().size()));
        if (cert.critical && i < cert.results.size()) {
            const MeasureCriticalResult& r = cert.results[i];
            rep.kv("raw_span_dim", r.snap.raw_span.dim());
            rep.kv("span_not_invariant", r.snap.span_not_invariant);
            if (r.snap.member) {
                rep.kv("snapped_dim", r.support_span.dim());
                rep.kv("snap_angle", r.snap.angle);
                rep.kv("semisimple", r.certified);
                std::vector<double> comp_dims;
                for (const auto& comp : r.certificate.components)
                    comp_dims.push_back(static_cast<double>(comp.dim()));
                rep.kv("component_dims", comp_dims);
            }
        }
        write_measure_csv(survey.measures[i].measure,
                          ctx.file("_measure" + std::to_string(i) + ".csv"));
    }
    for (std::size_t i = 0; i < survey.notes.size(); ++i)
        rep.kv("note" + std::to_string(i), survey.notes[i]);
    rep.write(ctx.file(".txt"));
    std::string verdict = cert.critical
                              ? (cert.all_semisimple ? std::string("critical+semisimple")
                                                     : std::string("critical"))
                              : std::string("non-critical");
    return {"critical", verdict, ctx.stem + ".txt", 0};
}

inline TaskOutcome run_orbit_task(const TaskContext& ctx, const TaskArgs& args) {
    args.check_known({"start", "samples", "max_len"});
    SplitRng root(ctx.seed);
    const ProjectivePoint x0 =
        args.point("start") ? *args.point("start")
                            : generic_start(ctx.e.dim, Subspace::zero(ctx.e.dim),
                                            root.split(1).next_u64());
    OrbitOptions opts;
    opts.n_samples = static_cast<int>(args.num("samples", 400));
    opts.max_word_len = args.num("max_len", 1000);
    opts.seed = root.split(2).next_u64();
    opts.workers = ctx.workers;
    const OrbitProbe probe = orbit_compactness_probe(ctx.e, x0, opts);

    TextReport rep("orbit");
    rep.kv("seed", ctx.seed);
    rep.kv("samples", opts.n_samples);
    rep.kv("max_len", opts.max_word_len);
    rep.kv("verdict", to_string(probe.verdict));
    rep.kv("bounded", probe.bounded);
    rep.kv("gap_in_filtration", probe.gap_in_filtration);
    rep.kv("finite_orbit", probe.finite_orbit);
    rep.kv("min_projected_norm", probe.min_projected_norm);
    rep.kv("concentration_mass", probe.concentration_mass);
    rep.kv("orbit_span_dim", probe.orbit_span.dim());
    rep.kv("deflation_dim", probe.deflation_space.dim());
    if (probe.concentration_center) {
        std::vector<double> c(probe.concentration_center->rep().data(),
                              probe.concentration_center->rep().data() +
                                  probe.concentration_center->rep().size());
        rep.kv("center", c);
        rep.kv("center_distance", probe.center_distance);
    }
    rep.write(ctx.file(".txt"));
    const int undecided = probe.verdict == OrbitVerdict::Undecided ? 1 : 0;
    return {"orbit", to_string(probe.verdict), ctx.stem + ".txt", undecided};
}

inline TaskOutcome run_recurrence_task(const TaskContext& ctx, const TaskArgs& args) {
    args.check_known({"n", "seeds", "against"});
    const long n = args.num("n", 1000000);
    const int n_seeds = static_cast<int>(args.num("seeds", 5));
    const std::string against = args.str("against", "invtrans");
    BlockSpec spec_b = BlockSpec::inverse_transpose();
    if (against == "atomsq")
        spec_b = BlockSpec::atom_square();
    else if (against != "invtrans")
        throw ValidationError("recurrence 'against' must be invtrans or atomsq");

    SplitRng root(ctx.seed);
    RecurrenceOptions ropts;
    ropts.workers = ctx.workers;
    std::vector<RecurrenceReport> reports;
    reports.reserve(static_cast<std::size_t>(n_seeds));
    for (int s = 0; s < n_seeds; ++s)
        reports.push_back(recurrence_ratio_probe(ctx.e, BlockSpec::full(), spec_b, n,
                                                 root.split(10 + static_cast<std::uint64_t>(s))
                                                     .next_u64(),
                                                 ropts));

    TextReport rep("recurrence");
    rep.kv("seed", ctx.seed);
    rep.kv("n", n);
    rep.kv("seeds", n_seeds);
    rep.kv("against", against);
    int recurrent = 0;
    for (int s = 0; s < n_seeds; ++s) {
        const RecurrenceReport& r = reports[static_cast<std::size_t>(s)];
        rep.section("seed" + std::to_string(s));
        rep.kv("verdict", to_string(r.verdict));
        rep.kv("returns", r.returns);
        rep.kv("required_returns", r.required_returns);
        rep.kv("inf", r.inf_value);
        rep.kv("sup", r.sup_value);
        report_exponent(rep, "exponent_a", r.exponent_a);
        report_exponent(rep, "exponent_b", r.exponent_b);
        if (r.verdict == RecurrenceVerdict::Recurrent) ++recurrent;
    }
    rep.write(ctx.file(".txt"));

    CsvWriter csv;
    std::vector<std::string> cols = {"n"};
    for (int s = 0; s < n_seeds; ++s) cols.push_back("s" + std::to_string(s));
    csv.header(cols);
    csv.comment("log norm-ratio series per seed");
    if (!reports.empty()) {
        const std::size_t rows = reports[0].series.size();
        for (std::size_t i = 0; i < rows; ++i) {
            std::vector<double> row = {static_cast<double>(reports[0].series[i].first)};
            for (const auto& r : reports)
                row.push_back(i < r.series.size() ? r.series[i].second : 0.0);
            csv.row(row);
        }
    }
    csv.write(ctx.file(".csv"));
    if (ctx.plots)
        ctx.plots->add(ctx.stem + ".csv", "1:2", ctx.stem + " log ratio", "lines",
                       "set logscale x");
    const std::string verdict =
        std::to_string(recurrent) + "/" + std::to_string(n_seeds) + " recurrent";
    return {"recurrence", verdict, ctx.stem + ".txt", 0};
}

}  // namespace detail

/// Executes every task in order, writing one report per task plus summary.txt
/// and plots.gp under the output directory. Returns exit code 0, or 2 when any
/// verdict came back UNDECIDED. Errors propagate as exceptions (exit 1 at the
/// CLI boundary).
inline RunOutcome run_scenario(const Scenario& sc, const RunOverrides& ov = {}) {
    const MatrixEnsemble base = load_ensemble(sc.ensemble_path);
    const std::string mode = ov.mode ? *ov.mode : sc.mode;
    const MatrixEnsemble e = detail::apply_mode(base, mode);

    RunOutcome out;
    std::string out_dir = !ov.out_dir.empty() ? ov.out_dir
                          : !sc.out_dir.empty() ? sc.out_dir
                                                : std::string("projmeas-out");
    std::filesystem::create_directories(out_dir);
    out.out_dir = out_dir;

    const std::uint64_t seed = ov.seed ? *ov.seed : sc.seed;
    SplitRng root(seed);
    PlotScript plots;

    for (std::size_t i = 0; i < sc.tasks.size(); ++i) {
        const TaskSpec& spec = sc.tasks[i];
        detail::TaskArgs args(spec, e.dim);
        char idx[8];
        std::snprintf(idx, sizeof(idx), "%02zu", i + 1);
        detail::TaskContext ctx{e,
                                out_dir,
                                "task" + std::string(idx) + "_" + spec.name,
                                root.split(100 + i).next_u64(),
                                ov.workers,
                                &plots};
        TaskOutcome res;
        if (spec.name == "spectrum")
            res = detail::run_spectrum_task(ctx, args);
        else if (spec.name == "filtration")
            res = detail::run_filtration_task(ctx, args);
        else if (spec.name == "stationary")
            res = detail::run_stationary_task(ctx, args);
        else if (spec.name == "escape")
            res = detail::run_escape_task(ctx, args);
        else if (spec.name == "lift")
            res = detail::run_lift_task(ctx, args);
        else if (spec.name == "critical")
            res = detail::run_critical_task(ctx, args);
        else if (spec.name == "orbit")
            res = detail::run_orbit_task(ctx, args);
        else if (spec.name == "recurrence")
            res = detail::run_recurrence_task(ctx, args);
        else
            throw ValidationError("unknown task '" + spec.name + "'");
        out.undecided += res.undecided;
        out.tasks.push_back(std::move(res));
    }

    // Summary index; byte-stable across reruns with the same seed.
    {
        std::string text = std::string(kReportMagic) + "\n";
        text += "kind summary\n";
        text += "seed " + std::to_string(seed) + "\n";
        text += "mode " + (mode.empty() ? std::string("as-loaded") : mode) + "\n";
        text += "tasks " + std::to_string(sc.tasks.size()) + "\n";
        for (std::size_t i = 0; i < out.tasks.size(); ++i) {
            const TaskOutcome& t = out.tasks[i];
            text += "task" + std::to_string(i + 1) + " " + t.name + " " + t.verdict + " " +
                    t.report_file + "\n";
        }
        text += "undecided " + std::to_string(out.undecided) + "\n";
        out.exit_code = out.undecided > 0 ? 2 : 0;
        text += "exit " + std::to_string(out.exit_code) + "\n";
        std::ofstream f(std::filesystem::path(out_dir) / "summary.txt", std::ios::binary);
        if (!f) throw Error("cannot write summary");
        f << text;
    }
    if (!plots.empty()) plots.write((std::filesystem::path(out_dir) / "plots.gp").string());
    return out;
}

inline RunOutcome run_scenario_file(const std::string& path, const RunOverrides& ov = {}) {
    return run_scenario(load_scenario(path), ov);
}

}  // namespace projmeas
