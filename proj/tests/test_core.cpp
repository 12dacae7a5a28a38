// Foundation layer: rng, exact rational arithmetic, projective geometry,
// ensembles, serialization, parallel scheduling, empirical measures.
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "projmeas/ensemble.hpp"
#include "projmeas/geometry.hpp"
#include "projmeas/io.hpp"
#include "projmeas/measure.hpp"
#include "projmeas/parallel.hpp"
#include "projmeas/rational.hpp"
#include "projmeas/rng.hpp"

using namespace projmeas;

namespace {

Eigen::MatrixXd mat2(double a, double b, double c, double d) {
    Eigen::MatrixXd m(2, 2);
    m << a, b, c, d;
    return m;
}

RatMatrix rat2(const Rational& a, const Rational& b, const Rational& c, const Rational& d) {
    RatMatrix m(2, 2);
    m.at(0, 0) = a;
    m.at(0, 1) = b;
    m.at(1, 0) = c;
    m.at(1, 1) = d;
    return m;
}

MatrixEnsemble parse_str(const std::string& text) {
    std::istringstream in(text);
    return parse_ensemble(in);
}

ProjectivePoint pp(std::initializer_list<double> xs) {
    Eigen::VectorXd v(static_cast<int>(xs.size()));
    int i = 0;
    for (double x : xs) v[i++] = x;
    return ProjectivePoint::from(v);
}

// Triangular two-atom pair used throughout: [[1/2,1],[0,2]] and its
// weight-mirror; span(e1) is invariant, span(e2) is not.
MatrixEnsemble triangular_pair() {
    return make_rational_ensemble(
        {rat2(Rational(1, 2), 1, 0, 2), rat2(2, 1, 0, Rational(1, 2))},
        {Rational(1, 2), Rational(1, 2)});
}

}  // namespace

// ---------------------------------------------------------------------------
// rng
// ---------------------------------------------------------------------------

TEST_CASE("rng: identical seeds replay the identical stream") {
    SplitRng a(42), b(42);
    for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());
}

TEST_CASE("rng: split streams are distinct and order-independent") {
    SplitRng root(7);
    SplitRng s1 = root.split(1);
    SplitRng s2 = root.split(2);
    // split() is const: calling it must not disturb the parent.
    SplitRng root2(7);
    SplitRng s1_again = root2.split(1);
    REQUIRE(s1.next_u64() == s1_again.next_u64());
    int same = 0;
    SplitRng t1 = root.split(1), t2 = root.split(2);
    for (int i = 0; i < 64; ++i)
        if (t1.next_u64() == t2.next_u64()) ++same;
    REQUIRE(same == 0);
    (void)s2;
}

TEST_CASE("rng: uniform lands in [0,1) at the advertised rate") {
    SplitRng rng(123);
    const int n = 100000;
    int below_quarter = 0;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        if (u < 0.25) ++below_quarter;
    }
    // Binomial(n, 1/4): sd = sqrt(n*3/16) ~ 137. Allow 4 sd.
    REQUIRE(std::fabs(below_quarter - 25000.0) < 4 * 137.0);
}

TEST_CASE("rng: normal has the right first two moments") {
    SplitRng rng(99);
    const int n = 100000;
    double sum = 0, sumsq = 0;
    for (int i = 0; i < n; ++i) {
        const double z = rng.normal();
        sum += z;
        sumsq += z * z;
    }
    const double mean = sum / n;
    const double var = sumsq / n - mean * mean;
    REQUIRE(std::fabs(mean) < 4.0 / std::sqrt(static_cast<double>(n)));
    REQUIRE(std::fabs(var - 1.0) < 0.05);
}

TEST_CASE("rng: categorical respects cumulative weights") {
    SplitRng rng(2024);
    const std::vector<double> cumulative{0.25, 0.75, 1.0};
    const int n = 100000;
    std::vector<int> counts(3, 0);
    for (int i = 0; i < n; ++i) ++counts[rng.categorical(cumulative)];
    // 4-sigma binomial bands around 25k / 50k / 25k.
    REQUIRE(std::fabs(counts[0] - 25000.0) < 4 * std::sqrt(100000 * 0.25 * 0.75));
    REQUIRE(std::fabs(counts[1] - 50000.0) < 4 * std::sqrt(100000 * 0.5 * 0.5));
    REQUIRE(std::fabs(counts[2] - 25000.0) < 4 * std::sqrt(100000 * 0.25 * 0.75));
}

// ---------------------------------------------------------------------------
// rational
// ---------------------------------------------------------------------------

TEST_CASE("rational: parse and format canonicalize") {
    REQUIRE(format_rational(parse_rational("5/10")) == "1/2");
    REQUIRE(format_rational(parse_rational("-3")) == "-3");
    REQUIRE(format_rational(parse_rational("0/7")) == "0");
    REQUIRE(format_rational(parse_rational("22/7")) == "22/7");
    REQUIRE(parse_rational("1/3") == Rational(1, 3));
    REQUIRE_THROWS_AS(parse_rational("1/0"), ValidationError);
    REQUIRE_THROWS_AS(parse_rational("abc"), ValidationError);
}

TEST_CASE("rational: matrix product and transpose are exact") {
    const RatMatrix a = rat2(Rational(1, 3), Rational(2, 3), 1, Rational(-1, 2));
    const RatMatrix b = rat2(3, 0, Rational(1, 2), 2);
    const RatMatrix p = a * b;
    REQUIRE(p.at(0, 0) == Rational(1, 3) * 3 + Rational(2, 3) * Rational(1, 2));
    REQUIRE(p.at(0, 1) == Rational(2, 3) * 2);
    REQUIRE(p.at(1, 0) == Rational(3) - Rational(1, 4));
    REQUIRE(p.at(1, 1) == Rational(-1));
    REQUIRE(a.transpose().at(0, 1) == Rational(1));
    const RatMatrix i2 = RatMatrix::identity(2);
    REQUIRE((a * i2 - a).is_zero());
}

TEST_CASE("rational: determinant of a fractional 3x3") {
    RatMatrix m(3, 3);
    // det = 1/2 * (2*3 - 0) - 1/3 * (0 - 0) + 1/5 * (0 - 2*4) ... constructed
    // so cofactor expansion is easy to do by hand:
    // [[1/2, 1/3, 1/5], [0, 2, 0], [4, 0, 3]]
    m.at(0, 0) = Rational(1, 2);
    m.at(0, 1) = Rational(1, 3);
    m.at(0, 2) = Rational(1, 5);
    m.at(1, 1) = 2;
    m.at(2, 0) = 4;
    m.at(2, 2) = 3;
    // Expand along row 1: 2 * det([[1/2, 1/5],[4, 3]]) = 2 * (3/2 - 4/5) = 7/5.
    REQUIRE(rat_determinant(m) == Rational(7, 5));
    REQUIRE(rat_determinant(RatMatrix::identity(4)) == 1);
}

TEST_CASE("rational: rref rank and exact kernel") {
    RatMatrix m(2, 3);
    m.at(0, 0) = 1;
    m.at(0, 1) = 2;
    m.at(0, 2) = 3;
    m.at(1, 0) = 2;
    m.at(1, 1) = 4;
    m.at(1, 2) = 6;
    REQUIRE(rat_rank(m) == 1);
    const RatMatrix k = rat_kernel(m);
    REQUIRE(k.cols == 2);
    const RatMatrix prod = m * k;
    REQUIRE(prod.is_zero());
    // rref is idempotent.
    RatMatrix r = m;
    rat_rref(r);
    RatMatrix r2 = r;
    rat_rref(r2);
    for (int i = 0; i < r.rows; ++i)
        for (int j = 0; j < r.cols; ++j) REQUIRE(r.at(i, j) == r2.at(i, j));
}

TEST_CASE("rational: solver reports solutions and inconsistency certificates") {
    RatMatrix a(2, 2);
    a.at(0, 0) = 2;
    a.at(0, 1) = 1;
    a.at(1, 0) = 1;
    a.at(1, 1) = 3;
    const std::vector<Rational> b{Rational(5), Rational(10)};
    const RatSolveResult sol = rat_solve(a, b);
    REQUIRE(sol.feasible);
    REQUIRE(sol.x.size() == 2);
    REQUIRE(a.at(0, 0) * sol.x[0] + a.at(0, 1) * sol.x[1] == b[0]);
    REQUIRE(a.at(1, 0) * sol.x[0] + a.at(1, 1) * sol.x[1] == b[1]);

    RatMatrix bad(2, 1);
    bad.at(0, 0) = 1;
    bad.at(1, 0) = 1;
    const RatSolveResult no = rat_solve(bad, {Rational(1), Rational(2)});
    REQUIRE_FALSE(no.feasible);
    REQUIRE(no.inconsistent_row >= 0);
}

TEST_CASE("rational: span membership over Q") {
    RatMatrix basis(3, 2);
    basis.at(0, 0) = 1;
    basis.at(1, 1) = 1;
    const std::vector<Rational> inside{Rational(2, 7), Rational(-5), Rational(0)};
    const std::vector<Rational> outside{Rational(0), Rational(0), Rational(1)};
    REQUIRE(rat_span_contains(basis, inside));
    REQUIRE_FALSE(rat_span_contains(basis, outside));
}

TEST_CASE("rational: continued-fraction snap recovers simple fractions") {
    REQUIRE(rationalize(1.0 / 3.0).value() == Rational(1, 3));
    REQUIRE(rationalize(22.0 / 7.0).value() == Rational(22, 7));
    REQUIRE(rationalize(0.5).value() == Rational(1, 2));
    REQUIRE(rationalize(-2.0).value() == Rational(-2));
    REQUIRE_FALSE(rationalize(std::nan("")).has_value());
    // With a tight denominator cap the convergent respects the cap.
    const Rational r = rationalize(3.14159265358979, 100).value();
    REQUIRE(boost::multiprecision::denominator(r) <= 100);
}

// ---------------------------------------------------------------------------
// geometry
// ---------------------------------------------------------------------------

TEST_CASE("geometry: projective points identify antipodes and normalize") {
    const ProjectivePoint x = pp({3, 4});
    REQUIRE(std::fabs(x.rep().norm() - 1.0) < 1e-14);
    const ProjectivePoint y = pp({-3, -4});
    REQUIRE((x.rep() - y.rep()).norm() < 1e-14);
    REQUIRE(angular_distance(x, y) == 0.0);
}

TEST_CASE("geometry: angular distance is a metric on lines") {
    const ProjectivePoint e1 = pp({1, 0});
    const ProjectivePoint e2 = pp({0, 1});
    const ProjectivePoint diag = pp({1, 1});
    REQUIRE(std::fabs(angular_distance(e1, e2) - 1.5707963267948966) < 1e-12);
    REQUIRE(std::fabs(angular_distance(e1, diag) - 0.7853981633974483) < 1e-12);
    REQUIRE(angular_distance(e1, diag) == angular_distance(diag, e1));
    REQUIRE(angular_distance(e1, e2) <=
            angular_distance(e1, diag) + angular_distance(diag, e2) + 1e-12);
}

TEST_CASE("geometry: span_of finds numerical rank") {
    Eigen::MatrixXd cols(3, 3);
    cols << 1, 2, 1, 0, 0, 1, 0, 0, 0;  // rank 2
    const Subspace s = Subspace::span_of(cols);
    REQUIRE(s.dim() == 2);
    REQUIRE(s.ambient_dim() == 3);
    REQUIRE(Subspace::span_of(Eigen::MatrixXd::Zero(3, 2)).dim() == 0);
}

TEST_CASE("geometry: guard band flags ambiguous singular values") {
    Eigen::MatrixXd cols(2, 2);
    cols << 1, 0, 0, 5e-9;  // ratio 5e-9 sits inside (tol, 10*tol)
    REQUIRE_THROWS_AS(Subspace::span_of(cols, tol::kRank, true), ToleranceAmbiguityError);
    // Clearly separated scales pass with the guard on.
    cols << 1, 0, 0, 0.5;
    REQUIRE(Subspace::span_of(cols, tol::kRank, true).dim() == 2);
}

TEST_CASE("geometry: sums and intersections of coordinate planes") {
    const Subspace p12 = Subspace::coordinate_span(3, {0, 1});
    const Subspace p23 = Subspace::coordinate_span(3, {1, 2});
    const Subspace sum = p12.sum(p23);
    REQUIRE(sum.dim() == 3);
    const Subspace inter = p12.intersect(p23);
    REQUIRE(inter.dim() == 1);
    REQUIRE(inter.contains_point(pp({0, 1, 0}), 1e-9));
    const Subspace comp = p12.orth_complement();
    REQUIRE(comp.dim() == 1);
    REQUIRE(comp.contains_point(pp({0, 0, 1}), 1e-9));
}

TEST_CASE("geometry: distance to a subspace is the principal angle") {
    const Subspace line = Subspace::coordinate_span(2, {0});
    REQUIRE(std::fabs(distance_to_subspace(pp({1, 1}), line) - 0.7853981633974483) < 1e-12);
    REQUIRE(distance_to_subspace(pp({1, 0}), line) < 1e-12);
    REQUIRE(std::fabs(distance_to_subspace(pp({0, 1}), line) - 1.5707963267948966) < 1e-12);
    // Chart coordinate |t| = 10 corresponds to angle atan(1/10) from the line.
    REQUIRE(std::fabs(distance_to_subspace(pp({10, 1}), line) - std::atan(0.1)) < 1e-12);
}

TEST_CASE("geometry: projective action normalizes and canonicalizes") {
    const Eigen::MatrixXd g = mat2(2, 0, 0, 0.5);
    const ProjectivePoint moved = act_projective(g, pp({1, 1}));
    // (2, 1/2) normalized.
    REQUIRE(std::fabs(moved.rep()[0] / moved.rep()[1] - 4.0) < 1e-12);
    REQUIRE(std::fabs(moved.rep().norm() - 1.0) < 1e-14);
}

// ---------------------------------------------------------------------------
// ensemble
// ---------------------------------------------------------------------------

TEST_CASE("ensemble: validation rejects malformed input") {
    REQUIRE_THROWS_AS(make_ensemble({mat2(1, 0, 0, 1)}, {0.9}), ValidationError);
    REQUIRE_THROWS_AS(make_ensemble({mat2(1, 0, 0, 1)}, {0.5, 0.5}), ValidationError);
    REQUIRE_THROWS_AS(make_ensemble({mat2(1, 2, 2, 4)}, {1.0}), ValidationError);  // singular
    REQUIRE_THROWS_AS(make_ensemble({}, {}), ValidationError);
    REQUIRE_THROWS_AS(
        make_rational_ensemble({rat2(1, 0, 0, 1)}, {Rational(1, 3)}), ValidationError);
    REQUIRE_NOTHROW(make_ensemble({mat2(2, 0, 0, 0.5)}, {1.0}));
}

TEST_CASE("ensemble: exact mode carries exact atoms") {
    const MatrixEnsemble e = triangular_pair();
    REQUIRE(e.exact());
    REQUIRE(e.dim == 2);
    REQUIRE(e.rat_atoms.size() == 2);
    REQUIRE(std::fabs(e.atoms[0](0, 0) - 0.5) < 1e-15);
}

TEST_CASE("ensemble: atom sampling follows the weights") {
    const MatrixEnsemble e =
        make_ensemble({mat2(2, 0, 0, 1), mat2(1, 0, 0, 2), mat2(3, 0, 0, 1)}, {0.2, 0.3, 0.5});
    SplitRng rng(5);
    const int n = 100000;
    std::vector<int> counts(3, 0);
    for (int i = 0; i < n; ++i) ++counts[sample_atom_index(e, rng)];
    REQUIRE(std::fabs(counts[0] - 20000.0) < 4 * std::sqrt(n * 0.2 * 0.8));
    REQUIRE(std::fabs(counts[1] - 30000.0) < 4 * std::sqrt(n * 0.3 * 0.7));
    REQUIRE(std::fabs(counts[2] - 50000.0) < 4 * std::sqrt(n * 0.5 * 0.5));
}

TEST_CASE("ensemble: scaled products do not overflow and track the log norm") {
    ScaledMatrix p = ScaledMatrix::identity(2);
    const Eigen::MatrixXd g = mat2(2, 0, 0, 2);
    for (int i = 0; i < 2000; ++i) p.multiply_left(g);
    // |2^2000 I|_F = 2^2000 * sqrt(2); the plain product would overflow ~1e308.
    const double expected = 2000 * std::log(2.0) + 0.5 * std::log(2.0);
    REQUIRE(std::fabs(p.log_frobenius() - expected) < 1e-9);
    REQUIRE(p.m.allFinite());

    ScaledMatrix q = ScaledMatrix::identity(2);
    const Eigen::MatrixXd h = mat2(0.5, 0, 0, 0.5);
    for (int i = 0; i < 2000; ++i) q.multiply_right(h);
    REQUIRE(std::fabs(q.log_frobenius() - (-2000 * std::log(2.0) + 0.5 * std::log(2.0))) < 1e-9);
}

TEST_CASE("ensemble: word evaluation multiplies in the stated order") {
    const MatrixEnsemble e = make_ensemble({mat2(1, 1, 0, 1), mat2(2, 0, 0, 1)}, {0.5, 0.5});
    WordSample w;
    w.indices = {0, 1};  // forward: g_{i2} g_{i1} applied to vectors
    w.direction = WordDirection::Forward;
    const ScaledMatrix m = evaluate_word(e, w);
    const Eigen::MatrixXd expect = e.atoms[1] * e.atoms[0];
    REQUIRE((m.m * std::exp(m.log_scale) - expect).norm() < 1e-12);
    w.direction = WordDirection::Backward;
    const ScaledMatrix mb = evaluate_word(e, w);
    const Eigen::MatrixXd expectb = e.atoms[0] * e.atoms[1];
    REQUIRE((mb.m * std::exp(mb.log_scale) - expectb).norm() < 1e-12);
}

TEST_CASE("ensemble: invariance residual separates stable from moved lines") {
    const MatrixEnsemble e = triangular_pair();
    const auto [res_good, idx_good] = invariance_residual(e, Subspace::coordinate_span(2, {0}));
    REQUIRE(res_good < 1e-12);
    const auto [res_bad, idx_bad] = invariance_residual(e, Subspace::coordinate_span(2, {1}));
    REQUIRE(res_bad > 0.1);
    REQUIRE(idx_bad >= 0);
    (void)idx_good;
}

TEST_CASE("ensemble: restriction and quotient blocks are exact on exact input") {
    const MatrixEnsemble e = triangular_pair();
    const Subspace w = Subspace::coordinate_span(2, {0});
    const MatrixEnsemble r = restrict_quotient(e, w, BlockKind::Restrict);
    REQUIRE(r.dim == 1);
    // The invariant line is a standard axis, so the 1x1 blocks are exact doubles.
    REQUIRE(r.atoms[0](0, 0) == 0.5);
    REQUIRE(r.atoms[1](0, 0) == 2.0);
    const MatrixEnsemble q = restrict_quotient(e, w, BlockKind::Quotient);
    REQUIRE(q.dim == 1);
    REQUIRE(std::fabs(q.atoms[0](0, 0)) == 2.0);
    REQUIRE(std::fabs(q.atoms[1](0, 0)) == 0.5);
    REQUIRE_THROWS_AS(restrict_quotient(e, Subspace::coordinate_span(2, {1}), BlockKind::Restrict),
                      NotInvariantError);
}

TEST_CASE("ensemble: inverse-transpose and squaring maps") {
    const MatrixEnsemble e = make_ensemble({mat2(2, 0, 0, 0.5)}, {1.0});
    const MatrixEnsemble it = inverse_transpose_ensemble(e);
    REQUIRE(std::fabs(it.atoms[0](0, 0) - 0.5) < 1e-14);
    REQUIRE(std::fabs(it.atoms[0](1, 1) - 2.0) < 1e-14);

    const MatrixEnsemble sq = atom_square_ensemble(e);
    REQUIRE(std::fabs(sq.atoms[0](0, 0) - 4.0) < 1e-14);

    // Squaring demands a commuting family.
    const MatrixEnsemble nc =
        make_ensemble({mat2(2, 1, 1, 1), mat2(1, 1, 1, 2)}, {0.5, 0.5});
    REQUIRE_THROWS_AS(atom_square_ensemble(nc), ValidationError);
}

// ---------------------------------------------------------------------------
// io
// ---------------------------------------------------------------------------

TEST_CASE("io: float ensembles survive a serialize/parse round trip") {
    const MatrixEnsemble e =
        make_ensemble({mat2(0.1, -2.5, 3.0, 1.0 / 3.0), mat2(1, 1, 0, 1)}, {0.25, 0.75});
    const MatrixEnsemble back = parse_str(serialize_ensemble(e));
    REQUIRE(back.dim == 2);
    REQUIRE(back.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        REQUIRE((back.atoms[i] - e.atoms[i]).norm() == 0.0);  // %.17g is lossless
        REQUIRE(back.weights[i] == e.weights[i]);
    }
    REQUIRE_FALSE(back.exact());
}

TEST_CASE("io: rational ensembles survive a round trip exactly") {
    const MatrixEnsemble e = triangular_pair();
    const MatrixEnsemble back = parse_str(serialize_ensemble(e));
    REQUIRE(back.exact());
    for (std::size_t i = 0; i < 2; ++i) {
        REQUIRE((back.rat_atoms[i] - e.rat_atoms[i]).is_zero());
        REQUIRE(back.rat_weights[i] == e.rat_weights[i]);
    }
}

TEST_CASE("io: parse errors carry line numbers") {
    try {
        parse_str("bogus-header\n");
        FAIL("expected a parse error");
    } catch (const ParseError& err) {
        REQUIRE(std::string(err.what()).find("line 1") != std::string::npos);
    }
    const std::string text = serialize_ensemble(triangular_pair());
    // Corrupt a payload line and expect the error to name it.
    std::string broken = text;
    const auto posn = broken.find("1/2");
    broken.replace(posn, 3, "x/y");
    REQUIRE_THROWS_AS(parse_str(broken), ParseError);
}

TEST_CASE("io: load/save hit the filesystem") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "projmeas_io_test";
    fs::create_directories(dir);
    const fs::path file = dir / "pair.ens";
    save_ensemble(file.string(), triangular_pair());
    const MatrixEnsemble back = load_ensemble(file.string());
    REQUIRE(back.exact());
    REQUIRE(back.dim == 2);
    REQUIRE_THROWS_AS(load_ensemble((dir / "missing.ens").string()), Error);
    fs::remove_all(dir);
}

TEST_CASE("io: double formatting round-trips bit for bit") {
    const std::vector<double> values{0.1,    1.0 / 3.0,    3.141592653589793, 1e300,
                                     1e-300, -2.718281828, 123456789.123456789};
    for (double v : values) {
        const std::string s = fmt_double(v);
        REQUIRE(std::stod(s) == v);
    }
}

TEST_CASE("io: reports and csv writers produce the expected shape") {
    TextReport rep("demo");
    rep.kv("alpha", 1.5);
    rep.section("block");
    rep.kv("count", 3);
    const std::string s = rep.str();
    REQUIRE(s.find("alpha") != std::string::npos);
    REQUIRE(s.find("block") != std::string::npos);

    CsvWriter csv;
    csv.header({"a", "b"});
    csv.row({1.0, 2.5});
    const std::string body = csv.str();
    REQUIRE(body.find("a,b") != std::string::npos);
    REQUIRE(body.find("2.5") != std::string::npos);
}

// ---------------------------------------------------------------------------
// parallel
// ---------------------------------------------------------------------------

TEST_CASE("parallel: every index runs exactly once") {
    const long n = 1000;
    std::vector<std::atomic<int>> hits(n);
    for (auto& h : hits) h = 0;
    parallel_for(n, 4, [&](long i) { ++hits[static_cast<std::size_t>(i)]; });
    for (long i = 0; i < n; ++i) REQUIRE(hits[static_cast<std::size_t>(i)] == 1);
    // Degenerate worker counts still cover everything.
    std::vector<int> single(10, 0);
    parallel_for(10, 1, [&](long i) { ++single[static_cast<std::size_t>(i)]; });
    for (int v : single) REQUIRE(v == 1);
}

TEST_CASE("parallel: worker exceptions propagate to the caller") {
    REQUIRE_THROWS_AS(parallel_for(100, 4,
                                   [](long i) {
                                       if (i == 37) throw ValidationError("boom");
                                   }),
                      ValidationError);
}

// ---------------------------------------------------------------------------
// measure
// ---------------------------------------------------------------------------

TEST_CASE("measure: constructor normalizes weights and rejects junk") {
    EmpiricalMeasure m({{pp({1, 0}), 0.2}, {pp({0, 1}), 0.2}}, {});
    double total = 0;
    for (const auto& a : m.atoms()) total += a.w;
    REQUIRE(std::fabs(total - 1.0) < 1e-12);
    REQUIRE(std::fabs(m.atoms()[0].w - 0.5) < 1e-12);
    REQUIRE_THROWS_AS(EmpiricalMeasure({}, {}), ValidationError);
    REQUIRE_THROWS_AS(EmpiricalMeasure({{pp({1, 0}), -1.0}}, {}), ValidationError);
}

TEST_CASE("measure: second moment, masses and diameter on a two-point law") {
    EmpiricalMeasure m({{pp({1, 0}), 0.5}, {pp({0, 1}), 0.5}}, {});
    const Eigen::MatrixXd sm = m.second_moment();
    REQUIRE(std::fabs(sm.trace() - 1.0) < 1e-12);
    REQUIRE(std::fabs(sm(0, 0) - 0.5) < 1e-12);
    REQUIRE(std::fabs(sm(0, 1)) < 1e-12);
    REQUIRE(std::fabs(m.support_diameter() - 1.5707963267948966) < 1e-12);
    const Subspace line = Subspace::coordinate_span(2, {0});
    REQUIRE(std::fabs(m.mass_within(line, 0.1) - 0.5) < 1e-12);
    REQUIRE(std::fabs(m.mass_within(line, 2.0) - 1.0) < 1e-12);
    REQUIRE(m.span_estimate().dim() == 2);
    REQUIRE(EmpiricalMeasure::dirac(pp({1, 1})).span_estimate().dim() == 1);
}

TEST_CASE("measure: pushforward applies each atom map") {
    const MatrixEnsemble rot = make_ensemble({mat2(0, -1, 1, 0)}, {1.0});
    EmpiricalMeasure m({{pp({1, 0}), 1.0}}, {});
    const EmpiricalMeasure out = m.pushforward(rot.atoms[0]);
    REQUIRE(angular_distance(out.atoms()[0].x, pp({0, 1})) < 1e-12);
}

TEST_CASE("measure: quotient pushforward drops mass inside the subspace") {
    const Subspace w = Subspace::coordinate_span(3, {0});
    EmpiricalMeasure m({{pp({1, 0, 0}), 0.5}, {pp({0, 1, 0}), 0.25}, {pp({0, 0, 1}), 0.25}}, {});
    const EmpiricalMeasure q = m.pushforward_quotient(w);
    REQUIRE(q.dim() == 2);
    // The atom on the killed line disappears; the rest renormalizes.
    REQUIRE(q.atoms().size() == 2);
    double total = 0;
    for (const auto& a : q.atoms()) total += a.w;
    REQUIRE(std::fabs(total - 1.0) < 1e-12);
}

TEST_CASE("measure: resampling compresses but stays close") {
    std::vector<WeightedAtom> atoms;
    SplitRng rng(31);
    for (int i = 0; i < 500; ++i) {
        Eigen::VectorXd v(2);
        v << 1.0, 0.01 * rng.normal();
        atoms.push_back({ProjectivePoint::from(v), 1.0});
    }
    EmpiricalMeasure dense(std::move(atoms), {});
    const EmpiricalMeasure coarse = dense.resampled(64, 77);
    REQUIRE(coarse.atoms().size() <= 64);
    double total = 0;
    for (const auto& a : coarse.atoms()) total += a.w;
    REQUIRE(std::fabs(total - 1.0) < 1e-10);
    REQUIRE(measure_distance(dense, coarse, 123) < 0.05);
}

TEST_CASE("measure: chart coordinates on the projective line") {
    EmpiricalMeasure m({{pp({3, 1}), 0.5}, {pp({1, 0}), 0.5}}, {});
    const auto chart = m.chart_values();
    REQUIRE(chart.size() == 2);
    bool saw_three = false, saw_inf = false;
    for (const auto& [t, wgt] : chart) {
        if (std::isinf(t)) saw_inf = true;
        if (std::fabs(t - 3.0) < 1e-12) saw_three = true;
        REQUIRE(wgt == 0.5);
    }
    REQUIRE(saw_three);
    REQUIRE(saw_inf);
}

TEST_CASE("measure: sampled transport distance behaves like a metric") {
    const EmpiricalMeasure d1 = EmpiricalMeasure::dirac(pp({1, 0}));
    const EmpiricalMeasure d2 = EmpiricalMeasure::dirac(pp({0, 1}));
    const EmpiricalMeasure mix({{pp({1, 0}), 0.5}, {pp({0, 1}), 0.5}}, {});
    const std::uint64_t seed = 9001;
    REQUIRE(measure_distance(d1, d1, seed) == 0.0);
    REQUIRE(measure_distance(d1, d2, seed) == measure_distance(d2, d1, seed));
    REQUIRE(measure_distance(d1, d2, seed) > 0.1);
    // Same random directions => the triangle inequality holds exactly.
    REQUIRE(measure_distance(d1, d2, seed) <=
            measure_distance(d1, mix, seed) + measure_distance(mix, d2, seed) + 1e-12);
    // Nearby diracs are close.
    REQUIRE(measure_distance(d1, EmpiricalMeasure::dirac(pp({1, 0.001})), seed) < 0.01);
}
