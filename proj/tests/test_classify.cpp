// Decision layer: lattice snapping, lift existence, quotient data, orbit
// compactness, the stationary-measure survey, and the critical certificate.
#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "projmeas/classify.hpp"

using namespace projmeas;

namespace {

constexpr double kHalfPi = 1.5707963267948966;

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

ProjectivePoint pp2(double a, double b) {
    Eigen::VectorXd v(2);
    v << a, b;
    return ProjectivePoint::from(v);
}

Eigen::MatrixXd rot(double t) { return mat2(std::cos(t), -std::sin(t), std::sin(t), std::cos(t)); }

MatrixEnsemble shear_pair() {
    return make_rational_ensemble(
        {rat2(2, 1, 0, Rational(1, 2)), rat2(2, -1, 0, Rational(1, 2))},
        {Rational(1, 2), Rational(1, 2)});
}

MatrixEnsemble unipotent_pair() {
    return make_rational_ensemble({rat2(1, 1, 0, 1), rat2(1, -1, 0, 1)},
                                  {Rational(1, 2), Rational(1, 2)});
}

MatrixEnsemble sl2_exact() {
    return make_rational_ensemble({rat2(2, 1, 1, 1), rat2(1, 1, 1, 2)},
                                  {Rational(1, 2), Rational(1, 2)});
}

MatrixEnsemble diag_exact() {
    return make_rational_ensemble({rat2(2, 0, 0, Rational(1, 2))}, {Rational(1)});
}

MatrixEnsemble affine_expanding() {
    return make_ensemble({mat2(2, 1, 0, 1), mat2(2, -1, 0, 1)}, {0.5, 0.5});
}

MatrixEnsemble affine_contracting() {
    return make_ensemble({mat2(0.5, 1, 0, 1), mat2(0.5, -1, 0, 1)}, {0.5, 0.5});
}

MatrixEnsemble so2xso2() {
    Eigen::MatrixXd g1 = Eigen::MatrixXd::Zero(4, 4), g2 = Eigen::MatrixXd::Zero(4, 4);
    g1.block(0, 0, 2, 2) = rot(0.7);
    g1.block(2, 2, 2, 2) = rot(1.3);
    g2.block(0, 0, 2, 2) = rot(-0.4);
    g2.block(2, 2, 2, 2) = rot(0.9);
    return make_ensemble({g1, g2}, {0.5, 0.5});
}

InvariantLattice lattice_of(const MatrixEnsemble& e) {
    return invariant_subspace_lattice(e, algebra_closure(e), {});
}

ProjectivePoint pp4(double a, double b, double c, double d) {
    Eigen::VectorXd v(4);
    v << a, b, c, d;
    return ProjectivePoint::from(v);
}

}  // namespace

// ---------------------------------------------------------------------------
// lattice snapping
// ---------------------------------------------------------------------------

TEST_CASE("snap: concentrated mass picks the smallest containing member") {
    const MatrixEnsemble e = shear_pair();  // members: {0}, span(e1), full
    const InvariantLattice lat = lattice_of(e);
    EmpiricalMeasure near_line({{pp2(1, 0), 0.6}, {pp2(1, 0.01), 0.4}}, {});
    const SnapResult s = snap_to_lattice(near_line, lat);
    REQUIRE(s.member.has_value());
    REQUIRE(lat.members[*s.member].dim() == 1);
    REQUIRE(s.angle < 0.05);
    REQUIRE_FALSE(s.span_not_invariant);
}

TEST_CASE("snap: spread mass lands on the full space") {
    const InvariantLattice lat = lattice_of(shear_pair());
    EmpiricalMeasure spread({{pp2(1, 0), 0.5}, {pp2(0, 1), 0.5}}, {});
    const SnapResult s = snap_to_lattice(spread, lat);
    REQUIRE(s.member.has_value());
    REQUIRE(lat.members[*s.member].dim() == 2);
    REQUIRE_FALSE(s.span_not_invariant);
}

TEST_CASE("snap: mass on a non-invariant line is flagged") {
    const InvariantLattice lat = lattice_of(shear_pair());
    const SnapResult s = snap_to_lattice(EmpiricalMeasure::dirac(pp2(1, 1)), lat);
    // The raw span is one line, but no one-dimensional member holds the mass
    // and larger members are not allowed to swallow a smaller span.
    REQUIRE_FALSE(s.member.has_value());
    REQUIRE(s.span_not_invariant);
    REQUIRE(s.raw_span.dim() == 1);
}

// ---------------------------------------------------------------------------
// quotient data
// ---------------------------------------------------------------------------

TEST_CASE("quotient data: one-dimensional quotients are deterministic") {
    const QuotientData qd =
        derive_quotient_data(affine_expanding(), Subspace::coordinate_span(2, {0}), 5000, 3);
    REQUIRE(qd.quotient.dim == 1);
    REQUIRE(qd.nubar.atoms().size() == 1);
    REQUIRE(qd.nubar_span.dim() == 1);
    REQUIRE(std::fabs(qd.nubar_top.value) < 1e-12);  // quotient entries are all 1
    REQUIRE_FALSE(qd.span_not_invariant);
}

TEST_CASE("quotient data: rotation quotients fill their space at rate zero") {
    const QuotientData qd =
        derive_quotient_data(so2xso2(), Subspace::coordinate_span(4, {0, 1}), 5000, 5);
    REQUIRE(qd.quotient.dim == 2);
    REQUIRE(qd.nubar_span.dim() == 2);
    REQUIRE(std::fabs(qd.nubar_top.value) < 1e-9);  // isometries grow nothing
    REQUIRE(qd.nubar.atoms().size() > 100);
}

// ---------------------------------------------------------------------------
// lift existence
// ---------------------------------------------------------------------------

TEST_CASE("lift: the complementary rotation plane is found as a witness") {
    const MatrixEnsemble e = so2xso2();
    const Subspace w = Subspace::coordinate_span(4, {0, 1});
    const QuotientData qd = derive_quotient_data(e, w, 10000, 7);
    LiftOptions opts;
    opts.seed = 7;
    const LiftDecision dec = decide_lift_existence(e, w, qd.nubar_span, qd.nubar_top, opts);
    REQUIRE(dec.answer == LiftAnswer::Exists);
    REQUIRE_FALSE(dec.expanding_bypass);
    REQUIRE(dec.witness.has_value());
    REQUIRE(dec.witness->dim() == 2);
    REQUIRE(dec.witness->max_principal_angle(Subspace::coordinate_span(4, {2, 3})) < 1e-6);
    REQUIRE(std::isinf(dec.intersection_top.value));  // witness meets W trivially
    REQUIRE(dec.iso_angle <= 0.02);
    REQUIRE(dec.corroboration.verdict != EscapeVerdict::Escaping);
    REQUIRE(std::string(to_string(dec.answer)) == "EXISTS");
}

TEST_CASE("lift: expanding affine chains admit no lift off the fixed axis") {
    const MatrixEnsemble e = affine_expanding();
    const Subspace w = Subspace::coordinate_span(2, {0});
    const QuotientData qd = derive_quotient_data(e, w, 5000, 9);
    LiftOptions opts;
    opts.seed = 9;
    opts.escape_schedule = {100, 1000, 10000};
    const LiftDecision dec = decide_lift_existence(e, w, qd.nubar_span, qd.nubar_top, opts);
    REQUIRE(dec.answer == LiftAnswer::NotExists);
    REQUIRE_FALSE(dec.witness.has_value());
    REQUIRE_FALSE(dec.incomplete_lattice);
    // Simulation corroborates: all mass runs into the axis tube.
    REQUIRE(dec.corroboration.verdict == EscapeVerdict::Escaping);
}

TEST_CASE("lift: contracting subspace growth triggers the bypass") {
    const MatrixEnsemble e = affine_contracting();
    const Subspace w = Subspace::coordinate_span(2, {0});
    const QuotientData qd = derive_quotient_data(e, w, 5000, 11);
    LiftOptions opts;
    opts.seed = 11;
    opts.escape_schedule = {100, 1000, 10000};
    const LiftDecision dec = decide_lift_existence(e, w, qd.nubar_span, qd.nubar_top, opts);
    REQUIRE(dec.answer == LiftAnswer::Exists);
    REQUIRE(dec.expanding_bypass);
    REQUIRE(dec.witness.has_value());
    REQUIRE(dec.witness->dim() == 2);  // preimage of the quotient span
    REQUIRE(dec.w_top.value < -0.5);   // the axis contracts at -log 2
    REQUIRE(dec.corroboration.verdict == EscapeVerdict::Tight);
    REQUIRE_FALSE(dec.note.empty());
}

TEST_CASE("lift: unipotent quotient measures cannot leave the axis") {
    const MatrixEnsemble e = unipotent_pair();
    const Subspace w = Subspace::coordinate_span(2, {0});
    const QuotientData qd = derive_quotient_data(e, w, 5000, 13);
    LiftOptions opts;
    opts.seed = 13;
    opts.escape_schedule = {100, 1000, 10000};
    const LiftDecision dec = decide_lift_existence(e, w, qd.nubar_span, qd.nubar_top, opts);
    // The only candidate containing a matching quotient image is the whole
    // space, whose intersection with W grows exactly as fast as the quotient.
    REQUIRE(dec.answer == LiftAnswer::NotExists);
}

TEST_CASE("lift: verdicts are deterministic and stable under the lattice seed") {
    const MatrixEnsemble e = so2xso2();
    const Subspace w = Subspace::coordinate_span(4, {0, 1});
    const QuotientData qd = derive_quotient_data(e, w, 5000, 21);
    LiftOptions a, b;
    a.seed = 21;
    b.seed = 21;
    b.lattice.seed = 999;
    a.escape_schedule = b.escape_schedule = {100, 1000, 10000};
    const LiftDecision da = decide_lift_existence(e, w, qd.nubar_span, qd.nubar_top, a);
    const LiftDecision db = decide_lift_existence(e, w, qd.nubar_span, qd.nubar_top, b);
    REQUIRE(da.answer == LiftAnswer::Exists);
    REQUIRE(db.answer == LiftAnswer::Exists);
    REQUIRE(da.witness->max_principal_angle(*db.witness) < 1e-6);
}

TEST_CASE("lift: input validation") {
    const MatrixEnsemble e = affine_expanding();
    const Subspace w = Subspace::coordinate_span(2, {0});
    const Subspace q1 = Subspace::full(1);
    REQUIRE_THROWS_AS(decide_lift_existence(e, Subspace::zero(2), q1, {0, 0}), ValidationError);
    REQUIRE_THROWS_AS(decide_lift_existence(e, Subspace::full(2), q1, {0, 0}), ValidationError);
    REQUIRE_THROWS_AS(decide_lift_existence(e, Subspace::coordinate_span(3, {0}), q1, {0, 0}),
                      DimensionError);
    // The quotient span must be expressed in quotient coordinates.
    REQUIRE_THROWS_AS(decide_lift_existence(e, w, Subspace::full(2), {0, 0}), DimensionError);
    REQUIRE_THROWS_AS(decide_lift_existence(e, w, Subspace::zero(1), {0, 0}), ValidationError);
    REQUIRE_THROWS_AS(
        decide_lift_existence(e, Subspace::coordinate_span(2, {1}), q1, {0, 0}),
        NotInvariantError);
}

// ---------------------------------------------------------------------------
// orbit compactness
// ---------------------------------------------------------------------------

TEST_CASE("orbit: unipotent words drift into the axis and lose the measure") {
    OrbitOptions opts;
    opts.seed = 3;
    const OrbitProbe probe = orbit_compactness_probe(unipotent_pair(), pp2(0, 1), opts);
    REQUIRE(probe.verdict == OrbitVerdict::LikelyNot);
    REQUIRE_FALSE(probe.finite_orbit);
    REQUIRE(probe.concentration_center.has_value());
    REQUIRE(angular_distance(*probe.concentration_center, pp2(1, 0)) < 0.1);
    REQUIRE(probe.deflation_space.dim() == 0);  // critical: nothing grows slower
    REQUIRE(std::fabs(probe.center_distance - kHalfPi) < 1e-12);
    REQUIRE(std::string(to_string(probe.verdict)) == "LIKELY-NOT");
}

TEST_CASE("orbit: rotation orbits stay spread and bounded") {
    OrbitOptions opts;
    opts.seed = 5;
    const OrbitProbe probe = orbit_compactness_probe(so2xso2(), pp4(1, 0.3, -0.5, 0.2), opts);
    REQUIRE(probe.verdict == OrbitVerdict::LikelySupports);
    REQUIRE(probe.bounded);
    REQUIRE_FALSE(probe.finite_orbit);
    REQUIRE(probe.concentration_mass < 0.2);
}

TEST_CASE("orbit: contracting affine orbits stay off the contracted axis") {
    OrbitOptions opts;
    opts.seed = 7;
    const OrbitProbe probe = orbit_compactness_probe(affine_contracting(), pp2(0, 1), opts);
    REQUIRE(probe.verdict == OrbitVerdict::LikelySupports);
    REQUIRE(probe.bounded);
    REQUIRE(probe.deflation_space.dim() == 1);  // the axis contracts below rate 0
    REQUIRE(probe.min_projected_norm > 0.2);    // chart stays within |t| <= 2
}

TEST_CASE("orbit: fixed points and numerically finite orbits short-circuit") {
    OrbitOptions opts;
    opts.seed = 9;
    const OrbitProbe fixed = orbit_compactness_probe(diag_exact(), pp2(1, 0), opts);
    REQUIRE(fixed.finite_orbit);
    REQUIRE(fixed.verdict == OrbitVerdict::LikelySupports);
    REQUIRE(fixed.orbit_span.dim() == 1);
    // A generic start under one diagonal atom walks monotonically into the
    // attracting axis: finitely many resolvable directions.
    const OrbitProbe toward = orbit_compactness_probe(diag_exact(), pp2(1, 1), opts);
    REQUIRE(toward.finite_orbit);
    REQUIRE(toward.verdict == OrbitVerdict::LikelySupports);

    Eigen::VectorXd v3(3);
    v3 << 1, 0, 0;
    REQUIRE_THROWS_AS(
        orbit_compactness_probe(diag_exact(), ProjectivePoint::from(v3), opts),
        DimensionError);
}

// ---------------------------------------------------------------------------
// stationary-measure survey
// ---------------------------------------------------------------------------

TEST_CASE("survey: one diagonal atom has exactly its two eigen-diracs") {
    SurveyOptions opts;
    opts.seed = 31;
    const SurveyResult res = survey_stationary_measures(diag_exact(), opts);
    REQUIRE(res.measures.size() == 2);
    for (const auto& cand : res.measures) {
        REQUIRE(cand.origin == "fixed-line");
        REQUIRE(cand.measure.atoms().size() == 1);
        REQUIRE(cand.residual < 1e-9);
    }
    const double d01 = angular_distance(res.measures[0].measure.atoms()[0].x, pp2(1, 0));
    const double d11 = angular_distance(res.measures[1].measure.atoms()[0].x, pp2(0, 1));
    const double d02 = angular_distance(res.measures[0].measure.atoms()[0].x, pp2(0, 1));
    const double d12 = angular_distance(res.measures[1].measure.atoms()[0].x, pp2(1, 0));
    REQUIRE(((d01 < 1e-9 && d11 < 1e-9) || (d02 < 1e-9 && d12 < 1e-9)));
}

TEST_CASE("survey: unipotent pairs keep only the fixed-axis dirac") {
    SurveyOptions opts;
    opts.seed = 37;
    const SurveyResult res = survey_stationary_measures(unipotent_pair(), opts);
    REQUIRE(res.measures.size() == 1);
    REQUIRE(res.measures[0].origin == "fixed-line");
    REQUIRE(angular_distance(res.measures[0].measure.atoms()[0].x, pp2(1, 0)) < 1e-9);
    REQUIRE(res.measures[0].residual < 1e-9);
    REQUIRE_FALSE(res.incomplete_lattice);
}

TEST_CASE("survey: a proximal irreducible pair has one diffuse law") {
    SurveyOptions opts;
    opts.seed = 41;
    const SurveyResult res = survey_stationary_measures(sl2_exact(), opts);
    REQUIRE(res.measures.size() == 1);
    REQUIRE(res.measures[0].origin == "cesaro");
    REQUIRE(res.measures[0].residual <= 0.05);
    REQUIRE(res.measures[0].measure.span_estimate().dim() == 2);
    REQUIRE(res.measures[0].measure.atoms().size() > 100);
}

TEST_CASE("survey: contracting affine chains add the diffuse chart law") {
    SurveyOptions opts;
    opts.seed = 43;
    const SurveyResult res = survey_stationary_measures(affine_contracting(), opts);
    REQUIRE(res.measures.size() == 2);
    bool saw_dirac = false, saw_diffuse = false;
    for (const auto& cand : res.measures) {
        if (cand.origin == "fixed-line") {
            saw_dirac = true;
            REQUIRE(angular_distance(cand.measure.atoms()[0].x, pp2(1, 0)) < 1e-9);
        } else {
            saw_diffuse = true;
            REQUIRE(cand.origin == "cesaro");
            double m2 = 0;
            for (const auto& [t, wgt] : cand.measure.chart_values()) m2 += wgt * t * t;
            REQUIRE(std::fabs(m2 - 4.0 / 3.0) < 0.15);
        }
    }
    REQUIRE(saw_dirac);
    REQUIRE(saw_diffuse);
}

// ---------------------------------------------------------------------------
// critical certificate
// ---------------------------------------------------------------------------

TEST_CASE("critical: spectral gaps fail the gate and skip certification") {
    CriticalOptions opts;
    opts.filtration.seed = 51;
    const CriticalCertificate cert =
        critical_semisimplicity_check(diag_exact(), {EmpiricalMeasure::dirac(pp2(1, 0))}, opts);
    REQUIRE_FALSE(cert.critical);
    REQUIRE(cert.results.empty());
    REQUIRE_FALSE(cert.all_semisimple);
    REQUIRE(cert.filtration.levels.size() >= 2);
}

TEST_CASE("critical: unipotent pairs certify their single dirac") {
    SurveyOptions sopts;
    sopts.seed = 53;
    const SurveyResult survey = survey_stationary_measures(unipotent_pair(), sopts);
    std::vector<EmpiricalMeasure> measures;
    for (const auto& c : survey.measures) measures.push_back(c.measure);

    CriticalOptions opts;
    opts.filtration.seed = 53;
    const CriticalCertificate cert =
        critical_semisimplicity_check(unipotent_pair(), measures, opts);
    REQUIRE(cert.critical);
    REQUIRE(cert.results.size() == 1);
    REQUIRE(cert.results[0].certified);
    REQUIRE(cert.results[0].support_span.dim() == 1);
    REQUIRE(cert.results[0].certificate.semisimple);
    REQUIRE(cert.all_semisimple);
    REQUIRE_FALSE(cert.any_span_not_invariant);
}

TEST_CASE("critical: irreducible proximal pairs are vacuously critical") {
    SurveyOptions sopts;
    sopts.seed = 57;
    const SurveyResult survey = survey_stationary_measures(sl2_exact(), sopts);
    std::vector<EmpiricalMeasure> measures;
    for (const auto& c : survey.measures) measures.push_back(c.measure);

    CriticalOptions opts;
    opts.filtration.seed = 57;
    const CriticalCertificate cert = critical_semisimplicity_check(sl2_exact(), measures, opts);
    REQUIRE(cert.critical);
    REQUIRE(cert.all_semisimple);
    REQUIRE(cert.results.size() == 1);
    REQUIRE(cert.results[0].support_span.dim() == 2);
}

TEST_CASE("critical: shears are critical and certify on the axis") {
    SurveyOptions sopts;
    sopts.seed = 59;
    const SurveyResult survey = survey_stationary_measures(shear_pair(), sopts);
    REQUIRE(survey.measures.size() == 1);
    CriticalOptions opts;
    opts.filtration.seed = 59;
    const CriticalCertificate cert =
        critical_semisimplicity_check(shear_pair(), {survey.measures[0].measure}, opts);
    REQUIRE(cert.critical);
    REQUIRE(cert.all_semisimple);  // the axis itself is one irreducible line
}

// ---------------------------------------------------------------------------
// generic starts
// ---------------------------------------------------------------------------

TEST_CASE("generic start: lands away from the avoided subspace, reproducibly") {
    const Subspace w = Subspace::coordinate_span(3, {0});
    const ProjectivePoint a = detail::generic_start(3, w, 77);
    const ProjectivePoint b = detail::generic_start(3, w, 77);
    REQUIRE(angular_distance(a, b) == 0.0);
    REQUIRE(distance_to_subspace(a, w) > 0.1);
    const ProjectivePoint c = detail::generic_start(3, Subspace::zero(3), 78);
    REQUIRE(c.dim() == 3);
}
