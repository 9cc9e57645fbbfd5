// ============================================================================
// test_verify.cpp — structural checkers over stabilized states: symmetry,
// monotonicity, region geometry, super-solution minimality, scaling-limit
// convergence, calibration, and the boundary-graph property.
//
// Numeric expectations marked "pinned" are regression values frozen from the
// first verified runs of this build; the sweep schedule is deterministic, so
// they must reproduce bit-for-bit up to the stated tolerances.
// ============================================================================
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>

#include "sandpile/verify.hpp"

using namespace sandpile;

namespace {

constexpr std::uint64_t kBigCap = 1'000'000'000'000ull;

// Stabilized single origin source at threshold m = 10, cached per n (several
// test cases share the same state; stabilization is deterministic).
const SandpileState& stabilized(double n) {
    static std::map<double, SandpileState> cache;
    auto it = cache.find(n);
    if (it == cache.end()) {
        SandpileState s = new_state(2, {{{0, 0}, n}}, 10.0);
        stabilize(s, {ScheduleKind::sweep, 0}, default_eps_stop(n), {.max_topplings = kBigCap});
        it = cache.emplace(n, std::move(s)).first;
    }
    return it->second;
}

// Synthetic single-source state whose odometer is an exact lattice ball:
// u = height on {|x|² ≤ r²}, zero outside.  Exactly mirror-symmetric and
// radially non-increasing by construction.
SandpileState step_ball_state(long long r2, double height) {
    SandpileState s = new_state(2, {{{0, 0}, 100.0}}, 10.0);  // box radius 7
    for (std::size_t i = 0; i < s.u.size(); ++i) {
        const Site x = s.u.site_of(i);
        const long long q = 1LL * x[0] * x[0] + 1LL * x[1] * x[1];
        if (q <= r2) s.u.raw()[i] = height;
    }
    return s;
}

}  // namespace

TEST_CASE("check_symmetry: exact invariance, planted asymmetry, validation") {
    // The sweep schedule treats all mirror images identically, so the
    // stabilized odometer is mirror-invariant to the last bit.  Pinned: 0.
    CHECK(check_symmetry(stabilized(1e4)) == 0.0);

    // An un-run state has u ≡ 0: trivially symmetric.
    CHECK(check_symmetry(new_state(2, {{{0, 0}, 50.0}}, 10.0)) == 0.0);

    // Raising one interior site by 1 breaks every reflection through exactly
    // that amount.
    SandpileState corrupt = stabilized(1e4);
    corrupt.u.ref(Site{3, 4}) += 1.0;
    CHECK(check_symmetry(corrupt) == doctest::Approx(1.0).epsilon(1e-12));

    // The check is only meaningful for a single origin source.
    SandpileState two = new_state(2, {{{-3, 0}, 50.0}, {{3, 0}, 50.0}}, 10.0);
    CHECK_THROWS_AS(check_symmetry(two), ConfigError);
    SandpileState off = new_state(2, {{{1, 0}, 50.0}}, 10.0);
    CHECK_THROWS_AS(check_symmetry(off), ConfigError);
}

TEST_CASE("check_monotonicity: stabilized and synthetic fields, exact fault count") {
    CHECK(check_monotonicity(stabilized(1e4)) == 0);  // pinned

    // An exact lattice ball is radially monotone.
    const SandpileState ball = step_ball_state(40, 10.0);
    CHECK(check_monotonicity(ball) == 0);
    CHECK(check_symmetry(ball) == 0.0);

    // Raise the site (7,0) just outside the ball.  Exactly three ordered
    // pairs now increase outward: (6,0)→(7,0) along the axis and the two
    // diagonal steps (6,∓1)→(7,0).  No other probe direction reaches it
    // with a non-decreasing norm.
    SandpileState fault = step_ball_state(40, 10.0);
    fault.u.ref(Site{7, 0}) = 15.0;
    CHECK(check_monotonicity(fault) == 3);
    CHECK(check_symmetry(fault) == 15.0);  // mirror images of (7,0) hold 0

    SandpileState two = new_state(2, {{{-3, 0}, 50.0}, {{3, 0}, 50.0}}, 10.0);
    CHECK_THROWS_AS(check_monotonicity(two), ConfigError);
}

TEST_CASE("measure_regions: pinned geometry at n = 10^4") {
    const ShapeReport r = measure_regions(stabilized(1e4));

    // The cutoff core is an exact lattice ball of radius 20 here, so the
    // clamped inradius and the outradius coincide.
    CHECK(r.inradius_V0 == doctest::Approx(20.0).epsilon(1e-12));
    CHECK(r.outradius_V0 == doctest::Approx(20.0).epsilon(1e-12));
    CHECK(r.annulus_min == doctest::Approx(7.0710678118654755).epsilon(1e-9));
    CHECK(r.annulus_max == doctest::Approx(8.0).epsilon(1e-9));
    CHECK(r.boundary_count == 152);
    CHECK(r.symmetry_max_err == 0.0);
    CHECK(r.monotonicity_violations == 0);
    CHECK(r.lipschitz_max == doctest::Approx(1436.3981214475607).epsilon(1e-9));
    CHECK(r.c11_max == doctest::Approx(267.78072928643996).epsilon(1e-9));

    // Structural sanity independent of the pinned numbers.
    CHECK(r.inradius_V0 <= r.outradius_V0);
    CHECK(r.annulus_min <= r.annulus_max);

    // Shrinking the scan region can only lower the regularity maxima.
    const ShapeReport far = measure_regions(stabilized(1e4), 0.15);
    CHECK(far.lipschitz_max <= r.lipschitz_max);
    CHECK(far.c11_max <= r.c11_max);
}

TEST_CASE("measure_regions: pinned geometry at n = 10^5 and scale stability") {
    const ShapeReport r = measure_regions(stabilized(1e5));

    // Here the integer-norm gap bites: the smallest norm outside V0 exceeds
    // the largest norm inside, so the inradius is clamped to the outradius.
    CHECK(r.inradius_V0 == doctest::Approx(63.906181234681831).epsilon(1e-9));
    CHECK(r.outradius_V0 == doctest::Approx(63.906181234681831).epsilon(1e-9));
    CHECK(r.inradius_V0 <= r.outradius_V0);
    CHECK(r.annulus_min == doctest::Approx(21.213203435596427).epsilon(1e-9));
    CHECK(r.annulus_max == doctest::Approx(22.0).epsilon(1e-9));
    CHECK(r.boundary_count == 484);
    CHECK(r.symmetry_max_err == 0.0);
    CHECK(r.monotonicity_violations == 0);
    CHECK(r.lipschitz_max == doctest::Approx(4111.5831520072388).epsilon(1e-9));
    CHECK(r.c11_max == doctest::Approx(249.66472147630702).epsilon(1e-9));

    // The gradient bound grows like √n (d = 2) and the second difference
    // stays O(m): the normalized values at n = 10^4 and 10^5 agree to 20%.
    const ShapeReport r4 = measure_regions(stabilized(1e4));
    const double lip4 = r4.lipschitz_max / std::sqrt(1e4);
    const double lip5 = r.lipschitz_max / std::sqrt(1e5);
    CHECK(std::fabs(lip5 - lip4) <= 0.2 * lip4);
    CHECK(std::fabs(r.c11_max - r4.c11_max) <= 0.2 * r4.c11_max);
}

TEST_CASE("supersolution: the odometer is the minimal accepted candidate") {
    const SandpileState& s = stabilized(1e4);
    const double tol = 2 * s.d * default_eps_stop(s.n) + 1e-9 * s.m;

    // The stabilized odometer itself passes with zero minimality margin.
    const SupersolutionReport own = analyze_supersolution(s.u, s, tol);
    CHECK(own.accepted);
    CHECK(own.minimality_margin == 0.0);
    CHECK(own.max_excess_everywhere <= tol);
    CHECK(own.max_excess_support <= tol);
    CHECK(check_supersolution(s.u, s, tol));

    // Inflating the odometer breaks the support condition: on the mass
    // annulus ν = 1.5μ − 0.5μ₀ lands at 1.5m, far above the threshold.
    LatticeField big = s.u;
    for (double& v : big.raw()) v *= 1.5;
    const SupersolutionReport infl = analyze_supersolution(big, s, tol);
    CHECK(!infl.accepted);
    CHECK(infl.max_excess_support > 0.4 * s.m);
    CHECK(!check_supersolution(big, s, tol));

    // The zero field fails outright when the source is unstable: ν = μ₀.
    SandpileState fresh = new_state(2, {{{0, 0}, 100.0}}, 10.0);
    const LatticeField zero(2, fresh.u.radius());
    const SupersolutionReport rej = analyze_supersolution(zero, fresh, 1e-9);
    CHECK(!rej.accepted);
    CHECK(rej.max_excess_everywhere == doctest::Approx(90.0).epsilon(1e-12));

    // Validation: candidates must be non-negative and dimension-matched.
    LatticeField neg = s.u;
    neg.ref(Site{0, 0}) = -1.0;
    CHECK_THROWS_AS(analyze_supersolution(neg, s, tol), ConfigError);
    const LatticeField wrong_d(3, 4);
    CHECK_THROWS_AS(analyze_supersolution(wrong_d, s, tol), ConfigError);
}

TEST_CASE("scaling_sup_err: matches the convergence entry, validates rho") {
    const RadialSolution sol = solve_radial(RadialProblem::scaled_limit(2, 10.0));
    // Pinned: identical code path and identical deterministic run as the
    // n = 10^4 entry of scaling_convergence below.
    CHECK(scaling_sup_err(stabilized(1e4), sol, 0.1) ==
          doctest::Approx(0.010014594563215684).epsilon(1e-12));
    CHECK_THROWS_AS(scaling_sup_err(stabilized(1e4), sol, 0.0), ConfigError);
    CHECK_THROWS_AS(scaling_sup_err(stabilized(1e4), sol, -0.1), ConfigError);
}

TEST_CASE("scaling_convergence: pinned sup errors shrink with n") {
    const ScalingReport sc = scaling_convergence(2, 10.0, {1e4, 1e5}, 0.1);
    REQUIRE(sc.n_values.size() == 2);
    CHECK(sc.rho == 0.1);
    CHECK(sc.m == 10.0);

    CHECK(sc.sup_err[0] == doctest::Approx(0.010014594563215684).epsilon(1e-9));
    CHECK(sc.sup_err[1] == doctest::Approx(0.0019979002184016409).epsilon(1e-9));
    CHECK(sc.sup_err[1] < sc.sup_err[0]);  // convergence

    CHECK(sc.support_radius[0] == doctest::Approx(0.27313000567495327).epsilon(1e-9));
    CHECK(sc.support_radius[1] == doctest::Approx(0.27131162894354532).epsilon(1e-9));
    CHECK(sc.plateau_radius[0] == doctest::Approx(0.2).epsilon(1e-9));
    CHECK(sc.plateau_radius[1] == doctest::Approx(0.20208908926510605).epsilon(1e-9));

    // The measured radii track the analytic free boundaries r₂ and r₁.
    const RadialSolution sol = solve_radial(RadialProblem::scaled_limit(2, 10.0));
    for (const double sr : sc.support_radius) CHECK(std::fabs(sr / sol.r2 - 1.0) <= 0.05);
    for (const double pr : sc.plateau_radius) CHECK(std::fabs(pr / sol.r1 - 1.0) <= 0.05);

    CHECK_THROWS_AS(scaling_convergence(2, 10.0, {1e4, 1e5}, 0.0), ConfigError);
    CHECK_THROWS_AS(scaling_convergence(2, 10.0, {}, 0.1), ConfigError);
    CHECK_THROWS_AS(scaling_convergence(2, 10.0, {1e5, 1e4}, 0.1), ConfigError);
}

TEST_CASE("calibrate_F: doubling search, monotone results, truncation flag") {
    // Small thresholds are matched already at the starting size.  Pinned.
    const CalibrationReport cal =
        calibrate_F({2.0, 4.0}, nullptr, nullptr, {.d = 2, .n_start = 1024, .n_cap = 1 << 20});
    REQUIRE(cal.pairs.size() == 2);
    CHECK(cal.pairs[0].first == 2.0);
    CHECK(cal.pairs[0].second == 1024.0);
    CHECK(cal.pairs[1].first == 4.0);
    CHECK(cal.pairs[1].second == 1024.0);
    CHECK(!cal.truncated);
    CHECK(cal.pairs[0].second <= cal.pairs[1].second);  // monotonized

    // An unreachable tolerance drives the search into the cap.  The probe
    // radius must sit inside the support (the default 1/m would not), else
    // the sup distance is identically zero and any tolerance passes.
    const CalibrationReport cut = calibrate_F(
        {2.0}, [](double) { return 0.1; }, [](double) { return 1e-9; },
        {.d = 2, .n_start = 1024, .n_cap = 4096});
    CHECK(cut.truncated);
    CHECK(cut.pairs[0].second == 4096.0);

    CHECK_THROWS_AS(calibrate_F({}), ConfigError);
    CHECK_THROWS_AS(calibrate_F({4.0, 2.0}), ConfigError);
    CHECK_THROWS_AS(calibrate_F({-1.0, 2.0}), ConfigError);
    CHECK_THROWS_AS(calibrate_F({2.0}, nullptr, nullptr, {.n_start = 0}), ConfigError);
}

TEST_CASE("boundary_graph_property: lattice ball passes, a deep notch fails") {
    const auto make_ball = [](long long r2) {
        MaskField region(2, 12);
        for (std::size_t i = 0; i < region.size(); ++i) {
            const Site x = region.site_of(i);
            if (1LL * x[0] * x[0] + 1LL * x[1] * x[1] <= r2) region.raw()[i] = 1;
        }
        return region;
    };

    CHECK(boundary_graph_property(make_ball(100)));

    // A two-deep notch at the top of the column x = 0 only relocates that
    // column's boundary site; the neighbours still see exactly one each.
    MaskField shallow = make_ball(100);
    shallow.ref(Site{0, 10}) = 0;
    shallow.ref(Site{0, 9}) = 0;
    CHECK(boundary_graph_property(shallow));

    // Three deep exposes a second boundary site in the columns x = ±1:
    // their tops stay boundary and (±1, 8) now borders the carved hole.
    MaskField deep = make_ball(100);
    deep.ref(Site{0, 10}) = 0;
    deep.ref(Site{0, 9}) = 0;
    deep.ref(Site{0, 8}) = 0;
    CHECK(!boundary_graph_property(deep));

    CHECK(boundary_graph_property(MaskField(2, 5)));  // empty region: vacuous
    CHECK_THROWS_AS(boundary_graph_property(MaskField()), ConfigError);
}

TEST_CASE("check_boundary_graph: stabilized states pass, validation applies") {
    CHECK(check_boundary_graph(stabilized(1e4)));  // pinned
    CHECK(check_boundary_graph(stabilized(1e5)));  // pinned

    SandpileState two = new_state(2, {{{-3, 0}, 50.0}, {{3, 0}, 50.0}}, 10.0);
    CHECK_THROWS_AS(check_boundary_graph(two), ConfigError);
}
